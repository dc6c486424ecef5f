"""Dense linear algebra kernels: Householder QR, one-sided Jacobi SVD,
triangular and least-squares solves.

Matrices are plain 2-D float64 numpy arrays (row-major). All routines here
are written out explicitly rather than delegating to LAPACK so that the
test suite can check them against independent references.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .errors import (
    RankDeficientError,
    ShapeError,
    SingularTriangularError,
    ZeroMatrixError,
)

# Relative threshold on |R_jj| below which a column is declared dependent.
RANK_TOL = 1e-10
# Relative threshold on triangular diagonals.
TRIANGULAR_TOL = 1e-14


def as_matrix(a) -> np.ndarray:
    """Coerce input to a 2-D C-contiguous float64 array."""
    m = np.ascontiguousarray(a, dtype=np.float64)
    if m.ndim != 2:
        raise ShapeError(f"expected a 2-D matrix, got shape {m.shape}")
    return m


def frobenius(a: np.ndarray) -> float:
    return float(np.sqrt(np.sum(a * a)))


def _require_finite(a: np.ndarray, what: str) -> np.ndarray:
    if not np.all(np.isfinite(a)):
        raise ValueError(f"{what} contains NaN or Inf entries")
    return a


@dataclass
class QrFactors:
    """Thin QR factorization with orthonormal q (m x n) and upper-triangular
    r (n x n) whose diagonal is positive."""

    q: np.ndarray
    r: np.ndarray


@dataclass
class SvdFactors:
    """Thin SVD a = u @ diag(sigma) @ v.T truncated to the numerical rank.

    sigma is strictly positive and nonincreasing.
    """

    u: np.ndarray
    sigma: np.ndarray
    v: np.ndarray
    rank: int


def matmul(a, b) -> np.ndarray:
    """Matrix product with an explicit shape check."""
    a = as_matrix(a)
    b = as_matrix(b)
    if a.shape[1] != b.shape[0]:
        raise ShapeError(f"cannot multiply {a.shape} by {b.shape}")
    return a @ b


def householder_qr(a) -> QrFactors:
    """Thin QR of an m x n matrix (m >= n) by Householder reflections.

    The factorization is normalized so that diag(r) > 0, which makes it
    unique for full-column-rank input. Columns whose pivot falls below
    RANK_TOL times the Frobenius norm raise RankDeficientError.
    """
    a = _require_finite(as_matrix(a), "matrix")
    m, n = a.shape
    if m < n:
        raise ShapeError(f"need rows >= cols for QR, got {a.shape}")
    norm_a = frobenius(a)
    if norm_a == 0.0:
        raise RankDeficientError("matrix is identically zero (column 0)")

    r = a.copy()
    reflectors: list[tuple[int, np.ndarray, float]] = []
    for j in range(n):
        x = r[j:, j]
        alpha = float(np.sqrt(np.sum(x * x)))
        if alpha <= RANK_TOL * norm_a:
            raise RankDeficientError(
                f"column {j} is numerically dependent (|R_jj|={alpha:.3e} "
                f"< {RANK_TOL:.0e} * ||a||_F={norm_a:.3e})"
            )
        sign0 = 1.0 if x[0] >= 0.0 else -1.0
        v = x.copy()
        v[0] += sign0 * alpha
        beta = 2.0 / float(np.sum(v * v))
        # Apply I - beta v v^T to the trailing block.
        if j + 1 < n:
            w = beta * (v @ r[j:, j + 1 :])
            r[j:, j + 1 :] -= np.outer(v, w)
        r[j, j] = -sign0 * alpha
        r[j + 1 :, j] = 0.0
        reflectors.append((j, v, beta))

    # Form the thin Q by applying the reflectors to the first n columns
    # of the identity, in reverse order.
    q = np.zeros((m, n))
    q[:n, :n] = np.eye(n)
    for j, v, beta in reversed(reflectors):
        w = beta * (v @ q[j:, :])
        q[j:, :] -= np.outer(v, w)
    r = r[:n, :n]

    # Flip signs so that diag(r) is strictly positive.
    flip = np.diag(r) < 0.0
    if np.any(flip):
        r[flip, :] *= -1.0
        q[:, flip] *= -1.0

    _require_finite(q, "q factor")
    _require_finite(r, "r factor")
    return QrFactors(q=q, r=r)


def solve_upper_triangular(r, b) -> np.ndarray:
    """Solve r @ x = b by back substitution; b may carry several columns."""
    r = _require_finite(as_matrix(r), "triangular matrix")
    n = r.shape[0]
    if r.shape[1] != n:
        raise ShapeError(f"triangular matrix must be square, got {r.shape}")
    b_arr = np.ascontiguousarray(b, dtype=np.float64)
    vector_input = b_arr.ndim == 1
    if vector_input:
        b_arr = b_arr[:, None]
    if b_arr.shape[0] != n:
        raise ShapeError(f"rhs rows {b_arr.shape[0]} != system size {n}")

    norm_r = frobenius(r)
    diag = np.diag(r)
    bad = np.abs(diag) <= TRIANGULAR_TOL * norm_r
    if np.any(bad):
        j = int(np.argmax(bad))
        raise SingularTriangularError(
            f"diagonal entry {j} is {diag[j]:.3e}, too small relative to "
            f"||r||_F={norm_r:.3e}"
        )

    x = np.zeros_like(b_arr)
    for i in range(n - 1, -1, -1):
        x[i] = (b_arr[i] - r[i, i + 1 :] @ x[i + 1 :]) / r[i, i]
    _require_finite(x, "triangular solve result")
    return x[:, 0] if vector_input else x


def least_squares(a, b) -> np.ndarray:
    """Minimize ||a @ x - b||_F over x via the QR route.

    Handles one or many right-hand sides. Requires full column rank and
    propagates RankDeficientError otherwise.
    """
    a = as_matrix(a)
    b_arr = np.ascontiguousarray(b, dtype=np.float64)
    vector_input = b_arr.ndim == 1
    if vector_input:
        b_arr = b_arr[:, None]
    if b_arr.shape[0] != a.shape[0]:
        raise ShapeError(f"rhs rows {b_arr.shape[0]} != matrix rows {a.shape[0]}")
    qr = householder_qr(a)
    x = solve_upper_triangular(qr.r, qr.q.T @ b_arr)
    return x[:, 0] if vector_input else x


def jacobi_svd(a, rank_tol: float = RANK_TOL) -> SvdFactors:
    """Thin SVD by the one-sided Jacobi method.

    Singular values not exceeding rank_tol * sigma_max are dropped; the
    retained count is reported as the numerical rank. Left singular
    vectors are sign-normalized so their largest-magnitude entry is
    positive, which makes the factorization deterministic.
    """
    if rank_tol < 0.0:
        raise ValueError(f"rank_tol must be >= 0, got {rank_tol}")
    a = _require_finite(as_matrix(a), "matrix")
    if not np.any(a):
        raise ZeroMatrixError("cannot factor an all-zero matrix")

    transposed = a.shape[0] < a.shape[1]
    b = a.T.copy() if transposed else a.copy()
    m, n = b.shape
    v = np.eye(n)

    # Sweep over column pairs, rotating until every pair is orthogonal
    # relative to machine precision. Columns whose norm has collapsed to
    # rounding noise are left alone: they lie far below any singular value
    # the rank tolerance could retain.
    eps = 1e-15
    negligible_sq = (1e-15 * frobenius(b)) ** 2
    for _ in range(100):
        off = 0.0
        for p in range(n - 1):
            for q in range(p + 1, n):
                app = float(b[:, p] @ b[:, p])
                aqq = float(b[:, q] @ b[:, q])
                apq = float(b[:, p] @ b[:, q])
                if apq == 0.0 or app <= negligible_sq or aqq <= negligible_sq:
                    continue
                # sqrt separately: the product can underflow for tiny columns
                norms = np.sqrt(app) * np.sqrt(aqq)
                if abs(apq) <= eps * norms:
                    continue
                off = max(off, abs(apq) / norms)
                zeta = (aqq - app) / (2.0 * apq)
                t = np.sign(zeta) / (abs(zeta) + np.sqrt(1.0 + zeta * zeta))
                if zeta == 0.0:
                    t = 1.0
                c = 1.0 / np.sqrt(1.0 + t * t)
                s = c * t
                bp = b[:, p].copy()
                b[:, p] = c * bp - s * b[:, q]
                b[:, q] = s * bp + c * b[:, q]
                vp = v[:, p].copy()
                v[:, p] = c * vp - s * v[:, q]
                v[:, q] = s * vp + c * v[:, q]
        if off == 0.0:
            break
    else:
        raise RuntimeError("one-sided Jacobi SVD failed to converge")

    sigma = np.sqrt(np.sum(b * b, axis=0))
    order = np.argsort(-sigma, kind="stable")
    sigma = sigma[order]
    b = b[:, order]
    v = v[:, order]

    keep = sigma > rank_tol * sigma[0]
    rank = int(np.count_nonzero(keep))
    sigma = sigma[:rank]
    u = b[:, :rank] / sigma
    v = v[:, :rank]

    # Canonical signs: largest-magnitude entry of each left vector positive.
    for j in range(rank):
        i = int(np.argmax(np.abs(u[:, j])))
        if u[i, j] < 0.0:
            u[:, j] = -u[:, j]
            v[:, j] = -v[:, j]

    if transposed:
        u, v = v, u
    _require_finite(u, "u factor")
    _require_finite(v, "v factor")
    return SvdFactors(u=u, sigma=sigma, v=v, rank=rank)


def best_rank_k_error(a, k: int) -> float:
    """Squared Frobenius distance from a to its best rank-k approximation,
    i.e. the tail sum of squared singular values."""
    if k < 0:
        raise ValueError(f"k must be >= 0, got {k}")
    a = as_matrix(a)
    if not np.any(a):
        return 0.0
    sigma = jacobi_svd(a).sigma
    if k >= sigma.size:
        return 0.0
    return float(np.sum(sigma[k:] ** 2))
