"""Synthetic Darcy-flow datasets on the square (-1,1)^2.

Output fields are produced by a 5-point finite-difference Poisson solver.
The nonlinear conductivity cases (kappa * p) are reduced to a linear solve
through the substitution w = p^2, which is exact whenever p > 0.
"""

from __future__ import annotations

import json
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from .errors import (
    CorruptDatasetError,
    DuplicateSensorError,
    NegativeSubstitutionError,
    ShapeError,
    SolverError,
)

BETA_RANGE_EX1 = (1.0, 1000.0)
BETA_RANGE_EX2 = (0.01, 10.0)
TRIPLET_RANGE_EX3 = (0.1, 10.0)


@dataclass
class OperatorDataset:
    """Sensor locations plus paired input/output samples.

    f_matrix is K x m_x (one input representation per row) and u_matrix is
    m_y x K (one output column per sample). The train/test split is a pair
    of disjoint index arrays covering 0..K-1; when absent, everything is
    treated as training data.
    """

    x_sensors: np.ndarray
    y_sensors: np.ndarray
    f_matrix: np.ndarray
    u_matrix: np.ndarray
    train_idx: np.ndarray | None = None
    test_idx: np.ndarray | None = None
    meta: dict = field(default_factory=dict)

    @property
    def m_x(self) -> int:
        return self.x_sensors.shape[0]

    @property
    def m_y(self) -> int:
        return self.y_sensors.shape[0]

    @property
    def n_samples(self) -> int:
        return self.f_matrix.shape[0]

    @property
    def d_y(self) -> int:
        return self.y_sensors.shape[1]

    def validate(self) -> None:
        k = self.n_samples
        if self.f_matrix.shape != (k, self.m_x):
            raise ShapeError(
                f"f_matrix shape {self.f_matrix.shape} != (K, m_x) ({k}, {self.m_x})"
            )
        if self.u_matrix.shape != (self.m_y, k):
            raise ShapeError(
                f"u_matrix shape {self.u_matrix.shape} != (m_y, K) ({self.m_y}, {k})"
            )
        check_distinct_sensors(self.y_sensors)
        if (self.train_idx is None) != (self.test_idx is None):
            raise ValueError("train/test indices must be set together")
        if self.train_idx is not None:
            combined = np.concatenate([self.train_idx, self.test_idx])
            if len(set(combined.tolist())) != k or combined.size != k:
                raise ValueError("split must partition 0..K-1")

    def _train_indices(self) -> np.ndarray:
        if self.train_idx is None:
            return np.arange(self.n_samples)
        return self.train_idx

    def train_f(self) -> np.ndarray:
        return self.f_matrix[self._train_indices()]

    def train_u(self) -> np.ndarray:
        return self.u_matrix[:, self._train_indices()]

    def test_f(self) -> np.ndarray:
        idx = self.test_idx if self.test_idx is not None else np.arange(0)
        return self.f_matrix[idx]

    def test_u(self) -> np.ndarray:
        idx = self.test_idx if self.test_idx is not None else np.arange(0)
        return self.u_matrix[:, idx]


def check_distinct_sensors(points: np.ndarray) -> None:
    """Raise DuplicateSensorError (naming the indices) on exact row ties."""
    order = np.lexsort(points.T)
    sorted_pts = points[order]
    same = np.all(sorted_pts[1:] == sorted_pts[:-1], axis=1)
    if np.any(same):
        where = int(np.argmax(same))
        i, j = int(order[where]), int(order[where + 1])
        raise DuplicateSensorError(f"sensors {min(i, j)} and {max(i, j)} coincide")


def grid_coordinates(grid_n: int) -> tuple[np.ndarray, np.ndarray]:
    """Node coordinates of the uniform grid_n x grid_n mesh on [-1,1]^2,
    flattened row-major (y index outer), as (nodes x 2, axis)."""
    axis = np.linspace(-1.0, 1.0, grid_n)
    yy, xx = np.meshgrid(axis, axis, indexing="ij")
    nodes = np.column_stack([xx.ravel(), yy.ravel()])
    return nodes, axis


def _as_grid_field(values, axis: np.ndarray) -> np.ndarray:
    """Evaluate a callable/scalar/array f on the tensor grid."""
    n = axis.size
    if callable(values):
        # 'xy' meshgrid puts x along columns, so the result is [iy, ix].
        xx, yy = np.meshgrid(axis, axis, indexing="xy")
        return np.asarray(values(xx, yy), dtype=np.float64) * np.ones((n, n))
    arr = np.asarray(values, dtype=np.float64)
    if arr.ndim == 0:
        return np.full((n, n), float(arr))
    if arr.shape != (n, n):
        raise ShapeError(f"grid field shape {arr.shape} != ({n}, {n})")
    return arr


def solve_poisson_fd(grid_n: int, f_values, g_boundary) -> np.ndarray:
    """Solve lap(w) = f on (-1,1)^2 with w = g on the boundary.

    Uses the standard 5-point stencil on a uniform grid_n x grid_n mesh and
    conjugate gradients on the interior unknowns. Returns the full grid
    as an array indexed [iy, ix].
    """
    if grid_n < 3:
        raise ValueError(f"grid_n must be >= 3, got {grid_n}")
    _, axis = grid_coordinates(grid_n)
    h = axis[1] - axis[0]
    f = _as_grid_field(f_values, axis)
    g = _as_grid_field(g_boundary, axis)

    w = np.zeros((grid_n, grid_n))
    w[0, :] = g[0, :]
    w[-1, :] = g[-1, :]
    w[:, 0] = g[:, 0]
    w[:, -1] = g[:, -1]

    inner = slice(1, -1)
    rhs = -(h * h) * f[inner, inner]
    rhs[0, :] += w[0, 1:-1]
    rhs[-1, :] += w[-1, 1:-1]
    rhs[:, 0] += w[1:-1, 0]
    rhs[:, -1] += w[1:-1, -1]

    def apply_op(u: np.ndarray) -> np.ndarray:
        # 4u - sum of interior neighbours (boundary terms live in rhs).
        out = 4.0 * u
        out[1:, :] -= u[:-1, :]
        out[:-1, :] -= u[1:, :]
        out[:, 1:] -= u[:, :-1]
        out[:, :-1] -= u[:, 1:]
        return out

    w[inner, inner] = _conjugate_gradient(apply_op, rhs)
    return w


def _conjugate_gradient(apply_op, rhs: np.ndarray, rtol: float = 1e-12) -> np.ndarray:
    u = np.zeros_like(rhs)
    r = rhs - apply_op(u)
    p = r.copy()
    rr = float(np.sum(r * r))
    target = rtol * max(1.0, float(np.sqrt(np.sum(rhs * rhs))))
    max_iter = 20 * rhs.size + 100
    for _ in range(max_iter):
        if np.sqrt(rr) <= target:
            return u
        ap = apply_op(p)
        alpha = rr / float(np.sum(p * ap))
        u += alpha * p
        r -= alpha * ap
        rr_new = float(np.sum(r * r))
        p = r + (rr_new / rr) * p
        rr = rr_new
    if np.sqrt(rr) <= target:
        return u
    raise SolverError(f"conjugate gradient stalled at residual {np.sqrt(rr):.3e}")


def _sqrt_substitution(w: np.ndarray, context: str) -> np.ndarray:
    if np.min(w) <= 0.0:
        raise NegativeSubstitutionError(
            f"{context}: squared-pressure field has min {np.min(w):.3e} <= 0"
        )
    return np.sqrt(w)


def gen_example1(betas, grid_n: int, seed: int = 0) -> OperatorDataset:
    """Forward problem with conductivity kappa*p: constant inputs beta,
    pressure fields as outputs.

    Solves -div(beta p grad p) = 1 with p = cos(x) on the boundary via
    w = p^2 (lap w = -2/beta, w = cos^2(x) on the boundary). The input
    sensor is the single point (0,0); outputs live on all grid nodes.
    """
    betas = np.asarray(betas, dtype=np.float64).ravel()
    # Positivity is what the substitution needs; the experiment range
    # [1, 1000] is only the default generation window.
    if betas.size == 0 or np.min(betas) <= 0.0:
        raise ValueError("betas must be positive")
    nodes, axis = grid_coordinates(grid_n)

    # lap w is linear in the source, so two solves cover every beta:
    # w_beta = w_h + w_p / beta.
    g_sq = lambda x, y: np.cos(x) ** 2
    w_h = solve_poisson_fd(grid_n, 0.0, g_sq)
    w_p = solve_poisson_fd(grid_n, -2.0, 0.0)

    u = np.empty((nodes.shape[0], betas.size))
    for k, beta in enumerate(betas):
        w = w_h + w_p / beta
        p = _sqrt_substitution(w, f"beta={beta}")
        u[:, k] = p.ravel()

    return OperatorDataset(
        x_sensors=np.array([[0.0, 0.0]]),
        y_sensors=nodes,
        f_matrix=betas[:, None].copy(),
        u_matrix=u,
        meta={"generator": "ex1", "grid_n": grid_n, "seed": seed},
    )


def _disk_kappa(x: np.ndarray, y: np.ndarray, beta: float) -> np.ndarray:
    return np.where(x * x + y * y <= 0.25, beta, 1.0)


def gen_example2(betas, grid_n: int, seed: int = 0) -> OperatorDataset:
    """Inverse problem with a discontinuous conductivity.

    For each beta, solves -div(kappa grad p) = 0 with p = 0 on the top
    edge, inward flux 1 on the bottom edge and no flux on the sides,
    where kappa is beta inside the disk of radius 0.5 and 1 outside.
    Inputs are the pressure fields; outputs are the kappa fields.
    """
    betas = np.asarray(betas, dtype=np.float64).ravel()
    lo, hi = BETA_RANGE_EX2
    if betas.size == 0 or np.min(betas) < lo or np.max(betas) > hi:
        raise ValueError(f"betas must lie in [{lo}, {hi}]")
    nodes, axis = grid_coordinates(grid_n)
    n = grid_n

    f = np.empty((betas.size, nodes.shape[0]))
    u = np.empty((nodes.shape[0], betas.size))
    for k, beta in enumerate(betas):
        p = _solve_mixed_darcy(n, axis, beta)
        f[k] = p.ravel()
        xg, yg = nodes[:, 0], nodes[:, 1]
        u[:, k] = _disk_kappa(xg, yg, beta)

    return OperatorDataset(
        x_sensors=nodes.copy(),
        y_sensors=nodes,
        f_matrix=f,
        u_matrix=u,
        meta={"generator": "ex2", "grid_n": grid_n, "seed": seed},
    )


def _solve_mixed_darcy(n: int, axis: np.ndarray, beta: float) -> np.ndarray:
    """Mixed-boundary Darcy solve for gen_example2 on the interior nodes.

    Boundary handling: Dirichlet p=0 on the top row; one-sided flux
    stencils eliminate the bottom (unit inward flux) and side (no-flux)
    boundary nodes, leaving a symmetric positive-definite interior system
    solved by conjugate gradients.
    """
    h = axis[1] - axis[0]

    def face_kappa(xa, ya, xb, yb):
        xm, ym = 0.5 * (xa + xb), 0.5 * (ya + yb)
        return _disk_kappa(xm, ym, beta)

    xs = axis
    # Interior unknowns p[iy, ix], iy/ix in 1..n-2.
    xx, yy = np.meshgrid(xs[1:-1], xs[1:-1], indexing="xy")
    k_e = face_kappa(xx, yy, xx + h, yy)
    k_w = face_kappa(xx, yy, xx - h, yy)
    k_n = face_kappa(xx, yy, xx, yy + h)
    k_s = face_kappa(xx, yy, xx, yy - h)

    # Decouple faces that touch an eliminated Neumann boundary node:
    # no-flux sides drop out entirely; the bottom face contributes the
    # prescribed flux to the rhs.
    k_w_eff = k_w.copy()
    k_w_eff[:, 0] = 0.0
    k_e_eff = k_e.copy()
    k_e_eff[:, -1] = 0.0
    k_s_eff = k_s.copy()
    k_s_eff[0, :] = 0.0

    diag = k_e_eff + k_w_eff + k_n + k_s_eff

    rhs = np.zeros_like(xx)
    rhs[0, :] += 1.0 / h  # inward unit flux across the bottom boundary
    # Top neighbours are Dirichlet zero: no rhs contribution.

    def apply_op(p: np.ndarray) -> np.ndarray:
        out = diag * p
        out[:, 1:] -= k_w_eff[:, 1:] * p[:, :-1]
        out[:, :-1] -= k_e_eff[:, :-1] * p[:, 1:]
        out[1:, :] -= k_s_eff[1:, :] * p[:-1, :]
        out[:-1, :] -= k_n[:-1, :] * p[1:, :]
        return out

    p_int = _conjugate_gradient(apply_op, rhs * h * h)

    p = np.zeros((n, n))
    p[1:-1, 1:-1] = p_int
    p[-1, :] = 0.0  # top Dirichlet
    # Side no-flux: copy the adjacent interior column.
    p[1:-1, 0] = p_int[:, 0]
    p[1:-1, -1] = p_int[:, -1]
    # Bottom flux 1: one-sided difference kappa * (p1 - p0) / h = 1.
    xb = xs
    kb = face_kappa(xb, np.full_like(xb, xs[0]), xb, np.full_like(xb, xs[0] + h))
    p[0, 1:-1] = p[1, 1:-1] - h / kb[1:-1]
    p[0, 0] = p[1, 0] - h / kb[0]
    p[0, -1] = p[1, -1] - h / kb[-1]
    # Side corners follow the side rule.
    p[-1, 0] = 0.0
    p[-1, -1] = 0.0
    return p


def gen_example3(triplets, grid_n: int, seed: int = 0) -> OperatorDataset:
    """Forward problem with inputs (f, kappa, g), all constants.

    Solves -div(kappa p grad p) = f with p = g on the boundary via
    w = p^2: lap w = -2 f / kappa with w = g^2 on the boundary, hence
    w = g^2 + (f/kappa) * w_p for a single particular solve w_p.
    """
    trips = np.asarray(triplets, dtype=np.float64)
    if trips.ndim != 2 or trips.shape[1] != 3:
        raise ShapeError(f"triplets must be K x 3, got {trips.shape}")
    lo, hi = TRIPLET_RANGE_EX3
    if np.min(trips) < lo or np.max(trips) > hi:
        raise ValueError(f"triplet entries must lie in [{lo}, {hi}]")
    nodes, _ = grid_coordinates(grid_n)

    w_p = solve_poisson_fd(grid_n, -2.0, 0.0)

    u = np.empty((nodes.shape[0], trips.shape[0]))
    for k, (f_val, kappa, g_val) in enumerate(trips):
        w = g_val * g_val + (f_val / kappa) * w_p
        p = _sqrt_substitution(w, f"triplet={tuple(trips[k])}")
        u[:, k] = p.ravel()

    return OperatorDataset(
        x_sensors=np.array([[0.0], [1.0], [2.0]]),
        y_sensors=nodes,
        f_matrix=trips.copy(),
        u_matrix=u,
        meta={"generator": "ex3", "grid_n": grid_n, "seed": seed},
    )


def triplet_grid_sample(k: int, seed: int = 0) -> np.ndarray:
    """Sample k triplets without replacement from the lattice
    {(i/10, j/10, l/10) : 1 <= i,j,l <= 100}."""
    total = 100**3
    if not 1 <= k <= total:
        raise ValueError(f"k must lie in [1, {total}]")
    rng = np.random.default_rng(seed)
    flat = rng.choice(total, size=k, replace=False)
    i = flat // 10000
    j = (flat // 100) % 100
    l = flat % 100
    return np.column_stack([(i + 1) / 10.0, (j + 1) / 10.0, (l + 1) / 10.0])


def split_dataset(data: OperatorDataset, train_fraction: float, seed: int = 0) -> OperatorDataset:
    """Return a copy of the dataset with a seeded random train/test split."""
    if not 0.0 < train_fraction < 1.0:
        raise ValueError(f"train_fraction must be in (0,1), got {train_fraction}")
    k = data.n_samples
    perm = np.random.default_rng(seed).permutation(k)
    n_train = int(round(k * train_fraction))
    out = OperatorDataset(
        x_sensors=data.x_sensors,
        y_sensors=data.y_sensors,
        f_matrix=data.f_matrix,
        u_matrix=data.u_matrix,
        train_idx=np.sort(perm[:n_train]),
        test_idx=np.sort(perm[n_train:]),
        meta={**data.meta, "split_seed": seed, "train_fraction": train_fraction},
    )
    out.validate()
    return out


def subsample_output_sensors(data: OperatorDataset, m_y: int, seed: int = 0) -> OperatorDataset:
    """Restrict outputs to m_y sensors drawn uniformly without replacement,
    emulating i.i.d. sampling of the output measure."""
    if not 1 <= m_y <= data.m_y:
        raise ValueError(f"m_y must lie in [1, {data.m_y}], got {m_y}")
    rng = np.random.default_rng(seed)
    rows = np.sort(rng.choice(data.m_y, size=m_y, replace=False))
    return OperatorDataset(
        x_sensors=data.x_sensors,
        y_sensors=data.y_sensors[rows],
        f_matrix=data.f_matrix,
        u_matrix=data.u_matrix[rows],
        train_idx=data.train_idx,
        test_idx=data.test_idx,
        meta={**data.meta, "sensor_subsample": m_y, "sensor_seed": seed},
    )


def _write_blob(path: Path, arr: np.ndarray) -> None:
    path.write_bytes(np.ascontiguousarray(arr, dtype="<f8").tobytes())


def _read_blob(path: Path, shape: tuple[int, ...]) -> np.ndarray:
    expected = int(np.prod(shape)) * 8
    raw = path.read_bytes()
    if len(raw) != expected:
        raise CorruptDatasetError(
            f"{path.name}: expected {expected} bytes for shape {shape}, got {len(raw)}"
        )
    return np.frombuffer(raw, dtype="<f8").astype(np.float64).reshape(shape)


def save_dataset(data: OperatorDataset, directory) -> None:
    """Write manifest.json plus little-endian float64 blobs."""
    data.validate()
    directory = Path(directory)
    directory.mkdir(parents=True, exist_ok=True)
    manifest = {
        "name": data.meta.get("generator", "dataset"),
        "generator": data.meta.get("generator"),
        "params": {
            k: v for k, v in data.meta.items() if k not in ("generator",)
        },
        "d_x": int(data.x_sensors.shape[1]),
        "d_y": int(data.d_y),
        "m_x": int(data.m_x),
        "m_y": int(data.m_y),
        "K": int(data.n_samples),
        "dtype": "f64le",
        "split": None
        if data.train_idx is None
        else {
            "train": data.train_idx.tolist(),
            "test": data.test_idx.tolist(),
        },
    }
    (directory / "manifest.json").write_text(
        json.dumps(manifest, indent=2, sort_keys=True) + "\n"
    )
    _write_blob(directory / "x_sensors.bin", data.x_sensors)
    _write_blob(directory / "y_sensors.bin", data.y_sensors)
    _write_blob(directory / "F.bin", data.f_matrix)
    _write_blob(directory / "U.bin", data.u_matrix)


def load_dataset(directory) -> OperatorDataset:
    directory = Path(directory)
    manifest_path = directory / "manifest.json"
    if not manifest_path.exists():
        raise CorruptDatasetError(f"missing manifest.json in {directory}")
    try:
        manifest = json.loads(manifest_path.read_text())
    except json.JSONDecodeError as exc:
        raise CorruptDatasetError(f"unreadable manifest: {exc}") from exc
    try:
        m_x, m_y, k = manifest["m_x"], manifest["m_y"], manifest["K"]
        d_x, d_y = manifest["d_x"], manifest["d_y"]
    except KeyError as exc:
        raise CorruptDatasetError(f"manifest missing key {exc}") from exc

    data = OperatorDataset(
        x_sensors=_read_blob(directory / "x_sensors.bin", (m_x, d_x)),
        y_sensors=_read_blob(directory / "y_sensors.bin", (m_y, d_y)),
        f_matrix=_read_blob(directory / "F.bin", (k, m_x)),
        u_matrix=_read_blob(directory / "U.bin", (m_y, k)),
        meta={"generator": manifest.get("generator"), **manifest.get("params", {})},
    )
    split = manifest.get("split")
    if split is not None:
        data.train_idx = np.asarray(split["train"], dtype=np.int64)
        data.test_idx = np.asarray(split["test"], dtype=np.int64)
    try:
        data.validate()
    except (ShapeError, ValueError) as exc:
        raise CorruptDatasetError(f"dataset fails validation: {exc}") from exc
    return data
