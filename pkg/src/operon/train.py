"""Training procedures: monolithic joint descent (van), the two-step
method with trunk-basis orthonormalization (two_step), and its ablation
without the QR step (two_step_no_qr).

Step 1 trains the trunk jointly with a free coefficient matrix A on
||Phi(mu) A - U||_F^2 / (K m_y). Step 2 regresses the branch onto the
orthonormalized coefficients R A (or raw A for the ablation) under
||C(theta) - target||_F^2 / K.
"""

from __future__ import annotations

import csv
import json
import time
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from . import linalg, nn
from .data import OperatorDataset
from .deeponet import (
    DeepONetModel,
    assemble_c,
    assemble_phi,
    monolithic_loss,
    monolithic_loss_and_grads,
)
from .errors import NonFiniteGradientError, RankDeficientError
from .nn import Mlp
from .optimize import AdamState, adam_step, step_decay

METHODS = ("van", "two_step", "two_step_no_qr")
METHOD_TAGS = {"van": "VAN", "two_step": "2ST", "two_step_no_qr": "2STw/oQR"}


@dataclass
class TrainConfig:
    method: str = "two_step"
    iters_trunk: int = 1000
    iters_branch: int = 1000
    iters_mono: int = 1000
    lr: float = 1e-3
    schedule_factor: float | None = None
    schedule_every: int | None = None
    seed: int = 0
    a_init_scale: float = 0.1
    ls_refit_every: int = 0

    def validate(self) -> None:
        if self.method not in METHODS:
            raise ValueError(f"method must be one of {METHODS}, got {self.method!r}")
        for name in ("iters_trunk", "iters_branch", "iters_mono"):
            if getattr(self, name) < 1:
                raise ValueError(f"{name} must be >= 1")
        if self.lr <= 0.0:
            raise ValueError(f"lr must be > 0, got {self.lr}")
        if (self.schedule_factor is None) != (self.schedule_every is None):
            raise ValueError("schedule_factor and schedule_every must be set together")
        if self.schedule_factor is not None:
            if self.schedule_factor <= 1.0 or self.schedule_every < 1:
                raise ValueError("schedule needs factor > 1 and every >= 1")
        if self.ls_refit_every < 0:
            raise ValueError("ls_refit_every must be >= 0")

    def lr_at(self, t: int) -> float:
        if self.schedule_factor is None:
            return self.lr
        return step_decay(self.lr, self.schedule_factor, self.schedule_every, t)


@dataclass
class TrainReport:
    method: str
    loss_trace: list[float]
    branch_trace: list[float] | None
    final_trunk_loss: float | None
    final_branch_loss: float | None
    final_monolithic_loss: float
    wall_seconds: float

    def to_dict(self) -> dict:
        return {
            "method": self.method,
            "loss_trace": self.loss_trace,
            "branch_trace": self.branch_trace,
            "final_trunk_loss": self.final_trunk_loss,
            "final_branch_loss": self.final_branch_loss,
            "final_monolithic_loss": self.final_monolithic_loss,
            "wall_seconds": self.wall_seconds,
        }


def _write_trace_csv(path: Path, trace: list[float]) -> None:
    with path.open("w", newline="") as handle:
        writer = csv.writer(handle)
        writer.writerow(["iter", "loss"])
        for i, value in enumerate(trace):
            writer.writerow([i, repr(value)])


def save_report(report: TrainReport, directory) -> None:
    """Write report.json plus one CSV per loss trace."""
    directory = Path(directory)
    directory.mkdir(parents=True, exist_ok=True)
    (directory / "report.json").write_text(
        json.dumps(report.to_dict(), indent=2, sort_keys=True) + "\n"
    )
    if report.method == "van":
        _write_trace_csv(directory / "trace_mono.csv", report.loss_trace)
    else:
        _write_trace_csv(directory / "trace_trunk.csv", report.loss_trace)
        if report.branch_trace is not None:
            _write_trace_csv(directory / "trace_branch.csv", report.branch_trace)


def _abort_with_iteration(exc: NonFiniteGradientError, iteration: int) -> None:
    raise NonFiniteGradientError(f"{exc} (at iteration {iteration})") from exc


def train_monolithic(
    data: OperatorDataset, model: DeepONetModel, cfg: TrainConfig
) -> tuple[DeepONetModel, TrainReport]:
    """Full-batch Adam on trunk and branch jointly."""
    cfg.validate()
    if model.t_matrix is not None:
        raise ValueError("monolithic training starts from a model without T")
    start = time.perf_counter()
    f_train, u_train = data.train_f(), data.train_u()
    params = nn.parameters(model.trunk) + nn.parameters(model.branch)
    state = AdamState.for_params(params, lr=cfg.lr)
    trace: list[float] = []
    for t in range(1, cfg.iters_mono + 1):
        loss, trunk_g, branch_g = monolithic_loss_and_grads(
            model, f_train, u_train, data.y_sensors
        )
        trace.append(loss)
        grads = nn.gradient_arrays(trunk_g) + nn.gradient_arrays(branch_g)
        state.lr = cfg.lr_at(state.t)
        try:
            adam_step(params, grads, state)
        except NonFiniteGradientError as exc:
            _abort_with_iteration(exc, t)
    final = monolithic_loss(model, data)
    report = TrainReport(
        method="van",
        loss_trace=trace,
        branch_trace=None,
        final_trunk_loss=None,
        final_branch_loss=None,
        final_monolithic_loss=final,
        wall_seconds=time.perf_counter() - start,
    )
    return model, report


def train_trunk_step1(
    data: OperatorDataset, trunk: Mlp, cfg: TrainConfig
) -> tuple[Mlp, np.ndarray, float, list[float]]:
    """Minimize ||Phi(mu) A - U||_F^2/(K m_y) over trunk parameters and the
    free matrix A. Returns (trunk, a_star, final_loss, trace).

    With cfg.ls_refit_every = r > 0, A is replaced by the exact
    least-squares solution every r iterations (and once more after the
    final trunk update)."""
    cfg.validate()
    u_train = data.train_u()
    m_y, k = u_train.shape
    n_width = trunk.arch[-1]
    if n_width + 1 > m_y:
        raise ValueError(
            f"width+1 ({n_width + 1}) must not exceed the number of output "
            f"sensors ({m_y})"
        )
    rng = np.random.default_rng(cfg.seed)
    a = rng.normal(0.0, cfg.a_init_scale, size=(n_width + 1, k))

    params = nn.parameters(trunk) + [a]
    state = AdamState.for_params(params, lr=cfg.lr)
    scale = 2.0 / (m_y * k)
    trace: list[float] = []
    for t in range(1, cfg.iters_trunk + 1):
        phi = assemble_phi(trunk, data.y_sensors)
        if cfg.ls_refit_every > 0 and (t - 1) % cfg.ls_refit_every == 0:
            a[...] = linalg.least_squares(phi, u_train)
        resid = phi @ a - u_train
        loss = float(np.sum(resid * resid)) / (m_y * k)
        trace.append(loss)
        trunk_upstream = scale * (resid @ a.T)[:, 1:]
        trunk_grads = nn.backward(trunk, data.y_sensors, trunk_upstream)
        a_grad = scale * (phi.T @ resid)
        grads = nn.gradient_arrays(trunk_grads) + [a_grad]
        state.lr = cfg.lr_at(state.t)
        try:
            adam_step(params, grads, state)
        except NonFiniteGradientError as exc:
            _abort_with_iteration(exc, t)

    phi = assemble_phi(trunk, data.y_sensors)
    if cfg.ls_refit_every > 0:
        a[...] = linalg.least_squares(phi, u_train)
    resid = phi @ a - u_train
    final_loss = float(np.sum(resid * resid)) / (m_y * k)
    return trunk, a, final_loss, trace


def orthonormalize(
    trunk: Mlp, a_star: np.ndarray, y_sensors: np.ndarray
) -> tuple[np.ndarray, np.ndarray]:
    """QR-orthonormalize the trunk basis on the training sensors.

    Returns (t_star, target) where t_star is the inverse of the triangular
    factor (materialized by triangular solves) and target = R A is what
    the branch regresses on."""
    phi = assemble_phi(trunk, y_sensors)
    try:
        qr = linalg.householder_qr(phi)
    except RankDeficientError as exc:
        raise RankDeficientError(
            f"{exc}; the trunk basis is numerically dependent on the training "
            f"sensors - reduce the width N or add output sensors"
        ) from exc
    n1 = phi.shape[1]
    t_star = linalg.solve_upper_triangular(qr.r, np.eye(n1))
    target = qr.r @ a_star
    return t_star, target


def train_branch_step2(
    f_inputs: np.ndarray, target: np.ndarray, branch: Mlp, cfg: TrainConfig
) -> tuple[Mlp, float, list[float]]:
    """Fit the branch to the step-1 coefficients:
    minimize ||C(theta) - target||_F^2 / K by full-batch Adam."""
    cfg.validate()
    n1, k = target.shape
    if branch.arch[-1] != n1:
        raise ValueError(f"branch output {branch.arch[-1]} != target rows {n1}")
    params = nn.parameters(branch)
    state = AdamState.for_params(params, lr=cfg.lr)
    trace: list[float] = []
    for t in range(1, cfg.iters_branch + 1):
        c = assemble_c(branch, f_inputs)
        diff = c - target
        loss = float(np.sum(diff * diff)) / k
        trace.append(loss)
        upstream = (2.0 / k) * diff.T
        grads = nn.gradient_arrays(nn.backward(branch, f_inputs, upstream))
        state.lr = cfg.lr_at(state.t)
        try:
            adam_step(params, grads, state)
        except NonFiniteGradientError as exc:
            _abort_with_iteration(exc, t)
    c = assemble_c(branch, f_inputs)
    diff = c - target
    final_loss = float(np.sum(diff * diff)) / k
    return branch, final_loss, trace


def train_two_step(
    data: OperatorDataset, model: DeepONetModel, cfg: TrainConfig
) -> tuple[DeepONetModel, TrainReport]:
    """Step 1 (trunk + free A), orthonormalization (skipped for the no-QR
    ablation, where target = A and T = I), then step 2 (branch)."""
    cfg.validate()
    if model.t_matrix is not None:
        raise ValueError("two-step training starts from a model without T")
    start = time.perf_counter()
    _, a_star, trunk_loss, trunk_trace = train_trunk_step1(data, model.trunk, cfg)
    if cfg.method == "two_step_no_qr":
        t_star = np.eye(model.width + 1)
        target = a_star
    else:
        t_star, target = orthonormalize(model.trunk, a_star, data.y_sensors)
    _, branch_loss, branch_trace = train_branch_step2(
        data.train_f(), target, model.branch, cfg
    )
    model.t_matrix = t_star
    final = monolithic_loss(model, data)
    report = TrainReport(
        method="2st-noqr" if cfg.method == "two_step_no_qr" else "2st",
        loss_trace=trunk_trace,
        branch_trace=branch_trace,
        final_trunk_loss=trunk_loss,
        final_branch_loss=branch_loss,
        final_monolithic_loss=final,
        wall_seconds=time.perf_counter() - start,
    )
    return model, report


def _min_norm_solve(design: np.ndarray, rhs: np.ndarray) -> np.ndarray:
    """Minimum-norm x with design @ x ~= rhs for a wide design matrix.

    Solved through the thin SVD. Smooth feature matrices sit right at the
    numerical-rank boundary, so retention goes down to the rounding floor
    (one-sided Jacobi resolves small singular values to high relative
    accuracy); only genuine noise directions are dropped, keeping the
    interpolation residual at the discarded-singular-value level."""
    svd = linalg.jacobi_svd(design, rank_tol=1e-14)
    return svd.v @ ((svd.u.T @ rhs) / svd.sigma[:, None])


def fit_interpolating_branch(
    f_inputs: np.ndarray,
    target: np.ndarray,
    width: int | None = None,
    seed: int = 0,
    activation: str = "tanh",
) -> tuple[Mlp, float]:
    """Construct a two-layer branch that interpolates the step-2 target.

    The hidden layer is drawn at random and frozen; the output layer is the
    minimum-norm exact solution of the resulting linear system, so for
    width >= K the fit interpolates up to rounding. Returns (branch, loss)."""
    f_inputs = np.ascontiguousarray(f_inputs, dtype=np.float64)
    k, m_x = f_inputs.shape
    n1 = target.shape[0]
    if target.shape[1] != k:
        raise ValueError(f"target columns {target.shape[1]} != K {k}")
    if width is None:
        width = max(2 * k, 16)
    rng = np.random.default_rng(seed)
    # Fold a per-coordinate rescaling of the inputs onto [-1, 1] into the
    # first layer so the random features stay diverse whatever the raw
    # input range is.
    lo = f_inputs.min(axis=0)
    hi = f_inputs.max(axis=0)
    center = 0.5 * (hi + lo)
    halfspan = np.where(hi > lo, 0.5 * (hi - lo), 1.0)
    raw = rng.normal(0.0, 1.2, (width, m_x))
    w1 = raw / halfspan
    b1 = rng.normal(0.0, 0.8, width) - w1 @ center
    hidden = np.tanh(f_inputs @ w1.T + b1) if activation == "tanh" else np.maximum(
        f_inputs @ w1.T + b1, 0.0
    )
    design = np.hstack([hidden, np.ones((k, 1))])
    coeffs = _min_norm_solve(design, target.T)  # (width+1) x n1
    w2 = coeffs[:-1].T
    b2 = coeffs[-1]
    branch = Mlp(
        arch=(m_x, width, n1),
        weights=[w1, w2],
        biases=[b1, b2],
        activation=activation,
    )
    c = assemble_c(branch, f_inputs)
    diff = c - target
    return branch, float(np.sum(diff * diff)) / k


@dataclass
class EquivalenceCheck:
    """Machine check that the assembled two-step loss reproduces the step-1
    loss once the branch interpolates its target."""

    applicable: bool
    passed: bool
    step1_loss: float
    assembled_loss: float
    gap: float
    tolerance: float


def check_two_step_equivalence(
    data: OperatorDataset,
    model: DeepONetModel,
    step1_loss: float,
    step2_loss: float,
    target: np.ndarray,
) -> EquivalenceCheck:
    """The identity Phi T (R A) = Phi A makes the assembled loss equal the
    step-1 loss whenever step 2 interpolates exactly.

    Applicability requires the relative step-2 residual below 1e-14. A
    branch residual E perturbs the assembled residual by Q E with Q
    orthonormal, so the loss gap is rigorously bounded by
    2 sqrt(step1 * e2) + e2 with e2 = ||E||^2/(K m_y); the tolerance is
    that bound plus 1e-9 relative and a float-rounding cushion."""
    u_train = data.train_u()
    m_y, k = u_train.shape
    data_scale = float(np.sum(u_train * u_train)) / (m_y * k)
    target_scale = float(np.sum(target * target))
    step2_resid_sq = step2_loss * k  # undo the 1/K normalization
    applicable = target_scale > 0.0 and step2_resid_sq <= 1e-14 * target_scale
    assembled = monolithic_loss(model, data)
    gap = abs(assembled - step1_loss)
    induced = step2_resid_sq / (m_y * k)
    tolerance = (
        1e-9 * step1_loss
        + 2.0 * np.sqrt(step1_loss * induced)
        + induced
        + 1e-24 * data_scale
    )
    return EquivalenceCheck(
        applicable=bool(applicable),
        passed=bool(gap <= tolerance),
        step1_loss=step1_loss,
        assembled_loss=assembled,
        gap=gap,
        tolerance=float(tolerance),
    )
