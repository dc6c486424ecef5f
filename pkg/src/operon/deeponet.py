"""DeepONet assembly: trunk/branch matrices, prediction, matrix-form loss,
and the on-disk model format.

The trunk output is augmented with a constant-1 component, so a model of
width N has a trunk producing N values and a branch producing N + 1
coefficients. An optional square matrix T reparameterizes the trunk basis:
predictions become phi(y)^T T c(f).
"""

from __future__ import annotations

import json
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from . import nn
from .data import OperatorDataset
from .errors import CorruptDatasetError, ShapeError
from .nn import GradientSet, Mlp


@dataclass
class DeepONetModel:
    trunk: Mlp
    branch: Mlp
    t_matrix: np.ndarray | None
    width: int

    def validate(self) -> None:
        n = self.width
        if self.trunk.arch[-1] != n:
            raise ShapeError(f"trunk output {self.trunk.arch[-1]} != width {n}")
        if self.branch.arch[-1] != n + 1:
            raise ShapeError(
                f"branch output {self.branch.arch[-1]} != width+1 {n + 1}"
            )
        if self.t_matrix is not None:
            if self.t_matrix.shape != (n + 1, n + 1):
                raise ShapeError(
                    f"t_matrix shape {self.t_matrix.shape} != ({n + 1}, {n + 1})"
                )
            if not np.all(np.isfinite(self.t_matrix)):
                raise ValueError("t_matrix contains NaN or Inf")


def assemble_phi(trunk: Mlp, y_sensors) -> np.ndarray:
    """Trunk value matrix: row i is (1, phi_1(y_i), ..., phi_N(y_i))."""
    values = nn.forward(trunk, y_sensors)
    ones = np.ones((values.shape[0], 1))
    return np.hstack([ones, values])


def assemble_c(branch: Mlp, f_inputs) -> np.ndarray:
    """Coefficient matrix: column k is the branch output for input row k."""
    return nn.forward(branch, f_inputs).T


def predict(model: DeepONetModel, f, y_points) -> np.ndarray:
    """Evaluate the operator network for one input at many output points."""
    f = np.ascontiguousarray(f, dtype=np.float64).ravel()
    coeff = nn.forward(model.branch, f[None, :])[0]
    if model.t_matrix is not None:
        coeff = model.t_matrix @ coeff
    phi = assemble_phi(model.trunk, y_points)
    return phi @ coeff


def _loss_from_matrices(phi: np.ndarray, c: np.ndarray, u: np.ndarray) -> float:
    resid = phi @ c - u
    return float(np.sum(resid * resid)) / (u.shape[0] * u.shape[1])


def monolithic_loss(model: DeepONetModel, data: OperatorDataset) -> float:
    """Mean squared residual over the training split:
    ||Phi [T] C - U||_F^2 / (K m_y)."""
    phi = assemble_phi(model.trunk, data.y_sensors)
    if model.t_matrix is not None:
        phi = phi @ model.t_matrix
    c = assemble_c(model.branch, data.train_f())
    return _loss_from_matrices(phi, c, data.train_u())


def monolithic_loss_and_grads(
    model: DeepONetModel, f_inputs: np.ndarray, u: np.ndarray, y_sensors: np.ndarray
) -> tuple[float, GradientSet, GradientSet]:
    """Loss plus exact gradients for both sub-networks (no T matrix)."""
    if model.t_matrix is not None:
        raise ValueError("joint training applies to models without a T matrix")
    m_y, k = u.shape
    phi = assemble_phi(model.trunk, y_sensors)
    c = assemble_c(model.branch, f_inputs)
    resid = phi @ c - u
    loss = float(np.sum(resid * resid)) / (m_y * k)
    scale = 2.0 / (m_y * k)
    # d loss / d phi, dropping the constant column for the trunk.
    trunk_upstream = scale * (resid @ c.T)[:, 1:]
    branch_upstream = scale * (phi.T @ resid).T
    trunk_grads = nn.backward(model.trunk, y_sensors, trunk_upstream)
    branch_grads = nn.backward(model.branch, f_inputs, branch_upstream)
    return loss, trunk_grads, branch_grads


MODEL_MANIFEST = "model.json"


def _pack_mlp(net: Mlp) -> bytes:
    chunks = []
    for w, b in zip(net.weights, net.biases):
        chunks.append(np.ascontiguousarray(w, dtype="<f8").tobytes())
        chunks.append(np.ascontiguousarray(b, dtype="<f8").tobytes())
    return b"".join(chunks)


def _unpack_mlp(raw: bytes, arch: tuple[int, ...], activation: str) -> Mlp:
    expected = 8 * sum(
        fan_out * fan_in + fan_out for fan_in, fan_out in zip(arch[:-1], arch[1:])
    )
    if len(raw) != expected:
        raise CorruptDatasetError(
            f"network blob has {len(raw)} bytes, expected {expected} for arch {arch}"
        )
    weights, biases = [], []
    offset = 0
    for fan_in, fan_out in zip(arch[:-1], arch[1:]):
        n_w = fan_out * fan_in * 8
        weights.append(
            np.frombuffer(raw, dtype="<f8", count=fan_out * fan_in, offset=offset)
            .astype(np.float64)
            .reshape(fan_out, fan_in)
        )
        offset += n_w
        biases.append(
            np.frombuffer(raw, dtype="<f8", count=fan_out, offset=offset).astype(
                np.float64
            )
        )
        offset += fan_out * 8
    return Mlp(arch=arch, weights=weights, biases=biases, activation=activation)


def save_model(model: DeepONetModel, directory) -> None:
    model.validate()
    directory = Path(directory)
    directory.mkdir(parents=True, exist_ok=True)
    manifest = {
        "trunk_arch": list(model.trunk.arch),
        "branch_arch": list(model.branch.arch),
        "trunk_activation": model.trunk.activation,
        "branch_activation": model.branch.activation,
        "width": model.width,
        "has_t_matrix": model.t_matrix is not None,
        "dtype": "f64le",
    }
    (directory / MODEL_MANIFEST).write_text(
        json.dumps(manifest, indent=2, sort_keys=True) + "\n"
    )
    (directory / "trunk.bin").write_bytes(_pack_mlp(model.trunk))
    (directory / "branch.bin").write_bytes(_pack_mlp(model.branch))
    if model.t_matrix is not None:
        (directory / "t_matrix.bin").write_bytes(
            np.ascontiguousarray(model.t_matrix, dtype="<f8").tobytes()
        )


def load_model(directory) -> DeepONetModel:
    directory = Path(directory)
    manifest_path = directory / MODEL_MANIFEST
    if not manifest_path.exists():
        raise CorruptDatasetError(f"missing {MODEL_MANIFEST} in {directory}")
    manifest = json.loads(manifest_path.read_text())
    trunk = _unpack_mlp(
        (directory / "trunk.bin").read_bytes(),
        tuple(manifest["trunk_arch"]),
        manifest["trunk_activation"],
    )
    branch = _unpack_mlp(
        (directory / "branch.bin").read_bytes(),
        tuple(manifest["branch_arch"]),
        manifest["branch_activation"],
    )
    t_matrix = None
    if manifest["has_t_matrix"]:
        n1 = manifest["width"] + 1
        raw = (directory / "t_matrix.bin").read_bytes()
        if len(raw) != 8 * n1 * n1:
            raise CorruptDatasetError(
                f"t_matrix.bin has {len(raw)} bytes, expected {8 * n1 * n1}"
            )
        t_matrix = np.frombuffer(raw, dtype="<f8").astype(np.float64).reshape(n1, n1)
    model = DeepONetModel(
        trunk=trunk, branch=branch, t_matrix=t_matrix, width=manifest["width"]
    )
    model.validate()
    return model
