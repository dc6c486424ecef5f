import numpy as np
import pytest

from operon.construct import (
    HatParams,
    build_interpolating_trunk,
    find_separating_direction,
    hat_network,
    verify_zero_loss_pipeline,
)
from operon.data import OperatorDataset
from operon.deeponet import assemble_phi
from operon.errors import DuplicateSensorError, ZeroMatrixError
from operon.linalg import best_rank_k_error, jacobi_svd
from operon.nn import forward


def _power_iteration_rank1(u, iters=500):
    """Independent rank-1 SVD via power iteration on u u^T."""
    rng = np.random.default_rng(0)
    z = rng.normal(size=u.shape[0])
    for _ in range(iters):
        z = u @ (u.T @ z)
        z /= np.linalg.norm(z)
    sigma = np.linalg.norm(u.T @ z)
    return z, sigma


class TestHatNetwork:
    def test_plateau_and_ramp_values(self):
        net = hat_network(HatParams(0.0, 2.0))
        eval_at = lambda t: forward(net, np.array([[t]]))[0, 0]
        assert eval_at(1.0) == pytest.approx(1.0)
        assert eval_at(-0.5) == pytest.approx(0.0)
        assert eval_at(-0.25) == pytest.approx(0.5)

    def test_piecewise_structure_on_fine_grid(self):
        a, b = -0.75, 1.5
        net = hat_network(HatParams(a, b))
        t = np.linspace(a - 2.0, b + 2.0, 2001)
        vals = forward(net, t[:, None])[:, 0]
        # Piecewise-linear bump: 1 on [a,b], 0 beyond half a unit outside,
        # linear ramps 2(t - (a - 1/2)) and 1 - 2(t - b) in between.
        expected = np.where(
            (t >= a) & (t <= b),
            1.0,
            np.where(
                t <= a - 0.5,
                0.0,
                np.where(
                    t < a,
                    2 * (t - (a - 0.5)),
                    np.where(t < b + 0.5, 1 - 2 * (t - b), 0.0),
                ),
            ),
        )
        assert np.max(np.abs(vals - expected)) <= 1e-12
        assert np.all(vals >= 0.0) and np.all(vals <= 1.0)

    def test_invalid_interval(self):
        with pytest.raises(ValueError):
            HatParams(1.0, 1.0)


class TestSeparatingDirection:
    def test_one_dimensional(self):
        d = find_separating_direction(np.array([[0.0], [1.0], [5.0]]), seed=0)
        assert abs(abs(d.v[0]) - 1.0) <= 1e-12
        assert d.scale == pytest.approx(2.0)

    def test_two_dimensional_min_gap(self):
        rng = np.random.default_rng(0)
        y = rng.uniform(-1, 1, (30, 2))
        d = find_separating_direction(y, seed=0)
        proj = d.scale * (y @ d.v)
        gaps = np.abs(proj[:, None] - proj[None, :])[np.triu_indices(30, 1)]
        assert np.min(gaps) >= 2.0 - 1e-9

    def test_unit_norm(self):
        y = np.random.default_rng(1).uniform(-1, 1, (10, 3))
        d = find_separating_direction(y, seed=1)
        assert np.linalg.norm(d.v) == pytest.approx(1.0, abs=1e-12)

    def test_duplicate_sensors(self):
        y = np.array([[0.5, 0.5], [0.5, 0.5], [0.0, 0.0]])
        with pytest.raises(DuplicateSensorError, match="0 and 1"):
            find_separating_direction(y, seed=0)


class TestBuildInterpolatingTrunk:
    def test_zero_loss_when_width_at_least_rank(self):
        rng = np.random.default_rng(0)
        y = rng.uniform(-1, 1, (12, 2))
        u = rng.normal(size=(12, 5))
        trunk, a_star = build_interpolating_trunk(y, u, 5)
        phi = assemble_phi(trunk, y)
        resid = np.sum((phi @ a_star - u) ** 2)
        assert resid <= 1e-16 * np.sum(u * u)

    def test_matches_best_low_rank_error_below_rank(self):
        rng = np.random.default_rng(1)
        y = rng.uniform(-1, 1, (10, 2))
        u = rng.normal(size=(10, 6))
        n = 3
        trunk, a_star = build_interpolating_trunk(y, u, n)
        phi = assemble_phi(trunk, y)
        resid = np.sum((phi @ a_star - u) ** 2)
        ey = best_rank_k_error(u, n)
        assert resid <= ey + 1e-8 * np.sum(u * u)
        assert resid >= ey - 1e-8 * np.sum(u * u)

    def test_rank_one_factor_recovered(self):
        rng = np.random.default_rng(2)
        z = rng.normal(size=(8, 1))
        w = rng.normal(size=(1, 4))
        u = z @ w
        y = rng.uniform(-1, 1, (8, 1))
        z_ref, _ = _power_iteration_rank1(u)
        trunk, a_star = build_interpolating_trunk(y, u, 1)
        vals = forward(trunk, y)[:, 0]
        # agreement up to the SVD sign convention
        sign = np.sign(vals @ z_ref)
        assert np.max(np.abs(vals - sign * z_ref)) <= 1e-10
        phi = assemble_phi(trunk, y)
        assert np.max(np.abs(phi @ a_star - u)) <= 1e-10

    def test_architecture_depth_and_widths(self):
        rng = np.random.default_rng(3)
        m_y = 9
        y = rng.uniform(-1, 1, (m_y, 2))
        u = rng.normal(size=(m_y, 4))
        n = 4
        trunk, _ = build_interpolating_trunk(y, u, n)
        r = min(n, jacobi_svd(u).rank)
        n_tilde = 2 * r + 4
        expected = (2, 4, 4) + (n_tilde,) * (2 * m_y - 2) + (n,)
        assert trunk.arch == expected
        assert len(trunk.weights) == 2 * m_y + 1

    def test_sensor_values_equal_svd_factor(self):
        rng = np.random.default_rng(4)
        y = rng.uniform(-1, 1, (15, 2))
        u = rng.normal(size=(15, 6))
        svd = jacobi_svd(u)
        trunk, _ = build_interpolating_trunk(y, u, 6)
        vals = forward(trunk, y)
        assert np.max(np.abs(vals[:, : svd.rank] - svd.u)) <= 1e-10
        assert np.array_equal(vals[:, svd.rank :], np.zeros((15, 0)))

    def test_padding_columns_zero(self):
        rng = np.random.default_rng(5)
        y = rng.uniform(-1, 1, (8, 2))
        base = rng.normal(size=(8, 2))
        u = base @ rng.normal(size=(2, 5))  # rank 2
        trunk, _ = build_interpolating_trunk(y, u, 4)
        vals = forward(trunk, y)
        assert np.array_equal(vals[:, 2:], np.zeros((8, 2)))

    def test_zero_matrix_rejected(self):
        y = np.random.default_rng(6).uniform(-1, 1, (5, 2))
        with pytest.raises(ZeroMatrixError):
            build_interpolating_trunk(y, np.zeros((5, 3)), 2)


class TestZeroLossPipeline:
    def _dataset(self, seed, m_y=12, k=5):
        rng = np.random.default_rng(seed)
        return OperatorDataset(
            x_sensors=np.zeros((3, 1)),
            y_sensors=rng.uniform(-1, 1, (m_y, 2)),
            f_matrix=rng.normal(size=(k, 3)),
            u_matrix=rng.normal(size=(m_y, k)),
        )

    def test_full_rank_certificate(self):
        data = self._dataset(seed=7)
        rank = jacobi_svd(data.u_matrix).rank
        cert = verify_zero_loss_pipeline(data, rank)
        assert cert.zero_loss_applicable and cert.zero_loss_passed
        assert cert.equivalence_applicable and cert.equivalence_passed
        assert cert.passed
        u_sq = np.sum(data.u_matrix**2)
        assert cert.assembled_loss <= 1e-8 * u_sq / (data.m_y * data.n_samples)

    def test_below_rank_matches_low_rank_bound(self):
        data = self._dataset(seed=8)
        rank = jacobi_svd(data.u_matrix).rank
        cert = verify_zero_loss_pipeline(data, rank - 1)
        assert cert.low_rank_applicable and cert.low_rank_passed
        assert cert.passed
        rel = abs(cert.trunk_residual_sq - cert.eckart_young_bound)
        assert rel <= 1e-6 * cert.eckart_young_bound + 1e-10 * cert.u_norm_sq

    def test_zero_output_matrix_error(self):
        data = self._dataset(seed=9)
        data.u_matrix = np.zeros_like(data.u_matrix)
        with pytest.raises(ZeroMatrixError):
            verify_zero_loss_pipeline(data, 2)

    def test_certificate_serializes(self):
        data = self._dataset(seed=10)
        rank = jacobi_svd(data.u_matrix).rank
        cert = verify_zero_loss_pipeline(data, rank)
        payload = cert.to_dict()
        assert payload["passed"] is True
        assert set(payload) >= {
            "n_width",
            "rank",
            "step1_loss",
            "assembled_loss",
            "zero_loss_passed",
        }
