import numpy as np
import pytest

from dualfpf.errors import GridMismatch, LostPositivity, SingularMatrix
from dualfpf.kalman import integrate_riccati, kalman_gain, run_kalman, steady_error
from dualfpf.model import TimeGrid, aggregate, make_schedule, scalar_model, simulate_truth


class TestGain:
    def test_identity(self):
        assert kalman_gain(np.eye(1), np.eye(1), np.eye(1))[0, 0] == 1.0

    def test_diagonal(self):
        np.testing.assert_allclose(kalman_gain(2 * np.eye(2), np.eye(2), 0.5 * np.eye(2)),
                                   4 * np.eye(2))

    def test_residual_random(self, rng):
        for _ in range(20):
            L = rng.standard_normal((3, 3))
            S = L @ L.T + 0.1 * np.eye(3)
            M = rng.standard_normal((2, 2))
            R = M @ M.T + 0.1 * np.eye(2)
            C = rng.standard_normal((2, 3))
            K = kalman_gain(S, C, R)
            assert np.linalg.norm(K @ R - S @ C.T) <= 1e-12 * np.linalg.norm(S @ C.T)

    def test_singular_r(self):
        with pytest.raises(SingularMatrix):
            kalman_gain(np.eye(2), np.eye(2), np.diag([1.0, 0.0]))


class TestRiccati:
    def test_fixed_point(self, scalar, grid):
        assert np.abs(integrate_riccati(scalar, grid) - 1.0).max() <= 1e-10

    def test_tanh(self, tanh_model, grid):
        cov = integrate_riccati(tanh_model, grid)[:, 0, 0]
        np.testing.assert_allclose(cov, np.tanh(grid.times + np.arctanh(0.5)), atol=1e-6, rtol=0)
        assert cov[-1] == pytest.approx(0.91367, abs=1e-5)

    def test_no_information_limit(self, grid):
        s = make_schedule({"dim_x": 2, "dim_z": 1, "A": 0.0, "C": [[1e-12, 1e-12]], "Q": 1.0,
                           "R": 1.0, "Sigma0": [[1.0, 0.2], [0.2, 0.5]]})
        cov = integrate_riccati(s, grid)
        np.testing.assert_allclose(cov[-1], s.prior_cov + np.eye(2), atol=1e-6)

    def test_symmetric_pd(self, model3, grid):
        cov = integrate_riccati(model3, grid)
        assert np.array_equal(cov, np.swapaxes(cov, 1, 2))
        assert np.linalg.eigvalsh(cov).min() > 0

    def test_time_varying_table(self):
        # A(t) = -t in one dimension, no information: Sigma' = -2t Sigma + 1
        g = TimeGrid.from_horizon(1.0, 1e-3)
        s = make_schedule({"dim_x": 1, "dim_z": 1, "A": (-g.times)[:, None, None].tolist(),
                           "C": [[1e-12]], "Q": 1.0, "R": 1.0, "Sigma0": 1.0}, g)
        fine = np.linspace(0, 1, 20001)
        exact = np.exp(-1.0) * (1.0 + np.trapezoid(np.exp(fine ** 2), fine))
        # linear interpolation of A at RK4 stages is exact for a linear table
        assert integrate_riccati(s, g)[-1, 0, 0] == pytest.approx(exact, abs=1e-6)

    def test_lost_positivity(self):
        s = scalar_model(c=100.0, sigma0=50.0)
        with pytest.raises(LostPositivity, match="reduce dt"):
            integrate_riccati(s, TimeGrid.from_horizon(1.0, 0.1))


class TestRunKalman:
    def test_zero_observations(self, scalar, grid):
        path = run_kalman(scalar, grid, np.zeros(grid.n_steps))
        assert np.all(path.mean == 0.0)

    def test_wrong_length(self, scalar, grid):
        with pytest.raises(GridMismatch):
            run_kalman(scalar, grid, np.zeros(grid.n_steps - 1))

    def test_gain_consistency(self, model3, grid):
        path = run_kalman(model3, grid, simulate_truth(model3, grid, 0).dz)
        mats = model3.on(grid.times)
        lhs = path.gain @ mats.R
        rhs = path.cov @ np.swapaxes(mats.C, 1, 2)
        assert np.abs(lhs - rhs).max() <= 1e-10 * np.abs(rhs).max()

    def test_mean_step(self, model3, grid):
        tr = simulate_truth(model3, grid, 2)
        path = run_kalman(model3, grid, tr.dz)
        k = 17
        A, C = model3.at(grid.times[k]).A, model3.at(grid.times[k]).C
        m = path.mean[k]
        expected = m + A @ m * grid.dt + path.gain[k] @ (tr.dz[k] - C @ m * grid.dt)
        np.testing.assert_allclose(path.mean[k + 1], expected, rtol=1e-12, atol=1e-14)

    def test_steady_state_error(self, scalar, grid):
        errs = [steady_error(run_kalman(scalar, grid, (tr := simulate_truth(scalar, grid, s)).dz),
                             tr.x, 0.5) for s in range(100)]
        assert 0.5 <= np.mean(errs) <= 2.0

    @pytest.mark.parametrize("name", ["scalar", "model2"])
    def test_order_one_self_convergence(self, name, request):
        s = request.getfixturevalue(name)
        fine = TimeGrid.from_horizon(1.0, 2.5e-4)
        d1 = d2 = 0.0
        for seed in range(50):
            dz = simulate_truth(s, fine, seed).dz
            m4, m2, m1 = (run_kalman(s, TimeGrid.from_horizon(1.0, fine.dt * f),
                                     aggregate(dz, f)).mean[-1] for f in (4, 2, 1))
            d1 += np.sum((m4 - m2) ** 2)
            d2 += np.sum((m2 - m1) ** 2)
        assert 1.7 <= np.sqrt(d1 / d2) <= 2.3
