import numpy as np
import pytest
from scipy.integrate import simpson

from dualfpf.duality import (DETERMINISTIC_FPF, ENKF, STOCHASTIC_FPF, HomotopyParams,
                             conditional_mean_estimate, dual_process, evaluate_estimator,
                             integrate_phi, integrate_psi, lq_cost, optimal_dual_params,
                             xi_process)
from dualfpf.errors import GridMismatch
from dualfpf.kalman import run_kalman
from dualfpf.model import simulate_truth


@pytest.fixture
def kss(scalar, grid):
    return run_kalman(scalar, grid, simulate_truth(scalar, grid, 0).dz)


@pytest.fixture
def k2(model2, grid):
    return run_kalman(model2, grid, simulate_truth(model2, grid, 0).dz)


@pytest.fixture
def k3(model3, grid):
    return run_kalman(model3, grid, simulate_truth(model3, grid, 0).dz)


class TestHomotopyParams:
    def test_presets(self):
        assert (DETERMINISTIC_FPF.gamma1, DETERMINISTIC_FPF.gamma2) == (0.0, 0.0)
        assert (STOCHASTIC_FPF.gamma1, STOCHASTIC_FPF.gamma2) == (1.0, 0.0)
        assert (ENKF.gamma1, ENKF.gamma2) == (1.0, 1.0)

    def test_rejects_non_finite(self):
        with pytest.raises(ValueError):
            HomotopyParams(np.nan, 0.0)

    def test_table_length(self, grid):
        with pytest.raises(GridMismatch):
            HomotopyParams(np.zeros(5), 0.0).on(grid)


class TestPhi:
    def test_zero_horizon(self, kss):
        phi = integrate_phi(kss, 0.0)
        assert phi.shape == (1, 1, 1) and phi[0, 0, 0] == 1.0

    def test_scalar_closed_form(self, kss, grid):
        phi = integrate_phi(kss, 1.0)[:, 0, 0]
        np.testing.assert_allclose(phi, np.exp(grid.times - 1.0), atol=1e-10)
        assert phi[0] == pytest.approx(np.exp(-1.0), abs=1e-6)

    def test_terminal_identity(self, k3):
        assert np.array_equal(integrate_phi(k3, 0.6)[-1], np.eye(3))

    def test_ode_residual_first_order(self, model2, k2, grid):
        phi = integrate_phi(k2, 1.0)
        mats = model2.on(grid.times)
        M = -np.swapaxes(mats.A, 1, 2) + np.swapaxes(mats.C, 1, 2) @ np.swapaxes(k2.gain, 1, 2)
        res = np.linalg.norm((phi[1:] - phi[:-1]) / grid.dt - (M @ phi)[:-1], axis=(1, 2))
        assert res.max() <= 10.0 * grid.dt


class TestPsi:
    def test_deterministic_scalar_is_identity(self, kss):
        np.testing.assert_allclose(integrate_psi(kss, kss.schedule, 1.0, DETERMINISTIC_FPF), 1.0,
                                   atol=1e-12)

    def test_enkf_scalar(self, kss):
        psi = integrate_psi(kss, kss.schedule, 1.0, ENKF)
        assert psi[0, 0, 0] == pytest.approx(np.exp(-1.0), abs=1e-6)

    def test_enkf_equals_phi(self, k3):
        np.testing.assert_allclose(integrate_psi(k3, k3.schedule, 1.0, ENKF), integrate_phi(k3, 1.0),
                                   atol=1e-12)

    def test_gamma1_one_drops_q_term(self, model3, k3, grid):
        from dataclasses import replace

        from dualfpf.model import MatrixPath

        other = replace(model3, Q=MatrixPath(5.0 * np.eye(3)))
        kalman_other = replace(k3, schedule=other)
        g = HomotopyParams(1.0, 0.4)
        np.testing.assert_array_equal(integrate_psi(k3, model3, 1.0, g),
                                      integrate_psi(kalman_other, other, 1.0, g))


class TestOptimalParams:
    def test_scalar_closed_form(self, kss, grid):
        sol = optimal_dual_params(kss, kss.schedule, [1.0], 1.0, DETERMINISTIC_FPF)
        assert sol.b_T[0] == pytest.approx(np.exp(-1.0), abs=1e-10)
        assert sol.c_T[0] == pytest.approx(1.0, abs=1e-12)
        np.testing.assert_allclose(sol.u[:, 0], np.exp(grid.times - 1.0), atol=1e-8)
        assert np.all(sol.v == 0) and np.all(sol.w == 0)

    def test_invariants(self, k3, grid):
        g = HomotopyParams(0.3, 0.8)
        a = np.array([1.0, -2.0, 0.5])
        sol = optimal_dual_params(k3, k3.schedule, a, 0.7, g)
        kT = grid.index(0.7)
        phi, psi = sol.transitions.phi, sol.transitions.psi
        Kt = np.swapaxes(k3.gain[: kT + 1], 1, 2)
        np.testing.assert_allclose(sol.b_T, phi[0] @ a)
        np.testing.assert_allclose(sol.c_T, psi[0] @ a)
        np.testing.assert_allclose(sol.u, np.einsum("kij,j->ki", Kt @ phi, a))
        np.testing.assert_allclose(sol.v, 0.3 * psi @ a)
        np.testing.assert_allclose(sol.w, 0.8 * np.einsum("kij,j->ki", Kt @ psi, a))

    def test_b_equals_dual_initial_value(self, k3):
        a = np.array([0.2, 1.0, -1.0])
        sol = optimal_dual_params(k3, k3.schedule, a, 1.0, DETERMINISTIC_FPF)
        y = dual_process(k3, a, 1.0)
        np.testing.assert_allclose(sol.b_T, y.values[0], atol=1e-8)

    def test_zero_direction(self, k3):
        sol = optimal_dual_params(k3, k3.schedule, np.zeros(3), 1.0, ENKF)
        for f in (sol.b_T, sol.c_T, sol.u, sol.v, sol.w):
            assert np.all(f == 0)

    def test_horizon_off_grid(self, k3):
        with pytest.raises(GridMismatch):
            optimal_dual_params(k3, k3.schedule, np.ones(3), 0.12345, ENKF)


class TestDualProcess:
    def test_terminal_condition(self, k3):
        a = np.array([1.0, 2.0, 3.0])
        y = dual_process(k3, a, 1.0)
        assert y.kind == "dual-y"
        assert np.array_equal(y.values[-1], a)

    def test_scalar(self, kss, grid):
        y = dual_process(kss, [1.0], 1.0)
        np.testing.assert_allclose(y.values[:, 0], np.exp(grid.times - 1.0), atol=1e-8)

    def test_matches_phi(self, k3, rng):
        for _ in range(3):
            a = rng.standard_normal(3)
            y = dual_process(k3, a, 1.0)
            assert np.abs(y.values - integrate_phi(k3, 1.0) @ a).max() <= 1e-8


class TestXi:
    def test_deterministic_conserved(self, k3):
        a = np.array([1.0, -1.0, 0.5])
        xi = xi_process(k3, k3.schedule, a, 1.0, DETERMINISTIC_FPF)
        target = a @ k3.cov[-1] @ a
        assert xi.kind == "xi"
        assert np.abs(xi.quadratic - target).max() <= 1e-6 * abs(target)

    def test_scalar_unit(self, kss):
        xi = xi_process(kss, kss.schedule, [1.0], 1.0, DETERMINISTIC_FPF)
        np.testing.assert_allclose(xi.quadratic, 1.0, atol=1e-12)

    def test_enkf_growth(self, model2, k2, grid):
        a = np.array([1.0, 0.5])
        xi = xi_process(k2, model2, a, 1.0, ENKF)
        mats = model2.on(grid.times)
        kxi = np.einsum("kji,kj->ki", k2.gain, xi.values)
        f = (np.einsum("ki,kij,kj->k", xi.values, mats.Q, xi.values)
             + np.einsum("ki,kij,kj->k", kxi, mats.R, kxi))
        q = xi.quadratic
        assert abs(q[-1] - q[0] - simpson(f, dx=grid.dt)) <= 1e-6 * abs(q[-1])


class TestLQCost:
    def test_optimal_scalar(self, scalar, kss):
        y = dual_process(kss, [1.0], 1.0)
        assert lq_cost(scalar, y, y.control) == pytest.approx(1.0, rel=1e-4)

    def test_optimal_equals_variance(self, model3, k3):
        a = np.array([0.3, -0.4, 1.2])
        y = dual_process(k3, a, 1.0)
        assert lq_cost(model3, y, y.control) == pytest.approx(a @ k3.cov[-1] @ a, rel=1e-4)

    def test_sine_perturbation_costs_more(self, scalar, kss):
        y = dual_process(kss, [1.0], 1.0)
        yp = dual_process(kss, [1.0], 1.0, perturbation=lambda t: np.array([0.1 * np.sin(10 * t)]))
        assert lq_cost(scalar, yp, yp.control) > lq_cost(scalar, y, y.control)

    def test_inconsistent_control_warns(self, scalar, kss):
        y = dual_process(kss, [1.0], 1.0)
        with pytest.warns(RuntimeWarning):
            lq_cost(scalar, y, y.control + 1.0)


class TestEstimator:
    def test_null_path(self, kss, grid):
        sol = optimal_dual_params(kss, kss.schedule, [1.0], 1.0, DETERMINISTIC_FPF)
        assert evaluate_estimator(sol, np.zeros(grid.n_steps), [0.0], None, None, [0.0]) == 0.0

    def test_conditional_mean(self, model3, grid):
        tr = simulate_truth(model3, grid, 9)
        kp = run_kalman(model3, grid, tr.dz)
        a = np.array([1.0, 2.0, -1.0])
        sol = optimal_dual_params(kp, model3, a, 1.0, DETERMINISTIC_FPF)
        m0 = model3.prior_mean
        s = evaluate_estimator(sol, tr.dz, m0, None, None, m0)
        assert s == conditional_mean_estimate(sol, tr.dz, m0)
        # the Euler Kalman mean and the dual sum agree to O(dt)
        assert s == pytest.approx(a @ kp.mean[-1], abs=20 * grid.dt)

    def test_requires_noise_when_weighted(self, kss, grid):
        sol = optimal_dual_params(kss, kss.schedule, [1.0], 1.0, ENKF)
        with pytest.raises(GridMismatch):
            evaluate_estimator(sol, np.zeros(grid.n_steps), [0.0], None, None, [0.0])

    def test_short_increments(self, kss, grid):
        sol = optimal_dual_params(kss, kss.schedule, [1.0], 1.0, DETERMINISTIC_FPF)
        with pytest.raises(GridMismatch):
            evaluate_estimator(sol, np.zeros(10), [0.0], None, None, [0.0])


def test_time_varying_gammas_budget(model2, k2, grid):
    from dualfpf.verify import budget_residual

    g = HomotopyParams(np.linspace(0, 1, grid.n_steps + 1), np.cos(grid.times))
    assert budget_residual(model2, k2, np.array([1.0, -0.5]), 1.0, g) <= 1e-5
