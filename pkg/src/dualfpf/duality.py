"""Dual (backward-time) machinery behind the exact linear particle filters.

Given the Kalman covariance ``Sigma_t`` and gain ``K_t``, two backward flows
ending at the identity at the horizon ``T`` are integrated:

    Phi' = (-A^T + C^T K^T) Phi
    Psi' = (-A^T + (1+g2^2)/2 C^T K^T - (1-g1^2)/2 Sigma^{-1} Q) Psi

The minimum-variance linear estimator of ``a^T X_T`` built from the prior,
the observations and injected noise copies has parameters

    b_T = Phi(0;T) a,  c_T = Psi(0;T) a,  u_t = K_t^T Phi(t;T) a,
    v_t = g1 Psi(t;T) a,  w_t = g2 K_t^T Psi(t;T) a.
"""

from __future__ import annotations

import warnings
from dataclasses import dataclass, field
from typing import Callable

import numpy as np

from dualfpf._backend import kernels
from dualfpf.errors import GridMismatch, SingularMatrix
from dualfpf.kalman import KalmanPath
from dualfpf.model import ModelSchedule, TimeGrid

_COND_LIMIT = 1e14


@dataclass(frozen=True)
class HomotopyParams:
    """Noise weights ``(gamma1, gamma2)``: constants or per-grid-point tables.

    ``(0, 0)`` is the deterministic FPF, ``(1, 0)`` the stochastic FPF and
    ``(1, 1)`` the classical ensemble Kalman-Bucy filter.
    """

    gamma1: float | np.ndarray = 0.0
    gamma2: float | np.ndarray = 0.0

    def __post_init__(self):
        for name in ("gamma1", "gamma2"):
            val = getattr(self, name)
            arr = np.asarray(val, dtype=float)
            if not np.all(np.isfinite(arr)):
                raise ValueError(f"{name} must be finite")
            if arr.ndim > 1:
                raise ValueError(f"{name} must be a scalar or a 1-d table")
            object.__setattr__(self, name, float(arr) if arr.ndim == 0 else arr)

    @property
    def is_constant(self) -> bool:
        return np.ndim(self.gamma1) == 0 and np.ndim(self.gamma2) == 0

    def _table(self, val, grid: TimeGrid):
        if np.ndim(val) == 0:
            return np.full(grid.n_steps + 1, float(val))
        if len(val) < grid.n_steps + 1:
            raise GridMismatch(f"gamma table has {len(val)} entries, grid needs {grid.n_steps + 1}")
        return np.asarray(val[: grid.n_steps + 1], dtype=float)

    def on(self, grid: TimeGrid) -> tuple[np.ndarray, np.ndarray]:
        """Values at the grid points."""
        return self._table(self.gamma1, grid), self._table(self.gamma2, grid)

    def on_half(self, grid: TimeGrid) -> tuple[np.ndarray, np.ndarray]:
        """Values at grid points and step midpoints (linear in between)."""
        out = []
        for g in self.on(grid):
            h = np.empty(2 * grid.n_steps + 1)
            h[0::2] = g
            h[1::2] = 0.5 * (g[:-1] + g[1:])
            out.append(h)
        return out[0], out[1]

    def at(self, grid: TimeGrid, k: int) -> tuple[float, float]:
        g1 = self.gamma1 if np.ndim(self.gamma1) == 0 else float(self.gamma1[k])
        g2 = self.gamma2 if np.ndim(self.gamma2) == 0 else float(self.gamma2[k])
        return g1, g2

    def label(self) -> str:
        if not self.is_constant:
            return "table"
        return f"{self.gamma1:g},{self.gamma2:g}"

    def to_config(self):
        return [np.asarray(self.gamma1).tolist(), np.asarray(self.gamma2).tolist()]


DETERMINISTIC_FPF = HomotopyParams(0.0, 0.0)
STOCHASTIC_FPF = HomotopyParams(1.0, 0.0)
ENKF = HomotopyParams(1.0, 1.0)


@dataclass(frozen=True)
class TransitionPath:
    grid: TimeGrid
    horizon: float
    phi: np.ndarray
    psi: np.ndarray
    gammas: HomotopyParams


@dataclass(frozen=True)
class DualSolution:
    a: np.ndarray
    horizon: float
    b_T: np.ndarray
    c_T: np.ndarray
    u: np.ndarray
    v: np.ndarray
    w: np.ndarray
    gammas: HomotopyParams
    grid: TimeGrid = field(repr=False)
    transitions: TransitionPath = field(repr=False)


@dataclass(frozen=True)
class DualProcessPath:
    """Backward process on ``[0, T]``; ``kind`` is ``"dual-y"`` or ``"xi"``.

    ``control`` carries ``u_t`` for the dual process, ``quadratic`` carries
    ``xi_t^T Sigma_t xi_t`` for the xi process.
    """

    grid: TimeGrid
    values: np.ndarray
    kind: str
    control: np.ndarray | None = None
    quadratic: np.ndarray | None = None


def _horizon_index(kalman: KalmanPath, horizon: float) -> int:
    return kalman.grid.index(horizon)


def _phi_coefficient(kalman: KalmanPath, kT: int) -> np.ndarray:
    half = kalman.model_half
    j = 2 * kT + 1
    KC = kalman.gain_half[:j] @ half.C[:j]
    return -np.swapaxes(half.A[:j], -1, -2) + np.swapaxes(KC, -1, -2)


def _psi_coefficient(kalman: KalmanPath, schedule: ModelSchedule, kT: int,
                     gammas: HomotopyParams) -> np.ndarray:
    grid = kalman.grid
    j = 2 * kT + 1
    times = grid.half_times[:j]
    A = schedule.A.on(times)
    Q = schedule.Q.on(times)
    cov = kalman.cov_half[:j]
    if np.any(np.linalg.cond(cov) > _COND_LIMIT):
        raise SingularMatrix("filter covariance is numerically singular")
    g1, g2 = gammas.on_half(grid)
    alpha = (0.5 * (1.0 + g2[:j] ** 2))[:, None, None]
    beta = (0.5 * (1.0 - g1[:j] ** 2))[:, None, None]
    KC = kalman.gain_half[:j] @ kalman.model_half.C[:j]
    return -np.swapaxes(A, -1, -2) + alpha * np.swapaxes(KC, -1, -2) - beta * np.linalg.solve(cov, Q)


def integrate_phi(kalman: KalmanPath, horizon: float) -> np.ndarray:
    """``Phi(t_k; T)`` for every grid time ``t_k <= T``."""
    kT = _horizon_index(kalman, horizon)
    d = kalman.schedule.dim_x
    if kT == 0:
        return np.eye(d)[None]
    return kernels.backward_transition_rk4(_phi_coefficient(kalman, kT), kalman.grid.dt)


def integrate_psi(kalman: KalmanPath, schedule: ModelSchedule, horizon: float,
                  gammas: HomotopyParams = DETERMINISTIC_FPF) -> np.ndarray:
    """``Psi(t_k; T)`` for every grid time ``t_k <= T``."""
    kT = _horizon_index(kalman, horizon)
    if kT == 0:
        return np.eye(schedule.dim_x)[None]
    return kernels.backward_transition_rk4(
        _psi_coefficient(kalman, schedule, kT, gammas), kalman.grid.dt)


def transition_paths(kalman: KalmanPath, schedule: ModelSchedule, horizon: float,
                     gammas: HomotopyParams = DETERMINISTIC_FPF) -> TransitionPath:
    kT = _horizon_index(kalman, horizon)
    grid = TimeGrid(kalman.grid.dt, max(kT, 1), kalman.grid.t0)
    return TransitionPath(grid, float(horizon), integrate_phi(kalman, horizon),
                          integrate_psi(kalman, schedule, horizon, gammas), gammas)


def optimal_dual_params(kalman: KalmanPath, schedule: ModelSchedule, a, horizon: float,
                        gammas: HomotopyParams = DETERMINISTIC_FPF) -> DualSolution:
    a = np.asarray(a, dtype=float).reshape(schedule.dim_x)
    tp = transition_paths(kalman, schedule, horizon, gammas)
    kT = tp.phi.shape[0] - 1
    K = kalman.gain[: kT + 1]
    Kt = np.swapaxes(K, -1, -2)
    phi_a = tp.phi @ a
    psi_a = tp.psi @ a
    g1, g2 = gammas.on(kalman.grid)
    return DualSolution(
        a=a,
        horizon=float(horizon),
        b_T=phi_a[0],
        c_T=psi_a[0],
        u=np.einsum("kij,kj->ki", Kt, phi_a),
        v=g1[: kT + 1, None] * psi_a,
        w=g2[: kT + 1, None] * np.einsum("kij,kj->ki", Kt, psi_a),
        gammas=gammas,
        grid=tp.grid,
        transitions=tp,
    )


def dual_process(kalman: KalmanPath, a, horizon: float,
                 perturbation: Callable[[float], np.ndarray] | None = None) -> DualProcessPath:
    """Integrate ``dy/dt = -A^T y + C^T u`` backward from ``y_T = a``.

    The control is the optimal feedback ``u = K^T y``, plus ``perturbation(t)``
    when given.  Uses its own RK4 sweep on vectors with the control evaluated
    at every stage.
    """
    schedule = kalman.schedule
    a = np.asarray(a, dtype=float).reshape(schedule.dim_x)
    kT = _horizon_index(kalman, horizon)
    dt = kalman.grid.dt
    A = kalman.model_half.A
    C = kalman.model_half.C
    K = kalman.gain_half
    times = kalman.grid.half_times

    def control(y, j):
        u = K[j].T @ y
        if perturbation is not None:
            u = u + perturbation(times[j])
        return u

    def rhs(y, j):
        return -A[j].T @ y + C[j].T @ control(y, j)

    y = np.empty((kT + 1, schedule.dim_x))
    y[kT] = a
    h = 0.5 * dt
    for k in range(kT, 0, -1):
        j = 2 * k
        yk = y[k]
        # stepping from t_k to t_{k-1} is a step of -dt in t
        k1 = rhs(yk, j)
        k2 = rhs(yk - h * k1, j - 1)
        k3 = rhs(yk - h * k2, j - 1)
        k4 = rhs(yk - dt * k3, j - 2)
        y[k - 1] = yk - (dt / 6.0) * (k1 + 2.0 * k2 + 2.0 * k3 + k4)
    u = np.array([control(y[k], 2 * k) for k in range(kT + 1)]).reshape(kT + 1, schedule.dim_z)
    grid = TimeGrid(dt, max(kT, 1), kalman.grid.t0)
    return DualProcessPath(grid, y, "dual-y", control=u)


def xi_process(kalman: KalmanPath, schedule: ModelSchedule, a, horizon: float,
               gammas: HomotopyParams = DETERMINISTIC_FPF) -> DualProcessPath:
    a = np.asarray(a, dtype=float).reshape(schedule.dim_x)
    psi = integrate_psi(kalman, schedule, horizon, gammas)
    xi = psi @ a
    kT = xi.shape[0] - 1
    q = np.einsum("ki,kij,kj->k", xi, kalman.cov[: kT + 1], xi)
    grid = TimeGrid(kalman.grid.dt, max(kT, 1), kalman.grid.t0)
    return DualProcessPath(grid, xi, "xi", quadratic=q)


def dual_residual(schedule: ModelSchedule, y: DualProcessPath, u: np.ndarray) -> float:
    """Max relative central-difference residual of ``y' = -A^T y + C^T u``."""
    if y.values.shape[0] < 3:
        return 0.0
    times = y.grid.times[: y.values.shape[0]]
    mats = schedule.on(times)
    f = -np.einsum("kji,kj->ki", mats.A, y.values) + np.einsum("kji,kj->ki", mats.C, u)
    fd = (y.values[2:] - y.values[:-2]) / (2.0 * y.grid.dt)
    scale = max(float(np.abs(f).max()), 1e-300)
    return float(np.abs(fd - f[1:-1]).max() / scale)


def lq_cost(schedule: ModelSchedule, y: DualProcessPath, u: np.ndarray) -> float:
    """``y0^T Sigma0 y0 + int_0^T (y^T Q y + u^T R u) dt`` by the trapezoidal rule."""
    u = np.asarray(u, dtype=float).reshape(y.values.shape[0], schedule.dim_z)
    if dual_residual(schedule, y, u) > 1e-2:
        warnings.warn("control path does not drive the supplied dual trajectory", RuntimeWarning,
                      stacklevel=2)
    times = y.grid.times[: y.values.shape[0]]
    mats = schedule.on(times)
    running = (np.einsum("ki,kij,kj->k", y.values, mats.Q, y.values)
               + np.einsum("ki,kij,kj->k", u, mats.R, u))
    y0 = y.values[0]
    integral = np.trapezoid(running, dx=y.grid.dt) if len(running) > 1 else 0.0
    return float(y0 @ schedule.prior_cov @ y0 + integral)


def conditional_mean_estimate(sol: DualSolution, dz, prior_mean) -> float:
    """``b_T^T m0 + sum_k u_k^T dZ_k``: the conditional mean of ``a^T X_T``."""
    kT = sol.u.shape[0] - 1
    dz = _increments(dz, kT, sol.u.shape[1], "dz")
    return float(sol.b_T @ np.asarray(prior_mean, float) + np.sum(sol.u[:kT] * dz))


def _increments(arr, kT, width, name):
    arr = np.asarray(arr, dtype=float).reshape(-1, width)
    if arr.shape[0] < kT:
        raise GridMismatch(f"{name} has {arr.shape[0]} increments, horizon needs {kT}")
    return arr[:kT]


def evaluate_estimator(sol: DualSolution, dz, x0_bar, db_bar, dw_bar, prior_mean) -> float:
    """Evaluate the linear estimator ``S_T`` with left-endpoint (Ito) sums.

    ``db_bar``/``dw_bar`` may be ``None`` when the matching weight path is
    identically zero.  Increment arrays may extend beyond the horizon; only
    the first ``kT`` rows are used.
    """
    kT = sol.u.shape[0] - 1
    m0 = np.asarray(prior_mean, dtype=float)
    x0 = np.asarray(x0_bar, dtype=float)
    s = conditional_mean_estimate(sol, dz, m0) + float(sol.c_T @ (x0 - m0))
    for name, weights, inc in (("db_bar", sol.v, db_bar), ("dw_bar", sol.w, dw_bar)):
        if inc is None:
            if np.any(weights[:kT] != 0.0):
                raise GridMismatch(f"{name} is required for non-zero noise weights")
            continue
        s += float(np.sum(weights[:kT] * _increments(inc, kT, weights.shape[1], name)))
    return s
