"""Kalman-Bucy filter: dynamic Riccati equation and the conditional mean.

The covariance solves

    dSigma/dt = A Sigma + Sigma A^T + Q - Sigma C^T R^{-1} C Sigma

(classical RK4, symmetrized every step) and the mean is the Euler
discretization of ``dm = A m dt + K (dZ - C m dt)`` with ``K = Sigma C^T R^{-1}``.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from dualfpf._backend import kernels
from dualfpf.errors import GridMismatch, LostPositivity, SingularMatrix
from dualfpf.model import ModelArrays, ModelSchedule, TimeGrid

_COND_LIMIT = 1e14
_POSITIVITY_FLOOR = -1e-10


@dataclass(frozen=True)
class KalmanPath:
    """Posterior mean, covariance and gain on every grid point.

    ``cov_mid``/``gain_mid`` hold the step-midpoint values (cubic Hermite
    interpolation of the RK4 solution, fourth-order accurate) needed by the
    RK4 sweeps of the dual transition matrices.  ``model_half`` is the
    schedule evaluated on ``grid.half_times``.
    """

    grid: TimeGrid
    mean: np.ndarray
    cov: np.ndarray
    gain: np.ndarray
    schedule: ModelSchedule
    cov_mid: np.ndarray
    gain_mid: np.ndarray
    model_half: ModelArrays

    @property
    def cov_half(self) -> np.ndarray:
        return _interleave(self.cov, self.cov_mid)

    @property
    def gain_half(self) -> np.ndarray:
        return _interleave(self.gain, self.gain_mid)


def _interleave(nodes, mids):
    out = np.empty((nodes.shape[0] + mids.shape[0],) + nodes.shape[1:])
    out[0::2] = nodes
    out[1::2] = mids
    return out


def kalman_gain(cov, c, r):
    """``cov @ c.T @ inv(r)`` computed with a linear solve.

    Works on single matrices or stacks ``(k, d, d)``, ``(k, m, d)``, ``(k, m, m)``.

    >>> float(kalman_gain(np.eye(1), np.eye(1), np.eye(1))[0, 0])
    1.0
    """
    cov, c, r = np.asarray(cov, float), np.asarray(c, float), np.asarray(r, float)
    if np.any(np.linalg.cond(r) > _COND_LIMIT):
        raise SingularMatrix("observation covariance R is numerically singular")
    # K^T = R^{-1} C Sigma for symmetric Sigma
    return np.swapaxes(np.linalg.solve(r, c @ cov), -1, -2)


def information_matrix(C: np.ndarray, R: np.ndarray) -> np.ndarray:
    """``C^T R^{-1} C`` (stacked), symmetrized."""
    if np.any(np.linalg.cond(R) > _COND_LIMIT):
        raise SingularMatrix("observation covariance R is numerically singular")
    S = np.swapaxes(C, -1, -2) @ np.linalg.solve(R, C)
    return 0.5 * (S + np.swapaxes(S, -1, -2))


def riccati_rhs(A, Q, S, P):
    AP = A @ P
    return AP + np.swapaxes(AP, -1, -2) + Q - P @ S @ P


def _riccati(schedule: ModelSchedule, grid: TimeGrid):
    half = schedule.on(grid.half_times)
    S = information_matrix(half.C, half.R)
    with np.errstate(over="ignore", invalid="ignore"):  # divergence is reported below
        cov = kernels.riccati_rk4(half.A, half.Q, S, schedule.prior_cov, grid.dt)

    if not np.all(np.isfinite(cov)):
        raise LostPositivity("Riccati solution diverged; reduce dt")
    eig_min = np.linalg.eigvalsh(cov).min(axis=-1)
    bad = np.flatnonzero(eig_min < _POSITIVITY_FLOOR)
    if bad.size:
        k = int(bad[0])
        raise LostPositivity(
            f"covariance eigenvalue {eig_min[k]:.3e} at t={grid.times[k]:.6g}; reduce dt")

    F = riccati_rhs(half.A[0::2], half.Q[0::2], S[0::2], cov)
    mid = 0.5 * (cov[:-1] + cov[1:]) + (grid.dt / 8.0) * (F[:-1] - F[1:])
    mid = 0.5 * (mid + np.swapaxes(mid, -1, -2))
    return cov, mid, half


def integrate_riccati(schedule: ModelSchedule, grid: TimeGrid) -> np.ndarray:
    """Covariance path ``Sigma(t_k)``, shape ``(n_steps+1, d, d)``.

    Raises
    ------
    LostPositivity
        If an eigenvalue drops below -1e-10 anywhere on the grid.
    """
    return _riccati(schedule, grid)[0]


def run_kalman(schedule: ModelSchedule, grid: TimeGrid, dz: np.ndarray) -> KalmanPath:
    dz = np.asarray(dz, dtype=float).reshape(-1, schedule.dim_z)
    if dz.shape[0] != grid.n_steps:
        raise GridMismatch(f"got {dz.shape[0]} observation increments for {grid.n_steps} steps")
    cov, cov_mid, half = _riccati(schedule, grid)
    A, C, R = half.A[0::2], half.C[0::2], half.R[0::2]
    gain = kalman_gain(cov, C, R)
    gain_mid = kalman_gain(cov_mid, half.C[1::2], half.R[1::2])

    dt = grid.dt
    F = np.eye(schedule.dim_x) + (A[:-1] - gain[:-1] @ C[:-1]) * dt
    b = np.einsum("kij,kj->ki", gain[:-1], dz)
    mean = kernels.affine_recursion(F, b, schedule.prior_mean)
    return KalmanPath(grid, mean, cov, gain, schedule, cov_mid, gain_mid, half)


def steady_error(path: KalmanPath, x: np.ndarray, t_from: float) -> float:
    """Time-averaged squared estimation error ``|m_t - X_t|^2`` over ``[t_from, T]``."""
    k0 = path.grid.index(t_from)
    err = np.sum((path.mean[k0:] - x[k0:]) ** 2, axis=-1)
    return float(err.mean())
