"""Interacting-particle filters of the (gamma1, gamma2) homotopy.

Every particle follows the Euler-Maruyama discretization of

    dX = A X dt + g1 dB + (1-g1^2)/2 Q Sigma^{-1} (X - m) dt
         + K (dZ - C ((1+g2^2) X + (1-g2^2) m)/2 dt + g2 dW)

where ``(K, Sigma, m)`` are either the exact Kalman quantities ("oracle"
gain, the mean-field filter) or the ensemble estimates ("empirical" gain,
the finite-N filter).

Random draws come from independent streams keyed by
``(seed, stream, step, block)`` with a fixed block of particles, so results do
not depend on the number of worker threads and particle ``i`` sees the same
noise whatever the ensemble size.
"""

from __future__ import annotations

from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass
from typing import NamedTuple

import numpy as np

from dualfpf._backend import kernels
from dualfpf.duality import HomotopyParams
from dualfpf.errors import (GridMismatch, InvalidCount, SingularEmpiricalCovariance,
                            SingularMatrix)
from dualfpf.kalman import KalmanPath, kalman_gain, run_kalman
from dualfpf.model import ModelArrays, ModelSchedule, TimeGrid, chol_increments

BLOCK_SIZE = 4096
REGULARIZATION = 1e-8
PARTICLE_DUMP_LIMIT = 1000

_STREAM_INIT = 0
_STREAM_B = 1
_STREAM_W = 2

GAIN_MODES = ("oracle", "empirical")


@dataclass(frozen=True)
class Ensemble:
    t: float
    particles: np.ndarray

    @property
    def n(self) -> int:
        return self.particles.shape[0]


@dataclass(frozen=True)
class EnsembleStats:
    mean: np.ndarray
    cov: np.ndarray


class GainSource(NamedTuple):
    gain: np.ndarray
    cov: np.ndarray
    mean: np.ndarray


@dataclass(frozen=True)
class FilterRun:
    grid: TimeGrid
    gammas: HomotopyParams
    gain_mode: str
    mean: np.ndarray
    cov: np.ndarray
    final: Ensemble
    seed: int
    particle_path: np.ndarray | None = None

    @property
    def n(self) -> int:
        return self.final.n

    def stats(self, k: int) -> EnsembleStats:
        return EnsembleStats(self.mean[k], self.cov[k])

    @property
    def stats_path(self) -> list[EnsembleStats]:
        return [self.stats(k) for k in range(self.mean.shape[0])]


def _rng(seed: int, stream: int, step: int, block: int) -> np.random.Generator:
    ss = np.random.SeedSequence(int(seed), spawn_key=(stream, step, block))
    return np.random.Generator(np.random.PCG64(ss))


def _blocks(n: int):
    return [(b, slice(s, min(s + BLOCK_SIZE, n))) for b, s in enumerate(range(0, n, BLOCK_SIZE))]


def _draws(seed, stream, step, block, size, dim):
    return _rng(seed, stream, step, block).standard_normal((size, dim))


def init_ensemble(schedule: ModelSchedule, n: int, seed: int) -> Ensemble:
    """``n`` i.i.d. draws from the prior ``N(m0, Sigma0)``.

    A single particle is allowed; it is only meaningful with the oracle gain.
    """
    if int(n) != n or n < 1:
        raise InvalidCount(f"particle count must be a positive integer, got {n}")
    L0 = np.linalg.cholesky(schedule.prior_cov)
    X = np.empty((n, schedule.dim_x))
    for b, sl in _blocks(n):
        X[sl] = _draws(seed, _STREAM_INIT, 0, b, sl.stop - sl.start, schedule.dim_x)
    X = X @ L0.T + schedule.prior_mean
    return Ensemble(0.0, X)


def ensemble_stats(e: Ensemble) -> EnsembleStats:
    """Empirical mean and the unbiased (1/(N-1)) covariance."""
    if e.n < 2:
        raise InvalidCount("ensemble statistics need at least 2 particles")
    return EnsembleStats(*kernels.moments(e.particles))


def _q_sigma_inv(Q, cov, empirical):
    """``Q Sigma^{-1}`` (stacked or single), regularized for ensemble covariances."""
    if empirical:
        d = cov.shape[-1]
        cov = cov + REGULARIZATION * np.trace(cov) / d * np.eye(d)
    try:
        L = np.linalg.cholesky(cov)
    except np.linalg.LinAlgError:
        if empirical:
            raise SingularEmpiricalCovariance(
                "ensemble covariance is singular even after regularization") from None
        raise SingularMatrix("filter covariance is not positive definite") from None
    # Sigma^{-1} Q via two triangular solves; Q Sigma^{-1} is its transpose
    Y = np.linalg.solve(L, Q)
    X = np.linalg.solve(np.swapaxes(L, -1, -2), Y)
    return np.swapaxes(X, -1, -2)


def drift_terms(A, C, Q, gain, cov, mean, gamma1, gamma2, empirical=False):
    """Affine drift ``F X + g`` of the particle dynamics (single or stacked)."""
    alpha = 0.5 * (1.0 + np.asarray(gamma2) ** 2)
    beta = 0.5 * (1.0 - np.asarray(gamma1) ** 2)
    if np.ndim(alpha):
        alpha, beta = alpha[:, None, None], beta[:, None, None]
    KC = gain @ C
    F = A - alpha * KC
    G = -(1.0 - alpha) * KC
    if np.any(beta != 0.0):
        QS = _q_sigma_inv(Q, cov, empirical)
        F = F + beta * QS
        G = G - beta * QS
    g = (G @ mean[..., None])[..., 0]
    return F, g


def _weights(gammas):
    if isinstance(gammas, HomotopyParams):
        if not gammas.is_constant:
            raise ValueError("pass the (gamma1, gamma2) values of this step")
        return gammas.gamma1, gammas.gamma2
    g1, g2 = gammas
    return float(g1), float(g2)


def homotopy_step(e: Ensemble, model: ModelArrays, gain_source: GainSource, gammas, dz_k, dt: float,
                  db=None, dw=None, rng: np.random.Generator | None = None,
                  empirical: bool = False) -> Ensemble:
    """Advance every particle by one Euler-Maruyama step.

    ``model`` holds A, C, Q, R at the current time.  Noise increments
    ``db`` (N x d) and ``dw`` (N x m) may be passed explicitly; otherwise they
    are drawn from ``rng`` when their weight is non-zero.
    """
    g1, g2 = _weights(gammas)
    K, cov, mbar = (np.asarray(x, dtype=float) for x in gain_source)
    F, g = drift_terms(model.A, model.C, model.Q, K, cov, mbar, g1, g2, empirical)
    n, d = e.particles.shape
    if g1 != 0.0 and db is None:
        if rng is None:
            raise ValueError("process-noise copies are needed: pass db or rng")
        db = rng.standard_normal((n, d)) @ chol_increments(model.Q, dt).T
    if g2 != 0.0 and dw is None:
        if rng is None:
            raise ValueError("observation-noise copies are needed: pass dw or rng")
        dw = rng.standard_normal((n, model.R.shape[0])) @ chol_increments(model.R, dt).T
    kdz = K @ np.asarray(dz_k, dtype=float).reshape(-1)
    X = kernels.particle_update(e.particles, F, g, kdz,
                                db if g1 != 0.0 else None, g1 * np.eye(d),
                                dw if g2 != 0.0 else None, g2 * K, dt)
    return Ensemble(e.t + dt, X)


def particle_increments(schedule: ModelSchedule, grid: TimeGrid, seed: int, n: int,
                        gammas: HomotopyParams):
    """The noise copies ``(dB, dW)`` that :func:`run_filter` draws, shape ``(n_steps, n, .)``.

    Either entry is ``None`` when its weight vanishes on the whole grid.
    """
    mats = schedule.on(grid.times[:-1])
    g1s, g2s = gammas.on(grid)
    out = []
    for stream, use, cov, dim in ((_STREAM_B, np.any(g1s != 0), mats.Q, schedule.dim_x),
                                  (_STREAM_W, np.any(g2s != 0), mats.R, schedule.dim_z)):
        if not use:
            out.append(None)
            continue
        L = chol_increments(cov, grid.dt)
        arr = np.empty((grid.n_steps, n, dim))
        for k in range(grid.n_steps):
            for b, sl in _blocks(n):
                arr[k, sl] = _draws(seed, stream, k, b, sl.stop - sl.start, dim) @ L[k].T
        out.append(arr)
    return out[0], out[1]


def run_filter(schedule: ModelSchedule, grid: TimeGrid, dz, n: int,
               gammas: HomotopyParams = HomotopyParams(), gain_mode: str = "oracle",
               seed: int = 0, *, kalman: KalmanPath | None = None, keep_particles: bool = False,
               workers: int = 1, x0: np.ndarray | None = None,
               noise: tuple | None = None) -> FilterRun:
    """Propagate ``n`` particles over the grid against the observation increments ``dz``.

    Parameters
    ----------
    gain_mode : {"oracle", "empirical"}
        ``"oracle"`` feeds the exact Kalman gain, covariance and mean (the
        mean-field filter); ``"empirical"`` recomputes them from the ensemble
        at every step (the finite-N filter).
    kalman : KalmanPath, optional
        Reused in oracle mode when given; must belong to the same ``dz``.
    workers : int
        Threads used inside a step.  Does not change the result.
    x0 : array, optional
        Initial particles (``n x d``) instead of prior draws.
    noise : (dB, dW), optional
        Explicit Brownian increments of shape ``(n_steps, n, d)`` and
        ``(n_steps, n, m)`` replacing the internal draws.  Either may be None
        when the matching gamma is zero.
    """
    if gain_mode not in GAIN_MODES:
        raise ValueError(f"gain_mode must be one of {GAIN_MODES}")
    empirical = gain_mode == "empirical"
    d, m, N, dt = schedule.dim_x, schedule.dim_z, int(n), grid.dt
    dz = np.asarray(dz, dtype=float).reshape(-1, m)
    if dz.shape[0] != grid.n_steps:
        raise GridMismatch(f"got {dz.shape[0]} observation increments for {grid.n_steps} steps")
    g1s, g2s = gammas.on(grid)
    if empirical:
        if N < 2:
            raise SingularEmpiricalCovariance(
                f"empirical gain needs at least 2 particles, got {N}")
        if N <= d and np.any(g1s[:-1] ** 2 != 1.0):
            raise SingularEmpiricalCovariance(
                f"inverting the ensemble covariance needs N > d (N={N}, d={d})")

    if x0 is None:
        X = init_ensemble(schedule, N, seed).particles
    else:
        X = np.array(x0, dtype=float).reshape(N, d)

    mats = schedule.on(grid.times)
    LQ = chol_increments(mats.Q[:-1], dt)
    LR = chol_increments(mats.R[:-1], dt)
    use_b, use_w = bool(np.any(g1s != 0)), bool(np.any(g2s != 0))
    if noise is not None:
        nb, nw = noise
        if (use_b and nb is None) or (use_w and nw is None):
            raise ValueError("explicit noise is missing a stream with non-zero gamma")
        nb = None if nb is None else np.asarray(nb, float).reshape(grid.n_steps, N, d)
        nw = None if nw is None else np.asarray(nw, float).reshape(grid.n_steps, N, m)
        LQ = np.broadcast_to(np.eye(d), (grid.n_steps, d, d))
        LR = np.broadcast_to(np.eye(m), (grid.n_steps, m, m))

    if not empirical:
        if kalman is None:
            kalman = run_kalman(schedule, grid, dz)
        K_all = kalman.gain
        F_all, g_all = drift_terms(mats.A[:-1], mats.C[:-1], mats.Q[:-1], K_all[:-1],
                                   kalman.cov[:-1], kalman.mean[:-1], g1s[:-1], g2s[:-1])

    mean_path = np.empty((grid.n_steps + 1, d))
    cov_path = np.full((grid.n_steps + 1, d, d), np.nan)
    keep = keep_particles and N <= PARTICLE_DUMP_LIMIT
    particle_path = np.empty((grid.n_steps + 1, N, d)) if keep else None
    blocks = _blocks(N)
    pool = ThreadPoolExecutor(max_workers=workers) if workers > 1 and len(blocks) > 1 else None

    def record(k, X):
        mean_path[k], cov_path[k] = kernels.moments(X)
        if keep:
            particle_path[k] = X

    try:
        for k in range(grid.n_steps):
            record(k, X)
            if empirical:
                mN, SN = mean_path[k], cov_path[k]
                K = kalman_gain(SN, mats.C[k], mats.R[k])
                F, g = drift_terms(mats.A[k], mats.C[k], mats.Q[k], K, SN, mN, g1s[k], g2s[k],
                                   empirical=True)
            else:
                K, F, g = K_all[k], F_all[k], g_all[k]
            kdz = K @ dz[k]
            Bmat = g1s[k] * LQ[k]
            Wmat = g2s[k] * (K @ LR[k])
            draw_b, draw_w = use_b and g1s[k] != 0, use_w and g2s[k] != 0

            def advance(block, X=X, k=k, F=F, g=g, kdz=kdz, Bmat=Bmat, Wmat=Wmat,
                        draw_b=draw_b, draw_w=draw_w):
                b, sl = block
                size = sl.stop - sl.start
                if noise is not None:
                    zb = nb[k, sl] if draw_b else None
                    zw = nw[k, sl] if draw_w else None
                else:
                    zb = _draws(seed, _STREAM_B, k, b, size, d) if draw_b else None
                    zw = _draws(seed, _STREAM_W, k, b, size, m) if draw_w else None
                return kernels.particle_update(X[sl], F, g, kdz, zb, Bmat, zw, Wmat, dt)

            parts = list(pool.map(advance, blocks)) if pool else [advance(bl) for bl in blocks]
            X = parts[0] if len(parts) == 1 else np.concatenate(parts, axis=0)
        record(grid.n_steps, X)
    finally:
        if pool is not None:
            pool.shutdown()
    return FilterRun(grid, gammas, gain_mode, mean_path, cov_path, Ensemble(grid.T, X),
                     int(seed), particle_path)


def marginal_shape(particles: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
    """Per-coordinate sample skewness and excess kurtosis."""
    from scipy import stats

    return stats.skew(particles, axis=0), stats.kurtosis(particles, axis=0)
