"""Time-varying linear-Gaussian state-space model and ground-truth simulation.

The model is

    dX_t = A_t X_t dt + dB_t,        X_0 ~ N(m0, Sigma0)
    dZ_t = C_t X_t dt + dW_t

with B, W independent Wiener processes of covariance Q_t and R_t.  Observations
are always carried as increments ``dZ_k`` on a uniform grid.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Any, Mapping, NamedTuple

import numpy as np

from dualfpf._backend import kernels
from dualfpf.errors import DimensionMismatch, GridMismatch, NonPositiveDefinite

_GRID_TOL = 1e-9


@dataclass(frozen=True)
class TimeGrid:
    """Uniform grid ``t_k = t0 + k*dt`` for ``k = 0..n_steps``."""

    dt: float
    n_steps: int
    t0: float = 0.0

    def __post_init__(self):
        if not self.dt > 0:
            raise GridMismatch(f"dt must be positive, got {self.dt}")
        if int(self.n_steps) != self.n_steps or self.n_steps < 1:
            raise GridMismatch(f"n_steps must be an integer >= 1, got {self.n_steps}")
        object.__setattr__(self, "n_steps", int(self.n_steps))
        object.__setattr__(self, "dt", float(self.dt))
        object.__setattr__(self, "t0", float(self.t0))

    @classmethod
    def from_horizon(cls, T: float, dt: float, t0: float = 0.0) -> "TimeGrid":
        if not dt > 0:
            raise GridMismatch(f"dt must be positive, got {dt}")
        n = int(round((T - t0) / dt))
        if n < 1 or abs(n * dt - (T - t0)) > _GRID_TOL * max(1.0, abs(T)):
            raise GridMismatch(f"horizon {T} is not a whole number of steps of dt={dt}")
        return cls(dt=dt, n_steps=n, t0=t0)

    @property
    def T(self) -> float:
        return self.t0 + self.n_steps * self.dt

    @property
    def times(self) -> np.ndarray:
        return self.t0 + self.dt * np.arange(self.n_steps + 1)

    @property
    def half_times(self) -> np.ndarray:
        """Grid points and step midpoints, ``2*n_steps + 1`` values."""
        return self.t0 + 0.5 * self.dt * np.arange(2 * self.n_steps + 1)

    def index(self, t: float) -> int:
        k = int(round((t - self.t0) / self.dt))
        if k < 0 or k > self.n_steps or abs(self.t0 + k * self.dt - t) > _GRID_TOL * max(1.0, abs(t)):
            raise GridMismatch(f"t={t} is not a point of the grid (dt={self.dt}, T={self.T})")
        return k

    def refine(self, factor: int) -> "TimeGrid":
        return TimeGrid(self.dt / factor, self.n_steps * factor, self.t0)

    def truncate(self, k: int) -> "TimeGrid":
        return TimeGrid(self.dt, k, self.t0)


class MatrixPath:
    """A matrix-valued function of time.

    Either a constant ``(r, c)`` matrix or a table ``(k, r, c)`` tabulated at
    ``times``.  Tables are linearly interpolated between their nodes, which is
    only exercised at step midpoints by the RK4 integrators.
    """

    def __init__(self, values, times=None):
        values = np.asarray(values, dtype=float)
        if times is None:
            if values.ndim != 2:
                raise DimensionMismatch(f"constant matrix must be 2-d, got shape {values.shape}")
            self.times = None
        else:
            times = np.asarray(times, dtype=float)
            if values.ndim != 3 or values.shape[0] != times.shape[0]:
                raise DimensionMismatch(
                    f"table of shape {values.shape} does not match {times.shape[0]} time nodes")
            self.times = times
        if not np.all(np.isfinite(values)):
            raise ValueError("matrix entries must be finite")
        self.values = values

    @property
    def is_constant(self) -> bool:
        return self.times is None

    @property
    def shape(self) -> tuple[int, int]:
        return self.values.shape[-2:]

    def __call__(self, t: float) -> np.ndarray:
        return self.on(np.array([t]))[0]

    def on(self, times) -> np.ndarray:
        times = np.asarray(times, dtype=float)
        if self.times is None:
            return np.broadcast_to(self.values, times.shape + self.values.shape).copy()
        lo, hi = self.times[0], self.times[-1]
        span = _GRID_TOL * max(1.0, abs(hi))
        if times.min() < lo - span or times.max() > hi + span:
            raise GridMismatch(f"table covers [{lo}, {hi}] but was evaluated outside it")
        idx = np.clip(np.searchsorted(self.times, times, side="right") - 1, 0, len(self.times) - 2)
        t0, t1 = self.times[idx], self.times[idx + 1]
        w = np.clip((times - t0) / (t1 - t0), 0.0, 1.0)[:, None, None]
        return (1.0 - w) * self.values[idx] + w * self.values[idx + 1]

    def to_list(self):
        return self.values.tolist()


class ModelArrays(NamedTuple):
    A: np.ndarray
    C: np.ndarray
    Q: np.ndarray
    R: np.ndarray


@dataclass(frozen=True)
class ModelSchedule:
    dim_x: int
    dim_z: int
    A: MatrixPath
    C: MatrixPath
    Q: MatrixPath
    R: MatrixPath
    prior_mean: np.ndarray
    prior_cov: np.ndarray
    name: str = field(default="", compare=False)

    def on(self, times) -> ModelArrays:
        return ModelArrays(self.A.on(times), self.C.on(times), self.Q.on(times), self.R.on(times))

    def at(self, t: float) -> ModelArrays:
        return ModelArrays(self.A(t), self.C(t), self.Q(t), self.R(t))

    def to_spec(self) -> dict:
        spec = {
            "dim_x": self.dim_x,
            "dim_z": self.dim_z,
            "A": self.A.to_list(),
            "C": self.C.to_list(),
            "Q": self.Q.to_list(),
            "R": self.R.to_list(),
            "m0": self.prior_mean.tolist(),
            "Sigma0": self.prior_cov.tolist(),
        }
        if self.name:
            spec["name"] = self.name
        return spec


@dataclass(frozen=True)
class Trajectory:
    grid: TimeGrid
    x: np.ndarray
    dz: np.ndarray
    db: np.ndarray
    dw: np.ndarray
    seed: int


def _check_spd(name, mat, times=None):
    mats = mat if mat.ndim == 3 else mat[None]
    for k, m in enumerate(mats):
        t = None if times is None else float(times[k])
        scale = max(1.0, float(np.max(np.abs(m))))
        if not np.allclose(m, m.T, rtol=0, atol=1e-12 * scale):
            raise NonPositiveDefinite(name, t, "not symmetric")
        try:
            np.linalg.cholesky(m)
        except np.linalg.LinAlgError:
            raise NonPositiveDefinite(name, t) from None


def _as_matrix(name, value, rows, cols, times):
    arr = np.asarray(value, dtype=float)
    if arr.ndim == 0:
        if rows != cols:
            raise DimensionMismatch(f"{name}: a scalar is only accepted for square matrices")
        return MatrixPath(arr * np.eye(rows))
    if arr.ndim == 2:
        if arr.shape != (rows, cols):
            raise DimensionMismatch(f"{name} has shape {arr.shape}, expected {(rows, cols)}")
        return MatrixPath(arr)
    if arr.ndim == 3:
        if arr.shape[1:] != (rows, cols):
            raise DimensionMismatch(f"{name} entries have shape {arr.shape[1:]}, expected {(rows, cols)}")
        if times is None:
            raise GridMismatch(f"{name} is tabulated; a time grid is required")
        if arr.shape[0] != len(times):
            raise GridMismatch(f"{name} table has {arr.shape[0]} entries, grid has {len(times)} points")
        return MatrixPath(arr, times)
    raise DimensionMismatch(f"{name} must be a scalar, a matrix or a per-grid table")


def make_schedule(spec: Mapping[str, Any], grid: TimeGrid | None = None) -> ModelSchedule:
    """Build and validate a :class:`ModelSchedule` from a plain mapping.

    ``spec`` carries ``dim_x``, ``dim_z``, ``A``, ``C``, ``Q``, ``R``, ``m0`` and
    ``Sigma0``.  Matrices are nested row-major lists, either constant or a
    per-grid-point table (then ``grid`` must be given).  A scalar stands for a
    multiple of the identity when the matrix is square.

    Raises
    ------
    DimensionMismatch
        When a matrix or vector shape disagrees with ``dim_x``/``dim_z``.
    NonPositiveDefinite
        When Q, R or Sigma0 is not SPD at some grid time.
    """
    try:
        d = int(spec["dim_x"])
        m = int(spec["dim_z"])
    except KeyError as exc:
        raise DimensionMismatch(f"model spec is missing {exc.args[0]!r}") from None
    if d < 1 or m < 1:
        raise DimensionMismatch("dim_x and dim_z must be positive")
    times = None if grid is None else grid.times
    A = _as_matrix("A", spec["A"], d, d, times)
    C = _as_matrix("C", spec["C"], m, d, times)
    Q = _as_matrix("Q", spec["Q"], d, d, times)
    R = _as_matrix("R", spec["R"], m, m, times)

    m0 = np.atleast_1d(np.asarray(spec.get("m0", np.zeros(d)), dtype=float))
    if m0.shape != (d,):
        raise DimensionMismatch(f"m0 has shape {m0.shape}, expected {(d,)}")
    S0 = np.asarray(spec["Sigma0"], dtype=float)
    S0 = S0 * np.eye(d) if S0.ndim == 0 else S0
    if S0.shape != (d, d):
        raise DimensionMismatch(f"Sigma0 has shape {S0.shape}, expected {(d, d)}")

    _check_spd("Q", Q.values, Q.times)
    _check_spd("R", R.values, R.times)
    _check_spd("Sigma0", S0)
    m0.setflags(write=False)
    S0.setflags(write=False)
    return ModelSchedule(d, m, A, C, Q, R, m0, S0, name=str(spec.get("name", "")))


def scalar_model(a=0.0, c=1.0, q=1.0, r=1.0, m0=0.0, sigma0=1.0, name="SCALAR-SS") -> ModelSchedule:
    return make_schedule(
        {"dim_x": 1, "dim_z": 1, "A": a, "C": [[c]], "Q": q, "R": r, "m0": [m0], "Sigma0": sigma0,
         "name": name})


def random_model(dim_x: int, dim_z: int, seed: int, name: str | None = None) -> ModelSchedule:
    """Seeded random stable model with well-conditioned noise covariances."""
    rng = np.random.default_rng(seed)
    A = 0.5 * rng.standard_normal((dim_x, dim_x)) - 0.5 * np.eye(dim_x)
    C = rng.standard_normal((dim_z, dim_x))
    G = rng.standard_normal((dim_x, dim_x))
    Q = 0.5 * G @ G.T / dim_x + 0.5 * np.eye(dim_x)
    H = rng.standard_normal((dim_z, dim_z))
    R = 0.5 * H @ H.T / dim_z + 0.5 * np.eye(dim_z)
    J = rng.standard_normal((dim_x, dim_x))
    S0 = J @ J.T / dim_x + 0.5 * np.eye(dim_x)
    m0 = rng.standard_normal(dim_x)
    spec = {"dim_x": dim_x, "dim_z": dim_z, "A": A, "C": C, "Q": Q, "R": R, "m0": m0,
            "Sigma0": S0, "name": name or f"RANDOM-{dim_x}D-{seed}"}
    return make_schedule(spec)


def chol_increments(cov: np.ndarray, dt: float) -> np.ndarray:
    """Batched lower Cholesky factors of ``cov * dt``."""
    return np.linalg.cholesky(cov * dt)


def simulate_truth(schedule: ModelSchedule, grid: TimeGrid, seed: int) -> Trajectory:
    """Euler-Maruyama sample of the hidden state and observation increments."""
    d, m, n, dt = schedule.dim_x, schedule.dim_z, grid.n_steps, grid.dt
    rng = np.random.default_rng(seed)
    mats = schedule.on(grid.times[:-1])

    x0 = schedule.prior_mean + np.linalg.cholesky(schedule.prior_cov) @ rng.standard_normal(d)
    zb = rng.standard_normal((n, d))
    zw = rng.standard_normal((n, m))
    db = np.einsum("kij,kj->ki", chol_increments(mats.Q, dt), zb)
    dw = np.einsum("kij,kj->ki", chol_increments(mats.R, dt), zw)

    F = np.eye(d) + mats.A * dt
    x = kernels.affine_recursion(F, db, x0)
    dz = observation_increments(mats.C, x, dw, dt)
    return Trajectory(grid, x, dz, db, dw, int(seed))


def observation_increments(C: np.ndarray, x: np.ndarray, dw: np.ndarray, dt: float) -> np.ndarray:
    """``dZ_k = C_k X_k dt + dW_k`` for ``k = 0..n-1``."""
    return np.einsum("kij,kj->ki", C, x[:-1]) * dt + dw


def aggregate(increments: np.ndarray, factor: int) -> np.ndarray:
    """Sum consecutive blocks of ``factor`` increments (fine grid -> coarse grid)."""
    n = increments.shape[0]
    if n % factor:
        raise GridMismatch(f"{n} increments cannot be grouped by {factor}")
    return increments.reshape(n // factor, factor, *increments.shape[1:]).sum(axis=1)
