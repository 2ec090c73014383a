"""Executable checks of the exactness and conservation identities.

Each check returns :class:`CheckReport` objects whose ``passed`` flag is
``metric <= tolerance``.  Composite checks return a list of reports.
"""

from __future__ import annotations

import math
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass, field
from typing import Iterable, Sequence

import numpy as np
from scipy.integrate import cumulative_simpson, simpson

from dualfpf.duality import (DETERMINISTIC_FPF, ENKF, STOCHASTIC_FPF, HomotopyParams,
                             dual_process, evaluate_estimator, lq_cost, optimal_dual_params,
                             xi_process)
from dualfpf.ensemble import init_ensemble, particle_increments, run_filter
from dualfpf.kalman import KalmanPath, integrate_riccati, run_kalman
from dualfpf.model import (ModelSchedule, TimeGrid, aggregate, random_model, scalar_model,
                           simulate_truth)


@dataclass
class CheckReport:
    name: str
    metric: float
    tolerance: float
    details: dict = field(default_factory=dict)

    @property
    def passed(self) -> bool:
        return bool(np.isfinite(self.metric) and self.metric <= self.tolerance)

    def to_dict(self) -> dict:
        return {"name": self.name, "passed": self.passed, "metric": float(self.metric),
                "tolerance": float(self.tolerance), "details": _plain(self.details)}

    def line(self) -> str:
        flag = "PASS" if self.passed else "FAIL"
        return f"{flag}  {self.name}: metric={self.metric:.3e} tol={self.tolerance:.1e}"


def _plain(obj):
    if isinstance(obj, dict):
        return {str(k): _plain(v) for k, v in obj.items()}
    if isinstance(obj, (list, tuple)):
        return [_plain(v) for v in obj]
    if isinstance(obj, np.ndarray):
        return obj.tolist()
    if isinstance(obj, np.generic):
        return obj.item()
    return obj


def _tail_integral(f, dt):
    """``int_{t_k}^{T} f`` for every grid point."""
    if f.shape[0] < 3:
        cum = np.concatenate([[0.0], np.cumsum(0.5 * dt * (f[1:] + f[:-1]))])
    else:
        cum = cumulative_simpson(f, dx=dt, initial=0.0)
    return cum[-1] - cum


def _integral(f, dt):
    if f.shape[0] < 2:
        return 0.0
    return float(simpson(f, dx=dt)) if f.shape[0] >= 3 else float(np.trapezoid(f, dx=dt))


def noise_forcing(schedule: ModelSchedule, kalman: KalmanPath, xi: np.ndarray,
                  gammas: HomotopyParams) -> np.ndarray:
    """``g1^2 xi^T Q xi + g2^2 xi^T K R K^T xi`` on the grid points of ``xi``."""
    k1 = xi.shape[0]
    times = kalman.grid.times[:k1]
    mats = schedule.on(times)
    g1, g2 = gammas.on(kalman.grid)
    kxi = np.einsum("kji,kj->ki", kalman.gain[:k1], xi)
    return (g1[:k1] ** 2 * np.einsum("ki,kij,kj->k", xi, mats.Q, xi)
            + g2[:k1] ** 2 * np.einsum("ki,kij,kj->k", kxi, mats.R, kxi))


def check_conservation(schedule: ModelSchedule, kalman: KalmanPath, a, T: float,
                       gammas: HomotopyParams = DETERMINISTIC_FPF, tolerance: float = 1e-5,
                       name: str | None = None) -> CheckReport:
    """``xi^T Sigma xi`` grows exactly by the injected-noise forcing.

    Metric: ``max_t |q(t) - q(T) + int_t^T forcing| / |a^T Sigma_T a|``.
    """
    a = np.asarray(a, dtype=float).reshape(schedule.dim_x)
    xi = xi_process(kalman, schedule, a, T, gammas)
    q = xi.quadratic
    scale = abs(float(a @ kalman.cov[kalman.grid.index(T)] @ a))
    if scale == 0.0:
        metric, worst = 0.0, 0.0
    else:
        gap = q - q[-1] + _tail_integral(noise_forcing(schedule, kalman, xi.values, gammas),
                                         kalman.grid.dt)
        k = int(np.argmax(np.abs(gap)))
        metric, worst = float(abs(gap[k]) / scale), float(kalman.grid.times[k])
    return CheckReport(name or f"conservation/g={gammas.label()}", metric, tolerance,
                       {"a_Sigma_T_a": scale, "worst_time": worst, "q0": float(q[0])})


def budget_residual(schedule: ModelSchedule, kalman: KalmanPath, a, T: float,
                    gammas: HomotopyParams) -> float:
    """Relative gap of ``c^T Sigma0 c + int (v^T Q v + w^T R w) = a^T Sigma_T a``."""
    sol = optimal_dual_params(kalman, schedule, a, T, gammas)
    kT = sol.u.shape[0] - 1
    mats = schedule.on(kalman.grid.times[: kT + 1])
    running = (np.einsum("ki,kij,kj->k", sol.v, mats.Q, sol.v)
               + np.einsum("ki,kij,kj->k", sol.w, mats.R, sol.w))
    lhs = float(sol.c_T @ schedule.prior_cov @ sol.c_T) + _integral(running, kalman.grid.dt)
    rhs = float(sol.a @ kalman.cov[kT] @ sol.a)
    if rhs == 0.0:
        return abs(lhs)
    return abs(lhs - rhs) / abs(rhs)


def variance_ode_rhs(A, C, Q, R, K, cov, cov_bar, gamma1, gamma2):
    """Right-hand side of the linear ODE for the particle variance.

    ``cov`` is the Riccati solution (inside the gain and ``Q Sigma^{-1}``);
    ``cov_bar`` is the variance being propagated.
    """
    beta = (0.5 * (1.0 - gamma1 ** 2))[:, None, None]
    alpha = (0.5 * (1.0 + gamma2 ** 2))[:, None, None]
    T = lambda M: np.swapaxes(M, -1, -2)  # noqa: E731
    QSi = T(np.linalg.solve(cov, Q))
    KC = K @ C
    return (A @ cov_bar + cov_bar @ T(A)
            + beta * (QSi @ cov_bar + cov_bar @ T(QSi))
            - alpha * (KC @ cov_bar + cov_bar @ T(KC))
            + (gamma1 ** 2)[:, None, None] * Q
            + (gamma2 ** 2)[:, None, None] * (K @ R @ T(K)))


def check_variance_ode(schedule: ModelSchedule, kalman: KalmanPath,
                       gammas: HomotopyParams = DETERMINISTIC_FPF, tolerance: float = 1e-4,
                       name: str | None = None) -> CheckReport:
    """Substitute the Riccati solution into the particle-variance ODE.

    Reports the largest Frobenius-norm residual of a central difference of
    ``Sigma_t`` against the right-hand side, over interior grid points.
    """
    grid = kalman.grid
    cov = kalman.cov
    mats = schedule.on(grid.times)
    g1, g2 = gammas.on(grid)
    rhs = variance_ode_rhs(mats.A, mats.C, mats.Q, mats.R, kalman.gain, cov, cov, g1, g2)
    fd = (cov[2:] - cov[:-2]) / (2.0 * grid.dt)
    res = np.linalg.norm(fd - rhs[1:-1], axis=(-2, -1))
    k = int(np.argmax(res))
    return CheckReport(name or f"variance-ode/g={gammas.label()}", float(res[k]), tolerance,
                       {"worst_time": float(grid.times[k + 1]), "dt": grid.dt})


def check_riccati_closed_form(dt: float = 1e-3, tolerance: float = 1e-6) -> list[CheckReport]:
    """Scalar Riccati against ``tanh(t + atanh(Sigma0))`` and the fixed point Sigma=1."""
    grid = TimeGrid.from_horizon(1.0, dt)
    cov = integrate_riccati(scalar_model(sigma0=0.5, name="SCALAR-TANH"), grid)[:, 0, 0]
    exact = np.tanh(grid.times + np.arctanh(0.5))
    fixed = integrate_riccati(scalar_model(), grid)[:, 0, 0]
    return [
        CheckReport("riccati/tanh", float(np.abs(cov - exact).max()), tolerance,
                    {"Sigma_1": float(cov[-1]), "exact": float(exact[-1])}),
        CheckReport("riccati/fixed-point", float(np.abs(fixed - 1.0).max()), 1e-10),
    ]


def _perturbation(rng, dim_z, first):
    if first:
        direction = np.eye(dim_z)[0]
        amp, freq, phase = 0.1, 10.0, 0.0
    else:
        direction = rng.standard_normal(dim_z)
        direction /= np.linalg.norm(direction)
        amp, freq, phase = rng.uniform(0.02, 0.2), rng.uniform(1.0, 20.0), rng.uniform(0, 2 * np.pi)
    return lambda t: amp * math.sin(freq * t + phase) * direction


def moo_optimality_probe(schedule: ModelSchedule, kalman: KalmanPath, a, T: float,
                         n_perturbations: int = 20, seed: int = 0,
                         gammas: HomotopyParams = HomotopyParams(0.5, 0.5),
                         cost_tolerance: float = 1e-4,
                         budget_tolerance: float = 1e-5) -> list[CheckReport]:
    """Probe the three optimality properties of the dual parameters.

    1. the feedback control reaches LQ cost ``a^T Sigma_T a``;
    2. every perturbed control costs strictly more;
    3. the initial-condition/noise budget closes for ``gammas``.
    """
    a = np.asarray(a, dtype=float).reshape(schedule.dim_x)
    target = float(a @ kalman.cov[kalman.grid.index(T)] @ a)
    y = dual_process(kalman, a, T)
    best = lq_cost(schedule, y, y.control)
    rng = np.random.default_rng(seed)
    excess = []
    for i in range(n_perturbations):
        yp = dual_process(kalman, a, T, perturbation=_perturbation(rng, schedule.dim_z, i == 0))
        excess.append(lq_cost(schedule, yp, yp.control) - best)
    excess = np.array(excess)
    return [
        CheckReport("lq/optimal-cost", abs(best - target) / max(abs(target), 1e-300),
                    cost_tolerance, {"cost": best, "a_Sigma_T_a": target}),
        CheckReport("lq/perturbations", float(np.sum(excess <= 0.0)), 0.0,
                    {"min_excess": float(excess.min()) if excess.size else None,
                     "n": int(n_perturbations)}),
        CheckReport(f"lq/budget/g={gammas.label()}",
                    budget_residual(schedule, kalman, a, T, gammas), budget_tolerance),
    ]


def _equivalence_gap(schedule, grid, a, gammas, dz, x0, db, dw):
    kalman = run_kalman(schedule, grid, dz)
    sol = optimal_dual_params(kalman, schedule, a, grid.T, gammas)
    s_bar = evaluate_estimator(sol, dz, x0, db, dw, schedule.prior_mean)
    noise = (None if db is None else db[:, None, :], None if dw is None else dw[:, None, :])
    run = run_filter(schedule, grid, dz, 1, gammas, "oracle", kalman=kalman, x0=x0[None],
                     noise=noise)
    return abs(s_bar - float(a @ run.final.particles[0])), s_bar


def estimator_particle_equivalence(schedule: ModelSchedule, grid: TimeGrid, a,
                                   gammas: HomotopyParams = DETERMINISTIC_FPF, seed: int = 0,
                                   tolerance: float = 1e-3,
                                   ratio_range: tuple[float, float] = (1.5, 2.5)) -> list[CheckReport]:
    """Compare the closed-form estimator with one mean-field particle, same draws.

    Everything is drawn on the grid refined by two and summed for the coarse
    grid, so the two resolutions see the same Brownian paths.
    """
    a = np.asarray(a, dtype=float).reshape(schedule.dim_x)
    fine = grid.refine(2)
    truth = simulate_truth(schedule, fine, seed)
    x0 = init_ensemble(schedule, 1, seed).particles[0]
    db, dw = particle_increments(schedule, fine, seed, 1, gammas)
    db = None if db is None else db[:, 0, :]
    dw = None if dw is None else dw[:, 0, :]

    gap_fine, _ = _equivalence_gap(schedule, fine, a, gammas, truth.dz, x0, db, dw)
    gap, s_bar = _equivalence_gap(
        schedule, grid, a, gammas, aggregate(truth.dz, 2), x0,
        None if db is None else aggregate(db, 2), None if dw is None else aggregate(dw, 2))
    ratio = gap / gap_fine if gap_fine > 0 else float("inf")
    centre = 0.5 * (ratio_range[0] + ratio_range[1])
    half = 0.5 * (ratio_range[1] - ratio_range[0])
    label = gammas.label()
    return [
        CheckReport(f"equivalence/pathwise/g={label}", gap, tolerance,
                    {"dt": grid.dt, "S_bar": s_bar, "gap_half_dt": gap_fine}),
        CheckReport(f"equivalence/order/g={label}", abs(ratio - centre), half,
                    {"ratio": ratio, "range": list(ratio_range)}),
    ]


def _exactness_seed(args):
    schedule, grid, gammas_list, n_list, seed, gain_mode = args
    truth = simulate_truth(schedule, grid, seed)
    kalman = run_kalman(schedule, grid, truth.dz)
    mT, ST = kalman.mean[-1], kalman.cov[-1]
    out = np.empty((len(gammas_list), len(n_list), 2))
    for i, gammas in enumerate(gammas_list):
        for j, n in enumerate(n_list):
            run = run_filter(schedule, grid, truth.dz, n, gammas, gain_mode, seed=seed,
                             kalman=kalman if gain_mode == "oracle" else None)
            out[i, j, 0] = np.linalg.norm(run.mean[-1] - mT)
            out[i, j, 1] = np.linalg.norm(run.cov[-1] - ST)
    return out, float(np.trace(ST))


def exactness_report(schedule: ModelSchedule, grid: TimeGrid,
                     gammas_list: Sequence[HomotopyParams], n_list: Sequence[int],
                     seeds: Iterable[int], gain_mode: str = "empirical", workers: int = 1,
                     slope_range: tuple[float, float] = (-0.7, -0.3),
                     envelope_sigmas: float = 4.0,
                     envelope_fraction: float = 0.95) -> list[CheckReport]:
    """Finite-N filters against the Kalman filter on shared observation paths.

    For each ``gammas``: log-log slope of the seed-averaged final mean and
    covariance errors against N, and the fraction of seeds whose mean error at
    the largest N lies within ``envelope_sigmas * sqrt(tr Sigma_T / N)``.
    """
    seeds = list(seeds)
    n_list = [int(n) for n in n_list]
    jobs = [(schedule, grid, list(gammas_list), n_list, s, gain_mode) for s in seeds]
    if workers > 1:
        with ProcessPoolExecutor(max_workers=workers) as pool:
            results = list(pool.map(_exactness_seed, jobs))
    else:
        results = [_exactness_seed(j) for j in jobs]
    errors = np.stack([r[0] for r in results])  # seed, gamma, N, {mean, cov}
    traces = np.array([r[1] for r in results])

    reports = []
    centre = 0.5 * (slope_range[0] + slope_range[1])
    half = 0.5 * (slope_range[1] - slope_range[0])
    logn = np.log(n_list)
    for i, gammas in enumerate(gammas_list):
        label = gammas.label()
        avg = errors[:, i].mean(axis=0)
        details = {"N": n_list, "mean_error": avg[:, 0], "cov_error": avg[:, 1],
                   "seeds": len(seeds), "gain_mode": gain_mode}
        if len(n_list) >= 2:
            for col, kind in ((0, "mean"), (1, "cov")):
                slope = float(np.polyfit(logn, np.log(avg[:, col]), 1)[0])
                reports.append(CheckReport(f"exactness/{kind}-slope/g={label}",
                                           abs(slope - centre), half,
                                           dict(details, slope=slope)))
        n_max = n_list[-1]
        envelope = envelope_sigmas * np.sqrt(traces / n_max)
        outside = float(np.mean(errors[:, i, -1, 0] > envelope))
        reports.append(CheckReport(f"exactness/clt-envelope/g={label}", outside,
                                   1.0 - envelope_fraction,
                                   dict(details, N_max=n_max, fraction_inside=1.0 - outside)))
    return reports


CANONICAL_GAMMAS = (DETERMINISTIC_FPF, STOCHASTIC_FPF, HomotopyParams(0.5, 0.5), ENKF)


def canonical_models() -> dict[str, ModelSchedule]:
    return {
        "SCALAR-SS": scalar_model(),
        "SCALAR-TANH": scalar_model(sigma0=0.5, name="SCALAR-TANH"),
        "RANDOM-2D": random_model(2, 1, seed=11, name="RANDOM-2D"),
        "RANDOM-3D": random_model(3, 2, seed=7, name="RANDOM-3D"),
    }


CHECK_FAMILIES = ("riccati", "conservation", "budget", "lq", "variance_ode", "equivalence",
                  "exactness")


def run_suite(checks: Sequence[str] | None = None, dt: float = 1e-3, seed: int = 0,
              tolerances: dict | None = None, exactness_seeds: Sequence[int] = tuple(range(10)),
              exactness_particles: Sequence[int] = (100, 1000, 10000),
              workers: int = 1) -> list[CheckReport]:
    """Run the selected check families over the canonical models.

    ``tolerances`` maps a family name (or ``"all"``) to a tolerance that
    replaces the default for every report of that family.
    """
    checks = list(CHECK_FAMILIES if checks is None else checks)
    unknown = set(checks) - set(CHECK_FAMILIES)
    if unknown:
        raise ValueError(f"unknown checks: {sorted(unknown)}")
    tolerances = dict(tolerances or {})
    models = canonical_models()
    grid = TimeGrid.from_horizon(1.0, dt)
    rng = np.random.default_rng(seed)
    kalmans = {}

    def kalman_for(name):
        if name not in kalmans:
            truth = simulate_truth(models[name], grid, seed)
            kalmans[name] = run_kalman(models[name], grid, truth.dz)
        return kalmans[name]

    reports: list[tuple[str, CheckReport]] = []
    for family in checks:
        if family == "riccati":
            out = check_riccati_closed_form(dt)
        elif family == "conservation":
            out = [check_conservation(models[n], kalman_for(n), np.ones(models[n].dim_x), 1.0, g,
                                      name=f"conservation/{n}/g={g.label()}")
                   for n in ("SCALAR-SS", "RANDOM-3D") for g in CANONICAL_GAMMAS]
        elif family == "budget":
            m = models["RANDOM-3D"]
            out = []
            for i in range(10):
                a = rng.standard_normal(m.dim_x)
                out.append(CheckReport(f"budget/RANDOM-3D/a{i}",
                                       budget_residual(m, kalman_for("RANDOM-3D"), a, 1.0,
                                                       HomotopyParams(0.5, 0.5)), 1e-5))
        elif family == "lq":
            out = []
            for n in ("SCALAR-SS", "RANDOM-3D"):
                out += [CheckReport(f"{r.name}/{n}", r.metric, r.tolerance, r.details)
                        for r in moo_optimality_probe(models[n], kalman_for(n),
                                                      np.ones(models[n].dim_x), 1.0, seed=seed)]
        elif family == "variance_ode":
            pairs = [("SCALAR-TANH", DETERMINISTIC_FPF), ("SCALAR-SS", ENKF),
                     ("RANDOM-2D", STOCHASTIC_FPF), ("RANDOM-3D", HomotopyParams(0.3, 0.7)),
                     ("RANDOM-3D", HomotopyParams(0.5, 0.5))]
            out = [check_variance_ode(models[n], kalman_for(n), g,
                                      name=f"variance-ode/{n}/g={g.label()}") for n, g in pairs]
        elif family == "equivalence":
            eq_grid = TimeGrid.from_horizon(1.0, min(dt, 1e-4))
            out = []
            for g in (DETERMINISTIC_FPF, ENKF):
                out += estimator_particle_equivalence(models["SCALAR-SS"], eq_grid, [1.0], g,
                                                      seed=seed)
        else:
            out = exactness_report(models["RANDOM-2D"], grid, CANONICAL_GAMMAS,
                                   exactness_particles, exactness_seeds, workers=workers)
        reports += [(family, r) for r in out]

    for family, r in reports:
        if family in tolerances:
            r.tolerance = float(tolerances[family])
        elif "all" in tolerances:
            r.tolerance = float(tolerances["all"])
    return [r for _, r in reports]
