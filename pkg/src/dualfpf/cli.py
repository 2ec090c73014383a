"""Config-driven experiment runner.

Usage::

    dualfpf filter --config exp.yaml --out results/ --particles 100 1000
    dualfpf verify --out report/

Every output file carries the hash of the (normalized) configuration.  The
worker count and the output directory are excluded from the hash, so runs
that differ only in parallelism produce identical files.
"""

from __future__ import annotations

import argparse
import dataclasses
import hashlib
import itertools
import json
import sys
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass, field
from pathlib import Path
from typing import Any

import numpy as np

from dualfpf.duality import HomotopyParams, conditional_mean_estimate, evaluate_estimator, \
    optimal_dual_params
from dualfpf.ensemble import GAIN_MODES, init_ensemble, particle_increments, run_filter
from dualfpf.errors import ConfigError, DualFPFError, GridMismatch
from dualfpf.export import dual_table, kalman_table, particle_table, read_trajectory, \
    stats_table, trajectory_table, write_csv
from dualfpf.kalman import run_kalman
from dualfpf.model import TimeGrid, make_schedule, scalar_model, simulate_truth
from dualfpf.verify import CHECK_FAMILIES, run_suite

_UNHASHED = ("out", "workers")
NO_CHECKS_MARKER = "no checks run"


def _default_model():
    return scalar_model().to_spec()


@dataclass
class ExperimentConfig:
    """Everything needed to reproduce an experiment.

    ``gammas`` is a list of ``[gamma1, gamma2]`` pairs; ``sweep`` (used by the
    ``sweep`` subcommand) holds ``gamma1``/``gamma2`` value lists whose
    Cartesian product is run.
    """

    model: dict = field(default_factory=_default_model)
    dt: float = 1e-3
    T: float = 1.0
    gammas: list = field(default_factory=lambda: [[0.0, 0.0]])
    particles: list = field(default_factory=lambda: [1000])
    seeds: list = field(default_factory=lambda: [0])
    gain_mode: str = "empirical"
    out: str = "out"
    workers: int = 1
    keep_particles: bool = False
    a: list | None = None
    horizon: float | None = None
    observations: str | None = None
    sweep: dict = field(default_factory=lambda: {"gamma1": [0.0, 0.5, 1.0],
                                                 "gamma2": [0.0, 0.5, 1.0]})
    checks: list | None = None
    tolerances: dict = field(default_factory=dict)
    exactness_seeds: list = field(default_factory=lambda: list(range(10)))
    exactness_particles: list = field(default_factory=lambda: [100, 1000, 10000])

    def __post_init__(self):
        self.model = dict(self.model)
        # from_dict lifts grid keys out of the model block
        for key in ("dt", "T"):
            if key in self.model:
                raise ConfigError(f"'{key}' inside 'model' must be lifted to the top level")
        self.dt, self.T = float(self.dt), float(self.T)
        self.gammas = [[float(g1), float(g2)] for g1, g2 in self.gammas]
        self.particles = [int(n) for n in self.particles]
        self.seeds = [int(s) for s in self.seeds]
        self.workers = int(self.workers)
        if self.gain_mode not in GAIN_MODES:
            raise ConfigError(f"gain_mode must be one of {GAIN_MODES}, got {self.gain_mode!r}")
        if self.workers < 1:
            raise ConfigError("workers must be at least 1")
        if self.a is not None:
            self.a = [float(x) for x in np.atleast_1d(self.a)]
        if self.horizon is not None:
            self.horizon = float(self.horizon)
        self.sweep = {k: [float(x) for x in v] for k, v in self.sweep.items()}
        if set(self.sweep) - {"gamma1", "gamma2"}:
            raise ConfigError("sweep accepts only 'gamma1' and 'gamma2' lists")
        if self.checks is not None:
            self.checks = [str(c) for c in self.checks]
            bad = set(self.checks) - set(CHECK_FAMILIES)
            if bad:
                raise ConfigError(f"unknown checks {sorted(bad)}; choose from {CHECK_FAMILIES}")
        self.tolerances = {str(k): float(v) for k, v in self.tolerances.items()}
        self.exactness_seeds = [int(s) for s in self.exactness_seeds]
        self.exactness_particles = [int(n) for n in self.exactness_particles]

    @classmethod
    def from_dict(cls, data: dict[str, Any]) -> "ExperimentConfig":
        data = dict(data)
        model = dict(data.get("model", _default_model()))
        for key in ("dt", "T"):
            if key in model:
                data.setdefault(key, model.pop(key))
        data["model"] = model
        known = {f.name for f in dataclasses.fields(cls)}
        unknown = set(data) - known
        if unknown:
            raise ConfigError(f"unknown config keys: {sorted(unknown)}")
        return cls(**data)

    def to_dict(self) -> dict:
        return dataclasses.asdict(self)

    def config_hash(self) -> str:
        payload = {k: v for k, v in self.to_dict().items() if k not in _UNHASHED}
        text = json.dumps(payload, sort_keys=True, separators=(",", ":"))
        return hashlib.sha256(text.encode()).hexdigest()

    @property
    def grid(self) -> TimeGrid:
        return TimeGrid.from_horizon(self.T, self.dt)

    def schedule(self):
        return make_schedule(self.model, self.grid)


def load_config(path) -> ExperimentConfig:
    path = Path(path)
    try:
        text = path.read_text()
    except OSError as exc:
        raise ConfigError(f"cannot read config {path}: {exc}") from exc
    if path.suffix.lower() == ".json":
        data = json.loads(text)
    else:
        import yaml

        data = yaml.safe_load(text)
    if not isinstance(data, dict):
        raise ConfigError(f"{path}: top level must be a mapping")
    return ExperimentConfig.from_dict(data)


def save_config(cfg: ExperimentConfig, path) -> Path:
    path = Path(path)
    if path.suffix.lower() == ".json":
        path.write_text(json.dumps(cfg.to_dict(), indent=2, sort_keys=True) + "\n")
    else:
        import yaml

        path.write_text(yaml.safe_dump(cfg.to_dict(), sort_keys=True))
    return path


def _write_json(path: Path, payload) -> Path:
    path.parent.mkdir(parents=True, exist_ok=True)
    path.write_text(json.dumps(payload, indent=2, sort_keys=True) + "\n")
    return path


def _tag(g1, g2):
    return f"g{g1:g}_{g2:g}"


def _map(fn, jobs, workers):
    if workers > 1 and len(jobs) > 1:
        with ProcessPoolExecutor(max_workers=workers) as pool:
            return list(pool.map(fn, jobs))
    return [fn(j) for j in jobs]


def cmd_simulate(cfg: ExperimentConfig) -> list[Path]:
    schedule, grid, h = cfg.schedule(), cfg.grid, cfg.config_hash()
    out = []
    for seed in cfg.seeds:
        header, data = trajectory_table(simulate_truth(schedule, grid, seed))
        out.append(write_csv(Path(cfg.out) / f"truth_s{seed}.csv", header, data, h))
    return out


def cmd_kalman(cfg: ExperimentConfig) -> list[Path]:
    schedule, grid, h = cfg.schedule(), cfg.grid, cfg.config_hash()
    out = []
    for seed in cfg.seeds:
        truth = simulate_truth(schedule, grid, seed)
        header, data = kalman_table(run_kalman(schedule, grid, truth.dz))
        out.append(write_csv(Path(cfg.out) / f"kalman_s{seed}.csv", header, data, h))
    return out


def _filter_cell(job):
    cfg_dict, (g1, g2), n, seed, subdir = job
    cfg = ExperimentConfig.from_dict(cfg_dict)
    schedule, grid, h = cfg.schedule(), cfg.grid, cfg.config_hash()
    truth = simulate_truth(schedule, grid, seed)
    kalman = run_kalman(schedule, grid, truth.dz)
    run = run_filter(schedule, grid, truth.dz, n, HomotopyParams(g1, g2), cfg.gain_mode, seed=seed,
                     kalman=kalman, keep_particles=cfg.keep_particles)
    stem = Path(cfg.out) / subdir / f"{_tag(g1, g2)}_N{n}_s{seed}"
    header, data = stats_table(run)
    write_csv(stem.with_suffix(".csv"), header, data, h)
    if run.particle_path is not None:
        header, data = particle_table(run)
        write_csv(stem.parent / (stem.name + "_particles.csv"), header, data, h)
    return {"gamma1": g1, "gamma2": g2, "N": n, "seed": seed,
            "mean_error": float(np.linalg.norm(run.mean[-1] - kalman.mean[-1])),
            "cov_error": float(np.linalg.norm(run.cov[-1] - kalman.cov[-1]))}


def _run_cells(cfg: ExperimentConfig, gammas, subdir: str) -> dict:
    cfg.schedule()  # validate before fanning out
    base = cfg.to_dict()
    jobs = [(base, tuple(g), n, s, subdir)
            for g, n, s in itertools.product(gammas, cfg.particles, cfg.seeds)]
    cells = _map(_filter_cell, jobs, cfg.workers)
    aggregate = []
    for g, n in itertools.product(gammas, cfg.particles):
        sel = [c for c in cells if [c["gamma1"], c["gamma2"]] == list(g) and c["N"] == n]
        aggregate.append({"gamma1": g[0], "gamma2": g[1], "N": n,
                          "mean_error": float(np.mean([c["mean_error"] for c in sel])),
                          "cov_error": float(np.mean([c["cov_error"] for c in sel]))})
    return {"config_hash": cfg.config_hash(), "gain_mode": cfg.gain_mode, "cells": cells,
            "aggregate": aggregate}


def cmd_filter(cfg: ExperimentConfig) -> dict:
    summary = _run_cells(cfg, cfg.gammas, "filter")
    schedule, grid = cfg.schedule(), cfg.grid
    for seed in cfg.seeds:
        truth = simulate_truth(schedule, grid, seed)
        header, data = kalman_table(run_kalman(schedule, grid, truth.dz))
        write_csv(Path(cfg.out) / f"kalman_s{seed}.csv", header, data, summary["config_hash"])
    _write_json(Path(cfg.out) / "filter_summary.json", summary)
    return summary


def cmd_sweep(cfg: ExperimentConfig) -> dict:
    gammas = [[g1, g2] for g1, g2 in itertools.product(cfg.sweep.get("gamma1", [0.0]),
                                                       cfg.sweep.get("gamma2", [0.0]))]
    summary = _run_cells(cfg, gammas, "sweep")
    rows = np.array([[c["gamma1"], c["gamma2"], c["N"], c["seed"], c["mean_error"],
                      c["cov_error"]] for c in summary["cells"]])
    write_csv(Path(cfg.out) / "sweep.csv",
              ["gamma1", "gamma2", "N", "seed", "mean_error", "cov_error"], rows,
              summary["config_hash"])
    _write_json(Path(cfg.out) / "sweep_summary.json", summary)
    return summary


def cmd_dual(cfg: ExperimentConfig) -> dict:
    schedule, grid, h = cfg.schedule(), cfg.grid, cfg.config_hash()
    a = np.ones(schedule.dim_x) if cfg.a is None else np.asarray(cfg.a, dtype=float)
    horizon = cfg.T if cfg.horizon is None else cfg.horizon

    if cfg.observations is not None:
        _, _, dz = read_trajectory(cfg.observations)
        if dz.shape[0] != grid.n_steps:
            raise GridMismatch(f"{cfg.observations}: {dz.shape[0]} increments, grid has "
                               f"{grid.n_steps} steps")
        paths = [(None, dz)]
    else:
        paths = [(s, simulate_truth(schedule, grid, s).dz) for s in cfg.seeds]

    out: dict = {"config_hash": h, "a": a.tolist(), "horizon": horizon, "results": []}
    written = set()
    for (g1, g2), (seed, dz) in itertools.product(cfg.gammas, paths):
        gammas = HomotopyParams(g1, g2)
        kalman = run_kalman(schedule, grid, dz)
        sol = optimal_dual_params(kalman, schedule, a, horizon, gammas)
        if (g1, g2) not in written:
            header, data = dual_table(sol)
            write_csv(Path(cfg.out) / f"dual_{_tag(g1, g2)}.csv", header, data, h)
            written.add((g1, g2))
        noise_seed = 0 if seed is None else seed
        x0 = init_ensemble(schedule, 1, noise_seed).particles[0]
        db, dw = particle_increments(schedule, grid, noise_seed, 1, gammas)
        s_bar = evaluate_estimator(sol, dz, x0, None if db is None else db[:, 0],
                                   None if dw is None else dw[:, 0], schedule.prior_mean)
        kT = grid.index(horizon)
        out["results"].append({
            "gamma1": g1, "gamma2": g2, "seed": seed,
            "b_T": sol.b_T.tolist(), "c_T": sol.c_T.tolist(),
            "S_hat": conditional_mean_estimate(sol, dz, schedule.prior_mean),
            "S_bar": s_bar,
            "a_m_T": float(a @ kalman.mean[kT]),
            "a_Sigma_T_a": float(a @ kalman.cov[kT] @ a),
        })
    _write_json(Path(cfg.out) / "dual_summary.json", out)
    return out


def cmd_verify(cfg: ExperimentConfig) -> tuple[int, dict]:
    checks = list(CHECK_FAMILIES) if cfg.checks is None else cfg.checks
    seed = cfg.seeds[0] if cfg.seeds else 0
    reports = run_suite(checks, dt=cfg.dt, seed=seed, tolerances=cfg.tolerances,
                        exactness_seeds=cfg.exactness_seeds,
                        exactness_particles=cfg.exactness_particles,
                        workers=cfg.workers) if checks else []
    payload = {"config_hash": cfg.config_hash(), "checks": [r.to_dict() for r in reports],
               "all_passed": all(r.passed for r in reports)}
    if not reports:
        payload["status"] = NO_CHECKS_MARKER
        print(NO_CHECKS_MARKER)
    for r in reports:
        print(r.line())
    _write_json(Path(cfg.out) / "verify_report.json", payload)
    return (0 if payload["all_passed"] else 1), payload


COMMANDS = {"simulate": cmd_simulate, "kalman": cmd_kalman, "filter": cmd_filter,
            "dual": cmd_dual, "verify": cmd_verify, "sweep": cmd_sweep}


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="dualfpf",
                                     description="Exact linear-Gaussian particle filters via duality")
    sub = parser.add_subparsers(dest="command", required=True)
    for name in COMMANDS:
        p = sub.add_parser(name)
        p.add_argument("--config", type=Path, help="YAML or JSON experiment config")
        p.add_argument("--out", help="output directory (created if missing)")
        p.add_argument("--seed", type=int, help="run this single seed")
        p.add_argument("--gamma1", type=float)
        p.add_argument("--gamma2", type=float)
        p.add_argument("--particles", type=int, nargs="+")
        p.add_argument("--dt", type=float)
        p.add_argument("--horizon", type=float, help="final time T")
        p.add_argument("--workers", type=int, help="parallel processes (results do not change)")
        p.add_argument("--gain-mode", choices=GAIN_MODES)
        if name == "verify":
            p.add_argument("--checks", nargs="*", help=f"subset of {', '.join(CHECK_FAMILIES)}")
            p.add_argument("--tolerance", type=float, help="override every tolerance")
    return parser


def config_from_args(args) -> ExperimentConfig:
    data = load_config(args.config).to_dict() if args.config else ExperimentConfig().to_dict()
    if args.out is not None:
        data["out"] = args.out
    if args.seed is not None:
        data["seeds"] = [args.seed]
    if args.gamma1 is not None or args.gamma2 is not None:
        g1, g2 = data["gammas"][0] if data["gammas"] else (0.0, 0.0)
        data["gammas"] = [[g1 if args.gamma1 is None else args.gamma1,
                           g2 if args.gamma2 is None else args.gamma2]]
    if args.particles is not None:
        data["particles"] = args.particles
    if args.dt is not None:
        data["dt"] = args.dt
    if args.horizon is not None:
        data["T"] = args.horizon
    if args.workers is not None:
        data["workers"] = args.workers
    if args.gain_mode is not None:
        data["gain_mode"] = args.gain_mode
    if getattr(args, "checks", None) is not None:
        data["checks"] = args.checks
    if getattr(args, "tolerance", None) is not None:
        data["tolerances"] = {"all": args.tolerance}
    return ExperimentConfig.from_dict(data)


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    try:
        cfg = config_from_args(args)
        result = COMMANDS[args.command](cfg)
    except (DualFPFError, OSError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 2
    if args.command == "verify":
        return result[0]
    print(f"wrote results to {cfg.out}")
    return 0


if __name__ == "__main__":
    sys.exit(main())
