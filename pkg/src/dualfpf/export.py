"""CSV writers for paths.

Every file starts with a ``# config-hash: <hex>`` comment line followed by
the column header.  Numbers use ``%.17g`` so values round-trip exactly.
"""

from __future__ import annotations

from pathlib import Path

import numpy as np

from dualfpf.model import Trajectory

FLOAT_FORMAT = "%.17g"


def _cols(prefix, n):
    return [f"{prefix}_{i + 1}" for i in range(n)]


def _mat_cols(prefix, rows, cols):
    return [f"{prefix}_{i + 1}{j + 1}" for i in range(rows) for j in range(cols)]


def write_csv(path, header, data, config_hash: str | None = None) -> Path:
    path = Path(path)
    data = np.asarray(data, dtype=float)
    if data.ndim != 2 or data.shape[1] != len(header):
        raise ValueError(f"{path}: {data.shape} does not match {len(header)} columns")
    path.parent.mkdir(parents=True, exist_ok=True)
    try:
        with open(path, "w", newline="\n") as fh:
            if config_hash is not None:
                fh.write(f"# config-hash: {config_hash}\n")
            fh.write(",".join(header) + "\n")
            np.savetxt(fh, data, fmt=FLOAT_FORMAT, delimiter=",")
    except OSError as exc:
        raise OSError(f"cannot write {path}: {exc}") from exc
    return path


def read_csv(path) -> tuple[list[str], np.ndarray]:
    """Return ``(header, data)``; comment lines are skipped."""
    path = Path(path)
    with open(path) as fh:
        lines = [ln for ln in fh if not ln.startswith("#")]
    header = lines[0].strip().split(",")
    data = np.loadtxt(lines[1:], delimiter=",", ndmin=2)
    return header, data


def trajectory_table(traj: Trajectory):
    """``t, x_*, dz_*``; ``dz`` on row k is the increment over ``[t_k, t_{k+1}]``
    (the last row carries NaN)."""
    n1, d = traj.x.shape
    m = traj.dz.shape[1]
    dz = np.full((n1, m), np.nan)
    dz[:-1] = traj.dz
    return ["t"] + _cols("x", d) + _cols("dz", m), np.column_stack([traj.grid.times, traj.x, dz])


def read_trajectory(path) -> tuple[np.ndarray, np.ndarray, np.ndarray]:
    """Inverse of :func:`trajectory_table`: ``(times, x, dz)``."""
    header, data = read_csv(path)
    d = sum(h.startswith("x_") for h in header)
    return data[:, 0], data[:, 1:1 + d], data[:-1, 1 + d:]


def kalman_table(path):
    k1, d = path.mean.shape
    m = path.gain.shape[2]
    header = ["t"] + _cols("m", d) + _mat_cols("Sigma", d, d) + _mat_cols("K", d, m)
    data = np.column_stack([path.grid.times, path.mean, path.cov.reshape(k1, -1),
                            path.gain.reshape(k1, -1)])
    return header, data


def dual_table(sol):
    phi, psi = sol.transitions.phi, sol.transitions.psi
    k1, d, _ = phi.shape
    m = sol.u.shape[1]
    header = (["t"] + _mat_cols("phi", d, d) + _mat_cols("psi", d, d)
              + _cols("u", m) + _cols("v", d) + _cols("w", m))
    data = np.column_stack([sol.grid.times[:k1], phi.reshape(k1, -1), psi.reshape(k1, -1),
                            sol.u, sol.v, sol.w])
    return header, data


def stats_table(run):
    k1, d = run.mean.shape
    header = ["t"] + _cols("mN", d) + _mat_cols("SigmaN", d, d)
    return header, np.column_stack([run.grid.times, run.mean, run.cov.reshape(k1, -1)])


def particle_table(run):
    """Long format ``t, particle, x_*``; only available when particles were kept."""
    if run.particle_path is None:
        raise ValueError("particle path was not kept (keep_particles=False or N too large)")
    k1, n, d = run.particle_path.shape
    t = np.repeat(run.grid.times, n)
    idx = np.tile(np.arange(n, dtype=float), k1)
    return ["t", "particle"] + _cols("x", d), np.column_stack([t, idx, run.particle_path.reshape(-1, d)])
