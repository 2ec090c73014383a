"""Compare the compiled kernels with the numpy fallback.

    python benchmarks/bench_kernels.py [--repeat 5] [--json out.json]

Each kernel is timed on representative shapes (best of ``--repeat``), then a
full filter run is timed in two subprocesses, one per backend.
"""

from __future__ import annotations

import argparse
import json
import os
import subprocess
import sys
import timeit

import numpy as np

from dualfpf import _pykernels
from dualfpf._backend import BACKEND

END_TO_END = """
import time
from dualfpf import *
s = random_model(2, 1, seed=11)
g = TimeGrid.from_horizon(1.0, 1e-3)
dz = simulate_truth(s, g, 0).dz
kp = run_kalman(s, g, dz)
best = {}
for label, n, mode in (("kalman", 0, None), ("filter N=10 oracle", 10, "oracle"),
                       ("filter N=1e4 empirical", 10000, "empirical")):
    times = []
    for _ in range(3):
        t = time.perf_counter()
        if n:
            run_filter(s, g, dz, n, HomotopyParams(0.5, 0.5), mode, seed=1, kalman=kp)
        else:
            run_kalman(s, g, dz)
        times.append(time.perf_counter() - t)
    best[label] = min(times)
print(BACKEND, repr(best))
"""


def cases(rng):
    n, d = 1000, 3
    A = rng.standard_normal((2 * n + 1, d, d)) * 0.3
    L = rng.standard_normal((2 * n + 1, d, d))
    Q = L @ np.swapaxes(L, 1, 2) + np.eye(d)
    S = 0.1 * Q
    X = rng.standard_normal((4096, 2))
    F, g, kdz = rng.standard_normal((2, 2)), rng.standard_normal(2), rng.standard_normal(2)
    zb, zw = rng.standard_normal((4096, 2)), rng.standard_normal((4096, 1))
    B, W = rng.standard_normal((2, 2)), rng.standard_normal((2, 1))
    return {
        "riccati_rk4 (n=1000, d=3)": lambda k: k.riccati_rk4(A, Q, S, np.eye(d), 1e-3),
        "backward_transition_rk4 (n=1000, d=3)": lambda k: k.backward_transition_rk4(A, 1e-3),
        "affine_recursion (n=1000, d=3)": lambda k: k.affine_recursion(
            np.eye(d) + 1e-3 * A[:n], Q[:n, 0], np.ones(d)),
        "particle_update (N=4096, d=2)": lambda k: k.particle_update(X, F, g, kdz, zb, B, zw, W,
                                                                     1e-3),
        "moments (N=4096, d=2)": lambda k: k.moments(X),
    }


def main(argv=None):
    parser = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    parser.add_argument("--repeat", type=int, default=5)
    parser.add_argument("--json", help="write results here")
    args = parser.parse_args(argv)

    backends = {"python": _pykernels}
    if BACKEND == "cython":
        from dualfpf._backend import _compiled, _wrap

        backends["cython"] = _wrap(_compiled)
    else:
        print("compiled extension not available; timing the fallback only")

    results = {"kernels": {}, "end_to_end": {}}
    for name, fn in cases(np.random.default_rng(0)).items():
        row = {}
        for label, k in backends.items():
            number = max(1, int(0.2 / max(timeit.timeit(lambda: fn(k), number=1), 1e-6)))
            row[label] = min(timeit.repeat(lambda: fn(k), number=number,
                                           repeat=args.repeat)) / number
        results["kernels"][name] = row

    for flag in ("1", "0") if "cython" in backends else ("1",):
        env = dict(os.environ, DUALFPF_PURE_PYTHON=flag)
        out = subprocess.run([sys.executable, "-c", END_TO_END], env=env, capture_output=True,
                             text=True, check=True).stdout.split(" ", 1)
        results["end_to_end"][out[0]] = eval(out[1])

    width = max(len(n) for n in list(results["kernels"]) + list(results["end_to_end"]["python"]))
    print(f"{'kernel':<{width}}  {'python':>12}  {'cython':>12}  {'speedup':>8}")
    for name, row in results["kernels"].items():
        cy = row.get("cython", float("nan"))
        print(f"{name:<{width}}  {row['python'] * 1e3:>10.3f}ms  {cy * 1e3:>10.3f}ms  "
              f"{row['python'] / cy:>7.1f}x")
    for name in results["end_to_end"]["python"]:
        py = results["end_to_end"]["python"][name]
        cy = results["end_to_end"].get("cython", {}).get(name, float("nan"))
        print(f"{name:<{width}}  {py * 1e3:>10.1f}ms  {cy * 1e3:>10.1f}ms  {py / cy:>7.1f}x")
    if args.json:
        with open(args.json, "w") as fh:
            json.dump(results, fh, indent=2)


if __name__ == "__main__":
    main()
