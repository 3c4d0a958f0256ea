"""Time the compiled core against the numpy fallback.

    python3 benchmarks/bench_core.py [--repeat 5] [--json]

Kernel-level timings call both implementations in-process. The end-to-end
rows run one particle simulation and one grid evolution in a subprocess per
backend (``ALIGNFLOW_PURE`` selects the fallback at import time).
"""
import argparse
import json
import os
import subprocess
import sys
import timeit

import numpy as np

from alignflow import _fallback

try:
    from alignflow import _core
except ImportError:
    _core = None

E2E = {
    "simulate N=64 d=2 (500 rk4 steps)": (
        "from alignflow.kernels import make_builtin\n"
        "from alignflow.particles import from_arrays, simulate\n"
        "from alignflow.rng import SplitMix64\n"
        "r = SplitMix64(1); k = make_builtin('smoothed_norm', {'epsilon': 0.5}, 2)\n"
        "st = from_arrays(r.uniform(-2, 2, (64, 2)), r.uniform(-1, 1, (64, 2)))\n"
        "run = lambda: simulate(st, k, 0.5, 1e-3, record_every=500)\n"
    ),
    "grid evolve M=512 to t=0.5": (
        "from alignflow import grid as G\n"
        "from alignflow.kernels import make_builtin\n"
        "k = make_builtin('gaussian_bump', {'sigma': 0.5}, 1)\n"
        "g = G.init_grid('gaussian_bump_density', {'width': 0.3, 'background': 1e-3}, 8.0, 512, 0.01)\n"
        "run = lambda: G.evolve(g, k, 0.5)\n"
    ),
}


def kernel_cases(rng):
    n, d = 400, 2
    x, u = rng.normal(size=(n, d)), rng.normal(size=(n, d))
    m = rng.random(n)
    par = np.array([0.5])
    M = 2048
    kappa, rho, v = rng.random(M), rng.random(M) + 0.1, rng.normal(size=M)
    return {
        "grad_conv n=400": lambda c: c.grad_conv(2, par, x, x, m),
        "hess_pair n=400": lambda c: c.hess_pair(2, par, x, u, x, m, u),
        "pair_dissipation n=400": lambda c: c.pair_dissipation(2, par, x, u, m),
        "circulant_conv M=2048": lambda c: c.circulant_conv(kappa, rho, 0.01),
        "rusanov_fluxes M=2048": lambda c: c.rusanov_fluxes(rho, v),
    }


def best_of(fn, repeat):
    number = max(1, int(0.2 / max(timeit.timeit(fn, number=1), 1e-7)))
    return min(timeit.repeat(fn, number=number, repeat=repeat)) / number


def end_to_end(setup, pure, repeat):
    code = setup + f"import timeit\nprint(min(timeit.repeat(run, number=1, repeat={repeat})))\n"
    env = dict(os.environ, ALIGNFLOW_PURE="1" if pure else "0")
    out = subprocess.run([sys.executable, "-c", code], env=env, capture_output=True, text=True, check=True)
    return float(out.stdout.strip())


def main(argv=None):
    ap = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    ap.add_argument("--repeat", type=int, default=5)
    ap.add_argument("--json", action="store_true", help="emit machine-readable rows")
    args = ap.parse_args(argv)

    rows = []
    for name, fn in kernel_cases(np.random.default_rng(0)).items():
        t_np = best_of(lambda: fn(_fallback), args.repeat)
        t_cy = best_of(lambda: fn(_core), args.repeat) if _core else None
        rows.append((name, t_np, t_cy))
    for name, setup in E2E.items():
        t_np = end_to_end(setup, True, min(args.repeat, 3))
        t_cy = end_to_end(setup, False, min(args.repeat, 3)) if _core else None
        rows.append((name, t_np, t_cy))

    if args.json:
        print(json.dumps([{"case": n, "numpy_s": a, "cython_s": b} for n, a, b in rows], indent=2))
        return 0
    if _core is None:
        print("compiled core not built; numpy timings only")
    print(f"{'case':40s} {'numpy':>12s} {'cython':>12s} {'speedup':>8s}")
    for name, a, b in rows:
        cy = f"{b * 1e3:10.3f}ms" if b else f"{'-':>12s}"
        sp = f"{a / b:7.1f}x" if b else f"{'-':>8s}"
        print(f"{name:40s} {a * 1e3:10.3f}ms {cy} {sp}")
    return 0


if __name__ == "__main__":
    sys.exit(main())
