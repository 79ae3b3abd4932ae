"""Benchmark the compiled kernels against the interpreted fallback.

Runs the hot kernels twice: once in this process (numba-compiled unless
MVSTABLE_NO_NUMBA=1) and once in a subprocess with MVSTABLE_NO_NUMBA=1, and
reports the speedup. Usage:

    python benchmarks/bench_kernels.py [--n 2000] [--quick]
"""

import argparse
import json
import os
import subprocess
import sys
import time

import numpy as np

sys.path.insert(0, os.path.join(os.path.dirname(__file__), "..", "src"))

BENCH_CODE = r"""
import json, sys, time
import numpy as np
from mvstable._jit import NUMBA_ENABLED
from mvstable.gfun import QuadConfig, g_values
from mvstable import kernels

n = int(sys.argv[1])
rng = np.random.default_rng(0)
vs = rng.standard_normal(n) * 2.0
bs = rng.uniform(-0.9, 0.9, n)
cfg = QuadConfig(nodes_per_interval=8, weight_rel_tol=1e-7,
                 first_interval_splits=4)

# warm-up (includes JIT compilation when numba is active)
g_values(vs[:4], bs[:4], 1.7, 2, cfg)

t0 = time.perf_counter()
out = g_values(vs, bs, 1.7, 2, cfg, clamp=False)
t_g = time.perf_counter() - t0
check = g_values(vs[:64], bs[:64], 1.7, 2, cfg, clamp=False)

x = rng.standard_normal(5000)
kernels.garch11_recursion(x[:16], 0.0, 0.1, 0.05, 0.1, 0.8)
t0 = time.perf_counter()
nll, _, _ = kernels.garch11_recursion(x, 0.0, 0.1, 0.05, 0.1, 0.8)
t_garch = time.perf_counter() - t0

print(json.dumps({
    "numba": NUMBA_ENABLED,
    "g_seconds": t_g,
    "g_us_per_eval": t_g / n * 1e6,
    "g_checksum": float(np.sum(check)),
    "garch_seconds": t_garch,
    "garch_nll": float(nll),
}))
"""


def run_once(n, disable_numba):
    env = dict(os.environ)
    if disable_numba:
        env["MVSTABLE_NO_NUMBA"] = "1"
    else:
        env.pop("MVSTABLE_NO_NUMBA", None)
    res = subprocess.run([sys.executable, "-c", BENCH_CODE, str(n)],
                         env=env, capture_output=True, text=True)
    if res.returncode != 0:
        raise RuntimeError(res.stderr)
    return json.loads(res.stdout.strip().splitlines()[-1])


def main():
    parser = argparse.ArgumentParser()
    parser.add_argument("--n", type=int, default=2000,
                        help="projection-kernel evaluations to time")
    parser.add_argument("--quick", action="store_true",
                        help="use n=200 for the interpreted path")
    args = parser.parse_args()

    fast = run_once(args.n, disable_numba=False)
    n_slow = 200 if args.quick else args.n
    t0 = time.time()
    slow = run_once(n_slow, disable_numba=True)
    print(f"compiled    : numba={fast['numba']}  "
          f"g {fast['g_us_per_eval']:9.2f} us/eval   "
          f"garch(5000) {fast['garch_seconds'] * 1e3:7.2f} ms")
    print(f"interpreted : numba={slow['numba']}  "
          f"g {slow['g_us_per_eval']:9.2f} us/eval   "
          f"garch(5000) {slow['garch_seconds'] * 1e3:7.2f} ms")
    print(f"speedup     : g x{slow['g_us_per_eval'] / fast['g_us_per_eval']:.0f}   "
          f"garch x{slow['garch_seconds'] / fast['garch_seconds']:.0f}")
    if fast["numba"] and not slow["numba"]:
        same = np.isclose(fast["g_checksum"], slow["g_checksum"], rtol=0,
                          atol=0)
        print(f"bit-identical results: {bool(same)} "
              f"(checksum {fast['g_checksum']:.17g})")
    print(f"(interpreted run wall time {time.time() - t0:.1f}s)")


if __name__ == "__main__":
    main()
