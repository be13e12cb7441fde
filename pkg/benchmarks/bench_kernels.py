"""Time the hot paths with numba on and off.

Each mode runs in its own interpreter because ``FOCALBO_NUMBA`` is read at
import time. Usage::

    python benchmarks/bench_kernels.py [--n 2000] [--m 50] [--d 4] [--repeat 30]
"""
import argparse
import json
import os
import subprocess
import sys

_WORKER = r"""
import json, sys, time
import numpy as np
from focalbo import _accel
from focalbo.kernels import KernelParams, contract, correlation
from focalbo.region import SearchRegion
from focalbo.svgp import KZZ_JITTER, Layout, _Focus, _objective, initial_state

n, m, d, repeat = map(int, sys.argv[1:5])
rng = np.random.default_rng(0)
X, y = rng.random((n, d)), rng.standard_normal(n)
Z = rng.random((m, d))
p = KernelParams(np.full(d, 0.3), 1.0, 0.01)
layout = Layout(d, m, "matern52", KZZ_JITTER)
theta = layout.pack(p, initial_state(Z, p, "matern52", KZZ_JITTER))
focus = _Focus(SearchRegion([0.4] * d, [0.25] * d), X)
W = rng.standard_normal((n, m))


def timed(fn):
    fn()  # compile / warm caches
    best = float("inf")
    for _ in range(repeat):
        t = time.perf_counter()
        fn()
        best = min(best, time.perf_counter() - t)
    return 1e3 * best


out = {
    "numba": _accel.USE_NUMBA,
    "cross_correlation": timed(lambda: correlation(X, Z, p.lengthscales, "matern52", with_deriv=True)),
    "contract": timed(lambda: contract(W, X, Z, p.lengthscales)),
    "focal_elbo_grad": timed(lambda: _objective(theta, layout, X, y, n, "matern52", focus)),
    "standard_elbo_grad": timed(lambda: _objective(theta, layout, X, y, n, "matern52")),
}
print(json.dumps(out))
"""


def run_mode(flag, args):
    env = {**os.environ, "FOCALBO_NUMBA": flag}
    cmd = [sys.executable, "-c", _WORKER, str(args.n), str(args.m), str(args.d), str(args.repeat)]
    res = subprocess.run(cmd, capture_output=True, text=True, env=env, check=True)
    return json.loads(res.stdout)


def main():
    ap = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    ap.add_argument("--n", type=int, default=2000)
    ap.add_argument("--m", type=int, default=50)
    ap.add_argument("--d", type=int, default=4)
    ap.add_argument("--repeat", type=int, default=30)
    args = ap.parse_args()
    fast, slow = run_mode("1", args), run_mode("0", args)
    if not fast.pop("numba"):
        print("warning: numba unavailable, both columns use numpy", file=sys.stderr)
    slow.pop("numba")
    print(f"n={args.n} m={args.m} d={args.d}, best of {args.repeat} (ms)")
    print(f"{'kernel':<22}{'numba':>10}{'numpy':>10}{'speedup':>10}")
    for name in fast:
        print(f"{name:<22}{fast[name]:>10.3f}{slow[name]:>10.3f}{slow[name] / fast[name]:>9.2f}x")


if __name__ == "__main__":
    main()
