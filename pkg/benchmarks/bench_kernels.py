"""Compare the numba kernels with the pure-numpy fallback.

Usage::

    python benchmarks/bench_kernels.py [--rows 2000] [--repeat 3]

Kernel timings run in-process (both variants are importable when numba is
installed).  The end-to-end forest fit runs once per backend in a fresh
interpreter with ``DDML_BACKEND`` set, so it measures what a user gets.
"""
from __future__ import annotations

import argparse
import json
import os
import subprocess
import sys
import time

import numpy as np

from ddml import kernels


def best_time(fn, repeat):
    fn()  # warm-up (numba compiles on first call)
    times = []
    for _ in range(repeat):
        start = time.perf_counter()
        fn()
        times.append(time.perf_counter() - start)
    return min(times)


def kernel_cases(rows, rng):
    a = rng.standard_normal((min(rows, 1024), 16))
    x = np.ascontiguousarray(rng.random((rows, 10)))
    y = np.ascontiguousarray(np.sin(3 * x[:, 0]) + 0.1 * rng.standard_normal(rows))
    keys = rng.random((2 * rows + 1, 10))
    tree = kernels.grow_tree_numpy(x, y, keys, 4, 5, -1)
    return {
        "pairwise_sq_dists": ((a,), {}),
        "grow_tree": ((x, y, keys, 4, 5, -1), {}),
        "predict_tree": ((x, *tree), {}),
    }


FOREST_SNIPPET = """
import json, time, numpy as np
from ddml import BACKEND
from ddml.nuisance import NuisanceSpec, fit_nuisance
from ddml.numcore import make_rng
rng = np.random.default_rng(0)
x = rng.random(({rows}, 20)); y = np.sin(3 * x[:, 0]) + x[:, 1] ** 2
spec = NuisanceSpec(kind="random-forest", n_trees=20)
fit_nuisance(x[:200], y[:200], spec, make_rng(0))
start = time.perf_counter()
model = fit_nuisance(x, y, spec, make_rng(0))
pred = model.predict(x)
print(json.dumps({{"backend": BACKEND, "seconds": time.perf_counter() - start,
                  "checksum": float(pred.sum())}}))
"""


def forest_run(backend, rows):
    env = dict(os.environ, DDML_BACKEND=backend)
    out = subprocess.run([sys.executable, "-c", FOREST_SNIPPET.format(rows=rows)], env=env,
                         check=True, capture_output=True, text=True)
    return json.loads(out.stdout.strip().splitlines()[-1])


def main(argv=None):
    p = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    p.add_argument("--rows", type=int, default=2000)
    p.add_argument("--repeat", type=int, default=3)
    args = p.parse_args(argv)

    print(f"{'kernel':<20} {'numpy [s]':>12} {'numba [s]':>12} {'speedup':>9}")
    rng = np.random.default_rng(0)
    for name, (a, kw) in kernel_cases(args.rows, rng).items():
        slow = best_time(lambda: getattr(kernels, f"{name}_numpy")(*a, **kw), args.repeat)
        fast_fn = getattr(kernels, f"{name}_numba", None)
        if fast_fn is None:
            print(f"{name:<20} {slow:>12.4f} {'n/a':>12} {'':>9}")
            continue
        fast = best_time(lambda: fast_fn(*a, **kw), args.repeat)
        print(f"{name:<20} {slow:>12.4f} {fast:>12.4f} {slow / fast:>8.1f}x")

    print(f"\nrandom forest fit+predict, 20 trees, {args.rows} rows")
    results = [forest_run(b, args.rows) for b in ("numpy", "numba")]
    for r in results:
        print(f"  DDML_BACKEND={r['backend']:<6} {r['seconds']:.3f} s  checksum {r['checksum']:.10f}")
    if results[0]["checksum"] != results[1]["checksum"]:
        print("  warning: backends disagree")
        return 1
    return 0


if __name__ == "__main__":
    sys.exit(main())
