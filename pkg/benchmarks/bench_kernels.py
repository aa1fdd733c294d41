"""Compiled versus numpy convolution kernels, plus one end-to-end series run.

Run with ``python3 benchmarks/bench_kernels.py``; the numpy column is the
pure-Python fallback selected when the extension is missing.
"""

import argparse
import os
import subprocess
import sys
import timeit

import numpy as np

from memkernel import kernels
from memkernel.quadrature import weight_row


def best_of(fn, repeat):
    return min(timeit.repeat(fn, number=1, repeat=repeat))


def bench_conv(sizes, dims, repeat):
    rng = np.random.default_rng(0)
    print(f"{'kernel':<10}{'N':>6}{'D':>5}{'compiled [s]':>15}{'numpy [s]':>12}{'speedup':>10}")
    for n in sizes:
        for d in dims:
            a = rng.normal(size=(n, d, d)) + 1j * rng.normal(size=(n, d, d))
            b = rng.normal(size=(n, d, d)) + 1j * rng.normal(size=(n, d, d))
            tc = best_of(lambda: kernels.conv(a, b, 0.01, backend="compiled"), repeat)
            tn = best_of(lambda: kernels.conv(a, b, 0.01, backend="numpy"), repeat)
            print(f"{'conv':<10}{n:>6}{d:>5}{tc:>15.4f}{tn:>12.4f}{tn / tc:>10.1f}")
    for n in sizes:
        for d in dims:
            w = rng.normal(size=(n, d, d)) + 1j * rng.normal(size=(n, d, d))
            y = rng.normal(size=(n, d, d)) + 1j * rng.normal(size=(n, d, d))
            wts = weight_row(n - 1, "gregory")

            def sweep(backend):
                for i in range(1, n, max(1, n // 50)):
                    kernels.history(w, y, i, wts[: i + 1], 0.01, backend=backend)

            tc = best_of(lambda: sweep("compiled"), repeat)
            tn = best_of(lambda: sweep("numpy"), repeat)
            print(f"{'history':<10}{n:>6}{d:>5}{tc:>15.4f}{tn:>12.4f}{tn / tc:>10.1f}")


END_TO_END = """
import time
import numpy as np
from memkernel import kernels, liouville as lv, renewal as rn
from memkernel.quadrature import TimeGrid
from memkernel.series import EvolutionConfig, propagate_R
gen = lv.lindblad_generator(lv.LindbladSpec(0.5 * lv.PAULI["z"], [(lv.SIGMA_MINUS, 0.4)]))
cfg = EvolutionConfig.semigroup(gen, lv.pauli_conjugation("x"), rn.erlang(2, 2.0), TimeGrid(4.0, {n}))
t = time.perf_counter()
propagate_R(cfg, richardson=False)
print(kernels.BACKEND, time.perf_counter() - t)
"""


def bench_series(n):
    for pure in ("0", "1"):
        env = dict(os.environ, MEMKERNEL_PURE_PYTHON=pure)
        out = subprocess.run([sys.executable, "-c", END_TO_END.format(n=n)], env=env, capture_output=True,
                             text=True, check=True).stdout.split()
        print(f"series R, N={n}, backend {out[0]:<9} {float(out[1]):.3f} s")


def main():
    parser = argparse.ArgumentParser(description=__doc__)
    parser.add_argument("--sizes", type=int, nargs="+", default=[200, 800])
    parser.add_argument("--dims", type=int, nargs="+", default=[4, 16])
    parser.add_argument("--repeat", type=int, default=3)
    parser.add_argument("--series-steps", type=int, default=800)
    args = parser.parse_args()
    if kernels.BACKEND != "compiled":
        sys.exit("compiled kernels are not built; run `pip install -e . --no-build-isolation` first")
    bench_conv(args.sizes, args.dims, args.repeat)
    bench_series(args.series_steps)


if __name__ == "__main__":
    main()
