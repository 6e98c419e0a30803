"""Compiled vs pure-Python kernel timings.

    python benchmarks/bench_kernels.py [--repeat 3]
"""

import argparse
import timeit

import numpy as np

from aeclab import _kernels_py as py

try:
    from aeclab import _kernels as cy
except ImportError:  # extension not built
    cy = None


def nlms_case(n=16000, taps=512):
    r = np.random.default_rng(0)
    y, x = r.standard_normal(n), r.standard_normal(n)
    return lambda mod: mod.nlms_filter(y, x, np.zeros(taps), 0.5, 1e-8)


def rir_case(n_img=2000, length=8000):
    r = np.random.default_rng(1)
    delays = r.uniform(0, length - 50, n_img)
    amps = r.standard_normal(n_img)
    return lambda mod: mod.rir_accumulate(np.zeros(length), delays, amps, 40)


def main():
    ap = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    ap.add_argument("--repeat", type=int, default=3)
    args = ap.parse_args()
    cases = {"nlms 1 s @ 512 taps": nlms_case(), "rir 2000 images x 80 taps": rir_case()}
    print(f"{'kernel':28s} {'python (s)':>11s} {'cython (s)':>11s} {'speedup':>8s}")
    for name, fn in cases.items():
        t_py = min(timeit.repeat(lambda: fn(py), number=1, repeat=args.repeat))
        if cy is None:
            print(f"{name:28s} {t_py:11.4f} {'n/a':>11s} {'n/a':>8s}")
            continue
        t_cy = min(timeit.repeat(lambda: fn(cy), number=1, repeat=args.repeat))
        print(f"{name:28s} {t_py:11.4f} {t_cy:11.4f} {t_py / t_cy:7.1f}x")


if __name__ == "__main__":
    main()
