"""Compiled vs pure-Python kernel timings.

    python3 benchmarks/bench_kernels.py [--repeat N]

Times the Student-t CDF and a full robit fit on a 30-window history with
each backend and prints the speedup.  Both backends are imported directly,
so the environment switch that selects one at import time is irrelevant.
"""

import argparse
import timeit

import numpy as np

from trustfield import _pykernels

try:
    from trustfield import _kernels
except ImportError:  # extension not built
    _kernels = None


def workloads(rng):
    t = rng.normal(0.0, 3.0, size=2000)
    X = rng.uniform(-1.0, 1.0, size=(30, 2))
    s = (X.sum(axis=1) + rng.normal(0.0, 0.5, size=30) > 0).astype(float)
    return {
        "t_cdf x2000 (nu=5)": lambda k: [k.t_cdf(v, 5.0) for v in t],
        "t_cdf x2000 (nu=4.5)": lambda k: [k.t_cdf(v, 4.5) for v in t],
        "fit_robit T=30, 100 iter": lambda k: k.fit_robit(X, s, 5.0, 1e-6, 0.0, 100),
    }


def main(argv=None):
    ap = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    ap.add_argument("--repeat", type=int, default=5)
    args = ap.parse_args(argv)
    if _kernels is None:
        print("compiled extension not built; run `python3 setup.py build_ext --inplace`")
        return 1
    rng = np.random.default_rng(0)
    print(f"{'kernel':28s} {'python ms':>11s} {'compiled ms':>12s} {'speedup':>8s}")
    for name, fn in workloads(rng).items():
        py = min(timeit.repeat(lambda: fn(_pykernels), number=1, repeat=args.repeat))
        cc = min(timeit.repeat(lambda: fn(_kernels), number=1, repeat=args.repeat))
        print(f"{name:28s} {py * 1e3:11.3f} {cc * 1e3:12.3f} {py / cc:7.0f}x")
    return 0


if __name__ == "__main__":
    raise SystemExit(main())
