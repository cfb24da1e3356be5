"""Time the compiled kernels against the numpy fallback.

    python benchmarks/bench_kernels.py [--repeat 5] [--n 200000]
"""
from __future__ import annotations

import argparse
import time

import numpy as np

from calparity import _kernels, metrics
from calparity.calibrators import pava
from calparity.data import SynthConfig, synth_generate
from calparity.models import GbtParams, gbt_train


def best_of(fn, repeat):
    times = []
    for _ in range(repeat):
        t0 = time.perf_counter()
        fn()
        times.append(time.perf_counter() - t0)
    return min(times)


def workloads(n, rng):
    X = rng.normal(size=(n, 8))
    y = (rng.uniform(size=n) < 1 / (1 + np.exp(-X[:, 0]))).astype(float)
    s = rng.uniform(size=n)
    ym = (rng.uniform(size=n) < s).astype(float)
    small = synth_generate(SynthConfig(n=20000, p=8, n_groups=2, group_weights=np.ones(8) * 0.3,
                                       group_bias=[-1, 1], group_proportions=[0.5, 0.5], seed=1))[0]
    model = gbt_train(X[:20000], y[:20000], GbtParams(boosting_rounds=10))
    return {
        "pava (isotonic fit)": lambda: pava(s, ym),
        "mmce exact": lambda: metrics.mmce(s, ym),
        "msce sweep": lambda: metrics.msce(s[: n // 10], ym[: n // 10]),
        "tree predict (10 trees)": lambda: model.predict(X),
        "gbt fit (25 rounds, n=20k)": lambda: gbt_train(small.features, small.labels, GbtParams()),
    }


def main(argv=None):
    ap = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    ap.add_argument("--repeat", type=int, default=3)
    ap.add_argument("--n", type=int, default=200000)
    args = ap.parse_args(argv)
    names = list(_kernels.backends())
    print(f"{'workload':<28}" + "".join(f"{n:>12}" for n in names) + ("     speedup" if len(names) > 1 else ""))
    rows = {}
    for backend in names:
        with _kernels.use_backend(backend):
            for label, fn in workloads(args.n, np.random.default_rng(0)).items():
                rows.setdefault(label, {})[backend] = best_of(fn, args.repeat)
    for label, t in rows.items():
        line = f"{label:<28}" + "".join(f"{t[n] * 1e3:>10.1f}ms" for n in names)
        if "cython" in t:
            line += f"{t['numpy'] / t['cython']:>11.1f}x"
        print(line)


if __name__ == "__main__":
    main()
