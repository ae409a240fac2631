"""Time the compiled fitting kernels against the numpy fallback.

    python3 benchmarks/bench_kernels.py [--repeat 200] [--fit]

Reports the per-call time of one loss-and-gradient evaluation for the
sigmoid and monotone links on the default synthetic fixture, one Adam
update, and optionally a full fit with each backend.
"""

import argparse
import time
import timeit

import numpy as np

from skillscale import kernels
from skillscale.fit import FitConfig, build_objective, fit
from skillscale.synth import SynthSpec, asymptotes_for, generate


def per_call(fn, repeat):
    fn()  # warm caches
    return min(timeit.repeat(fn, number=repeat, repeat=3)) / repeat


def bench_objectives(syn, repeat):
    asym = asymptotes_for(syn.truth)
    rows = []
    for variant in ("basic", "trainable-link"):
        times = {}
        for backend in kernels.available():
            obj, *_ = build_objective(syn.table, FitConfig(variant=variant, backend=backend), asym)
            theta = obj.initial(np.random.default_rng(0))
            times[backend] = per_call(lambda: obj.loss_grad(theta), repeat)
        rows.append((f"loss+grad {variant}", times))
    return rows


def bench_adam(repeat, n=200):
    rng = np.random.default_rng(0)
    times = {}
    for backend in kernels.available():
        mod = kernels.get(backend)
        theta, m, v = rng.normal(size=n), np.zeros(n), np.zeros(n)
        g = rng.normal(size=n)
        times[backend] = per_call(lambda: mod.adam_update(theta, g, m, v, 0.05, 0.9, 0.999, 1e-8, 10), repeat)
    return [(f"adam update (n={n})", times)]


def bench_fit(syn):
    asym = asymptotes_for(syn.truth)
    times = {}
    for backend in kernels.available():
        cfg = FitConfig(restarts=1, max_steps=3000, tol=0.0, check_gradients=False, backend=backend)
        start = time.perf_counter()
        fit(syn.table, cfg, asym)
        times[backend] = time.perf_counter() - start
    return [("fit basic, 3000 steps", times)]


def _fmt(seconds):
    return f"{seconds * 1e6:>12.1f}us" if seconds < 1e-3 else f"{seconds * 1e3:>12.1f}ms"


def main():
    ap = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    ap.add_argument("--repeat", type=int, default=200)
    ap.add_argument("--fit", action="store_true", help="also time a full fit per backend")
    args = ap.parse_args()
    syn = generate(SynthSpec())
    rows = bench_objectives(syn, args.repeat) + bench_adam(args.repeat)
    if args.fit:
        rows += bench_fit(syn)
    backends = kernels.available()
    print(f"{'case':<28}" + "".join(f"{b:>14}" for b in backends) + ("    speedup" if len(backends) == 2 else ""))
    for name, times in rows:
        line = f"{name:<28}" + "".join(_fmt(times[b]) for b in backends)
        if len(backends) == 2:
            line += f"  {times['python'] / times['compiled']:>8.2f}x"
        print(line)


if __name__ == "__main__":
    main()
