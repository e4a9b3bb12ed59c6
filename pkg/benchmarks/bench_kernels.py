"""Timing comparison of the compiled and pure-Python kernel lanes.

Runs the same seeded workload through both implementations, checks that
they produce bit-identical end states, and reports steps/second.

Usage: python3 benchmarks/bench_kernels.py [--steps N] [--n N] ...
"""

import argparse
import time

import numpy as np

from bdarsim.kernels import _pykernels

try:
    from bdarsim.kernels import _ckernels
except ImportError:
    _ckernels = None


def run_chain(mod, args):
    ker = mod.ChainKernel(args.n, args.C, args.d, args.lam, seed=args.seed)
    t0 = time.perf_counter()
    ker.run(args.steps)
    dt = time.perf_counter() - t0
    sig = (
        ker.arrivals,
        ker.blocked,
        int(ker.counts_array().sum()),
        hash(ker.counts_array().tobytes()),
        ker.rng_state(),
    )
    return dt, sig


def run_coupled(mod, args):
    L = args.n * (args.n - 1) // 2
    R = L + L * (args.n - 2)
    full = np.zeros(R, dtype=np.int64)
    full[:L] = args.C
    empty = np.zeros(R, dtype=np.int64)
    ker = mod.CoupledKernel(
        args.n, args.C, args.d, args.lam, counts_x=full, counts_y=empty
    )
    ker.reset(full, empty, reseed=args.seed)
    t0 = time.perf_counter()
    ker.run(args.coupled_steps)
    dt = time.perf_counter() - t0
    sig = (
        ker.l1,
        ker.blocked_x,
        ker.blocked_y,
        hash(ker.counts_x_array().tobytes()),
        hash(ker.counts_y_array().tobytes()),
    )
    return dt, sig


def best_of(fn, mod, args, repeat):
    times = []
    sig = None
    for _ in range(repeat):
        dt, s = fn(mod, args)
        times.append(dt)
        if sig is None:
            sig = s
        elif s != sig:
            raise SystemExit("non-deterministic kernel run, aborting")
    return min(times), sig


def main():
    ap = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    ap.add_argument("--n", type=int, default=50)
    ap.add_argument("--C", type=int, default=1)
    ap.add_argument("--d", type=int, default=1)
    ap.add_argument("--lam", type=float, default=0.05)
    ap.add_argument("--steps", type=int, default=200000)
    ap.add_argument("--coupled-steps", type=int, default=100000)
    ap.add_argument("--seed", type=int, default=12345)
    ap.add_argument("--repeat", type=int, default=3)
    args = ap.parse_args()

    lanes = [("pure", _pykernels)]
    if _ckernels is not None:
        lanes.insert(0, ("compiled", _ckernels))
    else:
        print("compiled lane not importable, timing the pure lane only")

    print(
        f"workload: n={args.n} C={args.C} d={args.d} lam={args.lam} "
        f"seed={args.seed}, best of {args.repeat}"
    )
    for label, fn, steps in (
        ("single chain", run_chain, args.steps),
        ("coupled pair", run_coupled, args.coupled_steps),
    ):
        results = {}
        sigs = {}
        for name, mod in lanes:
            dt, sig = best_of(fn, mod, args, args.repeat)
            results[name] = dt
            sigs[name] = sig
        if len(sigs) == 2 and sigs["compiled"] != sigs["pure"]:
            raise SystemExit(f"{label}: lanes disagree, aborting")
        line = f"{label}, {steps} steps:"
        for name, dt in results.items():
            line += f"  {name} {dt:.3f}s ({steps / dt / 1e6:.2f}M steps/s)"
        if len(results) == 2:
            line += f"  speedup x{results['pure'] / results['compiled']:.0f}"
        print(line)
    if len(lanes) == 2:
        print("end states identical across lanes")


if __name__ == "__main__":
    main()
