"""Benchmark the compiled contraction kernels against the numpy fallback.

Times the four batched hot-path kernels (forward and backward, full and
factorized) at a desk-scale shape and a paper-scale shape. Run after an
editable install:

    python3 benchmarks/kernel_bench.py
    python3 benchmarks/kernel_bench.py --shape paper --repeat 5
"""

import argparse
import time

import numpy as np

from dynfuse._kernels import available_backends

SHAPES = {
    # batch, p, q, z, rank
    "desk": dict(batch=300, p=32, q=96, z=5, rank=8),
    "paper": dict(batch=512, p=1024, q=2276, z=5, rank=8),
    "tiny": dict(batch=32, p=8, q=24, z=3, rank=4),
}


def make_case(rng, batch, p, q, z, rank):
    c = np.ascontiguousarray
    return {
        "t": c(rng.standard_normal((z, p, q))),
        "a": c(rng.standard_normal((p, rank))),
        "b": c(rng.standard_normal((q, rank))),
        "c": c(rng.standard_normal((z, rank))),
        "S": c(rng.standard_normal((batch, z))),
        "H": c(rng.standard_normal((batch, q))),
        "dPre": c(rng.standard_normal((batch, p))),
    }


def bench(fn, args, repeat):
    fn(*args)  # warm up
    best = float("inf")
    for _ in range(repeat):
        start = time.perf_counter()
        fn(*args)
        best = min(best, time.perf_counter() - start)
    return best


def main():
    parser = argparse.ArgumentParser(description=__doc__)
    parser.add_argument("--shape", choices=sorted(SHAPES), default="desk")
    parser.add_argument("--repeat", type=int, default=7)
    parser.add_argument("--seed", type=int, default=0)
    args = parser.parse_args()

    backends = available_backends()
    case = make_case(np.random.default_rng(args.seed), **SHAPES[args.shape])
    kernels = [
        ("mode3_apply", (case["t"], case["S"], case["H"])),
        ("mode3_apply_backward", (case["t"], case["S"], case["H"], case["dPre"])),
        ("cp_apply", (case["a"], case["b"], case["c"], case["S"], case["H"])),
        ("cp_apply_backward",
         (case["a"], case["b"], case["c"], case["S"], case["H"], case["dPre"])),
    ]

    print(f"shape={args.shape} {SHAPES[args.shape]} "
          f"backends={sorted(backends)} (best of {args.repeat})")
    header = f"{'kernel':24s}" + "".join(f"{name:>14s}" for name in sorted(backends))
    if len(backends) == 2:
        header += f"{'speedup':>10s}"
    print(header)
    for name, call_args in kernels:
        times = {b: bench(getattr(mod, name), call_args, args.repeat)
                 for b, mod in backends.items()}
        row = f"{name:24s}" + "".join(f"{times[b] * 1e3:>12.3f}ms"
                                      for b in sorted(times))
        if len(times) == 2:
            row += f"{times['fallback'] / times['compiled']:>9.2f}x"
        print(row)


if __name__ == "__main__":
    main()
