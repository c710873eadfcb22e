"""Time the compiled kernels against the numpy fallback on the same inputs.

    python benchmarks/bench_kernels.py [--repeat 5]

Results are checked for agreement before timing.
"""
import argparse
import sys
import timeit

import numpy as np

from tiermarket import _fallback

try:
    from tiermarket import _kernels
except ImportError:
    _kernels = None


def cases(rng):
    N, T = 8, 4
    U = np.sort(rng.uniform(0, 10, size=(N, T)), axis=1)[:, ::-1].copy()
    J = rng.integers(1, 10, size=N).astype(float)
    M = rng.integers(2, 21, size=T).astype(float)
    yield "best_ordering N=8", "best_ordering", (U, J, M)

    order = rng.permutation(1000)
    J = rng.integers(10, 100, size=1000).astype(float)
    yield "greedy_fill N=1000", "greedy_fill", (order, J, np.full(20, 3000.0))

    y = rng.normal(5, 5, size=(20, 100, 5))
    delta = np.full(20, 1 / 20)
    yield "han_project 20x100x5", "han_project", (y, np.full(5, 500.0), delta, 1e-10, 100000)

    S = rng.uniform(0, 1000, size=5)
    yield "gradient_steps G=4000", "gradient_steps", (np.ones(5), S, np.full(5, 5000.0),
                                                      1e-6, 4000, 1e-12)


def same(a, b):
    if isinstance(a, tuple):
        return all(same(x, y) for x, y in zip(a, b))
    return np.allclose(np.asarray(a, float), np.asarray(b, float), rtol=1e-9, atol=1e-9)


def main(argv=None):
    p = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    p.add_argument("--repeat", type=int, default=5)
    p.add_argument("--seed", type=int, default=0)
    args = p.parse_args(argv)
    if _kernels is None:
        print("compiled extension not built; only the fallback is available")
        return 1
    rng = np.random.default_rng(args.seed)
    print(f"{'kernel':<24}{'python [ms]':>14}{'compiled [ms]':>16}{'speedup':>10}")
    for label, name, inputs in cases(rng):
        py, cy = getattr(_fallback, name), getattr(_kernels, name)
        if not same(py(*inputs), cy(*inputs)):
            print(f"{label}: backends disagree")
            return 2
        t_py = min(timeit.repeat(lambda: py(*inputs), number=1, repeat=args.repeat))
        t_cy = min(timeit.repeat(lambda: cy(*inputs), number=1, repeat=args.repeat))
        print(f"{label:<24}{t_py * 1e3:>14.2f}{t_cy * 1e3:>16.2f}{t_py / t_cy:>10.1f}")
    return 0


if __name__ == "__main__":
    sys.exit(main())
