"""Time the compiled kernels against the numpy fallback.

    python3 benchmarks/bench_kernels.py [--repeat 5]

Both backends are also checked for bitwise-identical output.
"""
import argparse
import timeit

import numpy as np

from prism_ood import _fallback

try:
    from prism_ood import _kernels
except ImportError:
    _kernels = None


def cases(rng):
    X = rng.normal(size=(1600, 32))
    X /= np.linalg.norm(X, axis=1, keepdims=True)
    Q = rng.normal(size=(800, 32))
    Q /= np.linalg.norm(Q, axis=1, keepdims=True)
    yield "kth_neighbor N=1600 L=32 n=800 k=10", "kth_neighbor", (X, Q, 10)
    mats = [rng.normal(size=(K, K)) + K * np.eye(K) for K in (4, 4, 8, 16) for _ in range(50)]
    yield "gauss_jordan_inverse 200 matrices K<=16", "batch_inverse", (mats,)


def batch_inverse(mod, mats):
    return [mod.gauss_jordan_inverse(m) for m in mats]


def run(mod, name, args):
    if name == "batch_inverse":
        return batch_inverse(mod, *args)
    return getattr(mod, name)(*args)


def same(a, b):
    if isinstance(a, (list, tuple)):
        return all(same(x, y) for x, y in zip(a, b))
    return np.array_equal(a, b)


def main():
    ap = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    ap.add_argument("--repeat", type=int, default=5)
    args = ap.parse_args()
    if _kernels is None:
        print("compiled extension not built; only the fallback is available")
    print(f"{'kernel':<42}{'python (ms)':>12}{'compiled (ms)':>15}{'speedup':>9}  identical")
    for label, name, a in cases(np.random.default_rng(0)):
        t_py = min(timeit.repeat(lambda: run(_fallback, name, a), number=1, repeat=args.repeat))
        if _kernels is None:
            print(f"{label:<42}{1e3 * t_py:>12.2f}")
            continue
        t_c = min(timeit.repeat(lambda: run(_kernels, name, a), number=1, repeat=args.repeat))
        ident = same(run(_fallback, name, a), run(_kernels, name, a))
        print(f"{label:<42}{1e3 * t_py:>12.2f}{1e3 * t_c:>15.2f}{t_py / t_c:>8.1f}x  {ident}")


if __name__ == "__main__":
    main()
