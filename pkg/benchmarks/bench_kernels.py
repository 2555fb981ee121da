"""Time each hot kernel under every available backend.

    python benchmarks/bench_kernels.py [--repeat 5]
"""

import argparse
import timeit

import numpy as np

from spartq import kernels


def cases(rng):
    n = 20_000
    x, y = rng.random(n), rng.random(n)
    keys, stride = kernels.bucket_keys(x, y, 0.0, 0.0, 0.01)
    ukeys, counts = np.unique(keys, return_counts=True)
    cap = 1 << 14
    tree = np.zeros(2 * cap)
    tree[cap:] = rng.random(cap)
    for i in range(cap - 1, 0, -1):
        tree[i] = tree[2 * i] + tree[2 * i + 1]
    draws = rng.random(32) * tree[1]
    size = 1200 * 600
    p, g = rng.random(size).astype(np.float32), rng.normal(size=size).astype(np.float32)
    m, v = np.zeros_like(p), np.zeros_like(p)
    xs, ys = x[:5000], y[:5000]
    return {
        "neighbor_candidates": lambda mod: mod.neighbor_candidates(ukeys, counts, stride),
        "epsilon_join (5k pts)": lambda mod: mod.epsilon_join(xs, ys, 0.01),
        "sumtree_find (32 draws)": lambda mod: mod.sumtree_find(tree, cap, draws),
        "adam_update (720k)": lambda mod: mod.adam_update(p, g, m, v, 1e-3, 0.9, 0.999, 1e-8, 0.1, 0.001),
    }


def main():
    ap = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    ap.add_argument("--repeat", type=int, default=5)
    args = ap.parse_args()
    backends = kernels.backends()
    print(f"active backend: {kernels.BACKEND}")
    print(f"{'kernel':26s}" + "".join(f"{name:>12s}" for name in backends) + "   speedup")
    for name, fn in cases(np.random.default_rng(0)).items():
        times = {}
        for b, mod in backends.items():
            number = 3
            times[b] = min(timeit.repeat(lambda: fn(mod), number=number, repeat=args.repeat)) / number
        row = f"{name:26s}" + "".join(f"{t * 1e3:10.3f}ms" for t in times.values())
        if "cython" in times:
            row += f"   {times['python'] / times['cython']:6.1f}x"
        print(row)


if __name__ == "__main__":
    main()
