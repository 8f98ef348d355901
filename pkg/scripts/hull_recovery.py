"""Greedy archetype selection against the exact convex hull on random 2-D pools.

Each pool holds K jittered polygon vertices plus interior mixtures. When the
hull has exactly K vertices, the vertex set is the maximum-area K-subset, so
a hit means the greedy selection found the optimum.

    python3 scripts/hull_recovery.py --seeds 0-299
"""
import argparse

import numpy as np
from scipy.spatial import ConvexHull

from dstl.archetypes import select_archetypes


def pool(seed):
    rng = np.random.default_rng(seed)
    K = int(rng.integers(3, 7))
    while True:
        ang = 2 * np.pi * (np.arange(K) + rng.uniform(-0.25, 0.25, K)) / K
        r = rng.uniform(0.8, 1.2, K)
        V = np.stack([r * np.cos(ang), r * np.sin(ang)])
        W = rng.dirichlet(np.ones(K), size=int(rng.integers(5, 30))).T
        c = V.mean(axis=1, keepdims=True)
        P = np.hstack([V, c + 0.8 * (V @ W - c)])
        P = P[:, rng.permutation(P.shape[1])]
        if len(ConvexHull(P.T).vertices) == K:
            return P, K


def main():
    p = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    p.add_argument("--seeds", default="0-49")
    args = p.parse_args()
    lo, hi = (int(s) for s in args.seeds.split("-"))
    misses = []
    for seed in range(lo, hi + 1):
        P, K = pool(seed)
        if set(select_archetypes(P, K).indices) != set(ConvexHull(P.T).vertices.tolist()):
            misses.append(seed)
    n = hi - lo + 1
    print(f"{n - len(misses)}/{n} pools recovered; misses at seeds {misses}")


if __name__ == "__main__":
    main()
