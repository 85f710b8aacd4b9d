"""Reference outputs for the clustering acceptance check.

Generates seeded random corpora, runs an independent numpy transcription of
possibilistic c-means (farthest-point seeding, one fuzzy c-means pass, eta
estimate, possibilistic iterations), thresholds each membership row at its
Kneedle knee and writes the expected clusters to cluster_cases.json.

Run from this directory: python3 cluster_oracle.py
"""

import json
import random

import numpy as np

MASK = (1 << 64) - 1
GOLDEN = 0x9E3779B97F4A7C15


def splitmix64(z):
    z = (z ^ (z >> 30)) * 0xBF58476D1CE4E5B9 & MASK
    z = (z ^ (z >> 27)) * 0x94D049BB133111EB & MASK
    return z ^ (z >> 31)


def pcm(X, k, seed, m=2.0, iters=300, tol=1e-4, floor=1e-12):
    n = len(X)
    X = np.array(X, dtype=float)
    chosen = [splitmix64((seed + GOLDEN) & MASK) % n]
    while len(chosen) < k:
        nearest = [min(((X[i] - X[c]) ** 2).sum() for c in chosen) for i in range(n)]
        best = max((i for i in range(n) if i not in chosen), key=lambda i: (nearest[i], -i))
        chosen.append(best)
    V = X[chosen].copy()
    D = ((X[None, :, :] - V[:, None, :]) ** 2).sum(-1)
    U = np.zeros((k, n))
    for i in range(n):
        zero = D[:, i] == 0
        if zero.any():
            U[zero, i] = 1.0 / zero.sum()
        else:
            for c in range(k):
                U[c, i] = 1.0 / sum((D[c, i] / D[j, i]) ** (1 / (m - 1)) for j in range(k))
    W = U ** m
    V = (W @ X) / W.sum(1)[:, None]
    D = ((X[None, :, :] - V[:, None, :]) ** 2).sum(-1)
    eta = np.maximum((W * D).sum(1) / W.sum(1), floor)
    previous = U
    for it in range(1, iters + 1):
        D = ((X[None, :, :] - V[:, None, :]) ** 2).sum(-1)
        U = 1.0 / (1.0 + (D / eta[:, None]) ** (1 / (m - 1)))
        if np.abs(U - previous).max() < tol or it == iters:
            return U
        W = U ** m
        V = (W @ X) / W.sum(1)[:, None]
        previous = U
    return U


def knee(curve, s=1.0):
    n = len(curve)
    if n < 3 or curve[0] == curve[-1]:
        return None
    lo, hi = curve[-1], curve[0]
    diff = [(curve[i] - lo) / (hi - lo) - (1 - i / (n - 1)) for i in range(n)]
    step = 1 / (n - 1)
    interior = range(1, n - 1)
    top = max(interior, key=lambda i: (diff[i], -i))
    if any(d < diff[top] - s * step for d in diff[top + 1:]):
        return top
    bottom = min(interior, key=lambda i: (diff[i], i))
    if any(d > diff[bottom] + s * step for d in diff[bottom + 1:]):
        return bottom
    return None


def extract(U):
    rows = []
    for row in U:
        curve = sorted(row, reverse=True)
        idx = knee(curve)
        tau = curve[idx] if idx is not None else curve[-1]
        rows.append({"threshold": float(tau), "members": [i for i, u in enumerate(row) if u >= tau]})
    return rows


def main():
    rng = random.Random(20240611)
    cases = []
    for case in range(50):
        n = rng.randint(2, 8)
        dims = rng.randint(1, 4)
        centers = [[rng.uniform(-3, 3) for _ in range(dims)] for _ in range(rng.randint(1, 3))]
        points = []
        for _ in range(n):
            c = rng.choice(centers)
            points.append([x + rng.gauss(0, 0.5) for x in c])
        seed = rng.randrange(1 << 32)
        U = pcm(points, max(n - 1, 1), seed)
        cases.append({"seed": seed, "points": points, "clusters": extract(U)})
    with open("cluster_cases.json", "w") as f:
        json.dump(cases, f, indent=1)
        f.write("\n")


if __name__ == "__main__":
    main()
