"""Reference vectors for the deterministic stub embedder."""

import math

MASK = (1 << 64) - 1


def fnv1a64(data):
    h = 0xCBF29CE484222325
    for b in data:
        h = ((h ^ b) * 0x100000001B3) & MASK
    return h


def splitmix64(z):
    z = (z ^ (z >> 30)) * 0xBF58476D1CE4E5B9 & MASK
    z = (z ^ (z >> 27)) * 0x94D049BB133111EB & MASK
    return z ^ (z >> 31)


def embed(text, dims):
    seed = fnv1a64(text.encode())
    v = []
    for i in range(dims):
        z = splitmix64((seed + (i + 1) * 0x9E3779B97F4A7C15) & MASK)
        v.append(2.0 * ((z >> 11) / float(1 << 53)) - 1.0)
    n = math.sqrt(sum(x * x for x in v))
    return [x / n for x in v]


if __name__ == "__main__":
    print(embed("abc", 8))
