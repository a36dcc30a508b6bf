"""Reference implementations written independently of the package internals.

They walk the lattice site by site with plain Python loops and locate ghost
neighbours by brute-force search over rotations, so they share no assembly
code with the vectorised versions under test.
"""

import math

import numpy as np

OFFSETS = [(1, 0), (0, 1), (-1, 0), (0, -1)]


def rot(s, k=1):
    i, j = s
    for _ in range(k % 4):
        i, j = j, 1 - i
    return (i, j)


def in_wedge(s):
    i, j = s
    return i >= 1 and 2 - i <= j <= i


def wedge_sites(N):
    return [(i, j) for i in range(1, N + 1) for j in range(2 - i, i + 1)]


def locate(raw, N):
    """Brute force: the (p, k) with p in the truncated wedge and rot(p, k) == raw, else None."""
    for p in wedge_sites(N):
        for k in range(4):
            if rot(p, k) == raw:
                return p, k
    return None


def neighbours(s, N):
    out = []
    for di, dj in OFFSETS:
        hit = locate((s[0] + di, s[1] + dj), N)
        if hit is not None:
            out.append(hit)
    return out


def phase_residual(theta: dict, N: int) -> dict:
    res = {}
    for s in wedge_sites(N):
        total = 0.0
        for p, k in neighbours(s, N):
            total += math.sin(theta[p] + k * math.pi / 2 - theta[s])
        res[s] = total
    return res


def polar_residual(alpha, r: dict, theta: dict, N, lam, omega1, nu=0.0, arms=1):
    F1, F2 = {}, {}
    for s in wedge_sites(N):
        a1 = a2 = 0.0
        for p, k in neighbours(s, N):
            d = arms * (theta[p] + k * math.pi / 2 - theta[s])
            a1 += r[p] * math.cos(d) - r[s]
            a2 += r[p] / r[s] * math.sin(d)
        F1[s] = alpha * a1 + r[s] * lam(r[s])
        F2[s] = a2 + omega1(r[s], alpha) - nu
    return F1, F2


def to_dict(wedge, values):
    return {tuple(s): float(v) for s, v in zip(wedge.sites, values)}


def central_difference(f, x, h=1e-6):
    cols = []
    for k in range(x.size):
        e = np.zeros_like(x)
        e[k] = h
        cols.append((f(x + e) - f(x - e)) / (2 * h))
    return np.array(cols).T
