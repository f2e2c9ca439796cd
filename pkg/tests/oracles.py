"""Slow reference implementations written straight from the definitions.

Kept independent of the library: plain Python loops over vertices/edges,
no shared helpers.
"""

import math


def atoms(vertices, edges):
    out = []
    for p, q in edges:
        vp, vq = vertices[p], vertices[q]
        t = [vq[i] - vp[i] for i in range(3)]
        l = math.sqrt(sum(x * x for x in t))
        out.append(([(vp[i] + vq[i]) / 2 for i in range(3)], [x / l for x in t], l))
    return out


def naive_inner(vertices1, edges1, vertices2, edges2, a):
    """Four nested loops: atoms of shape 1, atoms of shape 2, then the two coordinate sums."""
    A, B = atoms(vertices1, edges1), atoms(vertices2, edges2)
    total = 0.0
    for c1, u1, l1 in A:
        for c2, u2, l2 in B:
            sq = 0.0
            for i in range(3):
                sq += (c1[i] - c2[i]) ** 2
            dot = 0.0
            for i in range(3):
                dot += u1[i] * u2[i]
            total += math.exp(-a * sq) * dot * dot * l1 * l2
    return total


def naive_dist_sq(v1, e1, v2, e2, a):
    return naive_inner(v1, e1, v1, e1, a) + naive_inner(v2, e2, v2, e2, a) - 2 * naive_inner(v1, e1, v2, e2, a)


def naive_adjacency_norm(n, edges):
    A = [[1.0 if i == j else 0.0 for j in range(n)] for i in range(n)]
    for p, q in edges:
        A[p][q] = A[q][p] = 1.0
    d = [sum(row) for row in A]
    return [[A[i][j] / math.sqrt(d[i] * d[j]) for j in range(n)] for i in range(n)]
