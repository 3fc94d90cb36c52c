"""Brute-force oracles and random instance generators shared by the tests.

Nothing here calls into the envelope machinery: policies are found by
evaluating every family member's line directly.
"""

from __future__ import annotations

import numpy as np

from infosel.family import cardinality_family, explicit_family


def set_prob(row, C) -> float:
    return float(sum(row[k - 1] for k in C))


def line_values(row, family, alpha, mu):
    """``(sets, values, probs, weights)`` over every family member at ``mu``."""
    sets = list(family.members())
    P = np.array([set_prob(row, C) for C in sets])
    W = np.array([family.weight(C) for C in sets])
    return sets, W * P + mu * (P - (1 - alpha)), P, W


def brute_policy(row, family, alpha, mu, mode="practical"):
    """Argmax over all members with the mode's tie rule; exact comparisons."""
    sets, v, P, W = line_values(row, family, alpha, mu)
    best = v.max()
    tied = [i for i in range(len(sets)) if v[i] == best]
    if mode == "practical":
        i = min(tied, key=lambda i: (W[i], sets[i]))
        return sets[i], int(best > 0)
    i = min(tied, key=lambda i: (-W[i], sets[i]))
    return sets[i], int(best >= 0)


def grid_counts(probs, labels, family, alpha, grid, chunk=20_000):
    """Per grid point: #miscovered-and-selected and #selected under the practical rule.

    The argmax is taken over every family member, so ties on the grid are
    broken toward the smaller weight, then lexicographically.
    """
    sets = list(family.members())
    K = family.K
    M = np.zeros((len(sets), K), bool)
    for f, C in enumerate(sets):
        M[f, [k - 1 for k in C]] = True
    W = np.array([family.weight(C) for C in sets])
    # practical preference: smaller weight first, then lexicographic
    order = sorted(range(len(sets)), key=lambda f: (W[f], sets[f]))
    M, W = M[order], W[order]
    P = np.asarray(probs) @ M.T.astype(float)
    A, S = W * P, P - (1 - alpha)
    miss = np.zeros(grid.size, np.int64)
    sel = np.zeros(grid.size, np.int64)
    y = None if labels is None else np.asarray(labels) - 1
    for lo in range(0, grid.size, chunk):
        g = grid[lo:lo + chunk]
        V = A[:, :, None] + S[:, :, None] * g[None, None, :]
        arg = V.argmax(axis=1)  # first maximum = preferred tie
        top = np.take_along_axis(V, arg[:, None, :], axis=1)[:, 0, :]
        D = top > 0
        sel[lo:lo + chunk] = D.sum(axis=0)
        if y is not None:
            cov = M[arg, y[:, None]]
            miss[lo:lo + chunk] = (D & ~cov).sum(axis=0)
    return miss, sel


def grid_fcp(cal, y, test, family, alpha, grid):
    n, m = len(cal), len(test)
    miss, _ = grid_counts(cal, y, family, alpha, grid)
    _, sel = grid_counts(test, None, family, alpha, grid)
    return ((1 + miss) / (n + 1)) / (np.maximum(1, sel) / m)


def grid_fcp_at_most(cal, y, test, family, alpha, grid):
    """Exact ``fcp <= alpha`` on the grid, comparing integer counts with a rational level."""
    from fractions import Fraction

    a = Fraction(str(alpha))
    n, m = len(cal), len(test)
    miss, _ = grid_counts(cal, y, family, alpha, grid)
    _, sel = grid_counts(test, None, family, alpha, grid)
    return (1 + miss) * m * a.denominator <= a.numerator * (n + 1) * np.maximum(1, sel)


def max_line_root(probs, family, alpha) -> float:
    """Largest zero of any decreasing line; past it every decision is 0."""
    sets = list(family.members())
    out = 0.0
    for row in np.atleast_2d(probs):
        for C in sets:
            p = set_prob(row, C)
            s = p - (1 - alpha)
            if s < 0:
                out = max(out, family.weight(C) * p / -s)
    return out


# ---------------------------------------------------------------------------
# random instances


def grid_rows(rng, count, K, conc=1.0, res=1000):
    """Probability rows with entries on a ``1/res`` grid summing to exactly 1."""
    raw = rng.dirichlet(np.full(K, conc), size=count)
    cnt = np.floor(raw * res).astype(int)
    short = res - cnt.sum(axis=1)
    for i in range(count):
        idx = rng.choice(K, size=short[i], replace=True)
        np.add.at(cnt[i], idx, 1)
    return cnt / res


def draw_labels(rng, probs):
    P = np.asarray(probs, dtype=float)
    u = rng.random(P.shape[0])[:, None]
    return (u > np.cumsum(P, axis=1)).sum(axis=1).clip(max=P.shape[1] - 1) + 1


def random_cardinality_family(rng, K):
    nex = int(rng.integers(0, min(2, K - 2) + 1))
    excluded = tuple(sorted(rng.choice(np.arange(1, K + 1), size=nex, replace=False).tolist()))
    avail = K - nex
    lo = int(rng.integers(1, avail + 1))
    hi = int(rng.integers(lo, avail + 1))
    if hi == K:  # keep at least one informative restriction
        hi = K - 1 if lo <= K - 1 else hi
    return cardinality_family(K, excluded, lo, hi)


def random_explicit_family(rng, K, size=None):
    from itertools import combinations

    pool = [c for j in range(1, K + 1) for c in combinations(range(1, K + 1), j)]
    size = size or int(rng.integers(1, min(6, len(pool)) + 1))
    pick = rng.choice(len(pool), size=size, replace=False)
    return explicit_family(K, [pool[i] for i in pick])


def selection_instance(rng, K, n, m, conc=1.0, res=None):
    if res:
        cal, test = grid_rows(rng, n, K, conc, res), grid_rows(rng, m, K, conc, res)
    else:
        cal = rng.dirichlet(np.full(K, conc), n)
        test = rng.dirichlet(np.full(K, conc), m)
    return cal, draw_labels(rng, cal), test
