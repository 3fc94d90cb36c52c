"""Candidate lines and their upper envelope on ``[0, inf)``.

Each candidate set ``C`` of a row defines the line::

    l_C(mu) = w(C) P(C) + mu (P(C) - (1 - alpha))

The envelope is built once per row.  Every breakpoint is produced by
:func:`crossover` and every zero crossing by :func:`line_root`, so all
selection methods see bit-identical event values.

Ties between lines are handled by a preference rank: ``prefer="small"`` favors
the smaller weight (the practical rule), ``prefer="large"`` the larger weight
(the oracle rule); both then fall back to lexicographic order of the sets.
"""

from __future__ import annotations

import heapq
import math
from dataclasses import dataclass

import numpy as np

from .errors import EmptyInput, NegativeMu, ProbabilityOutOfRange

MERGE_TOL = 1e-12  # lines closer than this in slope and intercept are merged
EVENT_TOL = 1e-12  # relative tolerance used by the public evaluators
INF = math.inf


@dataclass(frozen=True)
class Line:
    """One candidate line."""

    candidate: tuple
    intercept: float
    slope: float
    prob: float
    weight: float

    def value(self, mu: float) -> float:
        return self.intercept + mu * self.slope


@dataclass(frozen=True)
class UpperEnvelope:
    """Piecewise-linear maximum of a set of lines.

    Attributes
    ----------
    segments : tuple of (float, Line)
        Segment starts (first is 0) with the active line.
    zero_crossing : float or None
        First ``mu`` at which the envelope is no longer positive.
    prefer : str
        Tie rule the envelope was built with.
    """

    segments: tuple
    zero_crossing: float | None
    prefer: str = "small"

    @property
    def starts(self) -> list:
        return [s for s, _ in self.segments]

    @property
    def lines(self) -> list:
        return [l for _, l in self.segments]


def crossover(lo_a, lo_s, hi_a, hi_s):
    """Abscissa where a steeper line overtakes a shallower one.

    The argument order (shallower line first) is part of the contract; works
    elementwise on arrays.
    """
    return (lo_a - hi_a) / (hi_s - lo_s)


def line_root(a: float, s: float) -> float:
    """Root of ``a + mu s`` for ``s < 0``; ``inf`` otherwise."""
    return a / (-s) if s < 0 else INF


def passed(mu: float, event: float, tol: float = 0.0) -> bool:
    """Whether ``mu`` has reached ``event`` (with optional relative slack)."""
    return mu >= event - tol * max(1.0, abs(event))


# ---------------------------------------------------------------------------
# lines


def check_row(prob_row) -> np.ndarray:
    p = np.asarray(prob_row, dtype=float)
    if p.ndim != 1 or p.size < 2:
        raise ProbabilityOutOfRange("a probability row needs at least two entries")
    if not np.all(np.isfinite(p)) or np.any(p < 0) or np.any(p > 1):
        raise ProbabilityOutOfRange(f"probabilities must lie in [0, 1]: {p.tolist()}")
    if p.sum() > 1 + 1e-9:
        raise ProbabilityOutOfRange(f"row sums to {p.sum():.6g} > 1")
    return p


def set_prob(p: np.ndarray, C) -> float:
    """Probability of a set: members summed in decreasing-probability order.

    The fixed order (ties by class index) makes top-j sums agree bitwise with a
    cumulative sum over the sorted row.
    """
    ks = sorted(C, key=lambda k: (-p[k - 1], k))
    return float(sum(float(p[k - 1]) for k in ks))


def build_lines(prob_row, family, alpha: float, candidates) -> list:
    """One :class:`Line` per candidate set.

    Examples
    --------
    >>> from infosel.family import cardinality_family
    >>> fam = cardinality_family(3, max_card=2)
    >>> l1, l12 = build_lines([0.5, 0.3, 0.2], fam, 0.1, [(1,), (1, 2)])
    >>> l1.intercept, l1.slope
    (0.5, -0.4)
    """
    p = check_row(prob_row)
    if p.size != family.K:
        raise ProbabilityOutOfRange(f"row has {p.size} entries, family has K={family.K}")
    c = 1.0 - alpha
    out = []
    for C in candidates:
        C = tuple(C)
        P = set_prob(p, C)
        w = family.weight(C)
        out.append(Line(C, w * P, P - c, P, w))
    return out


# ---------------------------------------------------------------------------
# scalar divide and conquer


def _pref_key(line: Line, prefer: str):
    w = line.weight if prefer == "small" else -line.weight
    return (w, line.candidate)


def _merge_equal(lines, prefer):
    kept = []
    for l in sorted(lines, key=lambda l: _pref_key(l, prefer)):
        if not any(
            abs(l.slope - k.slope) <= MERGE_TOL and abs(l.intercept - k.intercept) <= MERGE_TOL
            for k in kept
        ):
            kept.append(l)
    return kept


def _scan(sorted_lines):
    """Monotone-chain pass over lines sorted by (slope, -intercept, rank)."""
    stack = []
    for l in sorted_lines:
        if stack and stack[-1].slope == l.slope:
            continue  # same slope, lower or equal intercept
        while len(stack) >= 2:
            t, u = stack[-2], stack[-1]
            x_new = crossover(u.intercept, u.slope, l.intercept, l.slope)
            x_old = crossover(t.intercept, t.slope, u.intercept, u.slope)
            if x_new <= x_old:
                stack.pop()
            else:
                break
        stack.append(l)
    return stack


def _hull_dc(lines, key):
    if len(lines) <= 1:
        return list(lines)
    mid = len(lines) // 2
    left = _hull_dc(lines[:mid], key)
    right = _hull_dc(lines[mid:], key)
    return _scan(list(heapq.merge(left, right, key=key)))


def upper_envelope(lines, prefer: str = "small") -> UpperEnvelope:
    """Upper envelope of ``lines`` restricted to ``mu >= 0``.

    Lines that agree within ``MERGE_TOL`` in both slope and intercept are merged
    first, keeping the preferred one.  The hull is then built by divide and
    conquer: each half is reduced to its own envelope and the two survivor
    lists are merged by slope and swept once.

    Parameters
    ----------
    lines : sequence of Line
    prefer : {"small", "large"}
        Weight preference among coincident lines.

    Returns
    -------
    UpperEnvelope
    """
    if not lines:
        raise EmptyInput("upper_envelope needs at least one line")
    merged = _merge_equal(lines, prefer)
    key = lambda l: (l.slope, -l.intercept) + _pref_key(l, prefer)  # noqa: E731
    hull = _hull_dc(merged, key)
    breaks = [
        crossover(hull[k - 1].intercept, hull[k - 1].slope, hull[k].intercept, hull[k].slope)
        for k in range(1, len(hull))
    ]
    if prefer == "small":
        first = sum(1 for b in breaks if b <= 0)
    else:
        first = sum(1 for b in breaks if b < 0)
    segs = [(0.0, hull[first])] + [(breaks[k - 1], hull[k]) for k in range(first + 1, len(hull))]
    return UpperEnvelope(tuple(segs), _zero_crossing(segs), prefer)


def _zero_crossing(segs):
    if segs[-1][1].slope >= 0:
        return None
    for k, (start, l) in enumerate(segs):
        end = segs[k + 1][0] if k + 1 < len(segs) else INF
        z = line_root(l.intercept, l.slope)
        if z < end:
            return max(start, z)
    return None


def _segment_index(env: UpperEnvelope, mu: float, tol: float) -> int:
    starts = env.starts
    k = 0
    if env.prefer == "small":
        while k + 1 < len(starts) and passed(mu, starts[k + 1], tol):
            k += 1
    else:
        # left-continuous lookup: stay on a segment up to and including its end
        while k + 1 < len(starts) and mu > starts[k + 1] + tol * max(1.0, abs(starts[k + 1])):
            k += 1
    return k


def evaluate_at(env: UpperEnvelope, mu: float, tol: float = EVENT_TOL):
    """Envelope value and active set at ``mu``.

    Breakpoints belong to the right segment for practical envelopes and to the
    left one for oracle envelopes; ``tol`` widens the breakpoint slightly so
    values computed in floating point resolve to the intended side.
    """
    if mu < 0:
        raise NegativeMu(f"mu must be nonnegative, got {mu}")
    line = env.segments[_segment_index(env, mu, tol)][1]
    return line.value(mu), line.candidate


def zero_crossing_of(env: UpperEnvelope):
    return env.zero_crossing


def decision_at(env: UpperEnvelope, mu: float, tol: float = EVENT_TOL) -> int:
    """Decision indicator: envelope > 0 (practical) or >= 0 (oracle)."""
    z = env.zero_crossing
    if z is None:
        return 1
    if env.prefer == "small":
        return int(not passed(mu, z, tol))
    return int(mu <= z + tol * max(1.0, z))


# ---------------------------------------------------------------------------
# batched construction


def _nudge_down(x: np.ndarray, tol: float) -> np.ndarray:
    """Lower finite event points by a relative ``tol``; ``inf`` padding stays."""
    if not tol:
        return x
    fin = np.isfinite(x)
    return np.where(fin, x - tol * np.maximum(1.0, np.abs(np.where(fin, x, 0.0))), x)


@dataclass
class EnvelopeBatch:
    """Envelopes of many rows stored as padded arrays.

    Attributes
    ----------
    A, S, W, P : ndarray (N, L)
        Line intercepts, slopes, weights and set probabilities per candidate.
    seg : ndarray of int (N, L)
        Candidate index of each segment, ``-1`` padding.
    starts : ndarray (N, L)
        Segment starts, ``inf`` padding.
    nseg : ndarray of int (N,)
    zeta : ndarray (N,)
        Zero crossings, ``inf`` when absent.
    """

    A: np.ndarray
    S: np.ndarray
    W: np.ndarray
    seg: np.ndarray
    starts: np.ndarray
    nseg: np.ndarray
    zeta: np.ndarray
    P: np.ndarray | None = None

    def segment_at(self, mu: float, tol: float = 0.0) -> np.ndarray:
        """Right-continuous segment index of each row at ``mu``."""
        st = _nudge_down(self.starts, tol)
        return (st <= mu).sum(axis=1) - 1

    def decision(self, mu: float, tol: float = 0.0) -> np.ndarray:
        """Practical decision of each row at ``mu``."""
        return mu < _nudge_down(self.zeta, tol)


def _take(a, idx):
    return np.take_along_axis(a, idx, axis=1)


def hull_batch(A, S, rank, valid=None, prefer: str = "small") -> tuple:
    """Vectorized envelope construction for rows with ``L`` candidate lines.

    Same merge rule, sort order, pop test and clipping as
    :func:`upper_envelope`, applied to the fully sorted candidate list.

    Returns
    -------
    seg, starts, nseg, zeta : ndarrays
    """
    A = np.asarray(A, dtype=float)
    S = np.asarray(S, dtype=float)
    N, L = A.shape
    rank = np.asarray(rank)
    valid = np.ones((N, L), bool) if valid is None else np.asarray(valid, bool)
    rows = np.arange(N)

    # merge near-coincident lines, visiting candidates in preference order
    po = np.argsort(np.where(valid, rank, np.iinfo(np.int64).max), axis=1, kind="stable")
    Ap, Sp, keep = _take(A, po), _take(S, po), _take(valid, po)
    if L > 1:
        near = (np.abs(Ap[:, :, None] - Ap[:, None, :]) <= MERGE_TOL) & (
            np.abs(Sp[:, :, None] - Sp[:, None, :]) <= MERGE_TOL
        )
        for t in range(1, L):
            keep[:, t] &= ~np.any(keep[:, :t] & near[:, :t, t], axis=1)
    kept = np.zeros_like(valid)
    kept[rows[:, None], po] = keep

    # sort by slope, then intercept descending, then preference
    skey = np.where(kept, S, np.inf)
    order = np.lexsort((rank, -A, skey), axis=-1)
    As, Ss, ok = _take(A, order), _take(S, order), _take(kept, order)
    ok[:, 1:] &= ~(Ss[:, 1:] == Ss[:, :-1])

    stk = np.zeros((N, L), dtype=np.int64)
    top = np.zeros(N, dtype=np.int64)
    for t in range(L):
        act = np.flatnonzero(ok[:, t])
        cand = act
        while cand.size:
            cand = cand[top[cand] >= 2]
            if not cand.size:
                break
            i1 = stk[cand, top[cand] - 1]
            i0 = stk[cand, top[cand] - 2]
            x_new = crossover(As[cand, i1], Ss[cand, i1], As[cand, t], Ss[cand, t])
            x_old = crossover(As[cand, i0], Ss[cand, i0], As[cand, i1], Ss[cand, i1])
            cand = cand[x_new <= x_old]
            top[cand] -= 1
        stk[act, top[act]] = t
        top[act] += 1

    hA, hS = _take(As, stk), _take(Ss, stk)
    with np.errstate(invalid="ignore", divide="ignore"):
        brk = np.full((N, L), np.inf)
        if L > 1:
            brk[:, 1:] = crossover(hA[:, :-1], hS[:, :-1], hA[:, 1:], hS[:, 1:])
    inside = np.arange(L)[None, :] < top[:, None]
    brk[:, 0] = -np.inf
    brk[~inside] = np.inf
    if prefer == "small":
        first = ((brk <= 0) & inside).sum(axis=1) - 1
    else:
        first = ((brk < 0) & inside).sum(axis=1) - 1
    nseg = top - first
    idx = first[:, None] + np.arange(L)[None, :]
    live = np.arange(L)[None, :] < nseg[:, None]
    idx = np.where(live, idx, 0)
    seg_pos = np.where(live, _take(stk, idx), 0)
    starts = np.where(live, _take(brk, idx), np.inf)
    starts[:, 0] = 0.0
    seg = np.where(live, _take(order, seg_pos), -1)

    a = np.where(live, _take(As, seg_pos), 0.0)
    s = np.where(live, _take(Ss, seg_pos), 0.0)
    with np.errstate(invalid="ignore", divide="ignore"):
        z = np.where(live & (s < 0), a / np.where(s < 0, -s, 1.0), np.inf)
    end = np.full((N, L), np.inf)
    end[:, :-1] = starts[:, 1:]
    hit = live & (z < end)
    k = np.argmax(hit, axis=1)
    zeta = np.where(hit.any(axis=1), np.maximum(starts[rows, k], z[rows, k]), np.inf)
    last_s = s[rows, nseg - 1]
    zeta = np.where(last_s >= 0, np.inf, zeta)
    return seg, starts, nseg, zeta
