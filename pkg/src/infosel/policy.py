"""Per-row decision rules: candidate reduction, policies and key statistics.

Two modes are supported.  ``"practical"`` selects when the envelope is
strictly positive and breaks ties toward the smaller weight (so the active set
switches exactly at a breakpoint); ``"oracle"`` selects when the envelope is
nonnegative and breaks ties toward the larger weight.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .envelope import (
    EVENT_TOL,
    EnvelopeBatch,
    build_lines,
    check_row,
    decision_at,
    evaluate_at,
    hull_batch,
    upper_envelope,
)
from .errors import DimensionMismatch, NestednessViolated, ProbabilityOutOfRange
from .family import InformativeFamily

PRACTICAL = "practical"
ORACLE = "oracle"
_PREFER = {PRACTICAL: "small", ORACLE: "large"}


def _prefer(mode: str) -> str:
    try:
        return _PREFER[mode]
    except KeyError:
        raise ValueError(f"mode must be 'practical' or 'oracle', got {mode!r}") from None


def reduce_candidates(prob_row, family: InformativeFamily) -> list:
    """Candidate sets that can appear on the row's envelope.

    For cardinality families with ``w = 1/|C|`` this is, per allowed size ``j``,
    the ``j`` most likely non-excluded classes (ties by class index).  Other
    families return every member.

    Examples
    --------
    >>> from infosel.family import cardinality_family
    >>> reduce_candidates([0.2, 0.5, 0.3], cardinality_family(3, (2,), 1, 2))
    [(3,), (1, 3)]
    """
    p = check_row(prob_row)
    if family.kind == "cardinality" and family.inverse_cardinality:
        pool = sorted(family.allowed_classes, key=lambda k: (-p[k - 1], k))
        return [tuple(sorted(pool[:j])) for j in family.sizes]
    return list(family.members())


def row_envelope(prob_row, family, alpha, mode=PRACTICAL):
    cands = reduce_candidates(prob_row, family)
    return upper_envelope(build_lines(prob_row, family, alpha, cands), _prefer(mode))


def policy_at(prob_row, family, alpha, mu, mode=PRACTICAL, tol=EVENT_TOL):
    """Selected set and decision ``(C, D)`` at multiplier ``mu``.

    Parameters
    ----------
    prob_row : array_like
        Class probabilities of one example.
    family : InformativeFamily
    alpha : float
    mu : float
        Multiplier, ``mu >= 0``; ``inf`` gives the limiting policy.
    mode : {"practical", "oracle"}
    tol : float
        Relative slack used when ``mu`` sits on a breakpoint.

    Returns
    -------
    C : tuple of int
    D : int
    """
    env = row_envelope(prob_row, family, alpha, mode)
    if mu == np.inf:
        line = env.segments[-1][1]
        return line.candidate, int(env.zero_crossing is None)
    _, C = evaluate_at(env, mu, tol)
    return C, decision_at(env, mu, tol)


@dataclass(frozen=True)
class NestednessReport:
    ok: bool
    mu: float | None = None
    before: tuple | None = None
    after: tuple | None = None

    def __bool__(self) -> bool:
        return self.ok


def verify_nestedness(prob_row, family, alpha) -> NestednessReport:
    """Walk the practical envelope and check each active set contains the last."""
    env = row_envelope(prob_row, family, alpha)
    segs = env.segments
    for (_, a), (start, b) in zip(segs, segs[1:]):
        if not set(a.candidate) <= set(b.candidate):
            return NestednessReport(False, start, a.candidate, b.candidate)
    return NestednessReport(True)


# ---------------------------------------------------------------------------
# batched rows


@dataclass
class RowBlock:
    """Candidates, lines and envelopes for a block of rows.

    ``members[i, c]`` is the membership mask (over classes) of candidate ``c``
    of row ``i``.
    """

    probs: np.ndarray
    members: np.ndarray
    env: EnvelopeBatch
    mode: str = PRACTICAL

    def __len__(self) -> int:
        return self.probs.shape[0]

    def set_of(self, i: int, c: int) -> tuple:
        return tuple(int(k) + 1 for k in np.flatnonzero(self.members[i, c]))

    def segment_sets(self, i: int) -> list:
        e = self.env
        return [(float(e.starts[i, k]), self.set_of(i, e.seg[i, k])) for k in range(e.nseg[i])]

    def active_at(self, mu: float, tol: float = 0.0) -> np.ndarray:
        """Candidate index active in each row at ``mu`` (exact unless ``tol``)."""
        k = self.env.segment_at(mu, tol)
        return self.env.seg[np.arange(len(self)), k]


def check_matrix(probs, K) -> np.ndarray:
    P = np.asarray(probs, dtype=float)
    if P.ndim != 2:
        raise DimensionMismatch("probabilities must be a 2-d array")
    if P.shape[1] != K:
        raise DimensionMismatch(f"expected {K} columns, got {P.shape[1]}")
    bad = ~np.all(np.isfinite(P) & (P >= 0) & (P <= 1), axis=1) | (P.sum(axis=1) > 1 + 1e-9)
    if bad.any():
        i = int(np.flatnonzero(bad)[0])
        raise ProbabilityOutOfRange(f"row {i} is not a sub-probability vector: {P[i].tolist()}")
    return P


def _cardinality_candidates(P, family, alpha, prefer):
    N, K = P.shape
    allowed = np.zeros(K, bool)
    allowed[[k - 1 for k in family.allowed_classes]] = True
    key = np.where(allowed[None, :], -P, np.inf)
    order = np.argsort(key, axis=1, kind="stable")
    m = int(allowed.sum())
    ps = np.take_along_axis(P, order[:, :m], axis=1)
    cums = np.cumsum(ps, axis=1)
    sizes = family.sizes
    L = len(sizes)
    c = 1.0 - alpha
    Pc = cums[:, [j - 1 for j in sizes]]
    W = np.broadcast_to(np.array([1.0 / j for j in sizes]), (N, L)).copy()
    A = W * Pc
    S = Pc - c
    pos = np.empty_like(order)
    np.put_along_axis(pos, order, np.arange(K)[None, :].repeat(N, 0), axis=1)
    js = np.array(sizes)
    members = (pos[:, None, :] < js[None, :, None]) & allowed[None, None, :]
    # weights strictly decrease with size, so no lexicographic fallback is needed
    rank = np.arange(L)[::-1] if prefer == "small" else np.arange(L)
    rank = np.broadcast_to(rank, (N, L)).copy()
    return members, A, S, W, rank, Pc


def _explicit_candidates(P, family, alpha, prefer):
    N, K = P.shape
    sets = list(family.members())
    F = len(sets)
    M = np.zeros((F, K), bool)
    for f, C in enumerate(sets):
        M[f, [k - 1 for k in C]] = True
    order = np.argsort(-P, axis=1, kind="stable")
    ps = np.take_along_axis(P, order, axis=1)
    Pc = np.zeros((N, F))
    for r in range(K):
        Pc = Pc + ps[:, r : r + 1] * M[:, order[:, r]].T
    w = np.array([family.weight(C) for C in sets])
    W = np.broadcast_to(w, (N, F)).copy()
    A = W * Pc
    S = Pc - (1.0 - alpha)
    wkey = w if prefer == "small" else -w
    rank = np.empty(F, dtype=np.int64)
    rank[np.lexsort((np.arange(F), wkey))] = np.arange(F)
    members = np.broadcast_to(M, (N, F, K))
    return members, A, S, W, np.broadcast_to(rank, (N, F)).copy(), Pc


def build_block(probs, family: InformativeFamily, alpha: float, mode=PRACTICAL) -> RowBlock:
    """Build candidate lines and envelopes for every row of ``probs``."""
    P = check_matrix(probs, family.K)
    prefer = _prefer(mode)
    if family.kind == "cardinality" and family.inverse_cardinality:
        members, A, S, W, rank, Pc = _cardinality_candidates(P, family, alpha, prefer)
    else:
        members, A, S, W, rank, Pc = _explicit_candidates(P, family, alpha, prefer)
    if P.shape[0] == 0:
        L = A.shape[1]
        empty = EnvelopeBatch(A, S, W, np.zeros((0, L), np.int64), np.zeros((0, L)),
                              np.zeros(0, np.int64), np.zeros(0), Pc)
        return RowBlock(P, members, empty, mode)
    seg, starts, nseg, zeta = hull_batch(A, S, rank, prefer=prefer)
    return RowBlock(P, members, EnvelopeBatch(A, S, W, seg, starts, nseg, zeta, Pc), mode)


def check_block_nested(block: RowBlock, name="calibration") -> None:
    """Raise :class:`NestednessViolated` for the first non-nested row."""
    e = block.env
    N, L = e.seg.shape
    if L < 2 or N == 0:
        return
    rows = np.arange(N)[:, None]
    cur = block.members[rows, np.maximum(e.seg[:, :-1], 0)]
    nxt = block.members[rows, np.maximum(e.seg[:, 1:], 0)]
    live = np.arange(1, L)[None, :] < e.nseg[:, None]
    bad = np.any(cur & ~nxt, axis=2) & live
    if bad.any():
        i, k = map(int, np.argwhere(bad)[0])
        raise NestednessViolated(
            i, float(e.starts[i, k + 1]), block.set_of(i, e.seg[i, k]),
            block.set_of(i, e.seg[i, k + 1]), name,
        )


def label_index(labels, K) -> np.ndarray:
    y = np.asarray(labels)
    if y.ndim != 1 or (y.size and (y.min() < 1 or y.max() > K)):
        raise DimensionMismatch(f"labels must be 1-based class indices in 1..{K}")
    return y.astype(np.int64) - 1


def tilde_mu(block: RowBlock, labels) -> np.ndarray:
    """Calibration statistic: first start covering the label, capped by the zero crossing."""
    y = label_index(labels, block.members.shape[2])
    if y.size != len(block):
        raise DimensionMismatch("one label per calibration row is required")
    return tilde_mu_index(block, y)


def tilde_mu_index(block: RowBlock, y: np.ndarray) -> np.ndarray:
    """Same as :func:`tilde_mu` with 0-based labels."""
    e = block.env
    N = len(block)
    rows = np.arange(N)[:, None]
    cov = block.members[rows, np.maximum(e.seg, 0), y[:, None]] & (e.seg >= 0)
    k = np.argmax(cov, axis=1)
    first = e.starts[np.arange(N), k]
    return np.where(cov.any(axis=1), np.minimum(first, e.zeta), e.zeta)


def hat_mu(block: RowBlock) -> np.ndarray:
    """Test statistic: the zero crossing (``inf`` when absent)."""
    return block.env.zeta.copy()


@dataclass(frozen=True)
class KeyStats:
    tilde_mu: np.ndarray
    hat_mu: np.ndarray


def key_statistics(cal_probs, cal_labels, test_probs, family, alpha) -> KeyStats:
    """Closed-form key statistics for calibration and test rows.

    Raises
    ------
    NestednessViolated
        If some row's active sets are not nested and the family carries no
        static guarantee.
    """
    from .family import nestedness_certificate

    cal = build_block(cal_probs, family, alpha)
    test = build_block(test_probs, family, alpha)
    if not nestedness_certificate(family):
        check_block_nested(cal, "calibration")
        check_block_nested(test, "test")
    return KeyStats(tilde_mu(cal, cal_labels), hat_mu(test))
