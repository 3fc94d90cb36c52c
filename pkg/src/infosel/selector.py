"""Selection of test rows with a calibrated false coverage estimate.

Three interchangeable search strategies find the smallest multiplier at which
the estimated false coverage proportion drops to ``alpha``:

``"all_intersections"``
    Reference method: every pairwise crossing and root of the calibration
    lines is a candidate; policies are re-evaluated from scratch at each.
``"envelope_traversal"``
    Event sweep over all envelope breakpoints and zero crossings with a
    binary heap and integer counters.
``"threshold"``
    Closed form through the per-row key statistics (default).

All three read the same envelope arrays, so they return identical outcomes.
"""

from __future__ import annotations

import heapq
import math
from dataclasses import dataclass, field

import numpy as np

from ._levels import at_most
from .envelope import crossover
from .errors import DimensionMismatch, EmptyTest
from .family import InformativeFamily, nestedness_certificate
from .policy import RowBlock, build_block, check_block_nested, label_index, tilde_mu_index

METHODS = ("all_intersections", "envelope_traversal", "threshold")
_ALIASES = {
    "allintersections": "all_intersections",
    "method1": "all_intersections",
    "envelopetraversal": "envelope_traversal",
    "method2": "envelope_traversal",
    "thresholdform": "threshold",
}


def _method_name(method: str) -> str:
    key = method.lower().replace("-", "_")
    key = _ALIASES.get(key.replace("_", ""), key)
    if key not in METHODS:
        raise ValueError(f"unknown method {method!r}; choose from {METHODS}")
    return key


def fcp_ratio(num: int, den: int, n: int, m: int) -> float:
    """Estimated FCP from a numerator count (including the +1) and a selection count."""
    return (num / (n + 1)) / (max(1, den) / m)


def fcp_hat(mu, cal_stats, test_stats, n=None, m=None) -> float:
    """Calibration estimate of the false coverage proportion at ``mu``.

    Examples
    --------
    >>> fcp_hat(2.0, [0, 0, 0, 3], [math.inf, 1], 4, 2)
    0.8
    """
    t = np.asarray(cal_stats, dtype=float)
    h = np.asarray(test_stats, dtype=float)
    n = t.size if n is None else n
    m = h.size if m is None else m
    return fcp_ratio(1 + int(np.sum(t > mu)), int(np.sum(h > mu)), n, m)


@dataclass
class SelectionOutcome:
    """Result of a selection run.

    ``selected`` holds 0-based test indices in increasing order and ``sets``
    maps each of them to its prediction set.
    """

    mu_alpha: float
    selected: list
    sets: dict
    fcp_hat_at_solution: float
    method: str = "threshold"
    details: dict = field(default_factory=dict, compare=False, repr=False)

    def same_as(self, other: "SelectionOutcome") -> bool:
        a, b = self.mu_alpha, other.mu_alpha
        same_mu = (a == b) or (math.isinf(a) and math.isinf(b))
        return same_mu and self.selected == other.selected and self.sets == other.sets


@dataclass
class _Instance:
    cal: RowBlock
    test: RowBlock
    y: np.ndarray
    alpha: float

    @property
    def n(self) -> int:
        return len(self.cal)

    @property
    def m(self) -> int:
        return len(self.test)


def prepare(cal_probs, cal_labels, test_probs, family: InformativeFamily, alpha: float,
            require_test: bool = True) -> _Instance:
    """Build envelopes for both blocks and enforce nestedness."""
    if not 0 < alpha < 1:
        raise ValueError("alpha must lie in (0, 1)")
    cal = build_block(cal_probs, family, alpha)
    test = build_block(np.asarray(test_probs, dtype=float).reshape(-1, family.K), family, alpha)
    if require_test and len(test) == 0:
        raise EmptyTest("no test rows")
    y = label_index(cal_labels, family.K)
    if y.size != len(cal):
        raise DimensionMismatch("calibration labels and rows differ in length")
    if not nestedness_certificate(family):
        check_block_nested(cal, "calibration")
        check_block_nested(test, "test")
    return _Instance(cal, test, y, alpha)


def _finish(inst: _Instance, mu: float, num: int, den: int, method: str) -> SelectionOutcome:
    if math.isinf(mu):
        return SelectionOutcome(math.inf, [], {}, math.nan, method)
    zeta = inst.test.env.zeta
    sel = np.flatnonzero(zeta > mu)
    act = inst.test.active_at(mu)
    sets = {int(j): inst.test.set_of(j, act[j]) for j in sel}
    return SelectionOutcome(float(mu), [int(j) for j in sel], sets,
                            fcp_ratio(num, den, inst.n, inst.m), method)


# ---------------------------------------------------------------------------
# threshold form


def _search_sorted_stats(cands, tilde, den_stats, n, m, alpha, cal_only=False):
    """First candidate with estimate at most ``alpha`` (vectorized)."""
    ts = np.sort(tilde)
    hs = np.sort(den_stats)
    num = 1 + ts.size - np.searchsorted(ts, cands, side="right")
    den = hs.size - np.searchsorted(hs, cands, side="right")
    if cal_only:
        est = num / (1 + den)
    else:
        est = (num / (n + 1)) / (np.maximum(1, den) / m)
    ok = np.flatnonzero(at_most(est, alpha))
    if not ok.size:
        return math.inf, None, None
    i = ok[0]
    return float(cands[i]), int(num[i]), int(den[i])


def _threshold(inst: _Instance) -> SelectionOutcome:
    t = tilde_mu_index(inst.cal, inst.y)
    cands = np.unique(np.concatenate([[0.0], t[np.isfinite(t)]]))
    mu, num, den = _search_sorted_stats(cands, t, inst.test.env.zeta, inst.n, inst.m, inst.alpha)
    return _finish(inst, mu, num, den, "threshold")


# ---------------------------------------------------------------------------
# event sweep


def _traversal(inst: _Instance) -> SelectionOutcome:
    cal, test = inst.cal, inst.test
    n, m, alpha = inst.n, inst.m, inst.alpha
    heap = []
    blocks = (cal, test)
    seg_now, on = [], []
    for b, blk in enumerate(blocks):
        e = blk.env
        N = len(blk)
        seg_now.append([0] * N)
        on.append([True] * N)
        if N == 0:
            continue
        nseg = e.nseg.tolist()
        st1 = e.starts[:, 1].tolist() if e.starts.shape[1] > 1 else [math.inf] * N
        for i, (z, ns) in enumerate(zip(e.zeta.tolist(), nseg)):
            if z < math.inf:
                heap.append((z, b, i, -1))
            if ns > 1:
                heap.append((st1[i], b, i, 1))
    heapq.heapify(heap)

    cal_cov = None
    if n:
        rows = np.arange(n)[:, None]
        cal_cov = (cal.members[rows, np.maximum(cal.env.seg, 0), inst.y[:, None]]).tolist()
    starts = [blk.env.starts.tolist() for blk in blocks]
    nsegs = [blk.env.nseg.tolist() for blk in blocks]

    # counters at mu just below zero: every row selected with its first set
    bad = [not cal_cov[i][0] for i in range(n)] if n else []
    num = 1 + sum(bad)
    den = m
    mu = 0.0
    while True:
        # drain every event at the current mu
        while heap and heap[0][0] <= mu:
            _, b, i, k = heapq.heappop(heap)
            if k < 0:
                if on[b][i]:
                    on[b][i] = False
                    if b == 0:
                        if bad[i]:
                            bad[i] = False
                            num -= 1
                    else:
                        den -= 1
                continue
            seg_now[b][i] = k
            if k + 1 < nsegs[b][i]:
                heapq.heappush(heap, (starts[b][i][k + 1], b, i, k + 1))
            if b == 0 and bad[i] and cal_cov[i][k]:
                bad[i] = False
                num -= 1
        if at_most(fcp_ratio(num, den, n, m), alpha):
            return _finish(inst, mu, num, den, "envelope_traversal")
        if not heap:
            return _finish(inst, math.inf, num, den, "envelope_traversal")
        mu = heap[0][0]


# ---------------------------------------------------------------------------
# reference method


def _calibration_candidates(cal: RowBlock) -> np.ndarray:
    e = cal.env
    A, S = e.A, e.S
    L = A.shape[1]
    vals = [np.zeros(1)]
    with np.errstate(divide="ignore", invalid="ignore"):
        for u in range(L):
            for v in range(L):
                lo_s, hi_s = S[:, u], S[:, v]
                mask = lo_s < hi_s
                x = crossover(A[mask, u], lo_s[mask], A[mask, v], hi_s[mask])
                vals.append(x[x >= 0])
            neg = S[:, u] < 0
            vals.append(A[neg, u] / (-S[neg, u]))
    M = np.unique(np.concatenate(vals))
    return M[np.isfinite(M)]


def _all_intersections(inst: _Instance, chunk: int = 128) -> SelectionOutcome:
    cal, test = inst.cal, inst.test
    n, m, alpha = inst.n, inst.m, inst.alpha
    M = _calibration_candidates(cal)
    rows_c = np.arange(n)
    for lo in range(0, M.size, chunk):
        mus = M[lo : lo + chunk]
        # policies from scratch at each candidate: active segment and decision
        kc = (cal.env.starts[None, :, :] <= mus[:, None, None]).sum(axis=2) - 1
        cc = cal.env.seg[rows_c[None, :], kc]
        covered = cal.members[rows_c[None, :], cc, inst.y[None, :]]
        dc = mus[:, None] < cal.env.zeta[None, :]
        num = 1 + np.sum(~covered & dc, axis=1)
        den = np.sum(mus[:, None] < test.env.zeta[None, :], axis=1)
        for b in range(mus.size):
            if at_most(fcp_ratio(int(num[b]), int(den[b]), n, m), alpha):
                return _finish(inst, float(mus[b]), int(num[b]), int(den[b]), "all_intersections")
    return _finish(inst, math.inf, 0, 0, "all_intersections")


def run_og_infosp(cal_probs, cal_labels, test_probs, family: InformativeFamily, alpha: float,
                  method: str = "threshold") -> SelectionOutcome:
    """Select test rows and report their prediction sets.

    Parameters
    ----------
    cal_probs : array_like (n, K)
    cal_labels : array_like (n,)
        1-based true classes of the calibration rows.
    test_probs : array_like (m, K)
    family : InformativeFamily
    alpha : float
        Target false coverage rate.
    method : {"threshold", "envelope_traversal", "all_intersections"}

    Returns
    -------
    SelectionOutcome
        ``mu_alpha`` is ``inf`` and nothing is selected when no candidate
        multiplier brings the estimate below ``alpha``.
    """
    inst = prepare(cal_probs, cal_labels, test_probs, family, alpha)
    name = _method_name(method)
    if name == "threshold":
        return _threshold(inst)
    if name == "envelope_traversal":
        return _traversal(inst)
    return _all_intersections(inst)


# ---------------------------------------------------------------------------
# calibration-only rule


@dataclass(frozen=True)
class CalOnlyRule:
    """Multiplier fitted on calibration data alone, applicable to new rows."""

    mu_alpha: float
    family: InformativeFamily
    alpha: float
    fcp_hat: float = math.nan

    def apply(self, row):
        return apply_cal_only(self, row)

    def apply_many(self, probs) -> list:
        """Sets (or ``None``) for every row of ``probs``."""
        if math.isinf(self.mu_alpha):
            return [None] * len(probs)
        blk = build_block(probs, self.family, self.alpha)
        act = blk.active_at(self.mu_alpha)
        keep = blk.env.zeta > self.mu_alpha
        return [blk.set_of(i, act[i]) if keep[i] else None for i in range(len(blk))]


def fit_cal_only(cal_probs, cal_labels, family: InformativeFamily, alpha: float) -> CalOnlyRule:
    """Fit the calibration-only multiplier.

    Both the miscoverage count and the selection count come from the
    calibration rows: ``(1 + #miscovered-and-selected) / (1 + #selected)``.
    """
    inst = prepare(cal_probs, cal_labels, np.zeros((0, family.K)), family, alpha,
                   require_test=False)
    t = tilde_mu_index(inst.cal, inst.y)
    cands = np.unique(np.concatenate([[0.0], t[np.isfinite(t)]]))
    mu, num, den = _search_sorted_stats(cands, t, inst.cal.env.zeta, inst.n, 1, alpha,
                                        cal_only=True)
    est = math.nan if num is None else num / (1 + den)
    return CalOnlyRule(mu, family, alpha, est)


def apply_cal_only(rule: CalOnlyRule, row):
    """Set for ``row`` at the fitted multiplier, or ``None`` when not selected."""
    r = np.asarray(row, dtype=float)
    if r.ndim != 1 or r.size != rule.family.K:
        raise DimensionMismatch(f"row must have {rule.family.K} entries")
    return rule.apply_many(r[None, :])[0]
