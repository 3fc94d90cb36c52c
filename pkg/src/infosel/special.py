"""Closed-form special cases and conformal baselines.

Includes conformal p-values, the Benjamini-Hochberg step-up rule, selective
classification with abstention, novelty detection, split conformal sets,
adjusted informativeness levels, InfoSP and the naive conformal baseline.
Scores are ``s(x, y) = 1 - p(y | x)``.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from ._levels import at_most
from .family import InformativeFamily


def conformal_pvalue(cal_scores, test_score) -> float:
    """``(1 + #{cal >= test}) / (n + 1)``.

    >>> conformal_pvalue([0.1, 0.2, 0.3, 0.4], 0.25)
    0.6
    """
    cal = np.asarray(cal_scores, dtype=float)
    return (1 + int(np.sum(cal >= test_score))) / (cal.size + 1)


def conformal_pvalues(cal_scores, test_scores) -> np.ndarray:
    """Vectorized :func:`conformal_pvalue`."""
    cal = np.sort(np.asarray(cal_scores, dtype=float))
    t = np.asarray(test_scores, dtype=float)
    ge = cal.size - np.searchsorted(cal, t, side="left")
    return (1 + ge) / (cal.size + 1)


def bh_select(pvalues, alpha: float) -> list:
    """Benjamini-Hochberg step-up rule; returns sorted 0-based indices.

    >>> bh_select([0.01, 0.02, 0.5], 0.05)
    [0, 1]
    """
    p = np.asarray(pvalues, dtype=float)
    m = p.size
    if m == 0:
        return []
    ps = np.sort(p)
    ok = np.flatnonzero(at_most(ps, alpha * np.arange(1, m + 1) / m))
    if not ok.size:
        return []
    k = ok[-1] + 1
    return np.flatnonzero(at_most(p, alpha * k / m)).tolist()


# ---------------------------------------------------------------------------
# classification with abstention


@dataclass(frozen=True)
class AbstentionOutput:
    t_alpha: float
    reported: dict  # test index -> predicted class (1-based)

    def mu_for(self, alpha: float) -> float:
        """Multiplier matching ``t_alpha`` through ``t = mu (1 - alpha) / (1 + mu)``."""
        t = self.t_alpha
        c = 1.0 - alpha
        return t / (c - t) if t < c else math.inf


def threshold_of_mu(mu: float, alpha: float) -> float:
    return mu * (1 - alpha) / (1 + mu)


def _predict(probs):
    P = np.asarray(probs, dtype=float)
    return P.argmax(axis=1), P.max(axis=1)


def classify_with_abstention(cal_probs, cal_labels, test_probs, alpha) -> AbstentionOutput:
    """Report the top class of confident test rows.

    The threshold is the smallest candidate ``t`` (0 or a calibration error's
    confidence) at which ``[(1 + #{errors with conf > t}) / (n + 1)] /
    [max(1, #{tests with conf > t}) / m]`` is at most ``alpha``.  With no
    qualifying candidate nothing is reported.
    """
    yhat_c, s_c = _predict(cal_probs)
    y = np.asarray(cal_labels) - 1
    yhat_t, s_t = _predict(test_probs)
    n, m = s_c.size, s_t.size
    err = np.sort(s_c[yhat_c != y])
    st = np.sort(s_t)
    cands = np.unique(np.concatenate([[0.0], err]))
    num = 1 + err.size - np.searchsorted(err, cands, side="right")
    den = m - np.searchsorted(st, cands, side="right")
    est = (num / (n + 1)) / (np.maximum(1, den) / m)
    ok = np.flatnonzero(at_most(est, alpha))
    if not ok.size:
        return AbstentionOutput(math.inf, {})
    t = float(cands[ok[0]])
    rep = {int(j): int(yhat_t[j]) + 1 for j in np.flatnonzero(s_t > t)}
    return AbstentionOutput(t, rep)


def abstention_pvalues(cal_probs, cal_labels, test_probs) -> np.ndarray:
    """Conformal p-values from the score ``1{y != yhat} * confidence``."""
    yhat_c, s_c = _predict(cal_probs)
    y = np.asarray(cal_labels) - 1
    _, s_t = _predict(test_probs)
    return conformal_pvalues(np.where(yhat_c != y, s_c, 0.0), s_t)


def detect_novelties(cal_scores, test_scores, alpha) -> list:
    """Novelty detection by thresholding the estimated novelty probability.

    Calibration rows are all non-novel.  The threshold is the smallest
    candidate ``t`` (0 or a calibration probability) with
    ``[(1 + #{cal > t}) / (n + 1)] / [max(1, #{test > t}) / m] <= alpha``.
    """
    c = np.sort(np.asarray(cal_scores, dtype=float))
    t = np.asarray(test_scores, dtype=float)
    ts = np.sort(t)
    n, m = c.size, t.size
    cands = np.unique(np.concatenate([[0.0], c]))
    num = 1 + n - np.searchsorted(c, cands, side="right")
    den = m - np.searchsorted(ts, cands, side="right")
    est = (num / (n + 1)) / (np.maximum(1, den) / m)
    ok = np.flatnonzero(at_most(est, alpha))
    if not ok.size:
        return []
    thr = cands[ok[0]]
    return np.flatnonzero(t > thr).tolist()


# ---------------------------------------------------------------------------
# split conformal


def true_label_scores(probs, labels) -> np.ndarray:
    P = np.asarray(probs, dtype=float)
    y = np.asarray(labels) - 1
    return 1.0 - P[np.arange(P.shape[0]), y]


def quantile_index(alpha: float, n: int) -> int:
    """Rank ``ceil((1 - alpha)(n + 1))`` guarded against rounding noise."""
    return math.ceil((1 - alpha) * (n + 1) - 1e-9)


def conformal_threshold(cal_scores, alpha: float) -> float:
    s = np.sort(np.asarray(cal_scores, dtype=float))
    k = quantile_index(alpha, s.size)
    if k > s.size:
        return math.inf
    if k < 1:
        return -math.inf
    return float(s[k - 1])


def split_conformal_set(cal_scores, prob_row, alpha) -> tuple:
    """Labels whose score is at most the conformal quantile (may be empty).

    >>> split_conformal_set([0.1, 0.2, 0.3], [0.9, 0.07, 0.03], 0.5)
    (1,)
    """
    q = conformal_threshold(cal_scores, alpha)
    s = 1.0 - np.asarray(prob_row, dtype=float)
    return tuple(int(k) + 1 for k in np.flatnonzero(s <= q))


def _sets_at_ranks(sorted_cal, probs, ranks):
    """Membership masks ``(m, R, K)`` of sets at calibration ranks (1..n, or n+1 for full)."""
    n = sorted_cal.size
    ext = np.concatenate([[-np.inf], sorted_cal, [np.inf]])
    q = ext[np.clip(ranks, 0, n + 1)]
    S = 1.0 - np.asarray(probs, dtype=float)
    return S[:, None, :] <= q[None, :, None]


def _in_family_mask(masks, family: InformativeFamily) -> np.ndarray:
    """Whether each membership mask (last axis = classes) is a family member."""
    size = masks.sum(axis=-1)
    if family.kind == "cardinality":
        excl = np.zeros(family.K, bool)
        excl[[k - 1 for k in family.excluded]] = True
        return (
            (size >= family.min_card) & (size <= family.max_card)
            & ~np.any(masks & excl, axis=-1)
        )
    code = masks.astype(np.int64) @ (1 << np.arange(family.K, dtype=np.int64))
    allowed = np.array(
        [sum(1 << (k - 1) for k in C) for C in family.members()], dtype=np.int64
    )
    return np.isin(code, allowed) & (size > 0)


def adjusted_levels(test_probs, cal_scores, family: InformativeFamily) -> np.ndarray:
    """Smallest grid level ``k/(n+1)`` at which each test set is informative.

    ``inf`` marks rows that are never informative on the grid.
    """
    s = np.sort(np.asarray(cal_scores, dtype=float))
    n = s.size
    P = np.atleast_2d(np.asarray(test_probs, dtype=float))
    k = np.arange(1, n + 2)
    # level k/(n+1) uses rank n+1-k
    masks = _sets_at_ranks(s, P, n + 1 - k)
    ok = _in_family_mask(masks, family)
    first = np.argmax(ok, axis=1)
    return np.where(ok.any(axis=1), (first + 1) / (n + 1), math.inf)


def adjusted_level(prob_row, cal_scores, family: InformativeFamily) -> float:
    return float(adjusted_levels(np.asarray(prob_row, dtype=float)[None, :], cal_scores, family)[0])


@dataclass(frozen=True)
class BaselineSelection:
    selected: list
    sets: dict


def _sets_at_level(cal_scores, probs, alpha):
    q = conformal_threshold(cal_scores, alpha)
    S = 1.0 - np.asarray(probs, dtype=float)
    return S <= q


def run_info_sp(cal_probs, cal_labels, test_probs, family, alpha) -> BaselineSelection:
    """BH on adjusted levels, then sets at the reduced level ``alpha |S| / m``."""
    scores = true_label_scores(cal_probs, cal_labels)
    P = np.asarray(test_probs, dtype=float)
    m = P.shape[0]
    lv = adjusted_levels(P, scores, family)
    sel = bh_select(np.minimum(lv, 2.0), alpha)
    if not sel:
        return BaselineSelection([], {})
    masks = _sets_at_level(scores, P[sel], alpha * len(sel) / m)
    sets = {j: tuple(int(k) + 1 for k in np.flatnonzero(masks[r])) for r, j in enumerate(sel)}
    return BaselineSelection(list(sel), sets)


def run_classic_baseline(cal_probs, cal_labels, test_probs, family, alpha) -> BaselineSelection:
    """Level ``1 - alpha`` split conformal sets, kept when informative."""
    scores = true_label_scores(cal_probs, cal_labels)
    P = np.asarray(test_probs, dtype=float)
    masks = _sets_at_level(scores, P, alpha)
    ok = _in_family_mask(masks, family)
    sel = np.flatnonzero(ok).tolist()
    sets = {j: tuple(int(k) + 1 for k in np.flatnonzero(masks[j])) for j in sel}
    return BaselineSelection(sel, sets)
