"""The population problem over a finite (atomic) distribution.

With known conditional probabilities, the best selection rule maximizes the
weighted power subject to the marginal false coverage constraint.  Its
Lagrangian solution is the policy read off the upper envelopes at the smallest
multiplier for which the constraint holds.  Atoms break continuity, so that
multiplier is found by scanning event points with right-continuous practical
conventions; a two-point randomization then meets the constraint with equality.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from .envelope import EVENT_TOL
from .errors import DegenerateRegime, DimensionMismatch, InvalidBracket
from .family import InformativeFamily
from .policy import build_block, reduce_candidates


@dataclass(frozen=True)
class AtomicModel:
    """Finite distribution: atom masses and true class probabilities."""

    masses: np.ndarray
    probs: np.ndarray

    def __post_init__(self):
        m = np.asarray(self.masses, dtype=float)
        P = np.atleast_2d(np.asarray(self.probs, dtype=float))
        if m.ndim != 1 or m.size != P.shape[0]:
            raise DimensionMismatch("one mass per atom is required")
        if np.any(m <= 0) or abs(m.sum() - 1) > 1e-12:
            raise ValueError("atom masses must be positive and sum to 1")
        if np.any(P < 0) or np.any(np.abs(P.sum(axis=1) - 1) > 1e-9):
            raise ValueError("atom rows must be probability vectors")
        object.__setattr__(self, "masses", m)
        object.__setattr__(self, "probs", P)

    @classmethod
    def from_rows(cls, rows) -> "AtomicModel":
        """Build from rows ``(mass, p_1, ..., p_K)``."""
        a = np.asarray(rows, dtype=float)
        return cls(a[:, 0], a[:, 1:])


@dataclass(frozen=True)
class OracleReport:
    mu_star: float
    power: float
    constraint: float
    mfcr: float
    fcr_factor: float
    sets: tuple = ()
    decisions: tuple = ()


class _Atoms:
    """Envelopes of all atoms under the practical rule."""

    def __init__(self, model: AtomicModel, family: InformativeFamily, alpha: float):
        self.model = model
        self.alpha = alpha
        self.block = build_block(model.probs, family, alpha)
        e = self.block.env
        self.rows = np.arange(model.masses.size)

    def policy(self, mu: float, tol: float):
        e = self.block.env
        if math.isinf(mu):
            k = e.nseg - 1
            D = np.isinf(e.zeta)
        else:
            k = e.segment_at(mu, tol)
            D = e.decision(mu, tol)
        c = e.seg[self.rows, k]
        return c, D

    def functionals(self, mu: float, tol: float = 0.0):
        e = self.block.env
        c, D = self.policy(mu, tol)
        w = self.model.masses
        P = e.P[self.rows, c]
        A = e.A[self.rows, c]
        d = D.astype(float)
        power = float(np.sum(w * A * d))
        constraint = float(np.sum(w * (1.0 - P - self.alpha) * d))
        sel = float(np.sum(w * d))
        miss = float(np.sum(w * (1.0 - P) * d))
        mfcr = miss / sel if sel > 0 else 0.0
        return power, constraint, mfcr, sel, miss

    def events(self) -> np.ndarray:
        e = self.block.env
        ev = np.concatenate([[0.0], e.starts[np.isfinite(e.starts)], e.zeta[np.isfinite(e.zeta)]])
        return np.unique(ev)

    def top_prob(self) -> np.ndarray:
        e = self.block.env
        return e.P.max(axis=1)


def oracle_functionals(model: AtomicModel, family, alpha, mu, tol=EVENT_TOL):
    """Power, constraint and marginal FCR of the envelope policy at ``mu``.

    Examples
    --------
    >>> from infosel.family import singleton_family
    >>> mdl = AtomicModel([0.5, 0.5], [[0.95, 0.05], [0.6, 0.4]])
    >>> [round(v, 12) for v in oracle_functionals(mdl, singleton_family(2), 0.1, 0.0)]
    [0.775, 0.125, 0.225]
    """
    power, constraint, mfcr, _, _ = _Atoms(model, family, alpha).functionals(mu, tol)
    return power, constraint, mfcr


def solve_mu_star(model: AtomicModel, family, alpha, m: int = 1) -> OracleReport:
    """Smallest event multiplier at which the constraint holds.

    Raises
    ------
    DegenerateRegime
        If no atom has a candidate with probability above ``1 - alpha``; the
        caller should fall back to :func:`trivial_policy`.
    """
    atoms = _Atoms(model, family, alpha)
    T = atoms.top_prob()
    if not np.any(T > 1 - alpha):
        raise DegenerateRegime("no atom reaches coverage above 1 - alpha")
    for mu in atoms.events():
        power, g, mfcr, sel, _ = atoms.functionals(float(mu))
        if g <= 0:
            break
    else:  # pragma: no cover - unreachable when some T exceeds 1 - alpha
        mu = math.inf
        power, g, mfcr, sel, _ = atoms.functionals(mu)
    c, D = atoms.policy(float(mu), 0.0)
    sets = tuple(atoms.block.set_of(i, c[i]) for i in atoms.rows)
    factor = 1.0 - (1.0 - sel) ** m
    return OracleReport(float(mu), power, g, mfcr, factor, sets, tuple(int(d) for d in D))


def mixing_weight(g_left: float, g_right: float) -> float:
    """Weight on the left policy that zeroes the mixed constraint.

    >>> mixing_weight(0.125, -0.025)
    0.16666666666666669
    """
    if not (g_left > 0 >= g_right):
        raise InvalidBracket(f"constraint must change sign: g_left={g_left}, g_right={g_right}")
    return -g_right / (g_left - g_right)


@dataclass(frozen=True)
class RandomizedPolicy:
    mu_left: float
    mu_right: float
    q: float
    power: float
    constraint: float
    mfcr: float


def randomized_policy(model: AtomicModel, family, alpha, epsilon=None) -> RandomizedPolicy:
    """Mix the policies just left and right of the optimal multiplier.

    The left policy is used with probability ``q`` and the right one with
    ``1 - q``, chosen so the mixed constraint is exactly zero.  ``epsilon``
    defaults to half the gap to the nearest other event.
    """
    atoms = _Atoms(model, family, alpha)
    rep = solve_mu_star(model, family, alpha)
    mu = rep.mu_star
    if epsilon is None:
        ev = atoms.events()
        others = np.abs(ev[ev != mu] - mu)
        epsilon = 0.5 * float(others.min()) if others.size else 0.5 * mu
    if not (mu > epsilon > 0):
        raise InvalidBracket(f"need mu* > epsilon > 0, got mu*={mu}, epsilon={epsilon}")
    pl, gl, _, sl, ml = atoms.functionals(mu - epsilon)
    pr, gr, _, sr, mr = atoms.functionals(mu + epsilon)
    q = mixing_weight(gl, gr)
    sel = q * sl + (1 - q) * sr
    miss = q * ml + (1 - q) * mr
    return RandomizedPolicy(
        mu - epsilon, mu + epsilon, q, q * pl + (1 - q) * pr, q * gl + (1 - q) * gr,
        miss / sel if sel > 0 else 0.0,
    )


def trivial_policy(model: AtomicModel, family, alpha, tol: float = 1e-12) -> list:
    """Per-atom ``(C, D)``: most likely candidate, selected iff it reaches ``1 - alpha``.

    Near-ties in probability go to the larger weight, then lexicographic order.
    """
    out = []
    for row in model.probs:
        best = None
        for C in reduce_candidates(row, family):
            P = float(sum(row[k - 1] for k in C))
            key = (-P, -family.weight(C), C)
            if best is None or P > best[0] + tol or (
                abs(P - best[0]) <= tol and key[1:] < best[1][1:]
            ):
                best = (P, key, C)
        out.append((best[2], int(best[0] >= 1 - alpha)))
    return out


def fcr_from_mfcr(model: AtomicModel, family, alpha, mu, m: int, tol=EVENT_TOL):
    """FCR of ``m`` iid test points under the envelope policy at ``mu``.

    Returns ``(fcr, factor)`` with ``factor = 1 - (1 - P(select))^m``.
    """
    if m < 1:
        raise ValueError("m must be at least 1")
    _, _, mfcr, sel, _ = _Atoms(model, family, alpha).functionals(mu, tol)
    factor = 1.0 - (1.0 - sel) ** m
    return mfcr * factor, factor
