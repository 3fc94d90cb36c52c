from __future__ import annotations

import itertools
import math

import numpy as np
import pytest

from helpers import set_prob
from infosel.errors import DegenerateRegime, DimensionMismatch, InvalidBracket
from infosel.family import cardinality_family, singleton_family
from infosel.oracle import (
    AtomicModel,
    fcr_from_mfcr,
    mixing_weight,
    oracle_functionals,
    randomized_policy,
    solve_mu_star,
    trivial_policy,
)

TWO = AtomicModel([0.5, 0.5], [[0.95, 0.05], [0.6, 0.4]])
SING2 = singleton_family(2)


@pytest.mark.parametrize(
    "mu, expected",
    [(0.0, (0.775, 0.125, 0.225)), (2.0, (0.475, -0.025, 0.05)), (1.0, (0.775, 0.125, 0.225))],
)
def test_functionals_two_atoms(mu, expected):
    assert oracle_functionals(TWO, SING2, 0.1, mu) == pytest.approx(expected, abs=1e-12)


def test_confident_atoms_feasible_at_zero():
    mdl = AtomicModel([0.3, 0.7], [[0.95, 0.05], [0.02, 0.98]])
    _, g, _ = oracle_functionals(mdl, SING2, 0.1, 0.0)
    assert g <= 0
    rep = solve_mu_star(mdl, SING2, 0.1)
    assert rep.mu_star == 0.0 and rep.decisions == (1, 1)


def test_solve_two_atoms():
    rep = solve_mu_star(TWO, SING2, 0.1)
    assert rep.mu_star == pytest.approx(2.0, abs=1e-12)
    assert rep.power == pytest.approx(0.475, abs=1e-12)
    assert rep.mfcr == pytest.approx(0.05, abs=1e-12)
    assert rep.constraint <= 0
    assert rep.sets == ((1,), (1,)) and rep.decisions == (1, 0)
    assert rep.fcr_factor == pytest.approx(0.5)


def test_solve_two_atoms_grid_crosscheck():
    grid = np.linspace(0, 4, 100_001)
    g = np.array([oracle_functionals(TWO, SING2, 0.1, mu)[1] for mu in grid[::100]])
    first = grid[::100][np.flatnonzero(g <= 0)[0]]
    assert abs(first - solve_mu_star(TWO, SING2, 0.1).mu_star) <= grid[100] - grid[0]


def test_degenerate_regime():
    mdl = AtomicModel([0.5, 0.5], [[0.6, 0.4], [0.5, 0.5]])
    with pytest.raises(DegenerateRegime):
        solve_mu_star(mdl, SING2, 0.1)


def test_model_validation():
    with pytest.raises(DimensionMismatch):
        AtomicModel([1.0], [[0.5, 0.5], [0.2, 0.8]])
    with pytest.raises(ValueError):
        AtomicModel([0.4, 0.4], [[0.5, 0.5], [0.2, 0.8]])
    with pytest.raises(ValueError):
        AtomicModel([1.0], [[0.5, 0.6]])
    mdl = AtomicModel.from_rows([[0.25, 0.9, 0.1], [0.75, 0.3, 0.7]])
    assert mdl.masses.tolist() == [0.25, 0.75]


@pytest.mark.parametrize(
    "gl, gr, q",
    [(0.125, -0.025, 1 / 6), (0.3, 0.0, 0.0), (0.2, -0.2, 0.5)],
)
def test_mixing_weight(gl, gr, q):
    got = mixing_weight(gl, gr)
    assert got == pytest.approx(q, abs=1e-15)
    assert abs(got * gl + (1 - got) * gr) <= 1e-12


@pytest.mark.parametrize("gl, gr", [(-0.1, -0.2), (0.0, -0.1), (0.1, 0.05)])
def test_mixing_weight_bad_bracket(gl, gr):
    with pytest.raises(InvalidBracket):
        mixing_weight(gl, gr)


def test_randomized_two_atoms():
    rp = randomized_policy(TWO, SING2, 0.1)
    assert rp.q == pytest.approx(1 / 6)
    assert abs(rp.constraint) <= 1e-12
    assert rp.mfcr == pytest.approx(0.1, abs=1e-9)
    assert rp.power == pytest.approx(0.775 / 6 + 0.475 * 5 / 6)


def test_randomized_needs_positive_multiplier():
    mdl = AtomicModel([0.3, 0.7], [[0.95, 0.05], [0.02, 0.98]])
    with pytest.raises(InvalidBracket):
        randomized_policy(mdl, SING2, 0.1)


@pytest.mark.parametrize(
    "row, expected",
    [((0.95, 0.05), ((1,), 1)), ((0.6, 0.4), ((1,), 0))],
)
def test_trivial_policy_examples(row, expected):
    assert trivial_policy(AtomicModel([1.0], [row]), SING2, 0.1) == [expected]


def test_trivial_policy_prefers_larger_weight():
    # p({1}) = p({1, 2}) = p({1, 3}) = 1, and {1} carries weight 1 > 1/2
    fam = cardinality_family(3, (), 1, 2)
    assert trivial_policy(AtomicModel([1.0], [[1.0, 0.0, 0.0]]), fam, 0.1) == [((1,), 1)]
    # without a tie the pair with the larger probability wins
    assert trivial_policy(AtomicModel([1.0], [[0.6, 0.0, 0.4]]), fam, 0.1) == [((1, 3), 1)]


@pytest.mark.parametrize(
    "masses, rows, m, factor",
    [
        ([0.5, 0.5], [[0.95, 0.05], [0.6, 0.4]], 1, 0.5),
        ([0.5, 0.5], [[0.95, 0.05], [0.6, 0.4]], 10, 1 - 2.0**-10),
        ([1.0], [[0.6, 0.4]], 3, 0.0),
    ],
)
def test_fcr_factor(masses, rows, m, factor):
    fcr, got = fcr_from_mfcr(AtomicModel(masses, rows), SING2, 0.1, 2.0, m)
    assert got == pytest.approx(factor, abs=1e-15)
    if factor == 0:
        assert fcr == 0
    else:
        assert fcr == pytest.approx(0.05 * factor)


def test_fcr_factor_bad_m():
    with pytest.raises(ValueError):
        fcr_from_mfcr(TWO, SING2, 0.1, 0.0, 0)


# ---------------------------------------------------------------------------
# random atomic models


def random_model(rng, atoms=None, K=3):
    a = atoms or int(rng.integers(1, 5))
    masses = rng.dirichlet(np.ones(a))
    masses = masses / masses.sum()
    probs = rng.dirichlet(np.full(K, 0.5), a)
    return AtomicModel(masses, probs)


@pytest.mark.parametrize("seed", range(30))
def test_power_and_constraint_non_increasing(seed):
    rng = np.random.default_rng(seed)
    mdl = random_model(rng, K=4)
    fam = cardinality_family(4, (), 1, 3)
    mus = np.sort(rng.exponential(3.0, 60))
    vals = np.array([oracle_functionals(mdl, fam, 0.1, mu)[:2] for mu in mus])
    assert np.all(np.diff(vals[:, 0]) <= 1e-12)
    assert np.all(np.diff(vals[:, 1]) <= 1e-12)


@pytest.mark.parametrize("seed", range(20))
def test_large_multiplier_matches_trivial(seed):
    rng = np.random.default_rng(100 + seed)
    mdl = random_model(rng, atoms=4, K=4)
    fam = cardinality_family(4, (), 1, 3)
    from infosel.oracle import _Atoms

    atoms = _Atoms(mdl, fam, 0.1)
    c, D = atoms.policy(1e9, 0.0)
    got = [(atoms.block.set_of(i, c[i]), int(D[i])) for i in range(4)]
    assert got == trivial_policy(mdl, fam, 0.1)


def _deterministic_best(mdl, fam, alpha):
    options = [(None, 0)] + [(C, 1) for C in fam.members()]
    best = -math.inf
    for choice in itertools.product(options, repeat=mdl.masses.size):
        power = g = 0.0
        for w, row, (C, D) in zip(mdl.masses, mdl.probs, choice):
            if D:
                P = set_prob(row, C)
                power += w * fam.weight(C) * P
                g += w * (1 - P - alpha)
        if g <= 1e-12:
            best = max(best, power)
    return best


@pytest.mark.parametrize("seed", range(25))
def test_lagrangian_bound(seed):
    rng = np.random.default_rng(200 + seed)
    mdl = random_model(rng)
    fam = cardinality_family(3, (), 1, 2)
    f_star = _deterministic_best(mdl, fam, 0.1)
    for mu in rng.exponential(2.0, 8):
        power, g, _ = oracle_functionals(mdl, fam, 0.1, float(mu))
        assert f_star <= power - mu * g + 1e-12


@pytest.mark.parametrize("seed", range(25))
def test_solution_feasible_and_mixture_exact(seed):
    rng = np.random.default_rng(300 + seed)
    mdl = random_model(rng)
    fam = cardinality_family(3, (), 1, 2)
    try:
        rep = solve_mu_star(mdl, fam, 0.1)
    except DegenerateRegime:
        assert all(D == 0 for _, D in trivial_policy(mdl, fam, 0.1))
        return
    assert rep.constraint <= 1e-12 and rep.mfcr <= 0.1 + 1e-12
    if rep.mu_star > 0:
        rp = randomized_policy(mdl, fam, 0.1)
        assert 0 <= rp.q < 1
        assert abs(rp.constraint) <= 1e-12
        assert rp.mfcr == pytest.approx(0.1, abs=1e-9)
        assert rp.power >= rep.power - 1e-12
