from __future__ import annotations

import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from helpers import brute_policy, random_cardinality_family, random_explicit_family, set_prob
from infosel.errors import DimensionMismatch, NestednessViolated
from infosel.family import cardinality_family, explicit_family, singleton_family
from infosel.policy import (
    ORACLE,
    PRACTICAL,
    build_block,
    check_block_nested,
    hat_mu,
    key_statistics,
    policy_at,
    reduce_candidates,
    row_envelope,
    tilde_mu,
    verify_nestedness,
)

FAM12 = cardinality_family(3, (), 1, 2)
LEFT = (0.5, 0.3, 0.2)
RIGHT = (0.7, 0.25, 0.05)
COUNTER = explicit_family(3, [(1,), (2,), (3,), (2, 3)])


@pytest.mark.parametrize(
    "row, family, expected",
    [
        (LEFT, FAM12, [(1,), (1, 2)]),
        ((0.2, 0.5, 0.3), cardinality_family(3, (2,), 1, 2), [(3,), (1, 3)]),
        (LEFT, COUNTER, [(1,), (2,), (2, 3), (3,)]),
        ((0.25, 0.25, 0.5), FAM12, [(3,), (1, 3)]),
    ],
)
def test_reduce_candidates(row, family, expected):
    assert reduce_candidates(row, family) == expected


@pytest.mark.parametrize(
    "mode, mu, expected",
    [
        (PRACTICAL, 1 / 3, ((1, 2), 1)),
        (PRACTICAL, 4.0, ((1, 2), 0)),
        (ORACLE, 1 / 3, ((1,), 1)),
        (ORACLE, 4.0, ((1, 2), 1)),
        (PRACTICAL, 0.0, ((1,), 1)),
        (PRACTICAL, math.inf, ((1, 2), 0)),
    ],
)
def test_policy_left_example(mode, mu, expected):
    assert policy_at(LEFT, FAM12, 0.1, mu, mode) == expected


@pytest.mark.parametrize("mode, expected", [(PRACTICAL, ((1, 2), 0)), (ORACLE, ((1,), 0))])
def test_all_zero_row(mode, expected):
    assert policy_at((0.0, 0.0, 0.0), FAM12, 0.1, 1.0, mode) == expected


def test_bad_mode():
    with pytest.raises(ValueError):
        policy_at(LEFT, FAM12, 0.1, 0.0, "fuzzy")


@pytest.mark.parametrize("label, expected", [(1, 0.0), (2, 1 / 3), (3, 4.0)])
def test_tilde_mu_left_example(label, expected):
    ks = key_statistics([LEFT], [label], [RIGHT], FAM12, 0.1)
    assert ks.tilde_mu[0] == pytest.approx(expected, abs=1e-12)
    assert ks.hat_mu[0] == math.inf


def test_hat_mu_left_example():
    assert hat_mu(build_block([LEFT], FAM12, 0.1))[0] == pytest.approx(4.0, abs=1e-12)


def test_tilde_mu_checks_labels():
    blk = build_block([LEFT, RIGHT], FAM12, 0.1)
    with pytest.raises(DimensionMismatch):
        tilde_mu(blk, [1])
    with pytest.raises(DimensionMismatch):
        tilde_mu(blk, [1, 4])


def test_counterexample_violation():
    rep = verify_nestedness((0.4, 0.35, 0.25), COUNTER, 0.1)
    assert not rep
    assert rep.mu == pytest.approx(0.5, abs=1e-12)
    assert (rep.before, rep.after) == ((1,), (2, 3))


def test_counterexample_refused_by_statistics():
    with pytest.raises(NestednessViolated) as err:
        key_statistics([(0.4, 0.35, 0.25)], [1], [(0.4, 0.35, 0.25)], COUNTER, 0.1)
    assert err.value.mu == pytest.approx(0.5)
    assert err.value.before == (1,) and err.value.after == (2, 3)


@pytest.mark.parametrize(
    "row, family",
    [(LEFT, FAM12), (RIGHT, FAM12), (LEFT, explicit_family(3, [(2,)])), (LEFT, singleton_family(3))],
)
def test_nested_examples(row, family):
    assert verify_nestedness(row, family, 0.1)


def test_block_nested_check_names_row():
    rows = [LEFT, (0.4, 0.35, 0.25)]
    blk = build_block(rows, COUNTER, 0.1)
    with pytest.raises(NestednessViolated) as err:
        check_block_nested(blk, "test")
    assert err.value.row == 1 and err.value.block == "test"


# ---------------------------------------------------------------------------
# properties


rows_k = st.integers(2, 6).flatmap(
    lambda K: st.lists(st.floats(0.001, 1), min_size=K, max_size=K).map(
        lambda v: tuple(np.asarray(v) / np.sum(v))
    )
)
alphas = st.sampled_from([0.05, 0.1, 0.2, 0.3])


def family_for(K, seed, kind):
    rng = np.random.default_rng(seed)
    if kind == "card":
        return random_cardinality_family(rng, K)
    return random_explicit_family(rng, K)


@settings(max_examples=300, deadline=None)
@given(rows_k, alphas, st.integers(0, 10**6), st.sampled_from(["card", "explicit"]),
       st.sampled_from([PRACTICAL, ORACLE]), st.floats(0, 30), st.floats(0, 30))
def test_monotone_in_mu(row, alpha, seed, kind, mode, a, b):
    fam = family_for(len(row), seed, kind)
    mu1, mu2 = min(a, b), max(a, b)
    C1, D1 = policy_at(row, fam, alpha, mu1, mode)
    C2, D2 = policy_at(row, fam, alpha, mu2, mode)
    p1, p2 = set_prob(row, C1), set_prob(row, C2)
    eps = 1e-12
    assert p1 <= p2 + eps
    assert fam.weight(C1) * p1 >= fam.weight(C2) * p2 - eps
    assert D1 >= D2
    assert fam.weight(C1) * p1 * D1 >= fam.weight(C2) * p2 * D2 - eps
    assert (1 - p1 - alpha) * D1 >= (1 - p2 - alpha) * D2 - eps


@settings(max_examples=200, deadline=None)
@given(rows_k, alphas, st.integers(0, 10**6))
def test_right_continuous_at_breakpoints(row, alpha, seed):
    fam = family_for(len(row), seed, "card")
    env = row_envelope(row, fam, alpha)
    events = env.starts[1:] + ([env.zero_crossing] if env.zero_crossing is not None else [])
    for b in events:
        assert policy_at(row, fam, alpha, b) == policy_at(row, fam, alpha, b + 1e-9)


@settings(max_examples=200, deadline=None)
@given(rows_k, alphas, st.integers(0, 10**6), st.floats(0, 1e6))
def test_confident_rows_always_selected(row, alpha, seed, mu):
    fam = family_for(len(row), seed, "card")
    if max(set_prob(row, C) for C in fam.members()) >= 1 - alpha:
        assert policy_at(row, fam, alpha, mu)[1] == 1


@settings(max_examples=300, deadline=None)
@given(st.integers(2, 8), st.integers(0, 10**6), alphas, st.floats(0, 40),
       st.sampled_from([PRACTICAL, ORACLE]))
def test_reduction_matches_full_family(K, seed, alpha, mu, mode):
    rng = np.random.default_rng(seed)
    row = rng.dirichlet(np.ones(K))
    fam = random_cardinality_family(rng, K)
    assert policy_at(row, fam, alpha, mu, mode, tol=0.0) == brute_policy(row, fam, alpha, mu, mode)


@pytest.mark.parametrize("seed", range(5))
def test_key_statistics_characterization(seed):
    rng = np.random.default_rng(seed)
    K = 4
    fam = random_cardinality_family(rng, K)
    cal = rng.dirichlet(np.ones(K), 25)
    y = np.array([rng.choice(K, p=r) + 1 for r in cal])
    test = rng.dirichlet(np.ones(K), 25)
    ks = key_statistics(cal, y, test, fam, 0.1)
    top = max(np.max(ks.tilde_mu[np.isfinite(ks.tilde_mu)], initial=0),
              np.max(ks.hat_mu[np.isfinite(ks.hat_mu)], initial=0))
    for mu in np.linspace(0, 1.2 * top + 1, 1000):
        for i, row in enumerate(cal):
            C, D = brute_policy(row, fam, 0.1, mu)
            assert (ks.tilde_mu[i] > mu) == (D == 1 and y[i] not in C)
        for j, row in enumerate(test):
            assert (ks.hat_mu[j] > mu) == (brute_policy(row, fam, 0.1, mu)[1] == 1)


@pytest.mark.parametrize("seed", range(4))
def test_block_active_sets_match_scalar(seed):
    rng = np.random.default_rng(seed)
    K = 5
    fam = random_cardinality_family(rng, K) if seed % 2 else random_explicit_family(rng, K)
    P = rng.dirichlet(np.ones(K), 40)
    blk = build_block(P, fam, 0.1)
    for mu in (0.0, 0.3, 1.7, 12.0):
        act = blk.active_at(mu)
        D = blk.env.decision(mu)
        for i in range(len(P)):
            assert (blk.set_of(i, act[i]), int(D[i])) == policy_at(P[i], fam, 0.1, mu, tol=0.0)
