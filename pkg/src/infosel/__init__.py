"""Selective prediction sets with false coverage rate control.

Select test examples whose prediction set belongs to an informative family
and report those sets, while keeping the expected fraction of reported sets
that miss the truth below a target level.
"""

from __future__ import annotations

from .envelope import UpperEnvelope, upper_envelope
from .family import (
    InformativeFamily,
    build_family,
    cardinality_family,
    explicit_family,
    nestedness_certificate,
    singleton_family,
)
from .oracle import AtomicModel, randomized_policy, solve_mu_star, trivial_policy
from .policy import key_statistics, policy_at, verify_nestedness
from .selector import CalOnlyRule, SelectionOutcome, fit_cal_only, run_og_infosp
from .shift import apply_vector_scaling, fit_vector_scaling, split_for_shift
from .special import bh_select, classify_with_abstention, detect_novelties

__version__ = "0.1.0"

__all__ = [
    "UpperEnvelope", "upper_envelope", "InformativeFamily", "build_family",
    "cardinality_family", "explicit_family", "nestedness_certificate", "singleton_family",
    "AtomicModel", "randomized_policy", "solve_mu_star", "trivial_policy", "key_statistics",
    "policy_at", "verify_nestedness", "CalOnlyRule", "SelectionOutcome", "fit_cal_only",
    "run_og_infosp", "apply_vector_scaling", "fit_vector_scaling", "split_for_shift",
    "bh_select", "classify_with_abstention", "detect_novelties",
]
