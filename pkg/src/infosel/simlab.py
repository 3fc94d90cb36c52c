"""Desk-scale simulations on a four-component bivariate Gaussian mixture.

The classifier is the exact Bayes posterior under the training priors, so
every selection method sees the same, well-calibrated (or, under label shift,
mis-calibrated) probabilities.  Each repetition draws one calibration sample
and one test sample that all methods share.

Random streams are ``numpy.random.default_rng([seed, scenario, rep])``: a
PCG64 generator seeded through ``SeedSequence`` with the three integers as
entropy, so any single repetition can be replayed on its own.
"""

from __future__ import annotations

import csv
import json
import math
import os
from concurrent.futures import ProcessPoolExecutor
from dataclasses import asdict, dataclass, field

import numpy as np

from .errors import InfoselError
from .family import InformativeFamily, build_family
from .selector import fit_cal_only, run_og_infosp
from .shift import apply_vector_scaling, fit_vector_scaling, split_for_shift
from .special import run_classic_baseline, run_info_sp

K = 4
METHODS = (
    "og_infosp", "og_infosp_cal_only", "classic", "info_sp",
    "og_infosp_vs", "og_infosp_cal_only_vs",
)
RNG_NAME = "numpy PCG64 via SeedSequence([seed, scenario, rep])"


@dataclass(frozen=True)
class MixtureSpec:
    snr: float
    pi: tuple = (0.25, 0.25, 0.25, 0.25)
    seed: int = 0

    def __post_init__(self):
        pi = tuple(float(v) for v in self.pi)
        if len(pi) != K:
            raise ValueError(f"need {K} mixing weights")
        if min(pi) < 0 or abs(sum(pi) - 1) > 1e-12:
            raise ValueError("mixing weights must be nonnegative and sum to 1")
        if self.snr < 0:
            raise ValueError("snr must be nonnegative")
        object.__setattr__(self, "pi", pi)

    @property
    def means(self) -> np.ndarray:
        s = self.snr
        return np.array([[0.0, 0.0], [s, 0.0], [s, s], [0.0, s]])


def sample_mixture(spec: MixtureSpec, count: int, rng=None):
    """Draw ``count`` points; returns ``(x, y)`` with 1-based labels.

    Without ``rng`` the stream is seeded from ``spec.seed``.
    """
    if count < 1:
        raise ValueError("count must be at least 1")
    rng = np.random.default_rng(spec.seed) if rng is None else rng
    y = rng.choice(K, size=count, p=spec.pi)
    x = spec.means[y] + rng.standard_normal((count, 2))
    return x, y + 1


def bayes_posteriors(x, spec: MixtureSpec) -> np.ndarray:
    """Exact class posteriors ``p_k ∝ pi_k exp(-|x - m_k|^2 / 2)``.

    >>> bayes_posteriors([0.0, 0.0], MixtureSpec(2.0)).round(4)
    array([0.7758, 0.105 , 0.0142, 0.105 ])
    """
    X = np.asarray(x, dtype=float)
    one = X.ndim == 1
    X = np.atleast_2d(X)
    d2 = ((X[:, None, :] - spec.means[None, :, :]) ** 2).sum(axis=2)
    with np.errstate(divide="ignore"):
        logit = np.log(np.asarray(spec.pi)) - 0.5 * d2
    logit -= logit.max(axis=1, keepdims=True)
    P = np.exp(logit)
    P /= P.sum(axis=1, keepdims=True)
    return P[0] if one else P


def compute_metrics(sets: dict, truths, weight=None) -> tuple:
    """``(fcp, tcp, n_selected)`` for reported sets keyed by test index.

    ``tcp`` sums ``weight(C)`` over selected sets that cover the truth;
    ``weight`` defaults to ``1/|C|``.

    >>> compute_metrics({0: (1,), 1: (2, 3)}, [1, 3])
    (0.0, 1.5, 2)
    """
    weight = (lambda C: 1.0 / len(C)) if weight is None else weight
    y = np.asarray(truths)
    miss = 0
    tcp = 0.0
    for i, C in sets.items():
        if int(y[i]) in C:
            tcp += weight(C)
        else:
            miss += 1
    n = len(sets)
    return (miss / n if n else 0.0), tcp, n


# ---------------------------------------------------------------------------
# experiment runner


@dataclass(frozen=True)
class Scenario:
    id: str
    snr: float
    pi: tuple = (0.25, 0.25, 0.25, 0.25)
    pi_train: tuple | None = None
    family: str = "nontrivial"
    n: int = 200
    m: int = 200
    shift_fraction: float = 0.2

    @property
    def target(self) -> MixtureSpec:
        return MixtureSpec(self.snr, self.pi)

    @property
    def train(self) -> MixtureSpec:
        return MixtureSpec(self.snr, self.pi if self.pi_train is None else self.pi_train)


@dataclass
class ExperimentConfig:
    scenarios: list
    methods: tuple = ("og_infosp", "og_infosp_cal_only", "classic", "info_sp")
    reps: int = 100
    alpha: float = 0.1
    seed: int = 0
    workers: int = 1

    @classmethod
    def from_dict(cls, d: dict) -> "ExperimentConfig":
        scen = [Scenario(**{**s, "pi": tuple(s.get("pi", (0.25,) * K)),
                            "pi_train": None if s.get("pi_train") is None else tuple(s["pi_train"])})
                for s in d["scenarios"]]
        cfg = cls(scen, tuple(d.get("methods", cls.methods)), int(d.get("reps", 100)),
                  float(d.get("alpha", 0.1)), int(d.get("seed", 0)), int(d.get("workers", 1)))
        cfg.validate()
        return cfg

    def validate(self):
        if self.reps < 1:
            raise ValueError("reps must be at least 1")
        bad = [m for m in self.methods if m not in METHODS]
        if bad:
            raise ValueError(f"unknown methods {bad}; choose from {list(METHODS)}")
        ids = [s.id for s in self.scenarios]
        if len(set(ids)) != len(ids):
            raise ValueError("scenario ids must be unique")

    def to_dict(self) -> dict:
        return {
            "scenarios": [asdict(s) for s in self.scenarios], "methods": list(self.methods),
            "reps": self.reps, "alpha": self.alpha, "seed": self.seed,
        }


@dataclass(frozen=True)
class MetricsRow:
    scenario: str
    method: str
    rep: int
    fcp: float
    tcp: float
    n_selected: int
    error: str = ""


def _og(cal, y, test, fam, alpha):
    return run_og_infosp(cal, y, test, fam, alpha).sets


def _cal_only(cal, y, test, fam, alpha):
    out = fit_cal_only(cal, y, fam, alpha).apply_many(test)
    return {i: C for i, C in enumerate(out) if C is not None}


def _with_vs(inner, frac, seed):
    def run(cal, y, test, fam, alpha):
        fit, rest = split_for_shift(len(y), frac, seed)
        coef = fit_vector_scaling(cal[fit], y[fit], strict=False)
        return inner(apply_vector_scaling(cal[rest], coef), y[rest],
                     apply_vector_scaling(test, coef), fam, alpha)
    return run


def _plain(fn):
    return lambda cal, y, test, fam, alpha: fn(cal, y, test, fam, alpha).sets


def run_rep(scenario: Scenario, s_index: int, rep: int, methods, alpha, seed) -> list:
    """All methods on one shared draw of calibration and test data."""
    rng = np.random.default_rng([seed, s_index, rep])
    tgt, train = scenario.target, scenario.train
    xc, yc = sample_mixture(tgt, scenario.n, rng)
    xt, yt = sample_mixture(tgt, scenario.m, rng)
    pc, pt = bayes_posteriors(xc, train), bayes_posteriors(xt, train)
    split_seed = int(rng.integers(2**63))
    fam: InformativeFamily = build_family(scenario.family, K)
    runners = {
        "og_infosp": _og,
        "og_infosp_cal_only": _cal_only,
        "classic": _plain(run_classic_baseline),
        "info_sp": _plain(run_info_sp),
        "og_infosp_vs": _with_vs(_og, scenario.shift_fraction, split_seed),
        "og_infosp_cal_only_vs": _with_vs(_cal_only, scenario.shift_fraction, split_seed),
    }
    rows = []
    for name in methods:
        try:
            sets = runners[name](pc, yc, pt, fam, alpha)
            fcp, tcp, k = compute_metrics(sets, yt, fam.weight)
            rows.append(MetricsRow(scenario.id, name, rep, fcp, tcp, k))
        except (InfoselError, ValueError) as exc:
            rows.append(MetricsRow(scenario.id, name, rep, math.nan, math.nan, -1,
                                   f"{type(exc).__name__}: {exc}"))
    return rows


def _rep_job(args):
    return run_rep(*args)


def worker_count(requested: int | None = None) -> int:
    """Workers from ``requested`` or ``INFOSEL_THREADS`` (0 = all cores)."""
    if requested is None:
        requested = int(os.environ.get("INFOSEL_THREADS", "1") or 1)
    if requested <= 0:
        return os.cpu_count() or 1
    return requested


def run_experiment(config: ExperimentConfig, workers: int | None = None):
    """Run every scenario x rep x method; returns ``(rows, aggregate)``.

    Rows come back in (scenario, rep, method) order regardless of how many
    workers ran them, so output is identical for any worker count.
    """
    config.validate()
    jobs = [
        (s, i, r, config.methods, config.alpha, config.seed)
        for i, s in enumerate(config.scenarios) for r in range(config.reps)
    ]
    nw = worker_count(workers if workers is not None else config.workers)
    if nw > 1 and len(jobs) > 1:
        with ProcessPoolExecutor(nw) as ex:
            chunks = list(ex.map(_rep_job, jobs, chunksize=max(1, len(jobs) // (4 * nw))))
    else:
        chunks = [_rep_job(j) for j in jobs]
    rows = [r for chunk in chunks for r in chunk]
    return rows, aggregate(rows, config)


def _mean_se(v):
    v = np.asarray(v, dtype=float)
    if v.size == 0:
        return math.nan, math.nan
    se = float(v.std(ddof=1) / math.sqrt(v.size)) if v.size > 1 else math.nan
    return float(v.mean()), se


def aggregate(rows, config: ExperimentConfig) -> dict:
    """FCR and power estimates with standard errors per (scenario, method)."""
    cells = {}
    for r in rows:
        cells.setdefault((r.scenario, r.method), []).append(r)
    out = []
    for s in config.scenarios:
        for mth in config.methods:
            rs = cells.get((s.id, mth), [])
            ok = [r for r in rs if not r.error]
            fcr, fcr_se = _mean_se([r.fcp for r in ok])
            pw, pw_se = _mean_se([r.tcp for r in ok])
            out.append({
                "scenario": s.id, "method": mth, "reps": len(ok), "failures": len(rs) - len(ok),
                "fcr": fcr, "fcr_se": fcr_se, "power": pw, "power_se": pw_se,
                "mean_selected": float(np.mean([r.n_selected for r in ok])) if ok else math.nan,
            })
    return {"alpha": config.alpha, "seed": config.seed, "rng": RNG_NAME,
            "reps": config.reps, "cells": out}


def cell(agg: dict, scenario: str, method: str) -> dict:
    for c in agg["cells"]:
        if c["scenario"] == scenario and c["method"] == method:
            return c
    raise KeyError((scenario, method))


def write_metrics_csv(rows, path) -> None:
    with open(path, "w", newline="", encoding="utf-8") as fh:
        w = csv.writer(fh)
        w.writerow(["scenario", "method", "rep", "fcp", "tcp", "n_selected"])
        for r in rows:
            w.writerow([r.scenario, r.method, r.rep, repr(r.fcp), repr(r.tcp), r.n_selected])


def write_aggregate_json(agg: dict, rows, path) -> None:
    failures = [asdict(r) for r in rows if r.error]
    with open(path, "w", encoding="utf-8") as fh:
        json.dump({**agg, "failure_rows": failures}, fh, indent=2, allow_nan=True)
        fh.write("\n")


def default_sweep(reps: int = 2000, seed: int = 2024) -> ExperimentConfig:
    """Uniform-prior sweep over SNR 1..3 and both informativeness goals."""
    scen = [
        Scenario(f"snr{snr}_{goal.replace('=', '')}", float(snr), family=goal)
        for goal in ("nontrivial", "exclude=2") for snr in (1, 2, 3)
    ]
    return ExperimentConfig(scen, ("og_infosp", "og_infosp_cal_only", "classic", "info_sp"),
                            reps, 0.1, seed)


def shifted_sweep(reps: int = 500, seed: int = 2025, snr: float = 2.0) -> ExperimentConfig:
    """Training priors uniform, target priors ``(0.1, 0.7, 0.1, 0.1)``."""
    scen = [Scenario(f"shift_snr{snr:g}", snr, pi=(0.1, 0.7, 0.1, 0.1),
                     pi_train=(0.25, 0.25, 0.25, 0.25))]
    return ExperimentConfig(scen, ("og_infosp", "og_infosp_vs", "og_infosp_cal_only",
                                   "og_infosp_cal_only_vs"), reps, 0.1, seed)


__all__ = [
    "MixtureSpec", "sample_mixture", "bayes_posteriors", "compute_metrics", "Scenario",
    "ExperimentConfig", "MetricsRow", "run_rep", "run_experiment", "aggregate", "cell",
    "write_metrics_csv", "write_aggregate_json", "default_sweep", "shifted_sweep", "METHODS",
]
