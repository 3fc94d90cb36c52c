"""Command-line interface.

Exit codes: 0 on success, 2 on bad input (with file/line diagnostics), 3 when
the procedure finds no admissible multiplier and so reports nothing.
"""

from __future__ import annotations

import argparse
import csv
import json
import math
import os
import platform
import sys
from datetime import datetime, timezone
from importlib import metadata
from pathlib import Path

import numpy as np

from . import __version__
from .errors import DegenerateRegime, DidNotConverge, InfoselError, NestednessViolated
from .family import build_family
from .oracle import AtomicModel, randomized_policy, solve_mu_star, trivial_policy
from .policy import ORACLE, PRACTICAL, build_block
from .selector import METHODS, fit_cal_only, run_og_infosp
from .shift import apply_vector_scaling, fit_vector_scaling, split_for_shift
from .simlab import ExperimentConfig, run_experiment, write_aggregate_json, write_metrics_csv

EXIT_OK, EXIT_INPUT, EXIT_EMPTY = 0, 2, 3
SUM_TOL = 1e-6


class InputError(Exception):
    """Bad user input; the message is printed as is."""


def _num(x):
    """JSON-safe number: ``inf`` becomes the string ``"inf"``, NaN becomes null."""
    x = float(x)
    if math.isinf(x):
        return "inf" if x > 0 else "-inf"
    if math.isnan(x):
        return None
    return x


# ---------------------------------------------------------------------------
# readers


def _rows(path):
    try:
        fh = open(path, newline="", encoding="utf-8")
    except OSError as exc:
        raise InputError(f"{path}: cannot open ({exc.strerror})") from None
    with fh:
        r = csv.reader(fh)
        try:
            header = next(r)
        except StopIteration:
            raise InputError(f"{path}: file is empty") from None
        body = [(r.line_num, row) for row in r if row]
    return [h.strip() for h in header], body


def read_probs(path, check_sum: bool = True):
    """Read ``x_id,p_1,...,p_K``; returns ``(ids, matrix)``."""
    header, body = _rows(path)
    K = len(header) - 1
    want = ["x_id"] + [f"p_{k}" for k in range(1, K + 1)]
    if K < 1 or header != want:
        raise InputError(f"{path}:1: header must be x_id,p_1,...,p_K, got {','.join(header)}")
    ids, P = [], np.empty((len(body), K))
    for i, (line, row) in enumerate(body):
        if len(row) != K + 1:
            raise InputError(f"{path}:{line}: expected {K + 1} fields, got {len(row)}")
        try:
            P[i] = [float(v) for v in row[1:]]
        except ValueError:
            raise InputError(f"{path}:{line}: non-numeric probability in row x_id={row[0]}") from None
        if not np.all(np.isfinite(P[i])) or np.any(P[i] < 0) or np.any(P[i] > 1):
            raise InputError(f"{path}:{line}: row x_id={row[0]} has entries outside [0, 1]")
        if check_sum and abs(P[i].sum() - 1) > SUM_TOL:
            raise InputError(f"{path}:{line}: row x_id={row[0]} sums to {P[i].sum():.6g}, not 1")
        ids.append(row[0])
    if len(set(ids)) != len(ids):
        raise InputError(f"{path}: duplicate x_id values")
    return ids, P


def read_labels(path, ids, K):
    header, body = _rows(path)
    if header != ["x_id", "y"]:
        raise InputError(f"{path}:1: header must be x_id,y")
    got = {}
    for line, row in body:
        if len(row) != 2:
            raise InputError(f"{path}:{line}: expected 2 fields")
        try:
            y = int(row[1])
        except ValueError:
            raise InputError(f"{path}:{line}: label {row[1]!r} is not an integer") from None
        if not 1 <= y <= K:
            raise InputError(f"{path}:{line}: label {y} outside 1..{K}")
        got[row[0]] = y
    missing = [i for i in ids if i not in got]
    if missing:
        raise InputError(f"{path}: no label for x_id={missing[0]}")
    return np.array([got[i] for i in ids], dtype=np.int64)


def read_json(path):
    try:
        with open(path, encoding="utf-8") as fh:
            return json.load(fh)
    except OSError as exc:
        raise InputError(f"{path}: cannot open ({exc.strerror})") from None
    except json.JSONDecodeError as exc:
        raise InputError(f"{path}:{exc.lineno}: invalid JSON ({exc.msg})") from None


def resolve_family(spec: str, K: int):
    """Shorthand, inline JSON, or a path to a JSON file."""
    s = spec.strip()
    if s.startswith("{"):
        try:
            obj = json.loads(s)
        except json.JSONDecodeError as exc:
            raise InputError(f"--family: invalid JSON ({exc.msg})") from None
    elif s.endswith(".json") or os.path.sep in s:
        obj = read_json(s)
    else:
        obj = s
    return build_family(obj, K)


# ---------------------------------------------------------------------------
# writers


class Run:
    """Collects outputs and writes the manifest."""

    def __init__(self, command, args, out_dir):
        self.command = command
        self.config = {k: v for k, v in vars(args).items() if k != "func"}
        self.out = Path(out_dir)
        self.out.mkdir(parents=True, exist_ok=True)
        self.outputs = []
        self.started = datetime.now(timezone.utc).isoformat()
        self.seed = getattr(args, "seed", None)

    def path(self, name) -> Path:
        p = self.out / name
        self.outputs.append(str(p))
        return p

    def write_json(self, name, obj):
        with open(self.path(name), "w", encoding="utf-8") as fh:
            json.dump(obj, fh, indent=2)
            fh.write("\n")

    def finish(self, status: int):
        versions = {"python": platform.python_version(), "numpy": np.__version__,
                    "infosel": __version__}
        try:
            versions["scipy"] = metadata.version("scipy")
        except metadata.PackageNotFoundError:
            pass
        man = {
            "command": self.command, "config": self.config, "seed": self.seed,
            "versions": versions, "started": self.started,
            "finished": datetime.now(timezone.utc).isoformat(),
            "outputs": list(self.outputs), "exit_code": status,
        }
        p = self.out / "manifest.json"
        man["outputs"].append(str(p))
        with open(p, "w", encoding="utf-8") as fh:
            json.dump(man, fh, indent=2)
            fh.write("\n")
        return status


# ---------------------------------------------------------------------------
# commands


def _load_selection_inputs(args, need_test=True):
    cal_ids, cal = read_probs(args.cal_probs)
    K = cal.shape[1]
    y = read_labels(args.cal_labels, cal_ids, K)
    test_ids, test = (None, None)
    if need_test or getattr(args, "test_probs", None):
        test_ids, test = read_probs(args.test_probs)
        if test.shape[1] != K:
            raise InputError(f"{args.test_probs}: {test.shape[1]} classes, calibration has {K}")
    fam = resolve_family(args.family, K)
    if getattr(args, "shift_fraction", None):
        fit, rest = split_for_shift(len(y), args.shift_fraction, args.seed)
        coef = fit_vector_scaling(cal[fit], y[fit], strict=False)
        cal, y = apply_vector_scaling(cal[rest], coef), y[rest]
        if test is not None:
            test = apply_vector_scaling(test, coef)
    return cal, y, test, test_ids, fam


def selection_payload(outcome, test_ids) -> dict:
    sel = [{"x_id": test_ids[j], "set": list(outcome.sets[j])} for j in outcome.selected]
    return {
        "mu_alpha": _num(outcome.mu_alpha), "selected": sel,
        "fcp_hat": _num(outcome.fcp_hat_at_solution),
    }


def cmd_select(args, run: Run) -> int:
    cal, y, test, test_ids, fam = _load_selection_inputs(args)
    out = run_og_infosp(cal, y, test, fam, args.alpha, method=args.method)
    run.write_json("selection.json", selection_payload(out, test_ids))
    if math.isinf(out.mu_alpha):
        print("no multiplier meets the FCP bound; nothing selected", file=sys.stderr)
        return EXIT_EMPTY
    return EXIT_OK


def cmd_cal_rule(args, run: Run) -> int:
    cal, y, test, test_ids, fam = _load_selection_inputs(args, need_test=False)
    rule = fit_cal_only(cal, y, fam, args.alpha)
    run.write_json("rule.json", {"mu_alpha": _num(rule.mu_alpha), "fcp_hat": _num(rule.fcp_hat),
                                 "alpha": args.alpha, "family": fam.to_json()})
    if test is not None:
        sets = rule.apply_many(test)
        run.write_json("selection.json", {
            "mu_alpha": _num(rule.mu_alpha),
            "selected": [{"x_id": i, "set": list(C)} for i, C in zip(test_ids, sets) if C is not None],
            "fcp_hat": _num(rule.fcp_hat),
        })
    return EXIT_EMPTY if math.isinf(rule.mu_alpha) else EXIT_OK


def cmd_simulate(args, run: Run) -> int:
    cfg = read_json(args.config)
    try:
        config = ExperimentConfig.from_dict(cfg)
    except (KeyError, TypeError, ValueError) as exc:
        raise InputError(f"{args.config}: bad config ({exc})") from None
    run.seed = config.seed
    run.config["resolved"] = config.to_dict()
    rows, agg = run_experiment(config, workers=_threads())
    write_metrics_csv(rows, run.path("metrics.csv"))
    write_aggregate_json(agg, rows, run.path("aggregate.json"))
    return EXIT_OK


def _read_atoms(path):
    if str(path).endswith(".json"):
        obj = read_json(path)
        try:
            return AtomicModel(obj["masses"], obj["probs"])
        except (KeyError, ValueError) as exc:
            raise InputError(f"{path}: bad atoms ({exc})") from None
    header, body = _rows(path)
    K = len(header) - 1
    if header != ["mass"] + [f"p_{k}" for k in range(1, K + 1)]:
        raise InputError(f"{path}:1: header must be mass,p_1,...,p_K")
    rows = []
    for line, row in body:
        try:
            rows.append([float(v) for v in row])
        except ValueError:
            raise InputError(f"{path}:{line}: non-numeric field") from None
        if len(row) != K + 1:
            raise InputError(f"{path}:{line}: expected {K + 1} fields")
    try:
        return AtomicModel.from_rows(rows)
    except ValueError as exc:
        raise InputError(f"{path}: {exc}") from None


def cmd_oracle(args, run: Run) -> int:
    model = _read_atoms(args.atoms)
    fam = resolve_family(args.family, model.probs.shape[1])
    try:
        rep = solve_mu_star(model, fam, args.alpha, m=args.m)
    except DegenerateRegime:
        pol = trivial_policy(model, fam, args.alpha)
        run.write_json("report.json", {
            "regime": "trivial", "sets": [list(C) for C, _ in pol], "decisions": [d for _, d in pol],
        })
        return EXIT_OK
    report = {
        "regime": "lagrangian", "mu_star": _num(rep.mu_star), "power": rep.power,
        "constraint": rep.constraint, "mfcr": rep.mfcr, "fcr_factor": rep.fcr_factor,
        "sets": [list(C) for C in rep.sets], "decisions": list(rep.decisions),
    }
    try:
        rp = randomized_policy(model, fam, args.alpha)
        report["randomized"] = {"mu_left": rp.mu_left, "mu_right": rp.mu_right, "q": rp.q,
                                "power": rp.power, "constraint": rp.constraint, "mfcr": rp.mfcr}
    except InfoselError as exc:
        report["randomized"] = {"unavailable": str(exc)}
    run.write_json("report.json", report)
    return EXIT_OK


def cmd_shift_fit(args, run: Run) -> int:
    ids, P = read_probs(args.probs, check_sum=not args.logits)
    y = read_labels(args.labels, ids, P.shape[1])
    status = EXIT_OK
    try:
        coef = fit_vector_scaling(P, y, logits=args.logits)
    except DidNotConverge as exc:
        print(f"shift-fit: {exc}", file=sys.stderr)
        coef, status = exc.best, EXIT_INPUT
    run.write_json("coefficients.json", coef.to_json())
    return status


def cmd_envelope(args, run: Run) -> int:
    ids, P = read_probs(args.probs)
    fam = resolve_family(args.family, P.shape[1])
    blk = build_block(P, fam, args.alpha, mode=args.mode)
    e = blk.env
    rows = []
    for i, x_id in enumerate(ids):
        segs = []
        for k in range(e.nseg[i]):
            c = e.seg[i, k]
            segs.append({"start": _num(e.starts[i, k]), "set": list(blk.set_of(i, c)),
                         "intercept": float(e.A[i, c]), "slope": float(e.S[i, c])})
        rows.append({"x_id": x_id, "segments": segs, "zero_crossing": _num(e.zeta[i])})
    run.write_json("envelope.json", {"alpha": args.alpha, "mode": args.mode, "rows": rows})
    return EXIT_OK


# ---------------------------------------------------------------------------


def _threads() -> int:
    raw = os.environ.get("INFOSEL_THREADS", "1").strip() or "1"
    try:
        v = int(raw)
    except ValueError:
        raise InputError(f"INFOSEL_THREADS must be an integer, got {raw!r}") from None
    if v < 0:
        raise InputError("INFOSEL_THREADS must be >= 0")
    return v


def _alpha(s):
    a = float(s)
    if not 0 < a < 1:
        raise argparse.ArgumentTypeError("alpha must lie in (0, 1)")
    return a


def build_parser() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(prog="infosel", description=__doc__.splitlines()[0])
    sub = p.add_subparsers(dest="command", required=True)

    def common(sp, family=True):
        sp.add_argument("--out", default=".", help="output directory")
        if family:
            sp.add_argument("--family", required=True,
                            help="nontrivial | exclude=k | singletons | JSON | path.json")
            sp.add_argument("--alpha", type=_alpha, required=True)

    s = sub.add_parser("select", help="run the selection procedure")
    s.add_argument("--cal-probs", required=True)
    s.add_argument("--cal-labels", required=True)
    s.add_argument("--test-probs", required=True)
    s.add_argument("--method", default="threshold", choices=METHODS)
    s.add_argument("--shift-fraction", type=float, default=None)
    s.add_argument("--seed", type=int, default=0)
    common(s)
    s.set_defaults(func=cmd_select)

    c = sub.add_parser("cal-rule", help="fit the calibration-only rule")
    c.add_argument("--cal-probs", required=True)
    c.add_argument("--cal-labels", required=True)
    c.add_argument("--test-probs", default=None)
    c.add_argument("--shift-fraction", type=float, default=None)
    c.add_argument("--seed", type=int, default=0)
    common(c)
    c.set_defaults(func=cmd_cal_rule)

    m = sub.add_parser("simulate", help="run a mixture simulation sweep")
    m.add_argument("--config", required=True)
    common(m, family=False)
    m.set_defaults(func=cmd_simulate)

    o = sub.add_parser("oracle", help="solve the population problem for atoms")
    o.add_argument("--atoms", required=True, help="CSV mass,p_1..p_K or JSON")
    o.add_argument("--m", type=int, default=1, help="test size for the FCR factor")
    common(o)
    o.set_defaults(func=cmd_oracle)

    f = sub.add_parser("shift-fit", help="fit vector-scaling coefficients")
    f.add_argument("--probs", required=True)
    f.add_argument("--labels", required=True)
    f.add_argument("--logits", action="store_true", help="columns hold logits")
    common(f, family=False)
    f.set_defaults(func=cmd_shift_fit)

    e = sub.add_parser("envelope", help="dump per-row envelopes")
    e.add_argument("--probs", required=True)
    e.add_argument("--mode", default=PRACTICAL, choices=(PRACTICAL, ORACLE))
    common(e)
    e.set_defaults(func=cmd_envelope)
    return p


def main(argv=None) -> int:
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except SystemExit as exc:
        return EXIT_INPUT if exc.code else EXIT_OK
    run = Run(args.command, args, args.out)
    try:
        status = args.func(args, run)
    except InputError as exc:
        print(f"error: {exc}", file=sys.stderr)
        status = EXIT_INPUT
    except NestednessViolated as exc:
        print(f"error: {exc}", file=sys.stderr)
        status = EXIT_INPUT
    except (InfoselError, ValueError) as exc:
        print(f"error: {type(exc).__name__}: {exc}", file=sys.stderr)
        status = EXIT_INPUT
    return run.finish(status)


if __name__ == "__main__":  # pragma: no cover
    sys.exit(main())
