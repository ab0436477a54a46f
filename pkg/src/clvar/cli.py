"""Command-line driver.

Exit codes are 0 on success, 1 for usage errors, 2 for data errors (bad or
missing files, malformed inputs) and 3 for numerical failures.  Every failure
prints exactly one line ``clvar: <class>: <message>`` to stderr.

Row ranges on the command line are 1-based and inclusive (``A..B``).
"""

from __future__ import annotations

import argparse
import csv
import io
import json
import os
import sys

import numpy as np

from .data import (TimeSeriesPanel, atomic_write_text, lag_design_for_rows, load_csv, save_csv,
                   standardize)
from .errors import ClvarError, GenerationError, InvalidInputError, NumericalFailure
from .harness import (ExperimentPlan, GridSearchError, HyperGrid, LEARNERS, fit_method,
                      grid_search, run_experiment)
from .model import (VarModel, edge_density, extract_granger_graph, load_model,
                    rolling_holdout_forecast, save_model, DEFAULT_ZERO_TOL)
from .synth import BURN_IN, generate_system, make_design, simulate

EXIT_USAGE, EXIT_DATA, EXIT_NUMERICAL = 1, 2, 3
_CLASS = {EXIT_USAGE: "usage-error", EXIT_DATA: "data-error", EXIT_NUMERICAL: "numerical-error"}


class UsageError(Exception):
    pass


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        raise UsageError(f"{self.prog}: {message}")


def parse_row_range(text: str):
    """``"A..B"`` (1-based, inclusive) to a 0-based half-open ``(start, stop)``."""
    parts = text.split("..")
    if len(parts) != 2:
        raise UsageError(f"row range must look like A..B, got {text!r}")
    try:
        a, b = int(parts[0]), int(parts[1])
    except ValueError:
        raise UsageError(f"row range bounds must be integers, got {text!r}")
    if a < 1 or b < a:
        raise UsageError(f"row range needs 1 <= A <= B, got {text!r}")
    return a - 1, b


def _check_range(rows, T, flag):
    if rows[1] > T:
        raise InvalidInputError(f"{flag} ends at row {rows[1]} but the panel has {T} rows")


# ---------------------------------------------------------------------------
# subcommands
# ---------------------------------------------------------------------------

def cmd_generate(args):
    design = make_design(args.design)
    system = generate_system(design, args.seed)
    panel = simulate(system, args.length, burn_in=args.burn_in, seed=args.seed)
    os.makedirs(args.out, exist_ok=True)
    save_csv(panel, os.path.join(args.out, "panel.csv"))
    atomic_write_text(os.path.join(args.out, "system.json"), system.to_json())
    print(f"wrote K={design.K} T={panel.T} design {design.design_id} to {args.out}")


def _read_hyper(path):
    try:
        with open(path, encoding="utf-8") as fh:
            hp = json.load(fh)
    except json.JSONDecodeError as exc:
        raise InvalidInputError(f"hyperparameter file is not valid JSON: {exc}")
    if not isinstance(hp, dict) or "lambda" not in hp:
        raise InvalidInputError("hyperparameter file must be an object with at least 'lambda'")
    return hp


def cmd_fit(args):
    panel = load_csv(args.data)
    rows = parse_row_range(args.train_rows) if args.train_rows else (0, panel.T)
    _check_range(rows, panel.T, "--train-rows")
    train = panel.rows(rows)
    p = args.lag
    if train.T <= 3 * (p + 1) and args.cv:
        raise InvalidInputError(f"--cv needs more than {3 * (p + 1)} training rows")
    std, stats = standardize(train, slice(0, train.T))
    values = std.values
    design = lag_design_for_rows(values, p, np.arange(p, train.T))
    if args.cv:
        gs = grid_search(args.method, values, HyperGrid(), p, args.cv_folds, panel.series_names)
        params = gs.best
    else:
        params = _read_hyper(args.hyper)
        if args.method == "clvar" or args.method == "clvar-shared":
            params.setdefault("kappa", 1.0)
            params.setdefault("rank", 1)
    out = fit_method(args.method, design, params, panel.series_names)
    hyper = dict(out.model.hyperparameters)
    hyper.update({k: v for k, v in params.items()})
    hyper["train_rows"] = [rows[0] + 1, rows[1]]
    hyper["selected_by_cv"] = bool(args.cv)
    m = out.model
    model = VarModel(m.weights, m.lag_order, m.series_names, m.learner_tag, stats, m.factors,
                     hyper)
    save_model(model, args.out)
    print(f"fitted {args.method} on rows {rows[0] + 1}..{rows[1]}: "
          + " ".join(f"{k}={params[k]}" for k in sorted(params)))


def cmd_forecast(args):
    model = load_model(args.model)
    panel = load_csv(args.data)
    if panel.K != model.K:
        raise InvalidInputError(f"panel has {panel.K} series, model expects {model.K}")
    rows = parse_row_range(args.holdout_rows)
    _check_range(rows, panel.T, "--holdout-rows")
    trained = model.hyperparameters.get("train_rows")
    if trained is not None and rows[0] < int(trained[1]):
        raise InvalidInputError(
            f"hold-out starts at row {rows[0] + 1}, inside or before the training rows "
            f"{trained[0]}..{trained[1]}")
    values = panel.values
    if model.standardization is not None:
        values = model.standardization.apply(values)
    res = rolling_holdout_forecast(model, values, range(*rows))
    pred, act = res.predictions, res.actuals
    if model.standardization is not None:
        pred = model.standardization.invert(pred)
        act = model.standardization.invert(act)
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    names = model.series_names
    w.writerow(["row"] + [f"pred_{n}" for n in names] + [f"error_{n}" for n in names])
    for r, pr, ac in zip(res.rows, pred, act):
        w.writerow([int(r) + 1] + [repr(float(x)) for x in pr]
                   + [repr(float(x)) for x in pr - ac])
    atomic_write_text(args.out, buf.getvalue())
    print(f"mse={float(np.mean((pred - act) ** 2))!r} "
          f"mse_standardized={float(np.mean(res.squared_errors))!r} rows={len(res.rows)}")


def cmd_graph(args):
    model = load_model(args.model)
    if not args.tol >= 0:
        raise UsageError("--tol must be non-negative")
    g = extract_granger_graph(model, args.tol)
    atomic_write_text(args.out, g.to_dot() if args.format == "dot" else g.to_csv())
    print(f"edges={len(g.edges())} edge_density={edge_density(g)!r}")


def cmd_experiment(args):
    if args.threads < 1:
        raise UsageError("--threads must be at least 1")
    plan = ExperimentPlan.from_file(args.plan)
    report = run_experiment(plan, threads=args.threads, out_dir=args.out)
    ok = sum(r["status"] == "ok" for r in report.rows)
    print(f"wrote {len(report.rows)} rows ({ok} ok) to {args.out}")


# ---------------------------------------------------------------------------

def build_parser() -> argparse.ArgumentParser:
    ap = _Parser(prog="clvar", description="Structured VAR learners and experiment harness.")
    sub = ap.add_subparsers(dest="command", parser_class=_Parser, metavar="COMMAND")
    sub.required = True

    g = sub.add_parser("generate", help="simulate a synthetic design")
    g.add_argument("--design", type=int, choices=range(1, 7), required=True,
                   help="synthetic design id, 1..6")
    g.add_argument("--seed", type=int, default=0, help="system and simulation seed (default 0)")
    g.add_argument("--length", type=int, required=True, help="number of observations")
    g.add_argument("--burn-in", type=int, default=BURN_IN,
                   help=f"discarded warm-up steps (default {BURN_IN})")
    g.add_argument("--out", required=True, help="output directory (panel.csv, system.json)")
    g.set_defaults(func=cmd_generate)

    f = sub.add_parser("fit", help="fit one learner on a panel")
    f.add_argument("--method", choices=LEARNERS, required=True, help="learner")
    f.add_argument("--data", required=True, help="panel CSV (header row of series names)")
    f.add_argument("--train-rows", help="training rows A..B, 1-based inclusive (default: all)")
    f.add_argument("--lag", type=int, default=5, help="lag order p (default 5)")
    hyper = f.add_mutually_exclusive_group(required=True)
    hyper.add_argument("--hyper", help="JSON file with lambda (and kappa, rank for clvar)")
    hyper.add_argument("--cv", action="store_true",
                       help="choose hyperparameters by contiguous-block cross-validation")
    f.add_argument("--cv-folds", type=int, default=3, help="number of CV folds (default 3)")
    f.add_argument("--out", required=True, help="output model JSON")
    f.set_defaults(func=cmd_fit)

    fc = sub.add_parser("forecast", help="rolling 1-step forecasts over a hold-out")
    fc.add_argument("--model", required=True, help="model JSON written by fit")
    fc.add_argument("--data", required=True, help="panel CSV")
    fc.add_argument("--holdout-rows", required=True, help="hold-out rows A..B, 1-based inclusive")
    fc.add_argument("--out", required=True, help="output forecasts CSV")
    fc.set_defaults(func=cmd_forecast)

    gr = sub.add_parser("graph", help="export the Granger-causal graph of a model")
    gr.add_argument("--model", required=True, help="model JSON")
    gr.add_argument("--tol", type=float, default=DEFAULT_ZERO_TOL,
                    help=f"block magnitude threshold (default {DEFAULT_ZERO_TOL:g})")
    gr.add_argument("--format", choices=("dot", "csv"), default="dot", help="output format")
    gr.add_argument("--out", required=True, help="output path")
    gr.set_defaults(func=cmd_graph)

    ex = sub.add_parser("experiment", help="run an experiment plan")
    ex.add_argument("--plan", required=True, help="plan JSON")
    ex.add_argument("--out", required=True, help="output directory")
    ex.add_argument("--threads", type=int, default=1, help="worker processes (default 1)")
    ex.set_defaults(func=cmd_experiment)
    return ap


def _fail(code, message):
    msg = " ".join(str(message).split())
    print(f"clvar: {_CLASS[code]}: {msg}", file=sys.stderr)
    return code


def main(argv=None) -> int:
    ap = build_parser()
    try:
        args = ap.parse_args(argv)
    except UsageError as exc:
        return _fail(EXIT_USAGE, exc)
    try:
        args.func(args)
    except UsageError as exc:
        return _fail(EXIT_USAGE, exc)
    except (NumericalFailure, GenerationError, GridSearchError) as exc:
        return _fail(EXIT_NUMERICAL, exc)
    except (ClvarError, OSError, ValueError) as exc:
        return _fail(EXIT_DATA, exc)
    return 0


if __name__ == "__main__":
    sys.exit(main())
