"""Experiment protocol: resampling, cross-validated grid search, hold-out evaluation.

A plan (JSON) names a dataset, training sizes, hold-out length, number of
resamples, methods and hyperparameter grids.  Every resample standardises
with its own training statistics, picks hyperparameters per method by
contiguous-block cross-validation on the training window, refits on the whole
window and slides the fixed model over the hold-out.
"""

from __future__ import annotations

import csv
import io
import json
import logging
import math
import os
import time
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass, field, asdict
from typing import Optional

import numpy as np

from .baselines import GramCache, fit_ar, fit_varl1, fit_varl2, fit_varlg, PenaltyConfig
from .data import (TimeSeriesPanel, apply_recipe, atomic_write_text, lag_design_for_rows,
                   load_csv, standardize)
from .errors import ClvarError, InvalidInputError, NumericalFailure, SchemaError
from .learner import ClvarHyperparams, fit_clvar
from .model import (DEFAULT_ZERO_TOL, ForecastResult, VarModel, edge_density,
                    extract_granger_graph, mse, random_walk_reference, relative_mse,
                    rolling_holdout_forecast, selection_error)
from .synth import generate_system, make_design, oracle_forecaster, simulate

log = logging.getLogger(__name__)

LAMBDA_GRID = tuple(float(x) for x in np.logspace(-4, 3, 15))
KAPPA_GRID = (0.5, 1.0, 2.0)
LEARNERS = ("ar", "varl2", "varl1", "varlg", "clvar-shared", "clvar")
DEFAULT_METHODS = ("ar", "varl2", "varl1", "varlg", "clvar")
DEFAULT_SYNTHETIC_SIZES = (50, 100, 200, 500)
LAG_ORDER = 5


class GridSearchError(ClvarError):
    def __init__(self, method, failures):
        lines = "; ".join(f"{p}: {e}" for p, e in failures)
        super().__init__(f"every grid point failed for {method}: {lines}")
        self.failures = failures


class LeakageError(ClvarError, AssertionError):
    pass


# ---------------------------------------------------------------------------
# grids
# ---------------------------------------------------------------------------

def rank_grid(K, fixed_rank=None) -> tuple:
    """``{1, round(0.1K), round(0.2K), K}`` clamped to ``>= 1``, deduplicated, sorted."""
    if fixed_rank is not None:
        return (int(fixed_rank),)
    vals = {1, max(1, int(round(0.1 * K))), max(1, int(round(0.2 * K))), int(K)}
    return tuple(sorted(vals))


@dataclass(frozen=True)
class HyperGrid:
    lambdas: tuple = LAMBDA_GRID
    kappas: tuple = KAPPA_GRID
    ranks: Optional[tuple] = None      # None -> rank_grid(K)
    fixed_rank: Optional[int] = None

    def __post_init__(self):
        lam = tuple(float(x) for x in self.lambdas)
        if not lam or not self.kappas:
            raise InvalidInputError("grids must be non-empty")
        if any(b <= a for a, b in zip(lam, lam[1:])):
            raise InvalidInputError("lambda grid must be strictly increasing")
        object.__setattr__(self, "lambdas", lam)
        object.__setattr__(self, "kappas", tuple(float(x) for x in self.kappas))
        if self.ranks is not None:
            object.__setattr__(self, "ranks", tuple(sorted({int(r) for r in self.ranks})))

    def ranks_for(self, K) -> tuple:
        if self.fixed_rank is not None:
            return (int(self.fixed_rank),)
        if self.ranks is not None:
            return tuple(r for r in self.ranks if 1 <= r <= K) or (1,)
        return rank_grid(K)

    def points(self, method, K) -> list:
        if method in ("ar", "varl2", "varl1", "varlg"):
            return [{"lambda": l} for l in self.lambdas]
        if method == "clvar-shared":
            return [{"lambda": l, "kappa": k} for l in self.lambdas for k in self.kappas]
        if method == "clvar":
            return [{"lambda": l, "kappa": k, "rank": r}
                    for l in self.lambdas for k in self.kappas for r in self.ranks_for(K)]
        raise InvalidInputError(f"unknown method {method!r}")

    def to_dict(self) -> dict:
        return {"lambdas": list(self.lambdas), "kappas": list(self.kappas),
                "ranks": None if self.ranks is None else list(self.ranks),
                "fixed_rank": self.fixed_rank}


# ---------------------------------------------------------------------------
# fitting any learner
# ---------------------------------------------------------------------------

@dataclass
class FitOutcome:
    model: VarModel
    iterations: int = 0
    seconds: float = 0.0


def fit_method(method, design, params, names=None, gram=None, start=None) -> FitOutcome:
    t0 = time.perf_counter()
    lam = float(params["lambda"])
    iterations = 0
    if method == "ar":
        model = fit_ar(design, lam, names, gram=gram)
    elif method == "varl2":
        model = fit_varl2(design, lam, names, gram=gram)
    elif method in ("varl1", "varlg"):
        fn = fit_varl1 if method == "varl1" else fit_varlg
        model = fn(design, PenaltyConfig(lam), names, gram=gram, start=start, strict=False)
    elif method in ("clvar", "clvar-shared"):
        mode = "clustered" if method == "clvar" else "shared"
        hp = ClvarHyperparams(lam, float(params["kappa"]), int(params.get("rank", 1)))
        model, _, trace = fit_clvar(design, hp, mode, names, gram=gram)
        iterations = trace.iterations
    else:
        raise InvalidInputError(f"unknown method {method!r}")
    return FitOutcome(model, iterations, time.perf_counter() - t0)


# ---------------------------------------------------------------------------
# cross-validation
# ---------------------------------------------------------------------------

def make_cv_folds(training_rows, k_folds: int = 3, p: int = LAG_ORDER) -> list:
    """Contiguous-block folds over the training window.

    Returns ``(fit_rows, validation_rows)`` index arrays; blocks are nearly equal
    with the remainder going to the earliest blocks.
    """
    rows = np.arange(training_rows) if isinstance(training_rows, (int, np.integer)) else \
        np.asarray(list(training_rows), dtype=int)
    n = rows.size
    if n < k_folds * (p + 1):
        raise InvalidInputError(f"need at least {k_folds * (p + 1)} training rows, got {n}")
    sizes = [n // k_folds + (1 if i < n % k_folds else 0) for i in range(k_folds)]
    bounds = np.cumsum([0] + sizes)
    folds = []
    for i in range(k_folds):
        val = rows[bounds[i]:bounds[i + 1]]
        fit = np.concatenate([rows[:bounds[i]], rows[bounds[i + 1]:]])
        folds.append((fit, val))
    return folds


def _contained_targets(rows, p):
    """Rows whose ``p`` predecessors all lie in ``rows``."""
    s = set(int(r) for r in rows)
    return np.array([r for r in rows if all((r - l) in s for l in range(1, p + 1))], dtype=int)


@dataclass
class FoldData:
    fit_design: object
    gram: GramCache
    val_design: object


def prepare_folds(values, p, k_folds=3) -> list:
    out = []
    for fit_rows, val_rows in make_cv_folds(values.shape[0], k_folds, p):
        targets = _contained_targets(fit_rows, p)
        fd = lag_design_for_rows(values, p, targets)
        if fd.n_rows == 0:
            raise InvalidInputError("a CV fold has no complete lag windows")
        _assert_disjoint(fd, val_rows, "validation rows entered a CV fit design")
        vt = val_rows[val_rows >= p]
        vd = lag_design_for_rows(values, p, vt)
        out.append(FoldData(fd, GramCache(fd), vd))
    return out


def _assert_disjoint(design, forbidden, message):
    forbidden = np.asarray(forbidden, dtype=int)
    used = np.union1d(design.target_rows, design.input_rows())
    if np.intersect1d(used, forbidden).size:
        raise LeakageError(message)


def _point_key(params):
    return (-params["lambda"], params.get("rank", 0), params.get("kappa", 0.0))


@dataclass
class GridSearchResult:
    best: dict
    table: list            # [{"params": ..., "cv_mse": ...}, ...] in grid order
    failures: list


def grid_search(method, values, grid: HyperGrid, p: int = LAG_ORDER, k_folds: int = 3,
                names=None, folds=None) -> GridSearchResult:
    """Pick the grid point with the lowest mean validation MSE.

    ``values`` are the (standardised) training rows.  Ties go to the larger
    lambda, then the smaller rank, then the smaller kappa.
    """
    values = np.asarray(values, dtype=float)
    K = values.shape[1]
    folds = folds if folds is not None else prepare_folds(values, p, k_folds)
    points = grid.points(method, K)
    scores = {}
    failures = []
    if method in ("varl1", "varlg"):
        # convex: walk the lambda path downwards with warm starts
        order = sorted(range(len(points)), key=lambda i: -points[i]["lambda"])
        fold_mse = {i: [] for i in order}
        for fd in folds:
            start = None
            for i in order:
                try:
                    out = fit_method(method, fd.fit_design, points[i], names, fd.gram, start)
                except NumericalFailure as exc:
                    failures.append((points[i], str(exc)))
                    fold_mse[i] = None
                    continue
                start = np.array(out.model.weights)
                if fold_mse[i] is not None:
                    fold_mse[i].append(_val_mse(out.model, fd))
        for i in order:
            if fold_mse[i] is not None:
                scores[i] = float(np.mean(fold_mse[i]))
    else:
        for i, pt in enumerate(points):
            try:
                errs = []
                for fd in folds:
                    out = fit_method(method, fd.fit_design, pt, names, fd.gram)
                    errs.append(_val_mse(out.model, fd))
                scores[i] = float(np.mean(errs))
            except NumericalFailure as exc:
                failures.append((pt, str(exc)))
    if not scores:
        raise GridSearchError(method, failures)
    best_i = min(scores, key=lambda i: (scores[i], _point_key(points[i])))
    table = [{"params": points[i], "cv_mse": scores.get(i, math.nan)} for i in range(len(points))]
    return GridSearchResult(dict(points[best_i]), table, failures)


def _val_mse(model, fd):
    vd = fd.val_design
    pred = vd.inputs @ model.weights
    return float(np.mean((pred - vd.outputs) ** 2))


# ---------------------------------------------------------------------------
# plans and reports
# ---------------------------------------------------------------------------

@dataclass
class ExperimentPlan:
    dataset: dict
    training_sizes: tuple
    holdout_length: int = 500
    resamples: int = 20
    methods: tuple = DEFAULT_METHODS
    base_seed: int = 0
    grids: HyperGrid = field(default_factory=HyperGrid)
    transform_recipe: Optional[dict] = None
    lag_order: int = LAG_ORDER
    cv_folds: int = 3
    zero_tol: float = DEFAULT_ZERO_TOL

    def __post_init__(self):
        if self.resamples < 1:
            raise InvalidInputError("resamples must be >= 1")
        if not self.training_sizes:
            raise InvalidInputError("training_sizes must be non-empty")
        self.training_sizes = tuple(int(t) for t in self.training_sizes)
        self.methods = tuple(self.methods)
        for m in self.methods:
            if m not in LEARNERS:
                raise InvalidInputError(f"unknown method {m!r}")
        kind = self.dataset.get("type")
        if kind not in ("synthetic", "csv"):
            raise SchemaError("dataset.type must be 'synthetic' or 'csv'")

    @property
    def synthetic(self) -> bool:
        return self.dataset["type"] == "synthetic"

    def to_dict(self) -> dict:
        return {"dataset": self.dataset, "transform_recipe": self.transform_recipe,
                "training_sizes": list(self.training_sizes),
                "holdout_length": self.holdout_length, "resamples": self.resamples,
                "methods": list(self.methods), "base_seed": self.base_seed,
                "grids": self.grids.to_dict(), "lag_order": self.lag_order,
                "cv_folds": self.cv_folds, "zero_tol": self.zero_tol}

    @classmethod
    def from_dict(cls, d) -> "ExperimentPlan":
        if not isinstance(d, dict):
            raise SchemaError("plan must be a JSON object")
        for key in ("dataset", "training_sizes"):
            if key not in d:
                raise SchemaError(f"plan is missing {key!r}")
        g = d.get("grids") or {}
        grid = HyperGrid(
            lambdas=tuple(g.get("lambdas", LAMBDA_GRID)),
            kappas=tuple(g.get("kappas", KAPPA_GRID)),
            ranks=None if g.get("ranks") is None else tuple(g["ranks"]),
            fixed_rank=g.get("fixed_rank"))
        return cls(dataset=dict(d["dataset"]), training_sizes=tuple(d["training_sizes"]),
                   holdout_length=int(d.get("holdout_length", 500)),
                   resamples=int(d.get("resamples", 20)),
                   methods=tuple(d.get("methods", DEFAULT_METHODS)),
                   base_seed=int(d.get("base_seed", 0)), grids=grid,
                   transform_recipe=d.get("transform_recipe"),
                   lag_order=int(d.get("lag_order", LAG_ORDER)),
                   cv_folds=int(d.get("cv_folds", 3)),
                   zero_tol=float(d.get("zero_tol", DEFAULT_ZERO_TOL)))

    @classmethod
    def from_file(cls, path) -> "ExperimentPlan":
        with open(path, encoding="utf-8") as fh:
            try:
                d = json.load(fh)
            except json.JSONDecodeError as exc:
                raise SchemaError(f"plan file is not valid JSON: {exc}")
        plan = cls.from_dict(d)
        if not plan.synthetic:
            p = plan.dataset.get("path")
            if p and not os.path.isabs(p):
                plan.dataset["path"] = os.path.join(os.path.dirname(os.path.abspath(path)), p)
        return plan


REPORT_FIELDS = ("method", "train_size", "resample", "rel_mse", "selection_error",
                 "edge_density", "outer_iterations", "lambda", "kappa", "rank", "status")


@dataclass
class ResampleOutput:
    index: int
    rows: list
    graphs: dict          # (method, T) -> K x K bool adjacency
    timings: list


def _synthetic_source(plan):
    design = make_design(int(plan.dataset["design"]))
    system = generate_system(design, plan.base_seed)
    return design, system


def _plan_grid(plan, design=None):
    grid = plan.grids
    if design is not None and design.fixed_rank is not None and grid.fixed_rank is None \
            and grid.ranks is None:
        grid = HyperGrid(grid.lambdas, grid.kappas, None, design.fixed_rank)
    return grid


def load_real_panel(plan) -> TimeSeriesPanel:
    panel = load_csv(plan.dataset["path"])
    return apply_recipe(panel, plan.transform_recipe)


def run_resample(plan: ExperimentPlan, resample_index: int, panel=None, audit=None) -> ResampleOutput:
    """Evaluate every method at every training size on one resample.

    ``audit``, when a list, receives ``(label, used_rows, holdout_rows)`` for
    every fit so callers can verify that no hold-out row was touched.
    """
    p, H = plan.lag_order, plan.holdout_length
    if plan.synthetic:
        design, system = _synthetic_source(plan)
        N = max(plan.training_sizes) + H
        raw = simulate(system, N, seed=plan.base_seed + resample_index).values
        oracle = oracle_forecaster(system)
        truth = design.truth_graph()
        names = truth.nodes
    else:
        design = None
        panel = panel if panel is not None else load_real_panel(plan)
        names = panel.series_names
        raw = panel.values[: panel.T - resample_index] if resample_index else panel.values
        N = raw.shape[0]
    grid = _plan_grid(plan, design)
    rows, graphs, timings = [], {}, []

    for T in plan.training_sizes:
        start = N - H - T
        if start < 0:
            for m in plan.methods:
                rows.append(_row(m, T, resample_index, status=f"skipped: only {N - H} training rows"))
            continue
        window = raw[start:]
        train = slice(0, T)
        hold = np.arange(T, T + H)
        std_panel, stats = standardize(TimeSeriesPanel.from_array(window, names), train)
        values = std_panel.values
        train_values = values[:T]

        if plan.synthetic:
            ref = rolling_holdout_forecast(oracle, window, hold).rescaled(stats)
            rows.append(_row("oracle", T, resample_index, rel_mse=1.0,
                             selection_error=0.0, edge_density=edge_density(truth)))
            graphs[("oracle", T)] = np.array(truth.adjacency)
        else:
            ref = random_walk_reference(values, hold)
            rows.append(_row("rw", T, resample_index, rel_mse=1.0))

        folds = prepare_folds(train_values, p, plan.cv_folds)
        if audit is not None:
            for i, fd in enumerate(folds):
                audit.append((f"cv{i}:T={T}", np.union1d(fd.fit_design.target_rows,
                                                          fd.fit_design.input_rows()), hold))
        full = lag_design_for_rows(train_values, p, np.arange(p, T))
        _assert_disjoint(full, hold, "hold-out rows entered the training design")
        if audit is not None:
            audit.append((f"fit:T={T}", np.union1d(full.target_rows, full.input_rows()), hold))
        gram = GramCache(full)

        for m in plan.methods:
            t0 = time.perf_counter()
            try:
                gs = grid_search(m, train_values, grid, p, plan.cv_folds, names, folds=folds)
                out = fit_method(m, full, gs.best, names, gram)
            except ClvarError as exc:
                rows.append(_row(m, T, resample_index, status=f"failed: {exc}"))
                continue
            seconds = time.perf_counter() - t0
            res = rolling_holdout_forecast(out.model, values, hold)
            g = extract_granger_graph(out.model, plan.zero_tol)
            graphs[(m, T)] = np.array(g.adjacency)
            rows.append(_row(
                m, T, resample_index, rel_mse=relative_mse(res, ref),
                selection_error=selection_error(g, truth) if plan.synthetic else None,
                edge_density=edge_density(g), outer_iterations=out.iterations,
                params=gs.best))
            timings.append({"method": m, "train_size": T, "resample": resample_index,
                            "fit_seconds": out.seconds, "total_seconds": seconds,
                            "outer_iterations": out.iterations})
    return ResampleOutput(resample_index, rows, graphs, timings)


def _row(method, T, resample, rel_mse=None, selection_error=None, edge_density=None,
         outer_iterations=None, params=None, status="ok"):
    params = params or {}
    return {"method": method, "train_size": int(T), "resample": int(resample),
            "rel_mse": rel_mse, "selection_error": selection_error,
            "edge_density": edge_density, "outer_iterations": outer_iterations,
            "lambda": params.get("lambda"), "kappa": params.get("kappa"),
            "rank": params.get("rank"), "status": status}


def _std(x):
    return float(np.std(x, ddof=1)) if len(x) > 1 else 0.0


def aggregate_rows(rows) -> dict:
    """Mean and standard deviation (``ddof=1``; 0 for a single resample) per (method, T)."""
    groups = {}
    for r in rows:
        if r["status"] != "ok":
            continue
        groups.setdefault((r["method"], r["train_size"]), []).append(r)
    out = {}
    for key in sorted(groups, key=lambda k: (k[0], k[1])):
        rs = sorted(groups[key], key=lambda r: r["resample"])
        entry = {"n": len(rs)}
        for metric in ("rel_mse", "selection_error", "edge_density"):
            vals = [r[metric] for r in rs if r[metric] is not None]
            if vals:
                entry[metric] = {"mean": float(np.mean(vals)), "std": _std(vals)}
        out[key] = entry
    return out


@dataclass
class ExperimentReport:
    plan: ExperimentPlan
    rows: list
    aggregates: dict
    synthesis: dict       # (method, T) -> K x K counts
    timings: list
    series_names: tuple = ()

    def metric(self, method, T, metric="rel_mse"):
        return np.array([r[metric] for r in sorted(self.rows, key=lambda r: r["resample"])
                         if r["method"] == method and r["train_size"] == T and r["status"] == "ok"
                         and r[metric] is not None], dtype=float)

    def rows_csv(self) -> str:
        buf = io.StringIO()
        w = csv.writer(buf, lineterminator="\n")
        w.writerow(REPORT_FIELDS)
        for r in self.rows:
            w.writerow([_fmt(r[f]) for f in REPORT_FIELDS])
        return buf.getvalue()

    def summary(self) -> dict:
        return {"plan": self.plan.to_dict(),
                "aggregates": [{"method": m, "train_size": T, **v}
                               for (m, T), v in self.aggregates.items()]}

    def summary_json(self) -> str:
        return json.dumps(self.summary(), indent=1, sort_keys=True)

    def timings_csv(self) -> str:
        buf = io.StringIO()
        w = csv.writer(buf, lineterminator="\n")
        fields = ("method", "train_size", "resample", "fit_seconds", "total_seconds",
                  "outer_iterations")
        w.writerow(fields)
        for t in self.timings:
            w.writerow([_fmt(t[f]) for f in fields])
        return buf.getvalue()

    def synthesis_csv(self, method, T) -> str:
        C = self.synthesis[(method, T)]
        names = self.series_names or tuple(f"y{k + 1}" for k in range(C.shape[0]))
        lines = ["source," + ",".join(names)]
        for n, row in zip(names, C):
            lines.append(n + "," + ",".join(str(int(x)) for x in row))
        return "\n".join(lines) + "\n"

    def write(self, out_dir):
        os.makedirs(out_dir, exist_ok=True)
        atomic_write_text(os.path.join(out_dir, "report.csv"), self.rows_csv())
        atomic_write_text(os.path.join(out_dir, "summary.json"), self.summary_json())
        atomic_write_text(os.path.join(out_dir, "timings.csv"), self.timings_csv())
        for (m, T) in sorted(self.synthesis):
            atomic_write_text(os.path.join(out_dir, f"synthesis_{m}_T{T}.csv"),
                              self.synthesis_csv(m, T))


def _fmt(x):
    if x is None:
        return ""
    if isinstance(x, float):
        return repr(x)
    return str(x)


def _resample_worker(args):
    plan_dict, index = args
    return run_resample(ExperimentPlan.from_dict(plan_dict), index)


def run_experiment(plan: ExperimentPlan, threads: int = 1, out_dir=None,
                   order=None, audit=None) -> ExperimentReport:
    """Run every resample and aggregate in resample-index order.

    ``order`` optionally permutes the execution order of resamples; the report
    does not depend on it.  ``audit`` (serial runs only) collects
    ``(label, used_rows, holdout_rows)`` triples as in ``run_resample``.
    """
    if audit is not None and threads > 1:
        raise InvalidInputError("audit collection needs threads == 1")
    indices = list(range(plan.resamples)) if order is None else list(order)
    if sorted(indices) != list(range(plan.resamples)):
        raise InvalidInputError("order must be a permutation of the resample indices")
    panel = None if plan.synthetic else load_real_panel(plan)
    if threads > 1:
        with ProcessPoolExecutor(max_workers=threads) as ex:
            outs = list(ex.map(_resample_worker, [(plan.to_dict(), i) for i in indices]))
    else:
        outs = [run_resample(plan, i, panel=panel, audit=audit) for i in indices]
    outs.sort(key=lambda o: o.index)
    rows = [r for o in outs for r in o.rows]
    timings = [t for o in outs for t in o.timings]
    synthesis = {}
    for o in outs:
        for key, adj in o.graphs.items():
            synthesis[key] = synthesis.get(key, 0) + adj.astype(int)
    if plan.synthetic:
        names = make_design(int(plan.dataset["design"])).truth_graph().nodes
    else:
        names = panel.series_names
    report = ExperimentReport(plan, rows, aggregate_rows(rows), synthesis, timings, names)
    if out_dir is not None:
        report.write(out_dir)
    return report
