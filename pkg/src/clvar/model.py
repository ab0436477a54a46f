"""VAR model object, one-step forecasting, Granger graphs and evaluation metrics."""

from __future__ import annotations

import json
from dataclasses import dataclass, field
from typing import Optional

import numpy as np

from .data import (StandardizationStats, TimeSeriesPanel, atomic_write_text,
                   lag_design_for_rows, lag_vector, _row_indices)
from .errors import InsufficientDataError, InvalidInputError, SchemaError

SCHEMA_VERSION = 1
DEFAULT_ZERO_TOL = 1e-8


@dataclass(frozen=True)
class VarModel:
    """A fitted VAR(p).

    ``weights`` is ``K*p x K``; column ``k`` forecasts series ``k`` and row block
    ``b`` (rows ``b*p .. b*p+p-1``) multiplies the lags of series ``b``.
    """

    weights: np.ndarray
    lag_order: int
    series_names: tuple
    learner_tag: str = ""
    standardization: Optional[StandardizationStats] = None
    factors: Optional[object] = None
    hyperparameters: dict = field(default_factory=dict)

    def __post_init__(self):
        W = np.array(self.weights, dtype=float)
        if W.ndim != 2:
            raise InvalidInputError("weights must be a matrix")
        K = W.shape[1]
        if W.shape[0] != K * self.lag_order:
            raise InvalidInputError(
                f"weights have {W.shape[0]} rows, expected K*p = {K * self.lag_order}")
        names = tuple(self.series_names) if self.series_names else tuple(
            f"y{k + 1}" for k in range(K))
        if len(names) != K:
            raise InvalidInputError("series_names length does not match K")
        W.setflags(write=False)
        object.__setattr__(self, "weights", W)
        object.__setattr__(self, "series_names", names)

    @property
    def K(self) -> int:
        return self.weights.shape[1]

    def block(self, b, k) -> np.ndarray:
        p = self.lag_order
        return self.weights[b * p:(b + 1) * p, k]

    def lag_matrices(self) -> np.ndarray:
        """Coefficient matrices ``A_l`` (shape ``p x K x K``) with ``y_t = sum_l A_l y_{t-l}``."""
        K, p = self.K, self.lag_order
        return np.transpose(self.weights.reshape(K, p, K), (1, 2, 0))


@dataclass(frozen=True)
class GrangerGraph:
    """Directed G-causal graph; ``adjacency[l, k]`` means series ``l`` G-causes ``k``."""

    nodes: tuple
    adjacency: np.ndarray

    def __post_init__(self):
        A = np.array(self.adjacency, dtype=bool)
        np.fill_diagonal(A, False)
        A.setflags(write=False)
        object.__setattr__(self, "adjacency", A)
        object.__setattr__(self, "nodes", tuple(self.nodes))

    @property
    def K(self) -> int:
        return len(self.nodes)

    def edges(self):
        return [(self.nodes[l], self.nodes[k]) for l, k in zip(*np.nonzero(self.adjacency))]

    def to_dot(self) -> str:
        lines = ["digraph G {"]
        for n in self.nodes:
            lines.append(f'  "{n}";')
        for a, b in self.edges():
            lines.append(f'  "{a}" -> "{b}";')
        lines.append("}")
        return "\n".join(lines) + "\n"

    def to_csv(self) -> str:
        lines = ["source,target"]
        lines += [f"{a},{b}" for a, b in self.edges()]
        return "\n".join(lines) + "\n"


@dataclass(frozen=True)
class ForecastResult:
    predictions: np.ndarray
    actuals: np.ndarray
    rows: np.ndarray = field(default=None, repr=False)

    def __post_init__(self):
        P = np.atleast_2d(np.asarray(self.predictions, dtype=float))
        A = np.atleast_2d(np.asarray(self.actuals, dtype=float))
        if P.shape != A.shape:
            raise InvalidInputError("predictions and actuals differ in shape")
        if not np.all(np.isfinite(P)):
            raise InvalidInputError("non-finite predictions")
        object.__setattr__(self, "predictions", P)
        object.__setattr__(self, "actuals", A)

    @property
    def squared_errors(self) -> np.ndarray:
        return (self.predictions - self.actuals) ** 2

    def rescaled(self, stats: StandardizationStats) -> "ForecastResult":
        """Same forecasts expressed in the standardised units of ``stats``."""
        return ForecastResult(stats.apply(self.predictions), stats.apply(self.actuals), self.rows)


# ---------------------------------------------------------------------------
# forecasting
# ---------------------------------------------------------------------------

def forecast_one_step(model: VarModel, recent_history) -> np.ndarray:
    H = np.asarray(recent_history, dtype=float)
    if H.shape != (model.lag_order, model.K):
        raise InvalidInputError(
            f"history must be {model.lag_order} x {model.K}, got {H.shape}")
    return lag_vector(H) @ model.weights


def _values(data):
    if isinstance(data, TimeSeriesPanel):
        return data.values
    v = np.asarray(data, dtype=float)
    return v[:, None] if v.ndim == 1 else v


def rolling_holdout_forecast(model: VarModel, panel, holdout_rows) -> ForecastResult:
    """1-step forecasts for every hold-out row from the true preceding observations.

    The model stays fixed while sliding over the hold-out.
    """
    Y = _values(panel)
    if Y.shape[1] != model.K:
        raise InvalidInputError("panel and model disagree on K")
    rows = _row_indices(holdout_rows, Y.shape[0])
    if rows.size == 0:
        raise InvalidInputError("empty hold-out")
    if rows[0] < model.lag_order:
        raise InsufficientDataError(
            f"hold-out starts at row {rows[0]} but the model needs {model.lag_order} lags")
    design = lag_design_for_rows(Y, model.lag_order, rows)
    return ForecastResult(design.inputs @ model.weights, design.outputs, rows)


def random_walk_reference(panel, holdout_rows) -> ForecastResult:
    Y = _values(panel)
    rows = _row_indices(holdout_rows, Y.shape[0])
    if rows.size == 0 or rows[0] < 1:
        raise InsufficientDataError("random walk needs one observation before the hold-out")
    return ForecastResult(Y[rows - 1], Y[rows], rows)


# ---------------------------------------------------------------------------
# graphs and metrics
# ---------------------------------------------------------------------------

def block_magnitudes(weights, lag_order) -> np.ndarray:
    """``K x K`` matrix of ``max |w_{b,k}|`` over the lags of each block."""
    W = np.asarray(weights, dtype=float)
    K = W.shape[1]
    return np.abs(W).reshape(K, lag_order, K).max(axis=1)


def extract_granger_graph(model: VarModel, zero_tol: float = DEFAULT_ZERO_TOL) -> GrangerGraph:
    if zero_tol < 0:
        raise InvalidInputError("zero_tol must be non-negative")
    return GrangerGraph(model.series_names, block_magnitudes(model.weights, model.lag_order) > zero_tol)


def mse(result: ForecastResult) -> float:
    return float(np.mean(result.squared_errors))


def relative_mse(result: ForecastResult, reference: ForecastResult) -> float:
    if result.predictions.shape != reference.predictions.shape:
        raise InvalidInputError("result and reference have different shapes")
    ref = mse(reference)
    if not ref > 0:
        raise InvalidInputError("reference MSE must be positive")
    return mse(result) / ref


def _offdiag(K):
    return ~np.eye(K, dtype=bool)


def selection_error(learned: GrangerGraph, truth: GrangerGraph) -> float:
    """Mean of false-negative and false-positive rates over off-diagonal pairs.

    A rate whose denominator is empty (no true edges, or no true non-edges)
    counts as 0.
    """
    if learned.nodes != truth.nodes:
        raise InvalidInputError("graphs have different node sets")
    off = _offdiag(truth.K)
    t = truth.adjacency[off]
    l = learned.adjacency[off]
    pos, neg = t.sum(), (~t).sum()
    fnr = (t & ~l).sum() / pos if pos else 0.0
    fpr = (~t & l).sum() / neg if neg else 0.0
    return float((fnr + fpr) / 2.0)


def edge_density(g: GrangerGraph) -> float:
    K = g.K
    if K < 2:
        return 0.0
    return float(g.adjacency[_offdiag(K)].mean())


# ---------------------------------------------------------------------------
# documents
# ---------------------------------------------------------------------------

def _matrix_to_list(M):
    return [[float(x) for x in row] for row in np.asarray(M, dtype=float)]


def model_to_dict(model: VarModel) -> dict:
    doc = {
        "schema_version": SCHEMA_VERSION,
        "learner_tag": model.learner_tag,
        "lag_order": int(model.lag_order),
        "series_names": list(model.series_names),
        "weights": _matrix_to_list(model.weights),
    }
    if model.standardization is not None:
        doc["standardization"] = {
            "means": [float(x) for x in model.standardization.means],
            "scales": [float(x) for x in model.standardization.scales],
        }
    if model.factors is not None:
        doc["clvar_factors"] = model.factors.to_dict()
    if model.hyperparameters:
        doc["hyperparameters"] = dict(model.hyperparameters)
    return doc


def serialize_model(model: VarModel) -> str:
    """JSON text; floats are written with ``repr`` so they round-trip exactly."""
    return json.dumps(model_to_dict(model), indent=1)


def deserialize_model(document) -> VarModel:
    doc = json.loads(document) if isinstance(document, (str, bytes)) else document
    if not isinstance(doc, dict):
        raise SchemaError("model document must be a JSON object")
    version = doc.get("schema_version")
    if version != SCHEMA_VERSION:
        raise SchemaError(f"unsupported schema_version {version!r} (expected {SCHEMA_VERSION})")
    for key in ("lag_order", "series_names", "weights"):
        if key not in doc:
            raise SchemaError(f"model document is missing {key!r}")
    stats = None
    if "standardization" in doc:
        s = doc["standardization"]
        stats = StandardizationStats(np.array(s["means"]), np.array(s["scales"]))
    factors = None
    if "clvar_factors" in doc:
        from .learner import ClvarFactors
        factors = ClvarFactors.from_dict(doc["clvar_factors"])
    W = np.array(doc["weights"], dtype=float)
    if W.ndim != 2:
        raise SchemaError("weights must be a row-major list of rows")
    return VarModel(W, int(doc["lag_order"]), tuple(doc["series_names"]),
                    doc.get("learner_tag", ""), stats, factors,
                    dict(doc.get("hyperparameters", {})))


def save_model(model: VarModel, path):
    atomic_write_text(path, serialize_model(model))


def load_model(path) -> VarModel:
    with open(path, encoding="utf-8") as fh:
        text = fh.read()
    try:
        return deserialize_model(text)
    except json.JSONDecodeError as exc:
        raise SchemaError(f"model file is not valid JSON: {exc}")
