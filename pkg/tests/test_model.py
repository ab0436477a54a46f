import json

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from clvar.data import StandardizationStats, TimeSeriesPanel
from clvar.errors import InsufficientDataError, InvalidInputError, SchemaError
from clvar.learner import ClvarFactors
from clvar.model import (ForecastResult, GrangerGraph, VarModel, deserialize_model, edge_density,
                         extract_granger_graph, forecast_one_step, load_model, model_to_dict, mse,
                         random_walk_reference, relative_mse, rolling_holdout_forecast,
                         save_model, selection_error, serialize_model)


def _loop_forecast(W, hist, p):
    """sum_b <w_{b,k}, x_{t,b}> with x_{t,b} = (y_{t-1,b}, ..., y_{t-p,b})."""
    K = W.shape[1]
    out = np.zeros(K)
    for k in range(K):
        for b in range(K):
            for l in range(1, p + 1):
                out[k] += W[b * p + l - 1, k] * hist[-l, b]
    return out


def _graph(adj, names=None):
    adj = np.asarray(adj, dtype=bool)
    return GrangerGraph(names or tuple(f"y{k + 1}" for k in range(adj.shape[0])), adj)


# ----------------------------------------------------------------- model

def test_model_shape_validation():
    with pytest.raises(InvalidInputError):
        VarModel(np.zeros((5, 2)), 2, ("a", "b"))
    with pytest.raises(InvalidInputError):
        VarModel(np.zeros((4, 2)), 2, ("a",))


def test_lag_matrices_layout():
    rng = np.random.default_rng(0)
    W = rng.standard_normal((6, 3))
    m = VarModel(W, 2, ())
    A = m.lag_matrices()
    for l in range(2):
        for k in range(3):
            for b in range(3):
                assert A[l, k, b] == W[b * 2 + l, k]


# ------------------------------------------------------------- forecasting

def test_zero_model_forecasts_zero():
    m = VarModel(np.zeros((6, 3)), 2, ())
    np.testing.assert_array_equal(forecast_one_step(m, np.ones((2, 3))), np.zeros(3))


def test_scalar_ar1_forecast():
    m = VarModel(np.array([[0.5]]), 1, ("a",))
    assert forecast_one_step(m, np.array([[2.0]]))[0] == 1.0


@pytest.mark.parametrize("seed", range(5))
def test_forecast_matches_loop(seed):
    rng = np.random.default_rng(seed)
    K, p = 4, 3
    W = rng.standard_normal((K * p, K))
    hist = rng.standard_normal((p, K))
    np.testing.assert_allclose(forecast_one_step(VarModel(W, p, ()), hist),
                               _loop_forecast(W, hist, p), rtol=1e-13)


def test_history_shape_checked():
    with pytest.raises(InvalidInputError):
        forecast_one_step(VarModel(np.zeros((2, 1)), 2, ()), np.zeros((3, 1)))


def test_rolling_forecast_uses_true_history():
    rng = np.random.default_rng(3)
    K, p = 3, 2
    W = rng.standard_normal((K * p, K)) * 0.3
    Y = rng.standard_normal((10, K))
    m = VarModel(W, p, ())
    res = rolling_holdout_forecast(m, Y, range(7, 10))
    for i, t in enumerate(range(7, 10)):
        np.testing.assert_allclose(res.predictions[i], _loop_forecast(W, Y[t - p:t], p),
                                   rtol=1e-13)
        np.testing.assert_allclose(res.predictions[i], forecast_one_step(m, Y[t - p:t]))
    np.testing.assert_array_equal(res.actuals, Y[7:10])


def test_rolling_forecast_length_one_and_zero_model():
    Y = np.random.default_rng(1).standard_normal((6, 2))
    m = VarModel(np.zeros((2, 2)), 1, ())
    res = rolling_holdout_forecast(m, Y, (5, 6))
    assert res.predictions.shape == (1, 2)
    np.testing.assert_array_equal(res.squared_errors, Y[5:] ** 2)


def test_rolling_forecast_needs_history():
    with pytest.raises(InsufficientDataError):
        rolling_holdout_forecast(VarModel(np.zeros((3, 1)), 3, ()), np.ones((10, 1)), (2, 5))


# -------------------------------------------------------------- references

def test_random_walk_examples():
    res = random_walk_reference(np.array([1.0, 2.0, 4.0]), (1, 3))
    np.testing.assert_array_equal(res.predictions[:, 0], [1, 2])
    np.testing.assert_array_equal(res.squared_errors[:, 0], [1, 4])
    flat = random_walk_reference(np.full(5, 3.0), (2, 5))
    assert mse(flat) == 0.0


def test_random_walk_equals_identity_var1():
    Y = np.random.default_rng(2).standard_normal((12, 3))
    rw = random_walk_reference(TimeSeriesPanel.from_array(Y), (4, 12))
    var = rolling_holdout_forecast(VarModel(np.eye(3), 1, ()), Y, (4, 12))
    np.testing.assert_array_equal(rw.predictions, var.predictions)


def test_random_walk_needs_a_prior_row():
    with pytest.raises(InsufficientDataError):
        random_walk_reference(np.ones(4), (0, 2))


# ----------------------------------------------------------------- metrics

def test_mse_examples():
    a = np.random.default_rng(0).standard_normal((5, 2))
    assert mse(ForecastResult(a, a)) == 0.0
    assert mse(ForecastResult(a + 1, a)) == pytest.approx(1.0)
    r = ForecastResult(a + 0.5, a)
    assert relative_mse(r, r) == 1.0


def test_relative_mse_needs_positive_reference():
    a = np.ones((2, 2))
    with pytest.raises(InvalidInputError):
        relative_mse(ForecastResult(a, a), ForecastResult(a, a))


def test_forecast_result_rejects_non_finite():
    with pytest.raises(InvalidInputError):
        ForecastResult(np.array([[np.nan]]), np.array([[0.0]]))


def test_rescaled_to_standard_units():
    stats = StandardizationStats(np.array([1.0, -2.0]), np.array([2.0, 4.0]))
    r = ForecastResult(np.array([[3.0, 2.0]]), np.array([[1.0, -2.0]])).rescaled(stats)
    np.testing.assert_allclose(r.predictions, [[1.0, 1.0]])
    np.testing.assert_allclose(r.actuals, [[0.0, 0.0]])


# ------------------------------------------------------------------ graphs

def test_single_block_gives_single_edge():
    K, p = 3, 2
    W = np.zeros((K * p, K))
    W[1 * p, 0] = 0.4            # block (series 2 -> series 1)
    g = extract_granger_graph(VarModel(W, p, ("1", "2", "3")))
    assert g.edges() == [("2", "1")]


def test_empty_and_ar_graphs():
    assert extract_granger_graph(VarModel(np.zeros((6, 3)), 2, ())).edges() == []
    W = np.zeros((6, 3))
    for k in range(3):
        W[k * 2:(k + 1) * 2, k] = 1.0
    assert extract_granger_graph(VarModel(W, 2, ())).edges() == []


def test_tolerance_boundary():
    W = np.zeros((2, 2))
    W[1, 0] = 1e-8
    m = VarModel(W, 1, ())
    assert extract_granger_graph(m, 1e-8).edges() == []
    assert extract_granger_graph(m, 0.0).edges() == [("y2", "y1")]
    with pytest.raises(InvalidInputError):
        extract_granger_graph(m, -1.0)


@given(st.integers(0, 10_000), st.floats(0, 1), st.floats(0, 1))
@settings(max_examples=50, deadline=None)
def test_graph_monotone_in_tolerance(seed, t1, t2):
    W = np.random.default_rng(seed).standard_normal((8, 4))
    lo, hi = sorted((t1, t2))
    m = VarModel(W, 2, ())
    a = extract_granger_graph(m, lo).adjacency
    b = extract_granger_graph(m, hi).adjacency
    assert np.all(b <= a)


def test_selection_error_examples():
    truth = _graph([[0, 1, 0], [0, 0, 1], [0, 0, 0]])
    assert selection_error(truth, truth) == 0.0
    comp = _graph(~truth.adjacency)
    assert selection_error(comp, truth) == 1.0
    # finds one of the two true edges plus one spurious edge
    learned = _graph([[0, 1, 0], [0, 0, 0], [1, 0, 0]])
    assert selection_error(learned, truth) == pytest.approx((1 / 2 + 1 / 4) / 2)


def test_selection_error_degenerate_truth():
    empty = _graph(np.zeros((3, 3)))
    some = _graph([[0, 1, 0], [0, 0, 0], [0, 0, 0]])
    assert selection_error(some, empty) == pytest.approx(0.5 * 1 / 6)
    assert selection_error(empty, empty) == 0.0


@given(st.integers(0, 10_000))
@settings(max_examples=50, deadline=None)
def test_selection_error_complement_symmetry(seed):
    rng = np.random.default_rng(seed)
    a = rng.random((5, 5)) < 0.4
    b = rng.random((5, 5)) < 0.4
    lhs = selection_error(_graph(a), _graph(b))
    rhs = selection_error(_graph(~a), _graph(~b))
    assert lhs == pytest.approx(rhs)


def test_edge_density_examples():
    assert edge_density(_graph(np.zeros((4, 4)))) == 0.0
    assert edge_density(_graph(np.ones((4, 4)))) == 1.0
    adj = np.zeros((4, 4), dtype=bool)
    adj[0, 1] = adj[2, 3] = adj[3, 0] = True
    assert edge_density(_graph(adj)) == 0.25


def test_dot_and_csv_encode_same_edges():
    adj = np.random.default_rng(5).random((4, 4)) < 0.5
    g = _graph(adj)
    csv_edges = [tuple(l.split(",")) for l in g.to_csv().strip().splitlines()[1:]]
    dot_edges = [tuple(s.strip().rstrip(";").replace('"', "").split(" -> "))
                 for s in g.to_dot().splitlines() if "->" in s]
    assert csv_edges == dot_edges == g.edges()


# --------------------------------------------------------------- documents

def test_round_trip_is_bitwise(tmp_path):
    rng = np.random.default_rng(8)
    W = rng.standard_normal((6, 3)) * 1e-3
    stats = StandardizationStats(rng.standard_normal(3), rng.random(3) + 0.1)
    m = VarModel(W, 2, ("a", "b", "c"), "varl2", stats, hyperparameters={"lambda": 0.1})
    save_model(m, tmp_path / "m.json")
    back = load_model(tmp_path / "m.json")
    np.testing.assert_array_equal(back.weights, W)
    assert back.lag_order == 2 and back.series_names == ("a", "b", "c")
    assert back.learner_tag == "varl2" and back.hyperparameters == {"lambda": 0.1}
    np.testing.assert_array_equal(back.standardization.scales, stats.scales)


def test_clvar_factors_round_trip():
    rng = np.random.default_rng(1)
    K, p, r = 3, 2, 2
    D = rng.dirichlet(np.ones(K), size=r).T
    G = rng.dirichlet(np.ones(r), size=K).T
    f = ClvarFactors(rng.standard_normal((K * p, K)), D, G, 1.0, "clustered")
    m = VarModel(rng.standard_normal((K * p, K)), p, (), "clvar", factors=f)
    back = deserialize_model(serialize_model(m)).factors
    for name in ("V", "D", "G", "A", "Gamma"):
        np.testing.assert_array_equal(getattr(back, name), getattr(f, name))
    assert back.kappa == 1.0 and back.mode == "clustered"


def test_schema_errors():
    doc = model_to_dict(VarModel(np.zeros((2, 1)), 2, ()))
    missing = dict(doc)
    del missing["lag_order"]
    with pytest.raises(SchemaError):
        deserialize_model(missing)
    wrong = dict(doc, schema_version=99)
    with pytest.raises(SchemaError, match="schema_version"):
        deserialize_model(json.dumps(wrong))
