import csv
import json
import subprocess
import sys
import time

import numpy as np
import pytest

from clvar.cli import build_parser, main, parse_row_range
from clvar.data import TimeSeriesPanel, save_csv
from clvar.model import VarModel, load_model, save_model


def run(capsys, *argv):
    code = main([str(a) for a in argv])
    out, err = capsys.readouterr()
    return code, out, err


@pytest.fixture(scope="module")
def panel_dir(tmp_path_factory):
    d = tmp_path_factory.mktemp("gen")
    assert main(["generate", "--design", "3", "--seed", "4", "--length", "300",
                 "--out", str(d)]) == 0
    return d


def hyper_file(tmp_path, **hp):
    f = tmp_path / "hp.json"
    f.write_text(json.dumps(hp))
    return f


def _one_error_line(err, cls):
    lines = err.strip().splitlines()
    assert len(lines) == 1 and lines[0].startswith(f"clvar: {cls}: ")


# ----------------------------------------------------------------- parsing

def test_row_range():
    assert parse_row_range("1..10") == (0, 10)
    assert parse_row_range("5..5") == (4, 5)


@pytest.mark.parametrize("bad", ["10", "0..4", "5..2", "a..b"])
def test_bad_row_range(bad, capsys, panel_dir, tmp_path):
    code, _, err = run(capsys, "fit", "--method", "ar", "--data", panel_dir / "panel.csv",
                       "--train-rows", bad, "--hyper", hyper_file(tmp_path, **{"lambda": 1}),
                       "--out", tmp_path / "m.json")
    assert code == 1
    _one_error_line(err, "usage-error")


def test_every_flag_is_documented(capsys):
    ap = build_parser()
    sub = next(a for a in ap._actions if a.dest == "command")
    for name, parser in sub.choices.items():
        with pytest.raises(SystemExit):
            main([name, "--help"])
        text = capsys.readouterr().out
        for action in parser._actions:
            for opt in action.option_strings:
                assert opt in text, (name, opt)
            if action.option_strings and action.dest != "help":
                assert action.help, (name, action.dest)


def test_module_entry_point(tmp_path):
    r = subprocess.run([sys.executable, "-m", "clvar", "generate", "--design", "9",
                        "--length", "10", "--out", str(tmp_path)],
                       capture_output=True, text=True)
    assert r.returncode == 1
    assert r.stderr.startswith("clvar: usage-error: ")


# ----------------------------------------------------------------- generate

def test_generate_writes_panel_and_system(panel_dir):
    with open(panel_dir / "panel.csv") as fh:
        rows = list(csv.reader(fh))
    assert len(rows[0]) == 10 and len(rows) == 301
    doc = json.loads((panel_dir / "system.json").read_text())
    assert doc["design"]["design_id"] == 3 and doc["seed"] == 4


def test_generate_design_1_is_ten_series(capsys, tmp_path):
    code, out, _ = run(capsys, "generate", "--design", "1", "--length", "50", "--out", tmp_path)
    assert code == 0 and "K=10" in out


def test_generate_is_reproducible(tmp_path, panel_dir):
    assert main(["generate", "--design", "3", "--seed", "4", "--length", "300",
                 "--out", str(tmp_path)]) == 0
    for name in ("panel.csv", "system.json"):
        assert (tmp_path / name).read_bytes() == (panel_dir / name).read_bytes()


def test_generate_invalid_design(capsys, tmp_path):
    code, _, err = run(capsys, "generate", "--design", "0", "--length", "50", "--out", tmp_path)
    assert code == 1
    _one_error_line(err, "usage-error")


def test_generate_short_burn_in_is_data_error(capsys, tmp_path):
    code, _, err = run(capsys, "generate", "--design", "1", "--length", "50", "--burn-in", "10",
                       "--out", tmp_path)
    assert code == 2
    _one_error_line(err, "data-error")


# ----------------------------------------------------------------- fit

def test_fit_defaults_and_document(capsys, panel_dir, tmp_path):
    code, out, _ = run(capsys, "fit", "--method", "varl2", "--data", panel_dir / "panel.csv",
                       "--train-rows", "1..200", "--hyper", hyper_file(tmp_path, **{"lambda": 2}),
                       "--out", tmp_path / "m.json")
    assert code == 0 and "1..200" in out
    m = load_model(tmp_path / "m.json")
    assert m.lag_order == 5 and m.learner_tag == "varl2"
    assert m.hyperparameters["train_rows"] == [1, 200]
    assert m.hyperparameters["selected_by_cv"] is False
    assert m.standardization is not None


def test_fit_is_byte_reproducible(capsys, panel_dir, tmp_path):
    hp = hyper_file(tmp_path, **{"lambda": 1.0, "kappa": 1.0, "rank": 2})
    for name in ("a.json", "b.json"):
        assert run(capsys, "fit", "--method", "clvar", "--data", panel_dir / "panel.csv",
                   "--train-rows", "1..150", "--hyper", hp, "--out", tmp_path / name)[0] == 0
    assert (tmp_path / "a.json").read_bytes() == (tmp_path / "b.json").read_bytes()


def test_fit_cv_records_clvar_choice(capsys, panel_dir, tmp_path):
    code, _, _ = run(capsys, "fit", "--method", "clvar", "--data", panel_dir / "panel.csv",
                     "--train-rows", "1..100", "--cv", "--out", tmp_path / "m.json")
    assert code == 0
    hp = load_model(tmp_path / "m.json").hyperparameters
    assert {"lambda", "kappa", "rank"} <= set(hp) and hp["selected_by_cv"] is True


def test_fit_unknown_method(capsys, panel_dir, tmp_path):
    code, _, err = run(capsys, "fit", "--method", "lstm", "--data", panel_dir / "panel.csv",
                       "--cv", "--out", tmp_path / "m.json")
    assert code == 1
    _one_error_line(err, "usage-error")


def test_fit_needs_hyper_or_cv(capsys, panel_dir, tmp_path):
    code, _, _ = run(capsys, "fit", "--method", "ar", "--data", panel_dir / "panel.csv",
                     "--out", tmp_path / "m.json")
    assert code == 1


def test_fit_missing_file_and_bad_hyper(capsys, panel_dir, tmp_path):
    code, _, err = run(capsys, "fit", "--method", "ar", "--data", tmp_path / "nope.csv",
                       "--cv", "--out", tmp_path / "m.json")
    assert code == 2
    _one_error_line(err, "data-error")
    bad = tmp_path / "bad.json"
    bad.write_text("[1, 2]")
    code, _, err = run(capsys, "fit", "--method", "ar", "--data", panel_dir / "panel.csv",
                       "--hyper", bad, "--out", tmp_path / "m.json")
    assert code == 2
    _one_error_line(err, "data-error")


def test_fit_train_rows_past_end(capsys, panel_dir, tmp_path):
    code, _, _ = run(capsys, "fit", "--method", "ar", "--data", panel_dir / "panel.csv",
                     "--train-rows", "1..301", "--hyper", hyper_file(tmp_path, **{"lambda": 1}),
                     "--out", tmp_path / "m.json")
    assert code == 2


def test_fit_numerical_failure_exit_code(capsys, tmp_path):
    vals = np.random.default_rng(0).standard_normal((60, 2))
    vals[30, 0] = 1e200
    save_csv(TimeSeriesPanel(vals, ("a", "b")), tmp_path / "p.csv")
    code, _, err = run(capsys, "fit", "--method", "clvar", "--data", tmp_path / "p.csv",
                       "--lag", "1", "--hyper", hyper_file(tmp_path, **{"lambda": 1}),
                       "--out", tmp_path / "m.json")
    assert code == 3
    _one_error_line(err, "numerical-error")


# ----------------------------------------------------------------- forecast

@pytest.fixture
def fitted(capsys, panel_dir, tmp_path):
    m = tmp_path / "m.json"
    assert run(capsys, "fit", "--method", "ar", "--data", panel_dir / "panel.csv",
               "--train-rows", "1..200", "--hyper", hyper_file(tmp_path, **{"lambda": 1}),
               "--out", m)[0] == 0
    return m


def test_forecast_rows_and_columns(capsys, panel_dir, fitted, tmp_path):
    code, out, _ = run(capsys, "forecast", "--model", fitted, "--data", panel_dir / "panel.csv",
                       "--holdout-rows", "201..300", "--out", tmp_path / "f.csv")
    assert code == 0 and out.strip().endswith("rows=100")
    with open(tmp_path / "f.csv") as fh:
        rows = list(csv.DictReader(fh))
    assert len(rows) == 100 and rows[0]["row"] == "201" and rows[-1]["row"] == "300"
    assert len(rows[0]) == 1 + 2 * 10
    mse = float(out.split()[0].split("=")[1])
    errs = np.array([[float(r[f"error_y{k + 1}"]) for k in range(10)] for r in rows])
    assert mse == pytest.approx(np.mean(errs ** 2), rel=1e-12)


def test_forecast_before_training_end_is_data_error(capsys, panel_dir, fitted, tmp_path):
    code, _, err = run(capsys, "forecast", "--model", fitted, "--data", panel_dir / "panel.csv",
                       "--holdout-rows", "150..300", "--out", tmp_path / "f.csv")
    assert code == 2
    _one_error_line(err, "data-error")


def test_zero_model_predicts_zero(capsys, panel_dir, tmp_path):
    save_model(VarModel(np.zeros((50, 10)), 5, tuple(f"y{k + 1}" for k in range(10))),
               tmp_path / "zero.json")
    assert run(capsys, "forecast", "--model", tmp_path / "zero.json", "--data",
               panel_dir / "panel.csv", "--holdout-rows", "6..40", "--out", tmp_path / "f.csv")[0] == 0
    with open(tmp_path / "f.csv") as fh:
        rows = list(csv.DictReader(fh))
    assert len(rows) == 35
    assert all(float(r[f"pred_y{k + 1}"]) == 0.0 for r in rows for k in range(10))


def test_forecast_series_mismatch(capsys, panel_dir, tmp_path):
    save_model(VarModel(np.zeros((5, 1)), 5, ("a",)), tmp_path / "one.json")
    code, _, _ = run(capsys, "forecast", "--model", tmp_path / "one.json", "--data",
                     panel_dir / "panel.csv", "--holdout-rows", "6..40", "--out", tmp_path / "f.csv")
    assert code == 2


# ----------------------------------------------------------------- graph

def test_ar_graph_is_empty(capsys, fitted, tmp_path):
    code, out, _ = run(capsys, "graph", "--model", fitted, "--format", "csv",
                       "--out", tmp_path / "g.csv")
    assert code == 0 and out.startswith("edges=0 ")
    assert (tmp_path / "g.csv").read_text().strip().splitlines()[1:] == []


def test_graph_formats_agree_and_tolerance_is_monotone(capsys, panel_dir, tmp_path):
    assert run(capsys, "fit", "--method", "varl1", "--data", panel_dir / "panel.csv",
               "--train-rows", "1..200", "--hyper", hyper_file(tmp_path, **{"lambda": 20}),
               "--out", tmp_path / "m.json")[0] == 0
    run(capsys, "graph", "--model", tmp_path / "m.json", "--format", "csv",
        "--out", tmp_path / "g.csv")
    run(capsys, "graph", "--model", tmp_path / "m.json", "--format", "dot",
        "--out", tmp_path / "g.dot")
    csv_edges = [tuple(l.split(",")) for l in (tmp_path / "g.csv").read_text().splitlines()[1:]]
    dot_edges = [tuple(s.strip().rstrip(";").replace('"', "").split(" -> "))
                 for s in (tmp_path / "g.dot").read_text().splitlines() if "->" in s]
    assert csv_edges == dot_edges and csv_edges
    counts = []
    for tol in ("1e-8", "0.05", "0.5"):
        _, out, _ = run(capsys, "graph", "--model", tmp_path / "m.json", "--tol", tol,
                        "--format", "csv", "--out", tmp_path / "t.csv")
        counts.append(int(out.split()[0].split("=")[1]))
    assert counts[0] >= counts[1] >= counts[2]


def test_negative_tolerance(capsys, fitted, tmp_path):
    code, _, _ = run(capsys, "graph", "--model", fitted, "--tol", "-1", "--out", tmp_path / "g")
    assert code == 1


# ----------------------------------------------------------------- experiment

def test_smoke_experiment(capsys, tmp_path):
    plan = {"dataset": {"type": "synthetic", "design": 3}, "training_sizes": [200],
            "holdout_length": 500, "resamples": 1, "base_seed": 1}
    f = tmp_path / "plan.json"
    f.write_text(json.dumps(plan))
    t0 = time.perf_counter()
    code, out, _ = run(capsys, "experiment", "--plan", f, "--out", tmp_path / "a")
    elapsed = time.perf_counter() - t0
    assert code == 0 and "6 rows (6 ok)" in out
    assert elapsed < 60
    assert run(capsys, "experiment", "--plan", f, "--out", tmp_path / "b")[0] == 0
    for name in ("report.csv", "summary.json", "synthesis_clvar_T200.csv"):
        assert (tmp_path / "a" / name).read_bytes() == (tmp_path / "b" / name).read_bytes()


def test_missing_plan(capsys, tmp_path):
    code, _, err = run(capsys, "experiment", "--plan", tmp_path / "none.json",
                       "--out", tmp_path / "o")
    assert code == 2
    _one_error_line(err, "data-error")


def test_bad_threads(capsys, tmp_path):
    code, _, _ = run(capsys, "experiment", "--plan", tmp_path / "x.json", "--out", tmp_path,
                     "--threads", "0")
    assert code == 1
