import json
from importlib import resources

import jsonschema
import numpy as np
import pandas as pd
import pytest

from selinf_mle.cli import load_dataset, main, run_inference


@pytest.fixture
def csv_file(tmp_path):
    rng = np.random.default_rng(0)
    X = rng.standard_normal((150, 8))
    y = 0.5 * X[:, 0] - 0.4 * X[:, 3] + rng.standard_normal(150)
    df = pd.DataFrame(X, columns=[f"x{j}" for j in range(8)])
    df["resp"] = y
    path = tmp_path / "data.csv"
    df.to_csv(path, index=False)
    return path


def run(argv, capsys):
    code = main([str(a) for a in argv])
    out = capsys.readouterr()
    return code, out.out, out.err


def test_infer_matches_library(csv_file, capsys):
    code, out, _ = run(["infer", csv_file, "--response", "resp", "--seed", 3], capsys)
    assert code == 0
    doc = json.loads(out)
    assert doc["schema"] == "selinf-mle/1"
    data, names = load_dataset(csv_file, "resp", True)
    res, _ = run_inference(data, "lasso", "theory", 0.5, 0.10, "partial", 0.10, 3)
    assert doc["result"]["mle"] == res.mle.tolist()
    assert doc["result"]["intervals"] == res.intervals.tolist()
    assert doc["result"]["selected_names"] == [names[j] for j in res.E]
    assert doc["manifest"]["config"]["standardize"] is True


@pytest.mark.parametrize("query", ["screening", "slope", "lasso2", "ms-slope"])
def test_infer_other_queries(csv_file, capsys, query):
    code, out, _ = run(["infer", csv_file, "--response", "resp", "--query", query,
                        "--alpha", "0.2"], capsys)
    assert code == 0
    res = json.loads(out)["result"]
    assert len(res["mle"]) == len(res["selected"]) > 0


def test_infer_usage_errors(csv_file, tmp_path, capsys):
    assert run(["infer", csv_file, "--response", "nope"], capsys)[0] == 64
    assert run(["infer", csv_file, "--response", "resp", "--lambda", "abc"], capsys)[0] == 64
    bad = tmp_path / "bad.csv"
    bad.write_text("a,b\n1,x\n2,3\n")
    assert run(["infer", bad, "--response", "a"], capsys)[0] == 64
    nan = tmp_path / "nan.csv"
    nan.write_text("a,b\n1,nan\n2,3\n")
    assert run(["infer", nan, "--response", "a"], capsys)[0] == 64
    wide = tmp_path / "wide.csv"
    pd.DataFrame(np.random.default_rng(0).standard_normal((5, 8)),
                 columns=list("abcdefgh")).to_csv(wide, index=False)
    assert run(["infer", wide, "--response", "a", "--target", "full", "--sigma2", "1"],
               capsys)[0] == 64
    assert run(["infer", wide, "--response", "a"], capsys)[0] == 64


def test_empty_selection_exit_code(csv_file, capsys):
    code, _, err = run(["infer", csv_file, "--response", "resp", "--lambda", "1e8"], capsys)
    assert code == 2 and "empty selection" in err


def test_infer_output_file_is_deterministic(csv_file, tmp_path, capsys):
    outs = []
    for k in range(2):
        path = tmp_path / f"r{k}.json"
        assert run(["infer", csv_file, "--response", "resp", "-o", path], capsys)[0] == 0
        outs.append(path.read_bytes().replace(str(path).encode(), b""))
    assert outs[0] == outs[1]


def test_simulate_writes_valid_summary(tmp_path, capsys):
    out_dir = tmp_path / "sim"
    code, _, _ = run(["simulate", "--reps", 3, "--n", 80, "--p", 12, "--snr", 1.0,
                      "--out", out_dir], capsys)
    assert code == 0
    doc = json.loads((out_dir / "summary.json").read_text())
    schema = json.loads(resources.files("selinf_mle").joinpath(
        "schema/summary.schema.json").read_text())
    jsonschema.validate(doc, schema)
    df = pd.read_csv(out_dir / "summary.csv", comment="#")
    assert list(df.columns) == ["snr", "metric", "method", "target", "value"]


def test_simulate_config_file(tmp_path, capsys):
    cfg = tmp_path / "cfg.json"
    cfg.write_text(json.dumps({"n": 60, "p": 10, "reps": 2, "snr_grid": [1.0]}))
    assert run(["simulate", "--config", cfg, "--out", tmp_path / "o"], capsys)[0] == 0
    cfg.write_text(json.dumps({"bogus": 1}))
    assert run(["simulate", "--config", cfg, "--out", tmp_path / "o"], capsys)[0] == 64


def test_pivot_check(tmp_path, capsys):
    code, out, _ = run(["pivot-check", "--beta", 1.5, "--out", tmp_path / "e.csv"], capsys)
    assert code == 0
    assert json.loads(out)["result"]["passes_1pct"]
    df = pd.read_csv(tmp_path / "e.csv", comment="#")
    assert len(df) == 10000 and df["ecdf"].iloc[-1] == 1.0
    assert run(["pivot-check", "--beta", 1.5, "--draws", 0], capsys)[0] == 64


def test_pivot_check_rare_regime_with_rejection(capsys):
    code, out, _ = run(["pivot-check", "--beta", -3, "--sampler", "rejection",
                        "--draws", 2000], capsys)
    assert code == 0 and json.loads(out)["result"]["draws"] == 2000


def test_version(capsys):
    assert run(["--version"], capsys)[0] == 0
