import json
import math

import numpy as np
import pytest
import yaml

from grtc.cli import main
from grtc.formats import read_graph, read_tns, write_factors
from grtc.tensor_core import CPFactors, SparseObservations

SMALL = {
    "synthetic": {"shape": [12, 8, 6], "rank": 2, "communities": 3, "seed": 1},
    "sampling": {"rate": 0.4, "seed": 2},
    "model": {"rank": 2, "lambda": 0.01, "lambda_L": 1.0},
    "stop": {"delta_tol": 1e-4, "max_outer_iters": 50},
}


@pytest.fixture
def config(tmp_path):
    def make(data=SMALL, name="cfg.yaml"):
        p = tmp_path / name
        p.write_text(yaml.safe_dump(data))
        return str(p)
    return make


@pytest.fixture
def generated(tmp_path, config):
    out = tmp_path / "data"
    assert main(["gen", "--config", config(), "--out", str(out)]) == 0
    return out


def test_gen_is_deterministic(tmp_path, config, generated):
    again = tmp_path / "again"
    assert main(["gen", "--config", config(), "--out", str(again)]) == 0
    for name in ("truth.tns", "train.tns", "test.tns", "graph_mode1.txt"):
        assert (generated / name).read_bytes() == (again / name).read_bytes()
    train, test = read_tns(generated / "train.tns"), read_tns(generated / "test.tns")
    assert train.shape == (12, 8, 6)
    assert train.nnz + test.nnz == math.ceil(0.4 * 12 * 8 * 6)


def test_gen_full_sampling(tmp_path, config):
    data = {**SMALL, "sampling": {"rate": 1.0, "train_fraction": 1.0}}
    out = tmp_path / "full"
    assert main(["gen", "--config", config(data, "full.yaml"), "--out", str(out)]) == 0
    assert read_tns(out / "train.tns").nnz == 12 * 8 * 6


def test_overwrite_requires_force(config, generated, capsys):
    assert main(["gen", "--config", config(), "--out", str(generated)]) == 2
    assert "--force" in capsys.readouterr().err
    assert main(["gen", "--config", config(), "--out", str(generated), "--force"]) == 0


def test_complete_and_evaluate(tmp_path, config, generated, capsys):
    out = tmp_path / "fit"
    rc = main(["complete", "--config", config(), "--train", str(generated / "train.tns"),
               "--test", str(generated / "test.tns"), "--graph", f"1={generated / 'graph_mode1.txt'}",
               "--out", str(out)])
    assert rc == 0
    summary = json.loads(capsys.readouterr().out)
    assert summary["termination"] == "delta_tol"
    report = json.loads((out / "report.json").read_text())
    assert report["model"] == {"variant": "greg", "lambda": 0.01, "lambda_L": 1.0, "rank": 2}
    lines = (out / "trace.csv").read_text().splitlines()
    assert len(lines) == summary["outer_iters"] + 2
    assert main(["evaluate", "--factors", str(out / "factors.npz"), "--truth", str(generated / "test.tns"),
                 "--split", "test"]) == 0
    metrics = json.loads(capsys.readouterr().out)
    assert metrics["re"] == pytest.approx(summary["final_test_re"], rel=1e-9)


def test_complete_greg_without_graph_fails(tmp_path, config, generated):
    rc = main(["complete", "--config", config(), "--train", str(generated / "train.tns"),
               "--out", str(tmp_path / "fit")])
    assert rc == 2


def test_evaluate_exact_factors(tmp_path, capsys):
    F = CPFactors.random((4, 3, 2), 2, 0)
    truth = tmp_path / "truth.tns"
    from grtc.formats import write_tns

    write_tns(truth, SparseObservations.from_dense(F.full()))
    write_factors(tmp_path / "f.npz", F)
    assert main(["evaluate", "--factors", str(tmp_path / "f.npz"), "--truth", str(truth)]) == 0
    metrics = json.loads(capsys.readouterr().out)
    assert metrics["re"] == pytest.approx(0, abs=1e-14) and metrics["entries"] == 24


def test_cv_single_candidate(config, generated, capsys):
    rc = main(["cv", "--config", config(), "--train", str(generated / "train.tns"),
               "--graph", f"1={generated / 'graph_mode1.txt'}", "--candidate", "0.05,7", "--folds", "2"])
    assert rc == 0
    best = json.loads(capsys.readouterr().out)
    assert (best["lambda"], best["lambda_L"]) == (0.05, 7.0)


def test_build_graph_chain_and_empty(tmp_path, capsys):
    out = tmp_path / "chain.txt"
    assert main(["build-graph", "--method", "chain", "--nodes", "3", "--out", str(out)]) == 0
    assert json.loads(capsys.readouterr().out)["edges"] == 2
    assert read_graph(out, 3).nnz == 4
    X = tmp_path / "x.txt"
    np.savetxt(X, [[0.0, 0.0], [1.0, 0.0], [0.0, 3.0]])
    rc = main(["build-graph", str(X), "--method", "eps", "--eps", "1", "--sigma", "1", "--rank", "0",
               "--out", str(tmp_path / "eps.txt")])
    assert rc == 0
    captured = capsys.readouterr()
    assert "no edges" in captured.err and json.loads(captured.out)["edges"] == 0


@pytest.mark.parametrize("content, code", [("1 1 x 2.0\n", 3), ("", 3)])
def test_data_errors(tmp_path, content, code):
    p = tmp_path / "bad.tns"
    p.write_text(content)
    assert main(["complete", "--train", str(p), "--variant", "unreg", "--out", str(tmp_path / "o")]) == code
    assert main(["complete", "--train", str(tmp_path / "none.tns"), "--out", str(tmp_path / "o")]) == 3


def test_config_errors(tmp_path, config, generated):
    assert main(["gen", "--config", config({"synthetic": {"bogus": 1}}, "bad.yaml"), "--out",
                 str(tmp_path / "x")]) == 2
    rc = main(["complete", "--train", str(generated / "train.tns"), "--variant", "unreg", "--lambda", "0.5",
               "--out", str(tmp_path / "y")])
    assert rc == 2


def test_bench_tiny(tmp_path, config, capsys):
    data = {"bench": {"shape": [10, 8, 6], "rank": 2, "nnz": 50, "lap_edges": 10, "repeats": 1}}
    out = tmp_path / "bench.csv"
    assert main(["bench", "--config", config(data, "bench.yaml"), "--out", str(out)]) == 0
    lines = out.read_text().splitlines()
    assert lines[0] == "case,backend,nnz_omega,nnz_lap,rank,median_s,min_s,repeats"
    assert len(lines) == 1 + 3 * 2
    ratios = [json.loads(line) for line in capsys.readouterr().err.splitlines()]
    assert {r["backend"] for r in ratios} == {"numba", "numpy"}
    assert all(r["omega"] > 0 and r["lap"] > 0 for r in ratios)


def test_experiment_tiny(tmp_path, config, capsys):
    data = {
        **SMALL,
        "experiment": {"n_test": 1, "n_init": 1, "params": {"greg": [0.01, 1.0], "nuclreg": [0.01, 0.0]}},
        "stop": {"delta_tol": 1e-3, "max_outer_iters": 10},
    }
    out = tmp_path / "exp"
    assert main(["experiment", "--config", config(data, "exp.yaml"), "--out", str(out)]) == 0
    assert "GReg" in capsys.readouterr().out
    summary = json.loads((out / "summary.json").read_text())
    assert summary
    assert any((out / "traces").iterdir())
