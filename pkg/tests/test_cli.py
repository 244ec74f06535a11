import json
import subprocess
import sys

import numpy as np
import pytest

from addhaz.cli import load_study_config, main
from addhaz.simulate import ConfigError, SimStudyConfig, gen_dataset, design_beta
from addhaz.survdata import write_csv


def _study_csv(path, seed, n=200, p=50, stream=3, c0=3.0):
    cfg = SimStudyConfig(n=n, p=p, rho=0.1, beta0=design_beta(p))
    ds, _, _, _ = gen_dataset(cfg, seed, c0=c0, stream=stream)
    write_csv(ds, path)
    return ds


@pytest.fixture(scope="module")
def data_csv(tmp_path_factory):
    path = tmp_path_factory.mktemp("data") / "train.csv"
    _study_csv(path, 1, n=120, p=12)
    return path


def _run(args, out):
    return main([*args, "--out", str(out)])


def _read(out, name):
    return json.loads((out / name).read_text())


def test_path_smoke(data_csv, tmp_path):
    assert _run(["path", "--data", str(data_csv), "--penalty", "lasso"], tmp_path) == 0
    doc = _read(tmp_path, "path.json")
    assert doc["kind"] == "solution_path" and len(doc["points"]) == 100
    assert doc["points"][0]["nonzero"] == []
    man = _read(tmp_path, "manifest.json")
    assert man["artifacts"][0]["path"] == "path.json"


def test_fit(data_csv, tmp_path):
    assert _run(["fit", "--data", str(data_csv), "--penalty", "scad", "--lambda", "0.05"], tmp_path) == 0
    doc = _read(tmp_path, "fit.json")
    assert doc["penalty"] == {"kind": "scad", "a": 3.7}
    assert doc["converged"]


def test_scad_shape_rejected(data_csv, tmp_path, capsys):
    assert _run(["path", "--data", str(data_csv), "--penalty", "scad", "--a", "1.5"], tmp_path) == 2
    assert "a > 2" in capsys.readouterr().err


def test_sica_staged_manifest(data_csv, tmp_path):
    args = ["path", "--data", str(data_csv), "--penalty", "sica", "--a", "1", "--a-final", "0.1",
            "--lambda-count", "20"]
    assert _run(args, tmp_path) == 0
    man = _read(tmp_path, "manifest.json")
    assert man["stages"] == [{"kind": "sica", "a": 1.0}, {"kind": "sica", "a": 0.1}]
    assert _read(tmp_path, "path.json")["stages"] == man["stages"]


def test_cv_range(data_csv, tmp_path):
    assert _run(["cv", "--data", str(data_csv), "--lambda-count", "40"], tmp_path) == 0
    doc = _read(tmp_path, "cv.json")
    assert 0 < doc["selected_lambda"] <= doc["lambdas"][0]
    assert doc["seed"] == 0


def _artifact_bytes(out):
    return {p.name: p.read_bytes() for p in sorted(out.iterdir()) if p.name != "manifest.json"}


def run_twice(args, tmp_path):
    """Run a command twice into fresh directories; returns the two artifact maps."""
    outs = []
    for i in range(2):
        out = tmp_path / f"run{i}"
        assert _run(args, out) == 0
        outs.append(_artifact_bytes(out))
    return outs


def test_cv_determinism(data_csv, tmp_path):
    a, b = run_twice(["cv", "--data", str(data_csv), "--penalty", "mcp", "--seed", "4",
                      "--lambda-count", "30"], tmp_path)
    assert a == b and a


def test_folds_exceeding_n(data_csv, tmp_path):
    assert _run(["cv", "--data", str(data_csv), "--folds", "500"], tmp_path) == 2


def test_bad_data(tmp_path):
    bad = tmp_path / "bad.csv"
    bad.write_text("1.0,1,0.5\n2.0,2,0.1\n")
    assert _run(["path", "--data", str(bad)], tmp_path / "o") == 1


def test_bundled_config_and_bad_rho(tmp_path):
    cfg, methods, fit_cfg, extra = load_study_config("study1_small")
    assert (cfg.n, cfg.p, cfg.rho, cfg.replicates) == (200, 50, 0.1, 3)
    assert [m.name for m in methods] == ["lasso", "scad", "mcp", "sica", "enet"]
    bad = tmp_path / "bad.cfg"
    bad.write_text("n = 50\np = 5\nrho = 1.5\n")
    with pytest.raises(ConfigError):
        load_study_config(bad)
    assert main(["simulate", "--config", str(bad), "--out", str(tmp_path / "o")]) == 1


def test_simulate_seed_echo(tmp_path):
    cfg = tmp_path / "tiny.cfg"
    cfg.write_text("n = 60\np = 6\nrho = 0.2\nreplicates = 1\nseed = 5\ntest_n = 60\n"
                   "methods = lasso,sica\nfolds = 4\nlambda_count = 20\n")
    assert main(["simulate", "--config", str(cfg), "--seed", "77", "--out", str(tmp_path / "o")]) == 0
    doc = _read(tmp_path / "o", "study.json")
    assert doc["master_seed"] == 77 and doc["config"]["seed"] == 77
    assert [r["method"] for r in doc["table"]] == ["lasso", "sica", "oracle"]
    assert _read(tmp_path / "o", "manifest.json")["seed"] == 77


def test_evaluate_mismatched_p(data_csv, tmp_path):
    test_csv = tmp_path / "test.csv"
    _study_csv(test_csv, 2, n=60, p=8)
    assert _run(["evaluate", "--data", str(data_csv), "--test", str(test_csv)], tmp_path / "o") == 2


def test_evaluate_null_model(data_csv, tmp_path):
    test_csv = tmp_path / "test.csv"
    ds = _study_csv(test_csv, 2, n=60, p=12, stream=4)
    assert _run(["evaluate", "--data", str(data_csv), "--test", str(test_csv),
                 "--lambda-count", "1"], tmp_path / "o") == 0
    doc = _read(tmp_path / "o", "evaluation.json")
    assert doc["null_model"] and doc["coefficients"] == []
    assert doc["groups"] == [0] * 30 + [1] * 30
    assert doc["logrank"]["group_sizes"] == [30, 30]
    assert doc["prediction_error"] == 0.0
    assert ds.n == 60


def test_evaluate_power(tmp_path):
    hits = 0
    for seed in range(20):
        train, test = tmp_path / f"tr{seed}.csv", tmp_path / f"te{seed}.csv"
        _study_csv(train, 300 + seed, stream=3)
        _study_csv(test, 300 + seed, n=200, stream=4)
        out = tmp_path / f"o{seed}"
        assert _run(["evaluate", "--data", str(train), "--test", str(test), "--seed", str(seed),
                     "--lambda-count", "30"], out) == 0
        hits += _read(out, "evaluation.json")["logrank"]["p_value"] < 0.05
    assert hits >= 18


def test_module_entry_point(data_csv, tmp_path):
    res = subprocess.run([sys.executable, "-m", "addhaz", "path", "--data", str(data_csv),
                          "--lambda-count", "5", "--out", str(tmp_path)],
                         capture_output=True, text=True, timeout=300)
    assert res.returncode == 0, res.stderr
    assert np.isfinite(_read(tmp_path, "path.json")["points"][-1]["objective"])
