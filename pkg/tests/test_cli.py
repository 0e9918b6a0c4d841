import json
import os

import numpy as np
import pytest

from permreg.cli import ingest_csv, main
from permreg.errors import DegenerateColumn, FileError, SchemaError
from permreg.simulate import AIR_QUALITY_COVARIATES, air_quality_fixture, fixture_to_csv

COVS = ",".join(AIR_QUALITY_COVARIATES[:3])


@pytest.fixture
def data_csv(tmp_path):
    path = tmp_path / "data.csv"
    path.write_text(fixture_to_csv(air_quality_fixture(40, seed=2)))
    return path


def _write(tmp_path, text, name="in.csv"):
    path = tmp_path / name
    path.write_text(text)
    return path


def _run(argv, capsys):
    code = main([str(a) for a in argv])
    out, err = capsys.readouterr()
    return code, out, err


def test_ingest_missing_rows_and_standardisation(tmp_path):
    text = "y,a,b\n1,2,3\n2,NA,5\n3,,\n4,1,NaN\n5,7,1\n6,3,2\n7,4,4\n"
    ds = ingest_csv(_write(tmp_path, text), "y", ["a", "b"])
    assert ds.rows_read == 7 and ds.rows_dropped == 3 and ds.Y.shape == (4,)
    for col in (ds.Y, *ds.X.T):
        assert abs(col.mean()) < 1e-12 and abs(col.std() - 1) < 1e-12
    raw = ingest_csv(_write(tmp_path, text), "y", ["a"], standardize=False)
    # only column a is requested: the row missing b alone is kept
    assert raw.rows_dropped == 2 and list(raw.Y) == [1, 4, 5, 6, 7]


def test_ingest_errors(tmp_path):
    with pytest.raises(DegenerateColumn):
        ingest_csv(_write(tmp_path, "y,a,c\n1,2,5\n2,3,5\n3,1,5\n4,2,5\n"), "y", ["a", "c"])
    with pytest.raises(SchemaError):
        ingest_csv(_write(tmp_path, "y,a\n1,2\n"), "y", ["zz"])
    with pytest.raises(SchemaError):
        ingest_csv(_write(tmp_path, "y,a\n1,x\n2,3\n3,4\n"), "y", ["a"])
    with pytest.raises(SchemaError):
        ingest_csv(_write(tmp_path, "y,a\n1,2\n"), "y", ["a"])  # too few rows
    with pytest.raises(SchemaError):
        ingest_csv(_write(tmp_path, ""), "y", ["a"])
    with pytest.raises(FileError):
        ingest_csv(tmp_path / "missing.csv", "y", ["a"])


def test_nuisance_columns(tmp_path, data_csv):
    ds = ingest_csv(data_csv, "PM2.5", ["PM10"], nuisance_cols=["TEMP", "DEWP"])
    assert ds.X.shape == (40, 1) and ds.Z.shape == (40, 2)


def test_candidates_k0(data_csv, capsys):
    code, out, _ = _run(["candidates", "--input", data_csv, "--response", "PM2.5", "--covariates", COVS, "--k", 0, "--L", 5], capsys)
    assert code == 0
    rep = json.loads(out)
    assert rep["size"] == 1 and rep["uniques"][0]["permutation"]["moved"] == []
    assert rep["uniques"][0]["multiplicity"] == 5


def test_candidates_csv_format(data_csv, capsys):
    code, out, _ = _run(
        ["candidates", "--input", data_csv, "--response", "PM2.5", "--covariates", COVS, "--k", 2, "--L", 4, "--format", "csv"],
        capsys,
    )
    assert code == 0 and out.splitlines()[0] == "index,distance,multiplicity,min_objective,moved"


def test_test_command_and_atomic_output(tmp_path, data_csv, capsys):
    out_path = tmp_path / "report.json"
    argv = ["test", "--input", data_csv, "--response", "PM2.5", "--covariates", COVS, "--k", 2, "--L", 10, "--M", 40, "--alpha", 0.1]
    code, _, _ = _run(argv + ["--out", out_path], capsys)
    assert code == 0
    rep = json.loads(out_path.read_text())
    for key in ("d_obs", "c_hat", "p_value", "reject", "null_set_size", "degenerate_null"):
        assert key in rep["report"]
    assert "timestamp" in rep["metadata"]
    # malformed input: exit 2 and no artifact
    bad = _write(tmp_path, "PM2.5,PM10\n1,2,3\n", "bad.csv")
    bad_out = tmp_path / "bad.json"
    code, _, err = _run(["test", "--input", bad, "--response", "PM2.5", "--covariates", "PM10", "--k", 2, "--out", bad_out], capsys)
    assert code == 2 and "SchemaError" in err
    assert not bad_out.exists()
    assert not [f for f in os.listdir(tmp_path) if f.endswith(".tmp")]


def test_exit_codes_for_flag_errors(data_csv, capsys):
    assert _run(["candidates", "--k", 2], capsys)[0] == 1
    assert _run(["candidates", "--input", data_csv, "--response", "PM2.5", "--covariates", COVS], capsys)[0] == 1
    assert _run(["candidates", "--input", data_csv, "--response", "PM2.5", "--covariates", COVS, "--k", 2, "--lambda", "x"], capsys)[0] == 1
    assert _run(["candidates", "--input", data_csv, "--response", "PM2.5", "--covariates", COVS, "--k", 2, "--L", 0], capsys)[0] == 1
    assert _run(["nonsense"], capsys)[0] == 1
    assert _run(["test", "--input", data_csv, "--response", "PM2.5", "--covariates", COVS, "--k", 2, "--M", 5], capsys)[0] == 1
    assert _run(["tune", "--input", data_csv, "--response", "PM2.5", "--covariates", COVS, "--k", 2, "--format", "csv"], capsys)[0] == 1


def test_confset_tune_counterexample(data_csv, capsys):
    base = ["--input", data_csv, "--response", "PM2.5", "--covariates", COVS, "--k", 2]
    code, out, _ = _run(["confset", *base, "--L", 5], capsys)
    assert code == 0
    region = json.loads(out)["region"]
    assert region["alpha"] == 0.95 and len(region["pieces"]) >= 1
    code, out, _ = _run(["confset", *base, "--L", 5, "--nuisance-covariates", "TEMP"], capsys)
    assert code == 0 and json.loads(out)["region"]["kind"] == "confidence_region/beta1_only"
    code, out, _ = _run(["tune", *base], capsys)
    assert code == 0 and "window_ok" in json.loads(out)["report"]
    code, out, _ = _run(["counterexample", "--n", 6, "--p", 3, "--k", 2], capsys)
    rep = json.loads(out)
    assert code == 0 and rep["max_abs_gap"] <= 1e-12 and rep["rank"] == 3
    assert _run(["counterexample", "--n", 10, "--p", 3, "--k", 2], capsys)[0] == 2


def test_manual_lambda_and_ridge(data_csv, capsys):
    base = ["candidates", "--input", data_csv, "--response", "PM2.5", "--covariates", COVS, "--k", 2, "--L", 3]
    code, out, _ = _run(base + ["--lambda", "0.01,0.02", "--ridge", "0.5"], capsys)
    assert code == 0
    draws = json.loads(out)["draws"]
    assert all(d["lam1"] == 0.01 and d["lam2"] == 0.02 for d in draws)


def test_simulate_csv_and_determinism(tmp_path, capsys):
    argv = ["simulate", "--n", 12, "--p", 2, "--reps", 3, "--L", 5, "--M", 40, "--alpha", 0.1, "--seed", 4, "--format", "csv"]
    a, b = tmp_path / "a.csv", tmp_path / "b.csv"
    assert _run(argv + ["--out", a, "--summary", tmp_path / "a.json"], capsys)[0] == 0
    assert _run(argv + ["--out", b], capsys)[0] == 0
    assert a.read_bytes() == b.read_bytes()
    assert len(a.read_text().splitlines()) == 4
    summary = json.loads((tmp_path / "a.json").read_text())
    assert summary["aggregates"]["reps"] == 3 and "timestamp" in summary["metadata"]


def test_simulate_budget_exceeded(monkeypatch, capsys):
    monkeypatch.setenv("PERMREG_BUDGET_SECONDS", "0.0001")
    code, _, err = _run(["simulate", "--reps", 5], capsys)
    assert code == 2 and "BudgetExceeded" in err


def test_clean_fixture_collapses_to_identity(tmp_path, capsys):
    # clean high-signal fixture: candidate set collapses to the identity and H0 stands
    path = _write(tmp_path, fixture_to_csv(air_quality_fixture(120, noise=1e-4, seed=0)), "aq.csv")
    covs = ",".join(AIR_QUALITY_COVARIATES)
    code, out, _ = _run(["test", "--input", path, "--response", "PM2.5", "--covariates", covs, "--k", 10, "--L", 20], capsys)
    rep = json.loads(out)
    assert code == 0 and rep["candidate_set_size"] == 1
    assert rep["report"]["null_set_size"] >= 1 and not rep["report"]["reject"]
    assert np.isfinite(rep["report"]["p_value"])
