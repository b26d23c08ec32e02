import csv
import json
import math

import numpy as np
import pytest

from conftest import make_data
from ivselect.alasso import AdaptiveWeights, build_ztilde, lars_weighted_path
from ivselect.cli import main
from ivselect.data import load_csv, partial_out_covariates
from ivselect.median import alpha_from_beta, enumerate_just_identified, median_of_medians
from ivselect.selection import downward_testing


def write_csv(path, d, extra=None):
    cols = {"y": d.y}
    cols.update({f"x{q + 1}": d.X[:, q] for q in range(d.k_x)})
    cols.update({f"z{j + 1}": d.Z[:, j] for j in range(d.k_z)})
    cols.update(extra or {})
    names = list(cols)
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(names)
        for i in range(len(d.y)):
            w.writerow([repr(float(cols[c][i])) for c in names])
    return path


@pytest.fixture
def csv_file(tmp_path):
    d, *_ = make_data(n=600, k_z=8, alpha=[0.5, 0.4, 0, 0, 0, 0, 0, 0], seed=11)
    rng = np.random.default_rng(0)
    return write_csv(tmp_path / "d.csv", d, {"age": rng.standard_normal(600)}), d


def select_args(path, out, *more):
    zs = ",".join(f"z{j}" for j in range(1, 9))
    return ["select", "--data", str(path), "--outcome", "y", "--exposures", "x1,x2",
            "--instruments", zs, "--out", str(out), *more]


def test_select_matches_library(csv_file, tmp_path, capsys):
    path, _ = csv_file
    out = tmp_path / "rep"
    assert main(select_args(path, out, "--covariates", "age")) == 0
    report = json.loads(out.with_suffix(".json").read_text())
    roles = {"y": "outcome", "x1": "exposure", "x2": "exposure", "age": "covariate"}
    roles.update({f"z{j}": "instrument" for j in range(1, 9)})
    d = partial_out_covariates(load_csv(path, roles))
    mm = median_of_medians(enumerate_just_identified(d)).beta_mm
    w = AdaptiveWeights.from_initial(alpha_from_beta(d, mm))
    res = downward_testing(d, lars_weighted_path(build_ztilde(d), d.y, w, d.k_z - d.k_x))
    assert report["result"]["invalid_instruments"] == [f"z{j + 1}" for j in res.invalid_set]
    assert report["result"]["beta"]["x1"] == pytest.approx(res.post_fit.beta_hat[0], rel=1e-12)
    assert report["config"]["p_threshold"] == pytest.approx(0.1 / math.log(600))
    assert report["path"] and "wall_time_s" in report
    rows = list(csv.DictReader(out.with_suffix(".csv").open()))
    assert [r["term"] for r in rows[:2]] == ["x1", "x2"]
    assert "invalid" in capsys.readouterr().out


def test_select_cv_method_is_seeded(csv_file, tmp_path):
    path, _ = csv_file
    a, b = tmp_path / "a", tmp_path / "b"
    assert main(select_args(path, a, "--method", "cv-1se", "--seed", "3")) == 0
    assert main(select_args(path, b, "--method", "cv-1se", "--seed", "3")) == 0
    assert a.with_suffix(".csv").read_bytes() == b.with_suffix(".csv").read_bytes()


def test_missing_column_names_flag(csv_file, tmp_path, capsys):
    path, _ = csv_file
    args = select_args(path, tmp_path / "r")
    args[args.index("--instruments") + 1] += ",z99"
    assert main(args) == 2
    err = capsys.readouterr().err
    assert "--instruments" in err and "z99" in err


@pytest.mark.parametrize("value", ["1.5", "0", "abc"])
def test_bad_threshold_is_usage_error(csv_file, tmp_path, capsys, value):
    path, _ = csv_file
    assert main(select_args(path, tmp_path / "r", "--p-threshold", value)) == 2
    assert "--p-threshold" in capsys.readouterr().err


def test_collinear_covariate_is_numerical_failure(tmp_path, capsys):
    d, *_ = make_data(n=200, k_z=6, seed=2)
    path = write_csv(tmp_path / "d.csv", d, {"dup": d.Z[:, 0] * 2.0})
    zs = ",".join(f"z{j}" for j in range(1, 7))
    code = main(["select", "--data", str(path), "--outcome", "y", "--exposures", "x1,x2",
                 "--instruments", zs, "--covariates", "dup", "--out", str(tmp_path / "r")])
    assert code == 3
    assert "numerical failure" in capsys.readouterr().err


def test_unknown_subcommand_exits_2(capsys):
    with pytest.raises(SystemExit) as exc:
        main(["frobnicate"])
    assert exc.value.code == 2


def test_auto_threshold_at_large_n(tmp_path):
    rng = np.random.default_rng(5)
    n = 86150
    Z = rng.standard_normal((n, 4))
    x = Z @ [1.0, 1.2, 0.8, 1.1] + rng.standard_normal(n)
    y = 0.2 * x + 0.3 * Z[:, 0] + rng.standard_normal(n)
    path = tmp_path / "big.csv"
    np.savetxt(path, np.column_stack([y, x, Z]), delimiter=",", header="y,x,z1,z2,z3,z4", comments="")
    out = tmp_path / "r"
    assert main(["select", "--data", str(path), "--outcome", "y", "--exposures", "x",
                 "--instruments", "z1,z2,z3,z4", "--out", str(out)]) == 0
    cfg = json.loads(out.with_suffix(".json").read_text())["config"]
    assert cfg["p_threshold"] == pytest.approx(0.1 / math.log(n))
    assert round(cfg["p_threshold"], 4) == 0.0088


def test_simulate_rows_and_reproducibility(tmp_path):
    a, b = tmp_path / "a", tmp_path / "b"
    base = ["simulate", "--preset", "table3", "--n", "300", "--reps", "4", "--seed", "42"]
    assert main(base + ["--out", str(a)]) == 0
    assert main(base + ["--out", str(b), "--workers", "2"]) == 0
    text = a.with_suffix(".csv").read_text()
    assert a.with_suffix(".csv").read_bytes() == b.with_suffix(".csv").read_bytes()
    rows = list(csv.DictReader(text.splitlines()))
    assert len(rows) == 8
    report = json.loads(a.with_suffix(".json").read_text())
    assert report["config"]["seed"] == 42 and not report["seed_drawn"]


def test_simulate_records_drawn_seed(tmp_path):
    out = tmp_path / "s"
    assert main(["simulate", "--preset", "table4", "--n", "300", "--reps", "1",
                 "--estimators", "oracle_2sls", "--out", str(out)]) == 0
    report = json.loads(out.with_suffix(".json").read_text())
    assert report["seed_drawn"] and isinstance(report["config"]["seed"], int)


def test_simulate_bad_config(tmp_path, capsys):
    cfg = tmp_path / "c.json"
    cfg.write_text(json.dumps({"n": 300, "rho": [0.8, 0.8]}))
    assert main(["simulate", "--config", str(cfg), "--reps", "1", "--out", str(tmp_path / "o")]) == 2
    assert main(["simulate", "--preset", "table3", "--reps", "1", "--estimators", "nope",
                 "--out", str(tmp_path / "o")]) == 2
    assert "--estimators" in capsys.readouterr().err
