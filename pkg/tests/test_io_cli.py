import csv
import json
import subprocess
import sys
import time

import numpy as np
import pytest

from latent_ate import io as lio
from latent_ate.cli import main
from latent_ate.errors import DataValidationError


def read_csv(path):
    with open(path, newline="") as fh:
        return list(csv.reader(fh))


def test_format_value():
    assert lio.format_value(3.0) == "3"
    assert lio.format_value(0.1) == "0.1"
    assert lio.format_value(float("nan")) == "NA"
    assert lio.format_value(np.int64(7)) == "7"
    assert lio.format_value(True) == "true"
    assert float(lio.format_value(1 / 3)) == 1 / 3


def test_matrix_round_trip(tmp_path):
    rng = np.random.default_rng(0)
    values = rng.random((4, 3)) * 100
    values[0, 0] = 12.0
    p = tmp_path / "m.csv"
    lio.save_matrix(p, values, ("a", "b", "c", "d"), ("x", "y", "z"))
    back, rows, cols = lio.load_matrix(p)
    np.testing.assert_array_equal(back, values)
    assert rows == ("a", "b", "c", "d") and cols == ("x", "y", "z")
    assert read_csv(p)[1][1] == "12"


def test_count_matrix_negative_cell(tmp_path):
    p = tmp_path / "c.csv"
    p.write_text(",s1,s2\nA[C>A]A,1,2\nA[C>A]C,3,-1\n")
    with pytest.raises(DataValidationError, match=r"negative entry -1 at row 'A\[C>A\]C' \(line 3\), column 's2'"):
        lio.load_count_matrix(p)


def test_count_matrix_missing_and_non_numeric(tmp_path):
    p = tmp_path / "c.csv"
    p.write_text(",s1,s2\nr1,1,NA\n")
    with pytest.raises(DataValidationError, match="missing or non-finite entry NA at row 'r1'"):
        lio.load_count_matrix(p)
    p.write_text(",s1,s2\nr1,1,x\n")
    with pytest.raises(DataValidationError, match="non-numeric entry 'x'"):
        lio.load_matrix(p)
    p.write_text(",s1,s2\nr1,1\n")
    with pytest.raises(DataValidationError, match="line 2 has 2 fields"):
        lio.load_matrix(p)


def test_treatment_round_trip_and_errors(tmp_path):
    p = tmp_path / "t.csv"
    lio.save_treatment(p, [0, 1, 1], ("s1", "s2", "s3"))
    assert lio.load_treatment(p, ("s3", "s1", "s2")).t.tolist() == [1, 0, 1]
    with pytest.raises(DataValidationError, match="no treatment for subject 's4'"):
        lio.load_treatment(p, ("s1", "s2", "s3", "s4"))
    with pytest.raises(DataValidationError, match="'s3' is not in the count matrix"):
        lio.load_treatment(p, ("s1", "s2"))
    p.write_text("subject,treatment\ns1,0\ns1,1\n")
    with pytest.raises(DataValidationError, match="duplicate subject 's1'"):
        lio.load_treatment(p)
    p.write_text("subject,treatment\ns1,2\n")
    with pytest.raises(DataValidationError, match="not 0 or 1"):
        lio.load_treatment(p)


def test_manifest_hash_ignores_location(tmp_path):
    (tmp_path / "a").mkdir()
    (tmp_path / "b").mkdir()
    for d in ("a", "b"):
        (tmp_path / d / "c.csv").write_text("x\n")
    m1 = lio.build_manifest("fit", {"k": 2}, {"counts": tmp_path / "a" / "c.csv"}, "0")
    m2 = lio.build_manifest("fit", {"k": 2}, {"counts": tmp_path / "b" / "c.csv"}, "0")
    assert m1 == m2
    m3 = lio.build_manifest("fit", {"k": 3}, {"counts": tmp_path / "a" / "c.csv"}, "0")
    assert m3["config_hash"] != m1["config_hash"]


@pytest.fixture(scope="module")
def sim_dir(tmp_path_factory):
    out = tmp_path_factory.mktemp("sim")
    assert main(["simulate", "--out", str(out), "--n", "24", "--pi", "0.5", "--datasets", "1", "--seed", "2"]) == 0
    return out


def run_twice(tmp_path, argv):
    dirs = []
    for tag in ("a", "b"):
        out = tmp_path / tag
        assert main([*argv, "--out", str(out)]) == 0
        dirs.append(out)
    names = sorted(p.name for p in dirs[0].iterdir())
    assert names == sorted(p.name for p in dirs[1].iterdir())
    for name in names:
        assert (dirs[0] / name).read_bytes() == (dirs[1] / name).read_bytes(), name
    return dirs[0]


def data_args(sim_dir):
    return ["--counts", str(sim_dir / "counts_0.csv"), "--treatment", str(sim_dir / "treatment_0.csv")]


def test_simulate_outputs(sim_dir):
    names = {p.name for p in sim_dir.iterdir()}
    assert names == {"lambda_true.csv", "counts_0.csv", "treatment_0.csv", "l0_0.csv", "l1_0.csv", "manifest.json"}
    y = lio.load_count_matrix(sim_dir / "counts_0.csv")
    assert y.shape == (96, 24)
    manifest = json.loads((sim_dir / "manifest.json").read_text())
    assert manifest["command"] == "simulate" and manifest["params"]["n"] == 24


def test_simulate_deterministic(tmp_path):
    run_twice(tmp_path, ["simulate", "--n", "10", "--datasets", "2"])


def test_fit_deterministic(tmp_path, sim_dir):
    out = run_twice(tmp_path, ["fit", "--counts", str(sim_dir / "counts_0.csv"), "--k", "3", "--n-runs", "2"])
    lam, rows, cols = lio.load_matrix(out / "lambda.csv")
    assert cols == ("f1", "f2", "f3") and len(rows) == 96
    np.testing.assert_allclose(lam.sum(axis=0), 1.0, atol=1e-12)
    fit = json.loads((out / "fit.json").read_text())
    assert fit["n_iterations"] >= 1


def test_impute_deterministic(tmp_path, sim_dir):
    out = run_twice(tmp_path, ["impute", *data_args(sim_dir)])
    y = lio.load_count_matrix(sim_dir / "counts_0.csv")
    y0, _, _ = lio.load_matrix(out / "y0.csv")
    t = lio.load_treatment(sim_dir / "treatment_0.csv", y.col_labels)
    np.testing.assert_array_equal(y0[:, t.t == 0], y.values[:, t.t == 0])


@pytest.mark.parametrize("algorithm", ["all_data", "random_split", "impute_stabilize"])
def test_estimate_deterministic(tmp_path, sim_dir, algorithm):
    argv = ["estimate", *data_args(sim_dir), "--algorithm", algorithm, "--k", "5", "--n-runs", "1"]
    argv += ["--reference", str(sim_dir / "lambda_true.csv")]
    out = run_twice(tmp_path, argv)
    rows = read_csv(out / "psi.csv")
    assert rows[0] == ["factor", "psi"] and [r[0] for r in rows[1:]] == ["f1", "f2", "f3", "f4", "f5"]


def test_bootstrap_deterministic(tmp_path, sim_dir):
    argv = ["bootstrap", *data_args(sim_dir), "--algorithm", "stabilize", "--k", "3", "--B", "3", "--n-runs", "1"]
    out = run_twice(tmp_path, [*argv, "--replicates"])
    rows = read_csv(out / "psi.csv")
    assert rows[0] == ["factor", "psi_mean", "ci_lower", "ci_upper"]
    assert read_csv(out / "replicates.csv")[0] == ["replicate", "factor", "psi", "alignment_similarity"]


def test_bootstrap_thread_count_does_not_change_outputs(tmp_path, sim_dir):
    argv = ["bootstrap", *data_args(sim_dir), "--algorithm", "all_data", "--k", "2", "--B", "3", "--n-runs", "1"]
    assert main(["--threads", "1", *argv, "--out", str(tmp_path / "a")]) == 0
    assert main(["--threads", "2", *argv, "--out", str(tmp_path / "b")]) == 0
    for name in ("psi.csv", "lambda.csv", "bootstrap.json", "manifest.json"):
        assert (tmp_path / "a" / name).read_bytes() == (tmp_path / "b" / name).read_bytes()


def test_interference_smoke_schema(tmp_path):
    argv = ["interference", "--n", "10", "--R", "2", "--datasets", "2", "--n-runs", "1"]
    argv += ["--algorithms", "oracle,all_data"]
    start = time.time()
    out = run_twice(tmp_path, argv)
    assert time.time() - start < 60
    paie = read_csv(out / "liPAIE.csv")
    assert paie[0] == ["dataset", "algorithm", "factor", "metric", "value"]
    assert len(paie) == 1 + 2 * 2 * 5
    assert all(r[3] == "liPAIE" for r in paie[1:])
    assert all(float(r[4]) == 0 for r in paie[1:] if r[1] == "oracle")
    scaled = read_csv(out / "scaled_abs.csv")
    assert scaled[0] == ["dataset", "algorithm", "individual", "metric", "value"]
    assert len(scaled) == 1 + 2 * 2 * 10
    iallo = read_csv(out / "iallo.csv")
    assert iallo[0] == ["dataset", "algorithm", "individual", "factor", "metric", "value"]
    assert {r[4] for r in iallo[1:]} == {"IALLO0_pi=0.2", "IALLO0_pi=0.8"}


def test_config_file_and_flag_precedence(tmp_path, sim_dir):
    cfg = tmp_path / "cfg.json"
    cfg.write_text(json.dumps({"k": 2, "n_runs": 1, "seed": 4}))
    assert main(["fit", "--counts", str(sim_dir / "counts_0.csv"), "--config", str(cfg), "--seed", "5",
                 "--out", str(tmp_path / "o")]) == 0
    params = json.loads((tmp_path / "o" / "manifest.json").read_text())["params"]
    assert (params["k"], params["n_runs"], params["seed"]) == (2, 1, 5)


def test_exit_code_usage(tmp_path, capsys):
    with pytest.raises(SystemExit) as exc:
        main(["estimate", "--algorithm", "bogus", "--out", str(tmp_path)])
    assert exc.value.code == 2
    with pytest.raises(SystemExit) as exc:
        main(["fit", "--out", str(tmp_path)])
    assert exc.value.code == 2
    assert "--counts" in capsys.readouterr().err
    assert main(["interference", "--algorithms", "nope", "--out", str(tmp_path)]) == 2


def test_exit_code_validation(tmp_path, capsys):
    p = tmp_path / "c.csv"
    p.write_text(",s1,s2\nr1,1,-1\n")
    assert main(["fit", "--counts", str(p), "--k", "1", "--out", str(tmp_path / "o")]) == 3
    err = json.loads(capsys.readouterr().err)
    assert err["category"] == "data_validation" and "line 2" in err["message"]
    assert main(["fit", "--counts", str(tmp_path / "missing.csv"), "--k", "1", "--out", str(tmp_path)]) == 3


def test_exit_code_numerical(tmp_path, capsys):
    # Every bootstrap replicate fails (stabilize needs n0 >= k), a numerical failure.
    p = tmp_path / "c.csv"
    lio.save_matrix(p, np.full((3, 2), 5.0), ("a", "b", "c"), ("s1", "s2"))
    t = tmp_path / "t.csv"
    lio.save_treatment(t, [0, 1], ("s1", "s2"))
    argv = ["bootstrap", "--counts", str(p), "--treatment", str(t), "--algorithm", "stabilize", "--k", "2"]
    assert main([*argv, "--B", "2", "--n-runs", "1", "--out", str(tmp_path / "o")]) == 4
    assert json.loads(capsys.readouterr().err)["category"] == "numerical_failure"


def test_console_script_version():
    res = subprocess.run([sys.executable, "-m", "latent_ate.cli", "--version"], capture_output=True, text=True)
    assert res.returncode == 0 and res.stdout.startswith("latent-ate ")
