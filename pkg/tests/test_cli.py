import json
import subprocess
import sys

import numpy as np
import pytest

from sqgauss import __version__, cli

TOP_KEYS = {"command", "config", "seed", "version", "results"}


def run_cli(capsys, *argv):
    code = cli.main(list(argv))
    out, err = capsys.readouterr()
    return code, (json.loads(out) if out.strip() else None), out, err


# -- gen ----------------------------------------------------------------------


def test_gen_gmm_certificate(capsys):
    code, rep, _, _ = run_cli(capsys, "gen", "gmm", "--k", "3", "--eps", "0.01")
    assert code == 0 and set(rep) == TOP_KEYS
    cert = rep["results"]["certificate"]
    assert cert["matched_moments"] == 5
    assert cert["max_moment_residual"] <= 1e-9
    assert cert["min_pairwise_component_tv"] >= 0.99
    assert cert["passed"] is True
    assert rep["version"] == __version__


def test_gen_sparse_mean(capsys):
    code, rep, _, _ = run_cli(capsys, "gen", "sparse-mean", "--eps", "0.1", "--delta", "0.05")
    assert code == 0
    assert rep["results"]["certificate"]["moment_residuals"] == [0.0]


def test_gen_robust_mean_bounds(capsys):
    code, rep, _, _ = run_cli(capsys, "gen", "robust-mean", "--delta", "1e-3", "--m", "4")
    cert = rep["results"]["certificate"]
    assert code == 0
    assert cert["tv_to_reference"] <= cert["tv_bound"]
    assert cert["chi2_vs_standard"] <= cert["chi2_bound"]


def test_gen_infeasible_covariance_instance(capsys):
    code, rep, _, err = run_cli(capsys, "gen", "robust-cov", "--delta", "1e-2", "--m", "4")
    assert code == 1 and rep is None
    assert "negative" in err


def test_gen_bad_parameters(capsys):
    code, _, _, err = run_cli(capsys, "gen", "gmm", "--k", "30")
    assert code == 2 and "error" in err


def test_gen_unknown_family(capsys):
    with pytest.raises(SystemExit):
        cli.build_parser().parse_args(["gen", "nope"])
    assert cli.main(["gen", "nope"]) == 2


def test_gen_samples_to_csv(tmp_path, capsys, monkeypatch):
    monkeypatch.setenv(cli.OUTPUT_ENV, str(tmp_path))
    code, _, out, _ = run_cli(
        capsys, "gen", "gmm", "--k", "2", "--samples", "500", "--n", "3",
        "--samples-out", "x.csv", "--out", "rep.json", "--seed", "4",
    )
    assert code == 0 and out == ""
    rep = json.loads((tmp_path / "rep.json").read_text())
    x = np.loadtxt(tmp_path / "x.csv", delimiter=",")
    assert x.shape == (500, 3)
    assert np.allclose(rep["results"]["sample_mean"], x.mean(axis=0))
    assert np.linalg.norm(rep["results"]["direction"]) == pytest.approx(1.0)


# -- learn ----------------------------------------------------------------


def test_learn_pure(capsys):
    code, rep, _, _ = run_cli(capsys, "learn", "--pure", "--n", "6", "--N", "20000", "--tail-draws", "10000")
    res = rep["results"]
    assert code == 0
    assert res["error"] <= res["empirical_mean_error"] + 0.02
    assert res["loop_exit"]["all_below"] is True
    assert res["run"]["filters"] == []


def test_learn_far_point(capsys):
    code, rep, _, _ = run_cli(
        capsys, "learn", "--contaminate", "far-point", "--n", "6", "--N", "40000", "--tail-draws", "10000"
    )
    res = rep["results"]
    assert code == 0
    assert res["error"] <= 5 * 0.05
    assert res["data"]["corrupted"] == 2000


def test_learn_paper_instance(capsys):
    code, rep, _, _ = run_cli(
        capsys, "learn", "--contaminate", "paper-instance", "--n", "6", "--N", "40000",
        "--tail-draws", "10000", "--m", "2",
    )
    res = rep["results"]
    assert code == 0
    assert set(res["loop_exit"]) == {"tensor_norms", "thresholds", "all_below"}
    assert res["data"]["delta"] == 0.04


def test_learn_from_csv(tmp_path, capsys):
    rng = np.random.default_rng(0)
    x = rng.standard_normal((5000, 3)) + 1.0
    path = tmp_path / "d.csv"
    np.savetxt(path, x, delimiter=",")
    code, rep, _, _ = run_cli(
        capsys, "learn", "--data", str(path), "--truth", "1,1,1", "--eps", "0.1", "--tail-draws", "5000"
    )
    assert code == 0
    assert rep["results"]["n"] == 3 and rep["results"]["N"] == 5000
    assert rep["results"]["error"] < 0.2


def test_learn_rejects_bad_eps(capsys):
    code, _, _, err = run_cli(capsys, "learn", "--pure", "--eps", "0.3", "--N", "100", "--n", "2")
    assert code == 2


def test_learn_sources_are_exclusive(capsys):
    assert cli.main(["learn", "--pure", "--contaminate", "far-point"]) == 2


# -- test ------------------------------------------------------------------


def test_basic_tester_command(capsys):
    code, rep, _, _ = run_cli(capsys, "test", "basic", "--n", "16", "--eps", "0.5", "--trials", "40")
    res = rep["results"]
    assert code == 0 and res["k"] == 256
    assert res["yes_rate_null"] >= 0.8 and res["no_rate_alternative"] >= 0.8


def test_robust_tester_command(capsys):
    code, rep, _, _ = run_cli(capsys, "test", "robust", "--trials", "10", "--N", "10000")
    res = rep["results"]
    assert code == 0
    assert res["exact_gaussian"]["verdict"] == "YES"
    assert res["no_rate_alternative"] >= 0.9
    assert res["soundness_margin_ok"] is True


def test_robust_tester_refusal(capsys):
    code, _, _, err = run_cli(capsys, "test", "robust", "--delta", "0.1")
    assert code == 2 and "delta" in err


def test_gmm_power_command(capsys):
    code, rep, _, _ = run_cli(
        capsys, "test", "gmm-power", "--n", "20", "--eps", "1.0", "--sizes", "20,2000", "--trials", "20"
    )
    table = rep["results"]["table"]
    assert code == 0 and [row["N"] for row in table] == [20, 2000]
    assert table[1]["accuracy"] >= table[0]["accuracy"]
    assert table[1]["accuracy"] >= 0.9


# -- bounds ------------------------------------------------------------------


def test_testing_series_command(capsys):
    code, rep, _, _ = run_cli(capsys, "bounds", "testing-series", "--n", "200", "--N", "100", "--chi2", "0.25")
    res = rep["results"]
    assert code == 0 and res["value"] <= 4 / 3 and res["at_most_4_3"] is True
    assert res["tv_bound"] < 1 / 3


def test_testing_series_empty(capsys):
    _, rep, _, _ = run_cli(capsys, "bounds", "testing-series", "--N", "0")
    assert rep["results"]["value"] == 1.0


def test_testing_series_overflow_is_reported(capsys):
    _, rep, _, _ = run_cli(capsys, "bounds", "testing-series", "--n", "10", "--N", "1000000", "--chi2", "50")
    assert rep["results"]["value"] == "inf"
    assert rep["results"]["log_value"] > 709


def test_sq_report_command(capsys):
    code, rep, _, _ = run_cli(capsys, "bounds", "sq-report", "gmm", "--k", "2", "--n", "100", "--c", "0.25")
    report = rep["results"]["report"]
    assert code == 0 and report["m"] == 3 and report["certified"] is False


# -- config files, output, determinism ---------------------------------------------


def test_config_file_and_flag_precedence(tmp_path, capsys):
    cfg = tmp_path / "c.json"
    cfg.write_text(json.dumps({"N": 0, "n": 50, "chi2": 0.5}))
    _, rep, _, _ = run_cli(capsys, "bounds", "testing-series", "--config", str(cfg), "--n", "60")
    assert rep["config"]["n"] == 60
    assert rep["config"]["N"] == 0 and rep["config"]["chi2"] == 0.5


def test_config_unknown_key(tmp_path, capsys):
    cfg = tmp_path / "c.json"
    cfg.write_text(json.dumps({"bogus": 1}))
    code, _, _, err = run_cli(capsys, "bounds", "testing-series", "--config", str(cfg))
    assert code == 2 and "bogus" in err


def test_config_must_be_object(tmp_path, capsys):
    cfg = tmp_path / "c.json"
    cfg.write_text("[1, 2]")
    assert cli.main(["bounds", "testing-series", "--config", str(cfg)]) == 2


def test_config_missing_file(capsys):
    assert cli.main(["bounds", "testing-series", "--config", "/nonexistent/c.json"]) == 2


@pytest.mark.parametrize(
    "argv",
    [
        ["gen", "gmm", "--k", "3", "--samples", "200", "--seed", "5"],
        ["learn", "--contaminate", "far-point", "--n", "4", "--N", "8000", "--tail-draws", "4000", "--seed", "3"],
        ["test", "basic", "--n", "8", "--trials", "10", "--seed", "2"],
        ["test", "gmm-power", "--n", "5", "--sizes", "50", "--trials", "5", "--seed", "1"],
        ["bounds", "sq-report", "robust-mean", "--n", "10000", "--m", "4"],
    ],
)
def test_reports_are_byte_identical(argv, capsys):
    cli.main(argv)
    first = capsys.readouterr().out
    cli.main(argv)
    second = capsys.readouterr().out
    assert first == second and first.startswith("{")


def test_clean_handles_numpy_and_non_finite():
    doc = cli._clean({"a": np.float64(np.nan), "b": np.array([1, 2]), "c": np.bool_(True), 3: -np.inf})
    assert doc == {"a": "nan", "b": [1, 2], "c": True, "3": "-inf"}


def test_module_entry_point(tmp_path):
    out = subprocess.run(
        [sys.executable, "-m", "sqgauss", "bounds", "testing-series", "--N", "0"],
        capture_output=True, text=True, check=True,
    )
    assert json.loads(out.stdout)["results"]["value"] == 1.0


def test_version_flag(capsys):
    assert cli.main(["--version"]) == 0
    assert __version__ in capsys.readouterr().out


def test_warnings_are_recorded_in_report(capsys):
    _, rep, _, err = run_cli(capsys, "gen", "robust-mean", "--delta", "1e-3", "--m", "4")
    assert any("comfortable range" in w for w in rep["results"]["warnings"])
    assert err == ""
