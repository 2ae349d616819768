import json

import pytest

from reflectch.cli import EXIT_FAIL, EXIT_OK, EXIT_USAGE, main
from reflectch.cli import run as cli_run


def run(tmp_path, *argv):
    code = main([*argv, "--out", str(tmp_path)])
    return code


def payload(tmp_path, name):
    return json.loads((tmp_path / f"{name}.json").read_text())


def test_simulate_writes_reports(tmp_path):
    assert run(tmp_path, "simulate", "--T", "0.01", "--x0", "1,0.8,-0.5") == EXIT_OK
    doc = payload(tmp_path, "simulate")
    assert doc["payload"]["passed"] and doc["payload"]["result"]["max_average_deviation"] == 0.0
    assert {"trajectory.csv", "final_values.csv", "manifest.json"} <= {p.name for p in tmp_path.iterdir()}
    assert (tmp_path / "trajectory.csv").read_text().startswith("# version")


def test_same_config_same_payload(tmp_path):
    a, b = tmp_path / "a", tmp_path / "b"
    for out, w in ((a, "1"), (b, "2")):
        assert main(["measure", "--n", "3000", "--seed", "4", "--workers", w, "--out", str(out)]) == EXIT_OK
    pa, pb = payload(a, "measure"), payload(b, "measure")
    assert json.dumps(pa["payload"], sort_keys=True) == json.dumps(pb["payload"], sort_keys=True)
    assert pa["config_hash"] == pb["config_hash"]


def test_ibp_report_fields(tmp_path, capsys):
    assert run(tmp_path, "ibp", "--identity", "cone", "--phi", "sin-e1", "--h", "e1", "--n", "2e4", "--m-points", "129") == EXIT_OK
    res = payload(tmp_path, "ibp")["payload"]["result"]
    assert {"lhs", "bulk", "boundary", "residual"} <= set(res)
    assert "residual" in capsys.readouterr().out


@pytest.mark.parametrize(
    "ident",
    ["absolute-continuity", "fixed-average", "half-density", "half-ibp", "half-penalized"],
)
def test_ibp_identities_run(tmp_path, ident):
    code = run(tmp_path, "ibp", "--identity", ident, "--phi", "one", "--h", "e1", "--n", "20000", "--m-points", "129")
    assert code in (EXIT_OK, EXIT_FAIL)
    name = payload(tmp_path, "ibp")["payload"]["result"]["identity"]
    assert name.split("[")[0] in {"absolute-continuity", "ibp-fixed-average", "half-density", "half-ibp", "half-ibp-penalized"}


def test_usage_errors(tmp_path):
    assert run(tmp_path, "ibp", "--identity", "no-such-identity") == EXIT_USAGE
    assert run(tmp_path, "ibp", "--h", "x1", "--n", "100") == EXIT_USAGE
    assert run(tmp_path, "frobnicate") == EXIT_USAGE
    assert run(tmp_path, "simulate", "--eps", "0.001", "--dt", "0.1") == EXIT_USAGE
    assert run(tmp_path, "selftest", "--checks", "nope") == EXIT_USAGE
    assert run(tmp_path, "measure", "--n", "1.5") == EXIT_USAGE


def test_config_precedence_and_unknown_keys(tmp_path):
    cfg = tmp_path / "c.json"
    cfg.write_text(json.dumps({"seed": 3, "simulate": {"T": 0.005, "n_modes": 8}}))
    assert main(["simulate", "--config", str(cfg), "--n-modes", "4", "--out", str(tmp_path)]) == EXIT_OK
    doc = payload(tmp_path, "simulate")
    assert doc["seed"] == 3
    assert doc["config"]["params"]["n_modes"] == 4 and doc["config"]["params"]["T"] == 0.005
    cfg.write_text(json.dumps({"simulate": {"TT": 1}}))
    assert main(["simulate", "--config", str(cfg), "--out", str(tmp_path)]) == EXIT_USAGE
    cfg.write_text(json.dumps({"sede": 1}))
    assert main(["simulate", "--config", str(cfg), "--out", str(tmp_path)]) == EXIT_USAGE
    assert main(["simulate", "--config", str(tmp_path / "missing.json"), "--out", str(tmp_path)]) == EXIT_USAGE


def test_failing_check_exits_one(tmp_path):
    # a 4-SE covariance check at threshold 0 cannot pass
    cfg = tmp_path / "c.json"
    cfg.write_text(json.dumps({"measure": {"threshold": 0.0, "n": 2000}}))
    assert main(["measure", "--config", str(cfg), "--out", str(tmp_path)]) == EXIT_FAIL
    assert payload(tmp_path, "measure")["payload"]["checks"]["covariance_within_threshold"] is False


def test_measure_variants(tmp_path):
    for m in ("brownian", "mu_c", "nu_c", "nu_c_eps"):
        assert run(tmp_path, "measure", "--measure", m, "--n", "500", "--m-points", "65") == EXIT_OK


def test_meander_command(tmp_path):
    assert run(tmp_path, "meander", "--n", "5000", "--walk-samples", "3000", "--walk-steps", "200", "--m-points", "129") == EXIT_OK


def test_sweep_command(tmp_path):
    code = run(tmp_path, "sweep", "--eps", "0.3,0.1", "--n-modes", "16", "--n-replicas", "300", "--n-reference", "2000")
    assert code in (EXIT_OK, EXIT_FAIL)
    doc = payload(tmp_path, "sweep")
    assert set(doc["payload"]["checks"]) >= {"eta_mass_bounded", "limit_marginals_ks"}
    assert (tmp_path / "sweep.csv").exists()


def test_selftest_subset(tmp_path):
    assert run(tmp_path, "selftest", "--fast", "--checks", "operators,conservation") == EXIT_OK
    doc = payload(tmp_path, "selftest")
    assert [r["check"] for r in doc["payload"]["result"]["results"]] == ["1", "3"]
    assert "seconds" in doc["meta"]


def test_run_is_the_entry_point(tmp_path):
    assert cli_run(["simulate", "--T", "0.002", "--out", str(tmp_path)]) == EXIT_OK
    assert cli_run(["--version"]) == EXIT_OK
