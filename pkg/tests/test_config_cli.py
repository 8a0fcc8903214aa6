import json
import os
import subprocess
import sys

import numpy as np
import pytest

from ethrelax import cli
from ethrelax.config import ConfigError, DEFAULTS, config_hash, parse_override, resolve_config
from ethrelax.estimator import ScalingPoint, fit_power_law
from ethrelax.runner import RUNNERS, point_key, sweep_points, validate_record

FAST = ["--model.n_left=1", "--model.n_right=2", "--estimator.n_samples=2", "--estimator.t_min=5",
        "--estimator.t_max=10", "--mod.t_max=2", "--mod.n_times=5", "--mod.eps_samples=2"]


def _read_tree(root):
    out = {}
    for d, _, files in os.walk(root):
        for f in files:
            p = os.path.join(d, f)
            with open(p, "rb") as fh:
                out[os.path.relpath(p, root)] = fh.read()
    # the resolved config records the output directory itself
    cfg = json.loads(out.pop("config.resolved.json"))
    cfg.pop("output")
    out["config"] = cfg
    return out


def test_defaults_and_overrides():
    cfg = resolve_config(overrides=["--filter.sigma=0.4", "--sweep.n_left=[2, 3]", "--mod.d0=-N_L"])
    assert cfg["filter"]["sigma"] == 0.4
    assert cfg["sweep"]["n_left"] == [2, 3]
    assert cfg["mod"]["d0"] == "-N_L"
    assert resolve_config()["estimator"] == DEFAULTS["estimator"]


def test_int_and_float_hash_equal():
    a = resolve_config(overrides=["--model.delta=1"])
    b = resolve_config(overrides=["--model.delta=1.0"])
    assert config_hash(a) == config_hash(b)
    assert config_hash(a) == config_hash(resolve_config(overrides=["--model.delta=1"], out_dir="elsewhere"))


@pytest.mark.parametrize("arg", ["--model.nope=1", "--bogus.x=1", "--filter.sigma=-1", "--model.geometry=ring",
                                 "--estimator.n_samples=1", "--engine.method=euler", "--model.n_left=2.5"])
def test_bad_overrides_rejected(arg):
    with pytest.raises(ConfigError):
        resolve_config(overrides=[arg])


def test_parse_override_shape():
    assert parse_override("--a.b=[1, 2]") == ("a", "b", [1, 2])
    with pytest.raises(ConfigError):
        parse_override("--ab=3")


def test_config_file(tmp_path):
    p = tmp_path / "c.yaml"
    p.write_text("model: {geometry: two_contact, n_left: 3}\nfilter: {sigma: 0.5}\n")
    cfg = resolve_config(str(p), ["--filter.sigma=0.7"])
    assert cfg["model"]["geometry"] == "two_contact" and cfg["filter"]["sigma"] == 0.7
    p.write_text("[1, 2]\n")
    with pytest.raises(ConfigError):
        resolve_config(str(p))


def test_cli_exit_codes_config(tmp_path, capsys):
    assert cli.main(["validate-config", "--filter.sigma=0.5"]) == 0
    assert json.loads(capsys.readouterr().out)["filter"]["sigma"] == 0.5
    assert cli.main(["validate-config", "--model.unknown=1"]) == 1
    assert cli.main(["estimate", str(tmp_path / "missing.yaml")]) == 1
    assert cli.main(["estimate", "--threads", "0"]) == 1
    assert cli.main(["frobnicate"]) == 1


def test_cli_internal_error(monkeypatch, tmp_path):
    def boom(cfg, threads):
        raise RuntimeError("boom")

    monkeypatch.setitem(RUNNERS, "estimate", boom)
    assert cli.main(["estimate", "--out", str(tmp_path)]) == 3


def test_empty_sweep(tmp_path):
    out = tmp_path / "o"
    assert cli.main(["estimate", "--sweep.n_left=[]", "--out", str(out)]) == 0
    assert not (out / "records").exists()


def test_sweep_product():
    cfg = resolve_config(overrides=["--sweep.n_left=[1, 2]", "--sweep.j_c=[0.1, 0.2, 0.3]"])
    pts = sweep_points(cfg)
    assert len(pts) == 6 and len({point_key(p) for p in pts}) == 6


def test_estimate_resume_and_determinism(tmp_path, capsys):
    a, b = tmp_path / "a", tmp_path / "b"
    assert cli.main(["estimate", *FAST, "--threads", "1", "--out", str(a)]) == 0
    assert cli.main(["estimate", *FAST, "--threads", "1", "--out", str(b)]) == 0
    assert _read_tree(a) == _read_tree(b)
    capsys.readouterr()
    assert cli.main(["estimate", *FAST, "--threads", "1", "--out", str(a)]) == 0
    assert "1 resumed" in capsys.readouterr().out
    assert _read_tree(a) == _read_tree(b)
    rec = json.loads(next((a / "records" / "eth_report").iterdir()).read_text())
    validate_record(rec)
    assert rec["provenance"]["seeds"]
    # changed parameters invalidate the record
    assert cli.main(["estimate", *FAST, "--filter.sigma=0.5", "--threads", "1", "--out", str(a)]) == 0
    assert "0 resumed" in capsys.readouterr().out


def test_threads_do_not_change_results(tmp_path):
    args = [*FAST, "--sweep.j_c=[0.2, 0.4]"]
    assert cli.main(["estimate", *args, "--threads", "1", "--out", str(tmp_path / "a")]) == 0
    assert cli.main(["estimate", *args, "--threads", "2", "--out", str(tmp_path / "b")]) == 0
    assert _read_tree(tmp_path / "a") == _read_tree(tmp_path / "b")


def test_oracle_partial_failure(tmp_path):
    out = tmp_path / "o"
    assert cli.main(["oracle", "--sweep.n_left=[1, 5]", "--out", str(out)]) == 2
    errs = list((out / "records" / "eth_report").glob("*nl5*"))
    rec = json.loads(errs[0].read_text())
    validate_record(rec)
    assert rec["status"] == "error" and rec["kind"] == "error"
    assert rec["payload"]["error_type"] == "SizeCapError"
    man = json.loads((out / "manifest.json").read_text())
    assert [e["status"] for e in man["records"]] == ["ok", "error"]


def test_scaling_refused_with_two_points(tmp_path):
    out = tmp_path / "s"
    assert cli.main(["scaling", *FAST, "--sweep.n_left=[1, 2]", "--out", str(out)]) == 0
    rec = json.loads(next((out / "records" / "scaling_fit").iterdir()).read_text())
    validate_record(rec)
    assert rec["payload"]["fit"] is None and rec["payload"]["refused"]


def test_relax_and_equipartition_records(tmp_path):
    out = tmp_path / "r"
    assert cli.main(["relax", *FAST, "--model.geometry=single_contact", "--out", str(out)]) == 0
    rec = json.loads(next((out / "records" / "trace").iterdir()).read_text())
    validate_record(rec)
    assert {t["sign"] for t in rec["payload"]["traces"]} == {1, -1}
    assert (out / "curves" / "relax_tail.csv").exists()
    out = tmp_path / "e"
    assert cli.main(["equipartition", *FAST, "--sweep.e_center=[-0.5, 0.5]", "--out", str(out)]) == 0
    rec = json.loads(next((out / "records" / "equipartition_curve").iterdir()).read_text())
    validate_record(rec)
    assert len(rec["payload"]["points"]) == 2


def test_validate_record_rejects():
    with pytest.raises(ValueError):
        validate_record({"schema_version": 2})
    good = {"schema_version": 1, "kind": "error", "key": "k", "status": "error",
            "payload": {"error_type": "X", "message": "m"},
            "provenance": {"config_hash": "", "point_hash": "", "seeds": {}, "version": ""}}
    validate_record(good)
    with pytest.raises(ValueError):
        validate_record({**good, "kind": "mystery"})


def test_synthetic_gamma_recovery():
    d = np.array([50.0, 200.0, 800.0, 3200.0])
    fit = fit_power_law([ScalingPoint(x, 2.0 * x**-0.35) for x in d])
    assert fit.gamma == pytest.approx(0.35, abs=1e-10)


def test_console_script_help():
    r = subprocess.run([sys.executable, "-m", "ethrelax.cli", "validate-config"], capture_output=True, text=True)
    assert r.returncode == 0 and '"model"' in r.stdout
