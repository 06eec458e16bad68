import json

import numpy as np
import pytest
import yaml

from bratkit import cli, config as cfg_mod
from bratkit.mpc import MpcLabelSet


def test_defaults_materialize():
    cfg = cfg_mod.load_config()
    assert set(cfg) == {"problem", "training", "grid", "controller", "harness"}
    assert cfg["problem"]["kind"] == "double_integrator_2d"
    prob = cfg_mod.make_problem(cfg)
    assert prob.dim == 2
    tc = cfg_mod.make_training_config(cfg)
    assert tc.epochs == cfg["training"]["epochs"]


def test_load_config_file_merge_and_overrides(tmp_path):
    p = tmp_path / "c.yaml"
    p.write_text("problem:\n  kind: planar_docking_6d\ntraining:\n  epochs: 7\n")
    cfg = cfg_mod.load_config(p)
    assert cfg["problem"]["kind"] == "planar_docking_6d"
    assert cfg["training"]["epochs"] == 7
    # untouched sections keep their defaults
    assert cfg["grid"] == cfg_mod.DEFAULTS["grid"]
    cfg2 = cfg_mod.load_config(p, overrides={"training": {"epochs": 9}})
    assert cfg2["training"]["epochs"] == 9


def test_load_config_rejects_unknown_keys(tmp_path):
    p = tmp_path / "c.yaml"
    p.write_text("training:\n  eopchs: 7\n")
    with pytest.raises(ValueError):
        cfg_mod.load_config(p)
    p.write_text("trainnig:\n  epochs: 7\n")
    with pytest.raises(ValueError):
        cfg_mod.load_config(p)


def test_save_config_roundtrip_and_fingerprint(tmp_path):
    cfg = cfg_mod.load_config()
    p = tmp_path / "out.yaml"
    cfg_mod.save_config(cfg, p)
    assert yaml.safe_load(p.read_text()) == cfg
    f1 = cfg_mod.config_fingerprint(cfg)
    assert len(f1) == 16
    # insertion order must not matter
    shuffled = {k: cfg[k] for k in reversed(list(cfg))}
    assert cfg_mod.config_fingerprint(shuffled) == f1
    cfg2 = cfg_mod.load_config(overrides={"training": {"seed": 99}})
    assert cfg_mod.config_fingerprint(cfg2) != f1


def test_cli_help_exits_zero(capsys):
    with pytest.raises(SystemExit) as e:
        cli.main(["--help"])
    assert e.value.code == 0


def test_cli_unknown_file_exit_2(tmp_path, capsys):
    rc = cli.main(["info", str(tmp_path / "missing.brat")])
    assert rc == 2
    assert "error:" in capsys.readouterr().err


def test_cli_bad_value_exit_1(tmp_path, capsys):
    rc = cli.main(["solve-grid", "--problem", "double_integrator_2d",
                   "--horizon", "-1",
                   "--grid", "11x11", "--out", str(tmp_path / "g.brat")])
    assert rc == 1
    assert "error:" in capsys.readouterr().err


def test_cli_unknown_problem_exit_2(tmp_path, capsys):
    rc = cli.main(["solve-grid", "--problem", "no_such_kind",
                   "--grid", "11x11", "--out", str(tmp_path / "g.brat")])
    assert rc == 2
    assert "error:" in capsys.readouterr().err


def test_cli_solve_grid_gen_labels_info(tmp_path, capsys):
    g = tmp_path / "g.brat"
    rc = cli.main(["solve-grid", "--problem", "double_integrator_2d",
                   "--grid", "31x31", "--out", str(g)])
    assert rc == 0 and g.exists()
    rc = cli.main(["info", str(g)])
    assert rc == 0
    out = capsys.readouterr().out
    assert "grid" in out

    lab = tmp_path / "l.brat"
    rc = cli.main(["gen-labels", "--problem", "double_integrator_2d",
                   "--count", "50", "--out", str(lab),
                   "--samples", "8", "--rounds", "2"])
    assert rc == 0
    labels = MpcLabelSet.load(lab)
    assert len(labels) == 50


def test_cli_fingerprint_mismatch_exit_3(tmp_path, capsys):
    lab = tmp_path / "l.brat"
    assert cli.main(["gen-labels", "--problem", "double_integrator_2d",
                     "--count", "20", "--out", str(lab),
                     "--samples", "4", "--rounds", "1"]) == 0
    cfgp = tmp_path / "c.yaml"
    cfgp.write_text("problem:\n  kind: planar_docking_6d\n"
                    "training:\n  epochs: 2\n  n_labels: 20\n")
    rc = cli.main(["train", "--config", str(cfgp), "--labels", str(lab),
                   "--out", str(tmp_path / "m.brat"), "--quiet"])
    assert rc == 3
    assert "error:" in capsys.readouterr().err


def test_cli_rollout_deterministic_and_compare(tmp_path, capsys):
    g = tmp_path / "g.brat"
    assert cli.main(["solve-grid", "--problem", "double_integrator_2d",
                     "--grid", "41x41", "--out", str(g)]) == 0
    outs = []
    for name in ("r1", "r2"):
        d = tmp_path / name
        rc = cli.main(["rollout", "--problem", "double_integrator_2d",
                       "--controller", "grid", "--vf", str(g),
                       "--n", "8", "--seed", "1", "--out", str(d)])
        assert rc == 0
        outs.append(d)
    a, b = outs
    assert (a / "summary.json").read_bytes() == (b / "summary.json").read_bytes()
    assert (a / "rollouts.csv").read_bytes() == (b / "rollouts.csv").read_bytes()

    cmpj = tmp_path / "cmp.json"
    rc = cli.main(["compare", "--problem", "double_integrator_2d",
                   "--candidate", str(g), "--truth", str(g),
                   "--n", "500", "--out", str(cmpj)])
    assert rc == 0
    rep = json.loads(cmpj.read_text())
    assert rep["tpr_percent"] == 100.0 and rep["fpr_percent"] == 0.0

    csvd = tmp_path / "exported"
    rc = cli.main(["export", "--summary", str(a / "summary.json"),
                   "--out", str(csvd)])
    assert rc == 0
    rows = (csvd / "metrics.csv").read_text().strip().splitlines()
    assert rows[0] == "key,value"
    assert any(r.startswith("dock_rate,") for r in rows)


def test_cli_rollout_n_zero_ok(tmp_path):
    g = tmp_path / "g.brat"
    assert cli.main(["solve-grid", "--problem", "double_integrator_2d",
                     "--grid", "21x21", "--out", str(g)]) == 0
    d = tmp_path / "r0"
    rc = cli.main(["rollout", "--problem", "double_integrator_2d",
                   "--controller", "grid", "--vf", str(g),
                   "--n", "0", "--out", str(d)])
    assert rc == 0
    s = json.loads((d / "summary.json").read_text())
    assert s["metrics"]["n"] == 0 and s["metrics"]["dock_rate"] is None


def test_cli_rollout_requires_vf(tmp_path, capsys):
    rc = cli.main(["rollout", "--problem", "double_integrator_2d",
                   "--controller", "brat", "--n", "1",
                   "--out", str(tmp_path / "x")])
    assert rc == 2
    assert "error:" in capsys.readouterr().err
