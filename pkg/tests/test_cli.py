import json
import subprocess
import sys

import pytest

from bifurcurve.cli import ConfigError, load_config, main, run


def write_cfg(tmp_path, name="cfg.json", **kw):
    cfg = {"schema_version": 1, "experiment": "oracle", "out_dir": str(tmp_path / "out")}
    cfg.update(kw)
    p = tmp_path / name
    p.write_text(json.dumps(cfg))
    return p


def test_unknown_key_rejected(tmp_path):
    p = write_cfg(tmp_path, bogus_key=3)
    with pytest.raises(ConfigError, match="bogus_key"):
        load_config(p)


def test_marking_thresholds_validated(tmp_path):
    p = write_cfg(tmp_path, kappa=1e-6, rho=1e-3)
    with pytest.raises(ConfigError, match="kappa"):
        load_config(p)
    assert run(p) == 2


def test_missing_experiment(tmp_path):
    p = tmp_path / "c.json"
    p.write_text(json.dumps({"schema_version": 1}))
    with pytest.raises(ConfigError, match="experiment"):
        load_config(p)


def test_oracle_run_outputs(tmp_path):
    p = write_cfg(tmp_path, oracle_folds=2)
    assert main(["oracle", str(p)]) == 0
    out = tmp_path / "out"
    folds = (out / "oracle_folds.csv").read_text().splitlines()
    assert folds[0] == "index,lambda"
    first = float(folds[1].split(",")[1])
    assert abs(first - 0.78922927) < 1e-7
    curve = (out / "oracle_curve.csv").read_text().splitlines()
    assert curve[0] == "eta,w,wprime,u0_abs,lambda"
    manifest = json.loads((out / "manifest.json").read_text())
    assert manifest["experiment"] == "oracle"
    assert manifest["oracle_folds"] == 2
    assert "newton_tol" in manifest  # defaults echoed for reproducibility


def test_oracle_reruns_byte_identical(tmp_path):
    p1 = write_cfg(tmp_path, name="a.json", oracle_folds=2, out_dir=str(tmp_path / "o1"))
    p2 = write_cfg(tmp_path, name="b.json", oracle_folds=2, out_dir=str(tmp_path / "o2"))
    assert run(p1) == 0
    assert run(p2) == 0
    for f in ("oracle_curve.csv", "oracle_folds.csv"):
        assert (tmp_path / "o1" / f).read_bytes() == (tmp_path / "o2" / f).read_bytes()


def test_trace_run_with_snapshots(tmp_path):
    p = write_cfg(
        tmp_path,
        experiment="trace",
        domain="interval",
        epsilon=0.3,
        resolution=24,
        max_steps=12,
        nu=0,
        stability_mode="parity",
        snapshot_every=5,
    )
    assert main(["trace", str(p)]) == 0
    out = tmp_path / "out"
    lines = (out / "branch.csv").read_text().splitlines()
    assert lines[0].startswith("step,s,lambda,")
    assert len(lines) == 14  # header + initial point + 12 steps
    assert (out / "folds.csv").read_text().splitlines()[0] == "index,lambda,u_l2,u_linf"
    assert (out / "snapshot_0.txt").exists()
    assert (out / "snapshot_5.txt").exists()
    assert (out / "snapshot_10.txt").exists()


def test_trace_reruns_byte_identical(tmp_path):
    outs = []
    for tag in ("r1", "r2"):
        p = write_cfg(
            tmp_path, name=f"{tag}.json", experiment="trace", domain="interval",
            epsilon=0.25, resolution=16, max_steps=10, nu=2,
            out_dir=str(tmp_path / tag),
        )
        assert run(p) == 0
        outs.append((tmp_path / tag / "branch.csv").read_bytes())
    assert outs[0] == outs[1]


def test_env_var_overrides_out_dir(tmp_path, monkeypatch):
    target = tmp_path / "env_out"
    monkeypatch.setenv("BIFURCURVE_OUT", str(target))
    p = write_cfg(tmp_path, oracle_folds=2, out_dir=str(tmp_path / "ignored"))
    assert run(p) == 0
    assert (target / "oracle_folds.csv").exists()
    assert not (tmp_path / "ignored").exists()


def test_validate_subcommand(tmp_path, capsys):
    p = write_cfg(tmp_path)
    assert main(["validate", str(p)]) == 0
    echoed = json.loads(capsys.readouterr().out)
    assert echoed["experiment"] == "oracle"
    assert echoed["m"] == 4


def test_command_experiment_mismatch(tmp_path):
    p = write_cfg(tmp_path, experiment="trace", domain="interval", max_steps=3)
    assert main(["oracle", str(p)]) == 2


def test_console_entry_point(tmp_path):
    p = write_cfg(tmp_path, oracle_folds=2)
    proc = subprocess.run(
        [sys.executable, "-m", "bifurcurve.cli", "validate", str(p)],
        capture_output=True, text=True,
    )
    assert proc.returncode == 0
    assert '"experiment": "oracle"' in proc.stdout


def test_square_eps03_no_folds(tmp_path):
    # large regularization keeps the branch single-valued
    p = write_cfg(
        tmp_path, experiment="trace", domain="square", epsilon=0.3,
        resolution=10, max_steps=150, nu=0, stability_mode="parity",
        lambda_max=4.0, ds_max=0.25,
    )
    assert run(p) == 0
    folds = (tmp_path / "out" / "folds.csv").read_text().splitlines()
    assert len(folds) == 1  # header only
