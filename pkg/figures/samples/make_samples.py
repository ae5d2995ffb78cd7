#!/usr/bin/env python3
"""Regenerate the shipped sample data via the solver CLI.

Runs three cheap experiments (two 1D traces and the disk oracle) and an
adapted 2D square trace, then copies the outputs used by the figure
scripts into this directory.  Requires the bifurcurve package.
"""

import json
import shutil
import subprocess
import sys
import tempfile
from pathlib import Path

HERE = Path(__file__).resolve().parent


def run_cli(experiment, cfg, out_dir):
    cfg = dict(cfg, out_dir=str(out_dir))
    cfg_path = out_dir.parent / f"{out_dir.name}.json"
    cfg_path.write_text(json.dumps(cfg))
    subprocess.run([sys.executable, "-m", "bifurcurve.cli", experiment, str(cfg_path)],
                   check=True)


def main():
    work = Path(tempfile.mkdtemp(prefix="bifurcurve_samples_"))

    common_1d = {
        "schema_version": 1,
        "experiment": "trace",
        "domain": "interval",
        "interval_a": -1.0,
        "interval_b": 1.0,
        "m": 4,
        "resolution": 160,
        "nu": 0,
        "stability_mode": "eig",
        "eig_count": 2,
        "ds_max": 0.05,
        "max_steps": 900,
        "lambda_max": 1.2,
        "linf_max": 0.93,
        "keep_fields": False,
    }
    for eps, tag in ((0.1, "eps01"), (0.2, "eps02")):
        out = work / f"oneD_{tag}"
        run_cli("trace", dict(common_1d, epsilon=eps), out)
        shutil.copy(out / "branch.csv", HERE / f"branch_1d_{tag}.csv")
        shutil.copy(out / "folds.csv", HERE / f"folds_1d_{tag}.csv")

    out = work / "oracle"
    run_cli("oracle", {"schema_version": 1, "experiment": "oracle", "oracle_folds": 6}, out)
    shutil.copy(out / "disk_branch.csv", HERE / "branch_disk_eps0.csv")
    shutil.copy(out / "folds.csv", HERE / "folds_disk_eps0.csv")

    out = work / "square"
    run_cli("trace", {
        "schema_version": 1,
        "experiment": "trace",
        "domain": "square",
        "epsilon": 0.05,
        "m": 4,
        "resolution": 12,
        "nu": 2,
        "kappa": 2e-3,
        "rho": 1e-5,
        "stability_mode": "parity",
        "ds_max": 0.1,
        "max_steps": 420,
        "linf_max": 0.965,
        "lambda_max": 3.4,
        "snapshot_every": 10,
    }, out)
    snaps = sorted(out.glob("snapshot_*.txt"), key=lambda p: int(p.stem.split("_")[1]))
    shutil.copy(snaps[-1], HERE / "snapshot_square_eps01.txt")

    # a sharp mid-branch front on the disk whose mesh is strongly adapted;
    # this one takes ten-plus minutes to regenerate
    out = work / "disk_front"
    run_cli("trace", {
        "schema_version": 1,
        "experiment": "trace",
        "domain": "disk",
        "epsilon": 0.015,
        "m": 4,
        "resolution": 10,
        "nu": 2,
        "kappa": 3e-4,
        "rho": 8e-5,
        "stability_mode": "parity",
        "ds_max": 0.05,
        "max_steps": 1200,
        "linf_max": 0.978,
        "lambda_max": 1.2,
        "snapshot_every": 10,
    }, out)
    snaps = sorted(out.glob("snapshot_*.txt"), key=lambda p: int(p.stem.split("_")[1]))
    shutil.copy(snaps[-1], HERE / "snapshot_disk_front.txt")
    print("samples regenerated into", HERE)


if __name__ == "__main__":
    main()
