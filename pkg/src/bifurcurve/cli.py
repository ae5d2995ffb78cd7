"""Configuration-driven command line front end.

Experiments are described by flat JSON files (schema_version 1) and run
with ``bifurcurve <experiment> <config>``.  Every run writes a manifest
echoing the fully resolved configuration so results can be reproduced
from the output directory alone; all iteration orders and start vectors
are fixed, so reruns produce byte-identical CSV output.
"""

from __future__ import annotations

import argparse
import json
import os
import sys
from dataclasses import fields as dc_fields
from pathlib import Path

import numpy as np

from . import __version__
from .assembly import ProblemParams
from .branching import branch_hunt
from .continuation import (
    Branch,
    CannotProceed,
    ContinuationConfig,
    trace,
    write_branch_csv,
    write_folds_csv,
)
from .mesh import DomainSpec, write_snapshot
from .oracle import find_fold_lambdas, integrate_w, write_oracle_curve_csv, write_oracle_folds_csv

EXPERIMENTS = ("trace", "oracle", "branch-hunt", "convergence")

BRANCH_POINTS_HEADER = "lambda,u_l2,u_linf,beta,n_dof"


class ConfigError(Exception):
    pass


_CONT_KEYS = {f.name: f.type for f in dc_fields(ContinuationConfig)}

# key -> (type, default); continuation keys are merged in below
_SCHEMA = {
    "schema_version": (int, 1),
    "experiment": (str, None),
    "domain": (str, "disk"),
    "interval_a": (float, -1.0),
    "interval_b": (float, 1.0),
    "annulus_r1": (float, 0.1),
    "epsilon": (float, 0.1),
    "m": (int, 4),
    "out_dir": (str, "out"),
    "snapshot_every": (int, 0),
    "oracle_folds": (int, 6),
    "oracle_rel_tol": (float, 1e-12),
    "oracle_eta_max": (float, 0.0),  # 0 = grow automatically
    "switch_steps": (int, 40),
    "switch_delta": (float, 0.0),  # 0 = scale with newton_tol
    "resolutions": (list, [16, 32, 64]),
}
for _name in _CONT_KEYS:
    _f = ContinuationConfig.__dataclass_fields__[_name]
    _SCHEMA[_name] = (type(_f.default), _f.default)


def _coerce(key, want, value):
    if want is bool:
        if isinstance(value, bool):
            return value
        raise ConfigError(f"key '{key}' must be a boolean")
    if want is int:
        if isinstance(value, bool) or not isinstance(value, int):
            raise ConfigError(f"key '{key}' must be an integer")
        return value
    if want is float:
        if isinstance(value, bool) or not isinstance(value, (int, float)):
            raise ConfigError(f"key '{key}' must be a number")
        return float(value)
    if want is str:
        if not isinstance(value, str):
            raise ConfigError(f"key '{key}' must be a string")
        return value
    if want is list:
        if not isinstance(value, list) or not all(isinstance(x, int) for x in value):
            raise ConfigError(f"key '{key}' must be a list of integers")
        return list(value)
    raise ConfigError(f"key '{key}' has unsupported type")


def load_config(path) -> dict:
    """Parse and validate a flat JSON config; unknown keys are rejected."""
    try:
        raw = json.loads(Path(path).read_text())
    except FileNotFoundError:
        raise ConfigError(f"config file not found: {path}")
    except json.JSONDecodeError as exc:
        raise ConfigError(f"config is not valid JSON: {exc}")
    if not isinstance(raw, dict):
        raise ConfigError("config must be a JSON object")
    for key in raw:
        if key not in _SCHEMA:
            raise ConfigError(f"unknown config key '{key}'")
    resolved = {}
    for key, (want, default) in _SCHEMA.items():
        if key in raw:
            resolved[key] = _coerce(key, want, raw[key])
        else:
            resolved[key] = default
    if resolved["schema_version"] != 1:
        raise ConfigError("key 'schema_version' must be 1")
    if resolved["experiment"] is None:
        raise ConfigError("key 'experiment' is required")
    if resolved["experiment"] not in EXPERIMENTS:
        raise ConfigError(f"key 'experiment' must be one of {EXPERIMENTS}")
    if resolved["domain"] not in ("interval", "square", "disk", "annulus"):
        raise ConfigError("key 'domain' must be interval, square, disk or annulus")
    if not resolved["rho"] < resolved["kappa"]:
        raise ConfigError("keys 'kappa'/'rho' must satisfy rho < kappa")
    return resolved


def _domain(cfg) -> DomainSpec:
    kind = cfg["domain"]
    if kind == "interval":
        return DomainSpec.interval(cfg["interval_a"], cfg["interval_b"])
    if kind == "square":
        return DomainSpec.square()
    if kind == "disk":
        return DomainSpec.disk()
    return DomainSpec.annulus(cfg["annulus_r1"])


def _params(cfg) -> ProblemParams:
    return ProblemParams(cfg["epsilon"], cfg["m"], _domain(cfg))


def _continuation(cfg) -> ContinuationConfig:
    kwargs = {name: cfg[name] for name in _CONT_KEYS}
    return ContinuationConfig(**kwargs)


def _out_dir(cfg) -> Path:
    out = os.environ.get("BIFURCURVE_OUT") or cfg["out_dir"]
    p = Path(out)
    p.mkdir(parents=True, exist_ok=True)
    return p


def _write_manifest(cfg, out: Path) -> None:
    manifest = dict(cfg)
    manifest["package_version"] = __version__
    (out / "manifest.json").write_text(json.dumps(manifest, indent=2, sort_keys=True) + "\n")


def _write_snapshots(branch: Branch, every: int, out: Path) -> None:
    if every <= 0:
        return
    for smp in branch.samples:
        if smp.step % every == 0 and smp.u is not None:
            mesh = branch.meshes.get(smp.u.mesh_generation)
            if mesh is not None:
                write_snapshot(out / f"snapshot_{smp.step}.txt", mesh, smp.u)


def _run_trace(cfg, out: Path) -> int:
    params = _params(cfg)
    ccfg = _continuation(cfg)
    code = 0
    try:
        branch = trace(params, ccfg)
    except CannotProceed as exc:
        print(f"trace stopped early: {exc}", file=sys.stderr)
        branch = exc.branch
        code = 3
        if branch is None:
            return code
    write_branch_csv(branch, out / "branch.csv")
    write_folds_csv(branch.folds, out / "folds.csv")
    _write_snapshots(branch, cfg["snapshot_every"], out)
    return code


def _run_oracle(cfg, out: Path) -> int:
    from .continuation import FOLDS_HEADER
    from .oracle import disk_branch_samples

    lams, etas = find_fold_lambdas(cfg["oracle_folds"], cfg["oracle_rel_tol"], return_eta=True)
    eta_max = cfg["oracle_eta_max"] or 30.0 * etas[-1]
    traj = integrate_w(eta_max, cfg["oracle_rel_tol"])
    write_oracle_curve_csv(traj, out / "oracle_curve.csv")
    write_oracle_folds_csv(lams, out / "oracle_folds.csv")

    # the same curve in branch-CSV form, for plotting tools that read the
    # continuation output format; stability alternates at each fold
    lam_c, l2_c, u0_c, grid_etas = disk_branch_samples(traj, n=500, eta_hi=eta_max / 2.0)
    lines = ["step,s,lambda,u_l2,u_linf,n_dof,n_tri,newton_iters,ds,det_sign,smallest_eig,stable"]
    for i in range(len(lam_c)):
        n_folds_passed = sum(1 for e in etas if e < grid_etas[i])
        stable = 1 if n_folds_passed % 2 == 0 else 0
        det = 1 if stable else -1
        lines.append(
            f"{i},{grid_etas[i]:.17g},{lam_c[i]:.17g},{l2_c[i]:.17g},{u0_c[i]:.17g},"
            f"0,0,0,0,{det},nan,{stable}")
    (out / "disk_branch.csv").write_text("\n".join(lines) + "\n")

    _, fold_l2, fold_u0, _ = disk_branch_samples(traj, etas=np.array(etas))
    lines = [FOLDS_HEADER]
    for i, lam in enumerate(lams):
        lines.append(f"{i},{lam:.17g},{fold_l2[i]:.17g},{fold_u0[i]:.17g}")
    (out / "folds.csv").write_text("\n".join(lines) + "\n")
    return 0


def write_branch_points_csv(records, meshes, path) -> None:
    lines = [BRANCH_POINTS_HEADER]
    for bp in records:
        n_dof = len(bp.v)
        lines.append(",".join([
            f"{bp.lam:.17g}", f"{bp.l2:.17g}", f"{bp.linf:.17g}",
            f"{bp.beta:.17g}", str(n_dof),
        ]))
    with open(path, "w", newline="\n") as fh:
        fh.write("\n".join(lines) + "\n")


def _run_branch_hunt(cfg, out: Path) -> int:
    params = _params(cfg)
    ccfg = _continuation(cfg)
    result = branch_hunt(params, ccfg, switch_steps=cfg["switch_steps"],
                         switch_delta=cfg["switch_delta"] or None)
    write_branch_csv(result.main, out / "branch.csv")
    write_folds_csv(result.main.folds, out / "folds.csv")
    write_branch_points_csv(result.branch_points, result.main.meshes,
                            out / "branch_points.csv")
    for idx, direction, br in result.asym_branches:
        tag = "p" if direction > 0 else "m"
        write_branch_csv(br, out / f"branch_asym{idx}_{tag}.csv")
    _write_snapshots(result.main, cfg["snapshot_every"], out)
    return 0


def convergence_study(cfg, out: Path):
    """Fold errors against the disk oracle on a ladder of fixed meshes.

    Returns (rows, slopes): one row per resolution with h_max, dof count,
    both fold values and relative errors; slopes are the fitted log-log
    rates of the two fold errors against h_max.
    """
    if cfg["domain"] != "disk" or cfg["epsilon"] != 0.0:
        raise ConfigError("convergence study requires domain 'disk' and epsilon 0")
    if len(cfg["resolutions"]) < 3:
        raise ConfigError("key 'resolutions' needs at least 3 mesh sizes")
    ref = find_fold_lambdas(2, cfg["oracle_rel_tol"])
    rows = []
    for res in cfg["resolutions"]:
        ccfg = _continuation({**cfg, "resolution": res, "nu": 0,
                              "stability_mode": "parity", "stop_after_folds": 2,
                              "keep_fields": False})
        branch = trace(_params(cfg), ccfg)
        if len(branch.folds) < 2:
            raise CannotProceed(f"resolution {res}: found {len(branch.folds)} folds, need 2")
        mesh = branch.meshes[max(branch.meshes)]
        from .mesh import generate_domain

        mesh0 = generate_domain(_domain(cfg), res)
        p = mesh0.vertices[mesh0.elements]
        edges = [np.linalg.norm(p[:, i] - p[:, j], axis=1) for i, j in ((0, 1), (1, 2), (2, 0))]
        h_max = float(np.max(edges))
        lam0, lam1 = branch.folds[0].lam, branch.folds[1].lam
        rows.append({
            "h_max": h_max,
            "n_dof": int((~mesh0.boundary).sum()),
            "lambda0": lam0,
            "lambda1": lam1,
            "rel_err0": abs(lam0 - ref[0]) / ref[0],
            "rel_err1": abs(lam1 - ref[1]) / ref[1],
        })
    hs = np.log([r["h_max"] for r in rows])
    slopes = tuple(
        float(np.polyfit(hs, np.log([r[key] for r in rows]), 1)[0])
        for key in ("rel_err0", "rel_err1")
    )
    lines = ["h_max,n_dof,lambda0,lambda1,rel_err0,rel_err1"]
    for r in rows:
        lines.append(",".join([
            f"{r['h_max']:.17g}", str(r["n_dof"]), f"{r['lambda0']:.17g}",
            f"{r['lambda1']:.17g}", f"{r['rel_err0']:.17g}", f"{r['rel_err1']:.17g}",
        ]))
    lines.append(f"# slope0 {slopes[0]:.4f} slope1 {slopes[1]:.4f}")
    (out / "convergence.csv").write_text("\n".join(lines) + "\n")
    return rows, slopes


def run(config_path, experiment=None) -> int:
    """Execute one experiment; returns a process exit status."""
    try:
        cfg = load_config(config_path)
        if experiment is not None and cfg["experiment"] != experiment:
            raise ConfigError(
                f"config declares experiment '{cfg['experiment']}', command was '{experiment}'")
        out = _out_dir(cfg)
        _write_manifest(cfg, out)
        kind = cfg["experiment"]
        if kind == "trace":
            return _run_trace(cfg, out)
        if kind == "oracle":
            return _run_oracle(cfg, out)
        if kind == "branch-hunt":
            return _run_branch_hunt(cfg, out)
        convergence_study(cfg, out)
        return 0
    except ConfigError as exc:
        print(f"config error: {exc}", file=sys.stderr)
        return 2
    except CannotProceed as exc:
        print(f"solver could not proceed: {exc}", file=sys.stderr)
        return 3


def main(argv=None) -> int:
    parser = argparse.ArgumentParser(
        prog="bifurcurve",
        description="Equilibrium bifurcation diagrams of the regularized MEMS equation",
    )
    sub = parser.add_subparsers(dest="command", required=True)
    for name in EXPERIMENTS:
        p = sub.add_parser(name, help=f"run a {name} experiment")
        p.add_argument("config", help="path to a JSON config file")
    v = sub.add_parser("validate", help="parse a config and echo the resolved values")
    v.add_argument("config")
    args = parser.parse_args(argv)

    if args.command == "validate":
        try:
            cfg = load_config(args.config)
        except ConfigError as exc:
            print(f"config error: {exc}", file=sys.stderr)
            return 2
        print(json.dumps(cfg, indent=2, sort_keys=True))
        return 0
    return run(args.config, experiment=args.command)


if __name__ == "__main__":
    sys.exit(main())
