#!/usr/bin/env python3
"""Bifurcation diagram from branch/fold CSV files.

Reads the solver's branch CSV format (one file per branch), draws lambda
against the chosen solution norm with stable segments solid and unstable
segments dashed, and overlays fold markers.  With --check-spiral the
script also asserts that the last three folds lie within 0.05 of 4/9,
the spiral center of the unregularized disk problem.

Usage: plot_bifurcation.py --in branch.csv [more.csv ...]
                           [--folds folds.csv] --out diagram.png
                           [--norm l2|linf] [--check-spiral]

The script only reads columns; it computes no solver mathematics.
"""

import argparse
import csv
import sys

import matplotlib

matplotlib.use("Agg")
import matplotlib.pyplot as plt

BRANCH_COLUMNS = ["step", "s", "lambda", "u_l2", "u_linf", "n_dof", "n_tri",
                  "newton_iters", "ds", "det_sign", "smallest_eig", "stable"]
FOLD_COLUMNS = ["index", "lambda", "u_l2", "u_linf"]

SPIRAL_CENTER = 4.0 / 9.0


class FormatError(Exception):
    pass


def read_csv_strict(path, expected_columns):
    with open(path, newline="") as fh:
        reader = csv.reader(fh)
        rows = [r for r in reader if r and not r[0].startswith("#")]
    if not rows:
        raise FormatError(f"{path}: empty file")
    header = [h.strip() for h in rows[0]]
    for want, got in zip(expected_columns, header + [""] * len(expected_columns)):
        if want != got:
            raise FormatError(f"{path}: expected column '{want}', found '{got or 'nothing'}'")
    if len(header) != len(expected_columns):
        raise FormatError(f"{path}: unexpected extra column '{header[len(expected_columns)]}'")
    out = {c: [] for c in expected_columns}
    for r in rows[1:]:
        for c, val in zip(expected_columns, r):
            out[c].append(val)
    return out


def split_stability_segments(norm_vals, lam_vals, stable_vals):
    """Consecutive runs of equal stability, each a (lams, norms, stable) arc."""
    segments = []
    start = 0
    for i in range(1, len(stable_vals) + 1):
        if i == len(stable_vals) or stable_vals[i] != stable_vals[start]:
            hi = min(i + 1, len(stable_vals))  # overlap keeps the curve connected
            segments.append((lam_vals[start:hi], norm_vals[start:hi], stable_vals[start]))
            start = i
    return segments


def main(argv=None):
    ap = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    ap.add_argument("--in", dest="inputs", nargs="+", required=True,
                    help="branch CSV files, one curve each")
    ap.add_argument("--folds", help="folds CSV for fold markers")
    ap.add_argument("--out", required=True, help="output image path")
    ap.add_argument("--norm", choices=("l2", "linf"), default="l2")
    ap.add_argument("--check-spiral", action="store_true",
                    help="assert the last three folds are within 0.05 of 4/9")
    args = ap.parse_args(argv)

    col = "u_l2" if args.norm == "l2" else "u_linf"
    fig, ax = plt.subplots(figsize=(6.4, 4.8))
    colors = plt.rcParams["axes.prop_cycle"].by_key()["color"]
    try:
        for k, path in enumerate(args.inputs):
            data = read_csv_strict(path, BRANCH_COLUMNS)
            lam = [float(x) for x in data["lambda"]]
            norm = [float(x) for x in data[col]]
            stable = [x.strip() == "1" for x in data["stable"]]
            color = colors[k % len(colors)]
            seen_style = set()
            for lam_seg, norm_seg, is_stable in split_stability_segments(norm, lam, stable):
                style = "-" if is_stable else "--"
                label = None
                if style not in seen_style:
                    seen_style.add(style)
                    label = f"{path.rsplit('/', 1)[-1]} ({'stable' if is_stable else 'unstable'})"
                ax.plot(lam_seg, norm_seg, style, color=color, lw=1.2, label=label)
        fold_lams = []
        if args.folds:
            folds = read_csv_strict(args.folds, FOLD_COLUMNS)
            fold_lams = [float(x) for x in folds["lambda"]]
            fold_norm = [float(x) for x in folds[col]]
            if fold_lams:
                ax.plot(fold_lams, fold_norm, "o", color="k", ms=5, mfc="none",
                        label="folds")
    except FormatError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 1

    ax.set_xlabel(r"$\lambda$")
    ax.set_ylabel(r"$\|u\|_2$" if args.norm == "l2" else r"$\|u\|_\infty$")
    ax.legend(fontsize=7, loc="best")
    fig.tight_layout()
    fig.savefig(args.out, dpi=150)
    plt.close(fig)

    if args.check_spiral:
        if len(fold_lams) < 3:
            print("error: spiral check needs at least 3 folds", file=sys.stderr)
            return 1
        tail = fold_lams[-3:]
        bad = [lam for lam in tail if abs(lam - SPIRAL_CENTER) > 0.05]
        if bad:
            print(f"error: folds {bad} are not within 0.05 of {SPIRAL_CENTER:.6f}",
                  file=sys.stderr)
            return 1
        print(f"spiral check passed: last 3 folds within 0.05 of {SPIRAL_CENTER:.6f}")
    return 0


if __name__ == "__main__":
    sys.exit(main())
