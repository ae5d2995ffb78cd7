#!/usr/bin/env python3
"""Solution contours with the computational mesh overlaid.

Reads a solver snapshot (header ``NV NT D``, then coordinates, elements
and nodal values) and renders a filled-contour plot of the nodal field
with the triangulation drawn on top; 1D snapshots become a line plot.
With --check-refinement the script asserts that triangles in the
steep-gradient region are on average at least four times smaller than
the domain mean, i.e. that the mesh is genuinely adapted.

Usage: plot_mesh_solution.py --in snapshot.txt --out tile.png
                             [--check-refinement]

The script only reads the snapshot; it computes no solver mathematics.
"""

import argparse
import sys

import matplotlib
import numpy as np

matplotlib.use("Agg")
import matplotlib.pyplot as plt


class FormatError(Exception):
    pass


def parse_snapshot(path):
    with open(path) as fh:
        lines = fh.read().splitlines()
    lines = [ln.strip() for ln in lines if ln.strip()]
    if not lines:
        raise FormatError(f"{path}:1: empty snapshot")
    try:
        nv, nt, dim = (int(x) for x in lines[0].split())
    except ValueError:
        raise FormatError(f"{path}:1: header must be 'NV NT D'")
    expected = 1 + nv + nt + nv
    if len(lines) != expected:
        raise FormatError(
            f"{path}:{min(len(lines), expected) + 1}: expected {expected} lines, found {len(lines)}")
    verts = np.empty((nv, dim))
    for i in range(nv):
        parts = lines[1 + i].split()
        if len(parts) != dim:
            raise FormatError(f"{path}:{2 + i}: expected {dim} coordinates")
        verts[i] = [float(x) for x in parts]
    elems = np.empty((nt, dim + 1), dtype=int)
    for i in range(nt):
        parts = lines[1 + nv + i].split()
        if len(parts) != dim + 1:
            raise FormatError(f"{path}:{2 + nv + i}: expected {dim + 1} vertex indices")
        elems[i] = [int(x) for x in parts]
        if elems[i].min() < 0 or elems[i].max() >= nv:
            raise FormatError(f"{path}:{2 + nv + i}: vertex index out of range")
    vals = np.empty(nv)
    for i in range(nv):
        try:
            vals[i] = float(lines[1 + nv + nt + i])
        except ValueError:
            raise FormatError(f"{path}:{2 + nv + nt + i}: bad nodal value")
    return verts, elems, vals


def triangle_geometry(verts, elems):
    p = verts[elems]
    d1 = p[:, 1] - p[:, 0]
    d2 = p[:, 2] - p[:, 0]
    area = 0.5 * np.abs(d1[:, 0] * d2[:, 1] - d1[:, 1] * d2[:, 0])
    return area


def triangle_gradients(verts, elems, vals):
    p = verts[elems]
    v = vals[elems]
    d1 = p[:, 1] - p[:, 0]
    d2 = p[:, 2] - p[:, 0]
    det = d1[:, 0] * d2[:, 1] - d1[:, 1] * d2[:, 0]
    gx = ((v[:, 1] - v[:, 0]) * d2[:, 1] - (v[:, 2] - v[:, 0]) * d1[:, 1]) / det
    gy = (-(v[:, 1] - v[:, 0]) * d2[:, 0] + (v[:, 2] - v[:, 0]) * d1[:, 0]) / det
    return np.hypot(gx, gy)


def main(argv=None):
    ap = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    ap.add_argument("--in", dest="snapshot", required=True, help="snapshot file")
    ap.add_argument("--out", required=True, help="output image path")
    ap.add_argument("--check-refinement", action="store_true",
                    help="assert steep-gradient triangles are at least 4x smaller than average")
    args = ap.parse_args(argv)

    try:
        verts, elems, vals = parse_snapshot(args.snapshot)
    except FormatError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 1

    if verts.shape[1] == 1:
        order = np.argsort(verts[:, 0])
        fig, ax = plt.subplots(figsize=(6.0, 3.2))
        ax.plot(verts[order, 0], vals[order], "-", lw=1.2)
        ax.plot(verts[:, 0], vals, "k.", ms=2)
        ax.set_xlabel("x")
        ax.set_ylabel("u")
    else:
        fig, ax = plt.subplots(figsize=(5.6, 5.2))
        tri = matplotlib.tri.Triangulation(verts[:, 0], verts[:, 1], elems)
        m = ax.tricontourf(tri, vals, levels=24, cmap="viridis")
        ax.triplot(tri, color="k", lw=0.18, alpha=0.6)
        fig.colorbar(m, ax=ax, shrink=0.85)
        ax.set_aspect("equal")
    fig.tight_layout()
    fig.savefig(args.out, dpi=150)
    plt.close(fig)

    if args.check_refinement:
        if verts.shape[1] != 2:
            print("error: refinement check needs a 2D snapshot", file=sys.stderr)
            return 1
        area = triangle_geometry(verts, elems)
        grad = triangle_gradients(verts, elems, vals)
        steep = grad >= 0.5 * grad.max()
        if not steep.any() or grad.max() == 0:
            print("error: no steep-gradient region found", file=sys.stderr)
            return 1
        ratio = area[steep].mean() / area.mean()
        if not ratio < 0.25:
            print(f"error: steep-region mean area ratio {ratio:.3f} is not < 0.25",
                  file=sys.stderr)
            return 1
        print(f"refinement check passed: steep-region mean area ratio {ratio:.3f}")
    return 0


if __name__ == "__main__":
    sys.exit(main())
