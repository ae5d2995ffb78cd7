"""Hierarchical a posteriori error indicators and the marking rule.

Each interior edge carries a quadratic bubble 4*lam_a*lam_b supported on
the two neighboring triangles.  The indicator of the bubble is
|r|^2 / a with r the weak residual of the current iterate against the
bubble and a the bubble's local (linearized) energy; the value is split
evenly between the two triangles sharing the edge.  In 1D the enrichment
lives on element midpoints, one bubble per interval.
"""

from __future__ import annotations

import numpy as np

from .assembly import ProblemParams, source, source_dw
from .mesh import Field, Mesh, edge_table, element_volumes

_gx, _gw = np.polynomial.legendre.leggauss(5)
_GAUSS5_X = 0.5 * (1.0 + _gx)
_GAUSS5_W = 0.5 * _gw


def estimate(u: Field, lam: float, params: ProblemParams, mesh: Mesh) -> np.ndarray:
    """Per-element nonnegative error indicators."""
    if not u.bound_to(mesh):
        raise ValueError("field is not bound to the given mesh")
    if mesh.dim == 1:
        return _estimate_1d(u, lam, params, mesh)
    return _estimate_2d(u, lam, params, mesh)


def _estimate_1d(u, lam, params, mesh):
    xa = mesh.vertices[mesh.elements[:, 0], 0]
    xb = mesh.vertices[mesh.elements[:, 1], 0]
    h = xb - xa
    ua = u.values[mesh.elements[:, 0]]
    ub = u.values[mesh.elements[:, 1]]
    # bubble psi = 4 t (1-t) on each interval has zero-mean slope, so the
    # stiffness part of the residual drops out; only the source remains
    r = np.zeros(mesh.n_elements)
    a = 16.0 / (3.0 * h)
    for x, w in zip(_GAUSS5_X, _GAUSS5_W):
        uu = (1 - x) * ua + x * ub
        psi = 4.0 * x * (1.0 - x)
        r -= w * h * psi * source(uu, lam, params)
        a = a + w * h * psi * psi * source_dw(uu, lam, params)
    stiff = 16.0 / (3.0 * h)
    a = np.where(a > 0, a, stiff)
    return r * r / a


def _estimate_2d(u, lam, params, mesh):
    edges, tri2edge, counts = edge_table(mesh)
    vol = element_volumes(mesh)
    p = mesh.vertices[mesh.elements]
    # constant gradients of the three barycentric coordinates per triangle
    g = np.empty((mesh.n_elements, 3, 2))
    for k in range(3):
        a, b = p[:, (k + 1) % 3], p[:, (k + 2) % 3]
        g[:, k, 0] = (a[:, 1] - b[:, 1]) / (2.0 * vol)
        g[:, k, 1] = (b[:, 0] - a[:, 0]) / (2.0 * vol)
    grad_u = np.einsum("tk,tkd->td", u.values[mesh.elements], g)

    ne = len(edges)
    r = np.zeros(ne)
    a = np.zeros(ne)
    a_stiff = np.zeros(ne)
    # local edge k joins vertices k and k+1; the opposite vertex is k+2
    for k in range(3):
        eids = tri2edge[:, k]
        i1, i2, opp = k, (k + 1) % 3, (k + 2) % 3
        g1, g2 = g[:, i1, :], g[:, i2, :]
        umid = 0.5 * (u.values[mesh.elements[:, i1]] + u.values[mesh.elements[:, i2]])
        s_mid = source(umid, lam, params)
        su_mid = source_dw(umid, lam, params)
        # int grad(psi).grad(u) = -(4A/3) grad(lam_opp).grad(u)
        stiff_term = -(4.0 * vol / 3.0) * np.einsum("td,td->t", g[:, opp, :], grad_u)
        np.add.at(r, eids, -(stiff_term + (vol / 3.0) * s_mid))
        e_stiff = (8.0 * vol / 3.0) * (
            np.einsum("td,td->t", g1, g1)
            + np.einsum("td,td->t", g2, g2)
            + np.einsum("td,td->t", g1, g2)
        )
        np.add.at(a_stiff, eids, e_stiff)
        np.add.at(a, eids, e_stiff + (vol / 3.0) * su_mid)

    interior = counts == 2
    a = np.where(a > 0, a, a_stiff)  # keep indicators nonnegative
    e_edge = np.where(interior & (a > 0), r * r / np.where(a > 0, a, 1.0), 0.0)

    out = np.zeros(mesh.n_elements)
    for k in range(3):
        out += 0.5 * e_edge[tri2edge[:, k]]
    return out


def mark(e: np.ndarray, kappa: float, rho: float):
    """Refine where e_i > kappa * sum(e), coarsen where e_i < rho * sum(e)."""
    if not 0.0 < rho < kappa:
        raise ValueError("marking thresholds require 0 < rho < kappa")
    e = np.asarray(e, dtype=float)
    total = e.sum()
    if total <= 0.0:
        return set(), set()
    refine_set = set(np.nonzero(e > kappa * total)[0].tolist())
    coarsen_set = set(np.nonzero(e < rho * total)[0].tolist())
    return refine_set, coarsen_set
