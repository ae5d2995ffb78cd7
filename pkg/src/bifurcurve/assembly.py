"""P1 Galerkin residual, Jacobian and parameter derivative for the
regularized MEMS operator, plus solution norms.

The deflection u solves  Lap(u) = S(u, lambda)  with
S(w, lambda) = lambda/(1+w)^2 - lambda*eps^(m-2)/(1+w)^m and homogeneous
Dirichlet data.  Stiffness and mass terms are exact for P1; the nonlinear
source uses the 3-point mid-edge rule on triangles (exact for quadratics)
and Gauss rules on intervals, the same rule for residual and Jacobian so
that the two are consistent to roundoff.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np
import scipy.sparse as sp

from .mesh import DomainSpec, Field, Mesh, element_volumes


class SingularDeflectionError(Exception):
    """A deflection value reached the contact singularity u = -1."""


@dataclass(frozen=True)
class ProblemParams:
    """PDE instance: regularization strength, exponent and domain."""

    epsilon: float
    m: int
    domain: DomainSpec

    def __post_init__(self):
        if self.epsilon < 0:
            raise ValueError("epsilon must be >= 0")
        if int(self.m) <= 2:
            raise ValueError("m must be an integer > 2")


def source(w, lam: float, params: ProblemParams):
    """S(w, lambda); w may be scalar or array, all entries > -1."""
    w = np.asarray(w, dtype=float)
    if np.any(w <= -1.0):
        raise SingularDeflectionError("deflection reached u = -1")
    em = params.epsilon ** (params.m - 2)
    return lam / (1.0 + w) ** 2 - lam * em / (1.0 + w) ** params.m


def source_dw(w, lam: float, params: ProblemParams):
    """dS/dw at fixed lambda."""
    w = np.asarray(w, dtype=float)
    if np.any(w <= -1.0):
        raise SingularDeflectionError("deflection reached u = -1")
    em = params.epsilon ** (params.m - 2)
    return -2.0 * lam / (1.0 + w) ** 3 + params.m * lam * em / (1.0 + w) ** (params.m + 1)


def source_dw2(w, lam: float, params: ProblemParams):
    """d2S/dw2 at fixed lambda."""
    w = np.asarray(w, dtype=float)
    if np.any(w <= -1.0):
        raise SingularDeflectionError("deflection reached u = -1")
    em = params.epsilon ** (params.m - 2)
    mm = params.m
    return 6.0 * lam / (1.0 + w) ** 4 - mm * (mm + 1) * lam * em / (1.0 + w) ** (mm + 2)


def _check_admissible(u: Field, mesh: Mesh):
    if not u.bound_to(mesh):
        raise ValueError("field is not bound to the given mesh")
    if np.any(u.values <= -1.0):
        raise SingularDeflectionError("nodal value reached u = -1")


# quadrature: (barycentric points, weights as fractions of the volume)
_TRI_PTS = np.array([[0.5, 0.5, 0.0], [0.0, 0.5, 0.5], [0.5, 0.0, 0.5]])
_TRI_WTS = np.full(3, 1.0 / 3.0)
_GAUSS2 = 0.5 * (1.0 + np.array([-1.0, 1.0]) / np.sqrt(3.0))
_SEG_PTS = np.column_stack([1.0 - _GAUSS2, _GAUSS2])
_SEG_WTS = np.full(2, 0.5)


def _quad(mesh):
    return (_SEG_PTS, _SEG_WTS) if mesh.dim == 1 else (_TRI_PTS, _TRI_WTS)


def _grads(mesh):
    """Constant P1 basis gradients per element, shape (nt, nodes, dim)."""
    p = mesh.vertices[mesh.elements]
    if mesh.dim == 1:
        h = (p[:, 1, 0] - p[:, 0, 0])[:, None]
        return np.stack([-1.0 / h, 1.0 / h], axis=1)
    vol = element_volumes(mesh)
    g = np.empty((mesh.n_elements, 3, 2))
    for k in range(3):
        a, b = p[:, (k + 1) % 3], p[:, (k + 2) % 3]
        g[:, k, 0] = (a[:, 1] - b[:, 1]) / (2.0 * vol)
        g[:, k, 1] = (b[:, 0] - a[:, 0]) / (2.0 * vol)
    return g


def stiffness_matrix(mesh: Mesh) -> sp.csr_matrix:
    """Exact P1 stiffness matrix over all vertices."""
    g = _grads(mesh)
    vol = element_volumes(mesh)
    nodes = mesh.elements.shape[1]
    kt = np.einsum("tid,tjd->tij", g, g) * vol[:, None, None]
    rows = np.repeat(mesh.elements, nodes, axis=1).ravel()
    cols = np.tile(mesh.elements, (1, nodes)).ravel()
    A = sp.coo_matrix((kt.ravel(), (rows, cols)), shape=(mesh.n_vertices,) * 2)
    return A.tocsr()


def mass_matrix(mesh: Mesh) -> sp.csr_matrix:
    """Exact P1 mass matrix over all vertices."""
    vol = element_volumes(mesh)
    if mesh.dim == 1:
        local = np.array([[2.0, 1.0], [1.0, 2.0]]) / 6.0
    else:
        local = (np.ones((3, 3)) + np.eye(3)) / 12.0
    nodes = mesh.elements.shape[1]
    mt = local[None, :, :] * vol[:, None, None]
    rows = np.repeat(mesh.elements, nodes, axis=1).ravel()
    cols = np.tile(mesh.elements, (1, nodes)).ravel()
    A = sp.coo_matrix((mt.ravel(), (rows, cols)), shape=(mesh.n_vertices,) * 2)
    return A.tocsr()


def _quad_values(mesh, values):
    """Field values at the element quadrature points, shape (nt, nq)."""
    pts, _ = _quad(mesh)
    return values[mesh.elements] @ pts.T


def weighted_mass_matrix(mesh: Mesh, weight_at_quad) -> sp.csr_matrix:
    """Assemble sum_T int_T phi_i phi_j w dV with w given per quad point."""
    pts, wts = _quad(mesh)
    vol = element_volumes(mesh)
    nodes = mesh.elements.shape[1]
    # local(i,j) per element: sum_q w_q * phi_i(q) * phi_j(q) * wt_q * vol
    phi = pts.T  # (nodes, nq)
    local = np.einsum("tq,iq,jq,q->tij", weight_at_quad, phi, phi, wts)
    local *= vol[:, None, None]
    rows = np.repeat(mesh.elements, nodes, axis=1).ravel()
    cols = np.tile(mesh.elements, (1, nodes)).ravel()
    A = sp.coo_matrix((local.ravel(), (rows, cols)), shape=(mesh.n_vertices,) * 2)
    return A.tocsr()


def load_vector(mesh: Mesh, weight_at_quad) -> np.ndarray:
    """Assemble sum_T int_T phi_i w dV with w given per quad point."""
    pts, wts = _quad(mesh)
    vol = element_volumes(mesh)
    phi = pts.T
    local = np.einsum("tq,iq,q->ti", weight_at_quad, phi, wts) * vol[:, None]
    out = np.zeros(mesh.n_vertices)
    np.add.at(out, mesh.elements.ravel(), local.ravel())
    return out


def residual(u: Field, lam: float, params: ProblemParams, mesh: Mesh) -> np.ndarray:
    """Galerkin residual over the free (interior) degrees of freedom."""
    _check_admissible(u, mesh)
    K = stiffness_matrix(mesh)
    uq = _quad_values(mesh, u.values)
    f = K @ u.values + load_vector(mesh, source(uq, lam, params))
    return f[mesh.interior_mask]


def jacobian(u: Field, lam: float, params: ProblemParams, mesh: Mesh) -> sp.csr_matrix:
    """K + B(u, lambda) restricted to free degrees of freedom; symmetric."""
    _check_admissible(u, mesh)
    K = stiffness_matrix(mesh)
    uq = _quad_values(mesh, u.values)
    B = weighted_mass_matrix(mesh, source_dw(uq, lam, params))
    free = np.nonzero(mesh.interior_mask)[0]
    J = (K + B).tocsr()
    return J[np.ix_(free, free)].tocsr()


def dresidual_dlambda(u: Field, params: ProblemParams, mesh: Mesh) -> np.ndarray:
    """Derivative of the residual in lambda (the source is linear in it)."""
    _check_admissible(u, mesh)
    uq = _quad_values(mesh, u.values)
    g = source(uq, 1.0, params)  # S is lambda * g(u)
    return load_vector(mesh, g)[mesh.interior_mask]


def second_derivative_action(u: Field, lam: float, v_full: np.ndarray,
                             params: ProblemParams, mesh: Mesh) -> sp.csr_matrix:
    """Matrix of int phi_i phi_j d2S/du2(u) v dV over free dofs.

    This is the u-derivative of the Jacobian applied to a fixed direction
    v, needed by the extended system for branch points.
    """
    _check_admissible(u, mesh)
    uq = _quad_values(mesh, u.values)
    vq = _quad_values(mesh, v_full)
    C = weighted_mass_matrix(mesh, source_dw2(uq, lam, params) * vq)
    free = np.nonzero(mesh.interior_mask)[0]
    return C[np.ix_(free, free)].tocsr()


def dflambda_jacobian(u: Field, params: ProblemParams, mesh: Mesh) -> sp.csr_matrix:
    """u-derivative of dresidual_dlambda: int phi_i phi_j g'(u) dV, free dofs.

    Equals B(u, lambda)/lambda; assembled directly so it is valid at
    lambda = 0 as well.
    """
    _check_admissible(u, mesh)
    uq = _quad_values(mesh, u.values)
    D = weighted_mass_matrix(mesh, source_dw(uq, 1.0, params))
    free = np.nonzero(mesh.interior_mask)[0]
    return D[np.ix_(free, free)].tocsr()


def norms(u: Field, mesh: Mesh):
    """(continuous L2 norm of the P1 interpolant, max nodal magnitude)."""
    if not u.bound_to(mesh):
        raise ValueError("field is not bound to the given mesh")
    M = mass_matrix(mesh)
    l2 = float(np.sqrt(max(u.values @ (M @ u.values), 0.0)))
    linf = float(np.abs(u.values).max()) if len(u.values) else 0.0
    return l2, linf
