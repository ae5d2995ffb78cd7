import numpy as np
import scipy.sparse as sp

from bifurcurve.mesh import Field


class ToyProblem:
    """Small dense problems driving the continuation engine in tests."""

    n_dof = 1

    def field(self, u):
        return Field(0, np.asarray(u, dtype=float).copy())

    def from_field(self, fld):
        return fld.values.copy()

    def norms(self, u):
        l2 = float(np.linalg.norm(u))
        linf = float(np.abs(u).max()) if len(u) else 0.0
        return l2, linf

    def admissible(self, u):
        return True


class ScalarFold(ToyProblem):
    """f(u, lambda) = u^2 + lambda - 1; fold at (0, 1)."""

    def residual(self, u, lam):
        return np.array([u[0] ** 2 + lam - 1.0])

    def jacobian(self, u, lam):
        return sp.csr_matrix(np.array([[2.0 * u[0]]]))

    def df_dlam(self, u, lam):
        return np.array([1.0])

    def d2f_action(self, u, lam, v):
        return sp.csr_matrix(np.array([[2.0 * v[0]]]))

    def dflam_jacobian(self, u, lam):
        return sp.csr_matrix(np.array([[0.0]]))


class Pitchfork(ToyProblem):
    """f(u, lambda) = lambda*u - u^3; branch point at the origin."""

    def residual(self, u, lam):
        return np.array([lam * u[0] - u[0] ** 3])

    def jacobian(self, u, lam):
        return sp.csr_matrix(np.array([[lam - 3.0 * u[0] ** 2]]))

    def df_dlam(self, u, lam):
        return np.array([u[0]])

    def d2f_action(self, u, lam, v):
        return sp.csr_matrix(np.array([[-6.0 * u[0] * v[0]]]))

    def dflam_jacobian(self, u, lam):
        return sp.csr_matrix(np.array([[1.0]]))


class CoupledPitchfork(ToyProblem):
    """Two coupled cubic cells with exchange symmetry.

    f_i = lambda*u_i - u_i^3 + c*(u_i - u_j); the trivial branch has a
    branch point at lambda = -2c with null vector (1, -1)/sqrt(2).
    """

    n_dof = 2

    def __init__(self, c=0.4):
        self.c = c

    def residual(self, u, lam):
        c = self.c
        return np.array([
            lam * u[0] - u[0] ** 3 + c * (u[0] - u[1]),
            lam * u[1] - u[1] ** 3 + c * (u[1] - u[0]),
        ])

    def jacobian(self, u, lam):
        c = self.c
        return sp.csr_matrix(np.array([
            [lam - 3.0 * u[0] ** 2 + c, -c],
            [-c, lam - 3.0 * u[1] ** 2 + c],
        ]))

    def df_dlam(self, u, lam):
        return u.copy()

    def d2f_action(self, u, lam, v):
        return sp.csr_matrix(np.diag([-6.0 * u[0] * v[0], -6.0 * u[1] * v[1]]))

    def dflam_jacobian(self, u, lam):
        return sp.identity(2, format="csr")
