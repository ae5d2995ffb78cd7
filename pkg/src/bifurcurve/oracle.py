"""Independent validation path for the unit disk without regularization.

By scale invariance, the radially symmetric disk problem maps onto the
parameter-free initial value problem

    w'' + w'/eta = 1/w^2,   w(0) = 1, w'(0) = 0,

and the whole bifurcation diagram is recovered from any trajectory point
through |u(0)| = 1 - 1/w and lambda = eta^2 / w^3.  Folds are the roots
of lambda_eta, i.e. of g(eta) = 1 - (3/2) eta w'/w.  The 1/eta
singularity at the origin is handled by launching from the series
w = 1 + eta^2/4 - eta^4/64 at eta_0 = 1e-4.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np
from scipy.integrate import cumulative_trapezoid, solve_ivp

ETA0 = 1e-4
LAMBDA_CENTER = 4.0 / 9.0


class OracleError(Exception):
    pass


@dataclass
class WTrajectory:
    eta: np.ndarray
    w: np.ndarray
    wprime: np.ndarray
    dense: object  # scipy OdeSolution over [eta0, eta_max]
    eta_max: float

    def at(self, eta):
        w, wp = self.dense(eta)
        return w, wp


def _series_start():
    w0 = 1.0 + ETA0**2 / 4.0 - ETA0**4 / 64.0
    wp0 = ETA0 / 2.0 - ETA0**3 / 16.0
    return w0, wp0


def integrate_w(eta_max: float, rel_tol: float = 1e-12, samples_per_decade: int = 200) -> WTrajectory:
    """Integrate the scale-invariant problem out to eta_max."""
    if eta_max <= ETA0:
        raise OracleError("eta_max must exceed the series launch point")
    w0, wp0 = _series_start()

    def rhs(eta, y):
        w, wp = y
        return (wp, 1.0 / (w * w) - wp / eta)

    sol = solve_ivp(rhs, (ETA0, eta_max), (w0, wp0), method="DOP853",
                    rtol=rel_tol, atol=rel_tol * 1e-2, dense_output=True)
    if not sol.success:
        raise OracleError(f"integration failed: {sol.message}")
    decades = np.log10(eta_max / ETA0)
    n = max(64, int(samples_per_decade * decades))
    eta = np.geomspace(ETA0, eta_max, n)
    w, wp = sol.sol(eta)
    return WTrajectory(eta, w, wp, sol.sol, eta_max)


def map_to_bifurcation(w, eta):
    """(|u(0)|, lambda) for trajectory points (vectorized)."""
    w = np.asarray(w, dtype=float)
    eta = np.asarray(eta, dtype=float)
    return 1.0 - 1.0 / w, eta**2 / w**3


def _g(traj: WTrajectory, eta):
    w, wp = traj.at(eta)
    return 1.0 - 1.5 * eta * wp / w


def _polish_root(traj, lo, hi, g_lo, tol=1e-12, max_iter=200):
    """Bisection with secant acceleration on g until |g| <= tol."""
    a, b, ga = lo, hi, g_lo
    gb = _g(traj, b)
    x, gx = a, ga
    for _ in range(max_iter):
        if abs(gx) <= tol:
            return x
        # secant proposal, kept only if it stays inside the bracket
        if gb != ga:
            xs = b - gb * (b - a) / (gb - ga)
        else:
            xs = 0.5 * (a + b)
        if not (a < xs < b):
            xs = 0.5 * (a + b)
        gs = _g(traj, xs)
        x, gx = xs, gs
        if ga * gs <= 0:
            b, gb = xs, gs
        else:
            a, ga = xs, gs
    raise OracleError("fold root polish did not converge")


def find_fold_lambdas(k: int, rel_tol: float = 1e-12, return_eta: bool = False):
    """The first k fold values of lambda, in order along the branch."""
    if k < 1:
        raise OracleError("need k >= 1 folds")
    eta_max = 1e3
    for _ in range(8):
        traj = integrate_w(eta_max, rel_tol)
        g = 1.0 - 1.5 * traj.eta * traj.wprime / traj.w
        sign = np.sign(g)
        idx = np.nonzero(sign[:-1] * sign[1:] < 0)[0]
        if len(idx) >= k:
            roots = []
            for i in idx[:k]:
                roots.append(_polish_root(traj, traj.eta[i], traj.eta[i + 1], g[i]))
            lams = [float(e**2 / traj.at(e)[0] ** 3) for e in roots]
            return (lams, roots) if return_eta else lams
        eta_max *= 40.0
        if eta_max > 1e14:
            break
    raise OracleError(f"trajectory too short to contain {k} folds")


def disk_branch_samples(traj: WTrajectory, n: int = 400, eta_hi: float | None = None,
                        etas: np.ndarray | None = None):
    """Sampled disk branch (lambda, |u|_L2, |u(0)|) from the trajectory.

    The radial profile at parameter eta is u(r) = -1 + w(eta r)/w(eta),
    so the squared L2 norm over the unit disk reduces to cumulative
    moments of the trajectory itself.  ``etas`` overrides the default
    geometric sampling grid.
    """
    eta_hi = eta_hi or traj.eta_max
    if etas is not None:
        eta_hi = max(eta_hi, float(np.max(etas)))
    grid = np.geomspace(ETA0, eta_hi, max(2000, 400 * int(np.log10(eta_hi / ETA0))))
    w, _ = traj.at(grid)
    v = w - 1.0  # centered to avoid cancellation in the small-eta moments
    A = cumulative_trapezoid(v * v * grid, grid, initial=0.0)
    B = cumulative_trapezoid(v * grid, grid, initial=0.0)
    if etas is None:
        etas = np.geomspace(ETA0 * 10, eta_hi, n)
    etas = np.asarray(etas, dtype=float)
    Wi = traj.at(etas)[0]
    Vi = Wi - 1.0
    Ai = np.interp(etas, grid, A)
    Bi = np.interp(etas, grid, B)
    inner = (Ai - 2.0 * Vi * Bi + Vi**2 * etas**2 / 2.0) / Wi**2
    l2 = np.sqrt(np.maximum(2.0 * np.pi * inner, 0.0)) / etas
    u0, lam = map_to_bifurcation(Wi, etas)
    return lam, l2, u0, etas


def write_oracle_curve_csv(traj: WTrajectory, path) -> None:
    u0, lam = map_to_bifurcation(traj.w, traj.eta)
    lines = ["eta,w,wprime,u0_abs,lambda"]
    for i in range(len(traj.eta)):
        lines.append(",".join(f"{x:.17g}" for x in
                              (traj.eta[i], traj.w[i], traj.wprime[i], u0[i], lam[i])))
    with open(path, "w", newline="\n") as fh:
        fh.write("\n".join(lines) + "\n")


def write_oracle_folds_csv(lams, path) -> None:
    lines = ["index,lambda"]
    for i, lam in enumerate(lams):
        lines.append(f"{i},{lam:.17g}")
    with open(path, "w", newline="\n") as fh:
        fh.write("\n".join(lines) + "\n")
