"""Pseudo arc-length continuation with adaptive remeshing.

The solution curve of f(u, lambda) = 0 is parameterized by arc length and
closed with the hyperplane constraint
``udot_j . (u - u_j) + lamdot_j . (lambda - lambda_j) = ds``; each step
predicts along the tangent and corrects with a bordered Newton iteration
that stays regular at simple folds.  Step size adapts to Newton cost,
folds are localized by bisection on the tangent's lambda component, and
every nu admitted steps the mesh is refined/coarsened with the solution
interpolated across.

The corrector and tracer operate on any object exposing the small
problem protocol (``n_dof``, ``residual``, ``jacobian``, ``df_dlam``,
``norms``, ``admissible``, ``field``); ``PdeProblem`` binds it to the
finite element discretization, and low-dimensional test problems can
drive the same engine.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field as dc_field

import numpy as np
import scipy.sparse as sp

from . import assembly
from .assembly import ProblemParams, SingularDeflectionError
from .estimator import estimate, mark
from .linsolve import (
    BorderedSingularError,
    EigenConvergenceError,
    SingularFactorizationError,
    StructurallySingularError,
    eigenpairs_near,
    factorize,
    solve_bordered,
)
from .mesh import (
    Field,
    Mesh,
    coarsen,
    generate_domain,
    interpolate,
    make_field,
    refine,
    symmetrize_marks,
)

ADMISSIBLE_MARGIN = 1e-12  # iterates must keep 1 + u above this


class NewtonFailure(Exception):
    pass


class TangentAtFold(Exception):
    pass


class FoldLocalizationError(Exception):
    pass


class CannotProceed(Exception):
    """Continuation stalled; carries the partial branch when available."""

    def __init__(self, message, branch=None):
        super().__init__(message)
        self.branch = branch


@dataclass
class Tangent:
    udot: np.ndarray
    lamdot: float

    @property
    def norm(self) -> float:
        return float(np.sqrt(self.udot @ self.udot + self.lamdot**2))


@dataclass
class ContinuationConfig:
    ds0: float = 1e-2
    ds_min: float = 1e-8
    ds_max: float = 0.25
    newton_tol: float = 1e-10
    max_newton_iters: int = 10
    grow_factor: float = 1.3
    shrink_factor: float = 0.5
    fast_iters: int = 4
    kappa: float = 1e-3
    rho: float = 1e-6
    nu: int = 1  # adaptation period in admitted steps; 0 disables
    branch_detect_tol: float = 1e-6  # relative to |J|_inf
    max_steps: int = 2000
    s_max: float = math.inf
    lambda_max: float = math.inf
    linf_max: float = math.inf
    max_dofs: int = 500_000
    stop_after_folds: int = 0  # 0 disables this stop rule
    resolution: int = 8
    stability_mode: str = "eig"  # "eig" | "parity"
    eig_count: int = 2
    keep_fields: bool = True
    symmetric_marks: bool = True  # close marks under mesh rotations (annulus)

    def __post_init__(self):
        if not 0 < self.ds_min <= self.ds0 <= self.ds_max:
            raise ValueError("require 0 < ds_min <= ds0 <= ds_max")
        if not 0 < self.rho < self.kappa:
            raise ValueError("require 0 < rho < kappa")
        if self.newton_tol <= 0:
            raise ValueError("newton_tol must be positive")
        if self.stability_mode not in ("eig", "parity"):
            raise ValueError("stability_mode must be 'eig' or 'parity'")


@dataclass
class BranchSample:
    step: int
    s: float
    lam: float
    u: Field | None
    l2: float
    linf: float
    n_dof: int
    n_elements: int
    newton_iters: int
    ds: float
    det_sign: int
    smallest_eig: float
    stable: bool
    neg_near_zero: int = 0
    extras: dict = dc_field(default_factory=dict)


@dataclass
class FoldRecord:
    index: int
    lam: float
    l2: float
    linf: float
    u: Field | None = None
    s: float = math.nan


@dataclass
class Branch:
    samples: list
    folds: list
    suspicions: list
    meshes: dict  # generation -> Mesh, for samples whose fields are kept
    params: object = None
    config: ContinuationConfig | None = None

    def lambdas(self):
        return np.array([smp.lam for smp in self.samples])

    def crossings(self, lam_value: float):
        """Indices i where lambda crosses lam_value between samples i, i+1."""
        lams = self.lambdas()
        d = lams - lam_value
        hits = []
        for i in range(len(d) - 1):
            if d[i] == 0.0:
                hits.append(i)
            elif d[i] * d[i + 1] < 0.0:
                hits.append(i)
        if len(d) and d[-1] == 0.0:
            hits.append(len(d) - 1)
        return hits


# ---------------------------------------------------------------------------
# discretized problem


class PdeProblem:
    """Finite element discretization bound to one mesh."""

    def __init__(self, params: ProblemParams, mesh: Mesh):
        self.params = params
        self.mesh = mesh
        self.free = np.nonzero(~mesh.boundary)[0]
        self.n_dof = len(self.free)
        # the mesh is immutable, so the linear pieces can be cached
        self._K = assembly.stiffness_matrix(mesh)
        self._Kff = sp.csr_matrix(self._K[np.ix_(self.free, self.free)])
        self._M = assembly.mass_matrix(mesh)

    def field(self, u_free: np.ndarray) -> Field:
        full = np.zeros(self.mesh.n_vertices)
        full[self.free] = u_free
        return make_field(self.mesh, full)

    def from_field(self, fld: Field) -> np.ndarray:
        return fld.values[self.free].copy()

    def _full(self, u_free):
        full = np.zeros(self.mesh.n_vertices)
        full[self.free] = u_free
        if np.any(full <= -1.0):
            raise SingularDeflectionError("nodal value reached u = -1")
        return full

    def residual(self, u_free, lam):
        full = self._full(u_free)
        uq = assembly._quad_values(self.mesh, full)
        f = self._K @ full + assembly.load_vector(
            self.mesh, assembly.source(uq, lam, self.params))
        return f[self.free]

    def jacobian(self, u_free, lam):
        full = self._full(u_free)
        uq = assembly._quad_values(self.mesh, full)
        B = assembly.weighted_mass_matrix(self.mesh, assembly.source_dw(uq, lam, self.params))
        return self._Kff + sp.csr_matrix(B[np.ix_(self.free, self.free)])

    def df_dlam(self, u_free, lam):
        full = self._full(u_free)
        uq = assembly._quad_values(self.mesh, full)
        g = assembly.source(uq, 1.0, self.params)
        return assembly.load_vector(self.mesh, g)[self.free]

    def norms(self, u_free):
        full = np.zeros(self.mesh.n_vertices)
        full[self.free] = u_free
        l2 = float(np.sqrt(max(full @ (self._M @ full), 0.0)))
        linf = float(np.abs(full).max()) if len(full) else 0.0
        return l2, linf

    def admissible(self, u_free) -> bool:
        return bool(len(u_free) == 0 or u_free.min() > -1.0 + ADMISSIBLE_MARGIN)

    def d2f_action(self, u_free, lam, v_free):
        v_full = np.zeros(self.mesh.n_vertices)
        v_full[self.free] = v_free
        return assembly.second_derivative_action(self.field(u_free), lam, v_full,
                                                 self.params, self.mesh)

    def dflam_jacobian(self, u_free, lam):
        return assembly.dflambda_jacobian(self.field(u_free), self.params, self.mesh)


# ---------------------------------------------------------------------------
# engine primitives


def tangent(J, f_lambda, previous: Tangent | None = None, factorization=None) -> Tangent:
    """Unit tangent from J z = -f_lambda, oriented to keep direction.

    With no previous tangent the orientation of increasing lambda is
    chosen.  Raises TangentAtFold when J is singular; the caller should
    then reuse the previous tangent for the predictor.
    """
    F = factorization
    if F is None:
        try:
            F = factorize(sp.csc_matrix(J))
        except StructurallySingularError as exc:
            raise TangentAtFold("jacobian is singular") from exc
    if F.det_sign == 0:
        raise TangentAtFold("jacobian is singular")
    z = F.solve(-np.asarray(f_lambda, dtype=float))
    a = 1.0 / math.sqrt(1.0 + float(z @ z))
    if previous is not None:
        orient = float(z @ previous.udot) + previous.lamdot
        if orient < 0:
            a = -a
    return Tangent(a * z, a)


def compute_tangent(problem, u, lam, previous=None, factorization=None) -> Tangent:
    if factorization is None:
        factorization = factorize(sp.csc_matrix(problem.jacobian(u, lam)))
    return tangent(None, problem.df_dlam(u, lam), previous, factorization)


def newton_correct(problem, base_u, base_lam, tan: Tangent, ds: float,
                   cfg: ContinuationConfig):
    """Predict along the tangent and correct back onto the curve.

    Returns (u, lambda, iterations).  Fails when Newton stalls or an
    iterate approaches the contact singularity.
    """
    u = base_u + ds * tan.udot
    lam = base_lam + ds * tan.lamdot
    if not problem.admissible(u):
        raise NewtonFailure("inadmissible predictor")
    iters = 0
    for it in range(cfg.max_newton_iters + 1):
        try:
            f = problem.residual(u, lam)
        except SingularDeflectionError as exc:
            raise NewtonFailure(str(exc)) from exc
        hyp = float(tan.udot @ (u - base_u)) + tan.lamdot * (lam - base_lam) - ds
        fnorm = np.abs(f).max() if len(f) else 0.0
        if max(fnorm, abs(hyp)) <= cfg.newton_tol:
            return u, lam, iters
        if it == cfg.max_newton_iters:
            break
        J = problem.jacobian(u, lam)
        flam = problem.df_dlam(u, lam)
        try:
            du, dlam = solve_bordered(J, flam, tan.udot, tan.lamdot, -f, -hyp)
        except (BorderedSingularError, SingularFactorizationError) as exc:
            raise NewtonFailure(str(exc)) from exc
        u = u + du
        lam = lam + dlam
        iters += 1
        if not problem.admissible(u):
            raise NewtonFailure("iterate reached the contact singularity")
    raise NewtonFailure(f"no convergence in {cfg.max_newton_iters} iterations")


def correct(base: BranchSample, tan: Tangent, ds: float, params: ProblemParams,
            mesh: Mesh, cfg: ContinuationConfig) -> BranchSample:
    """Single corrector call on the discretized problem (spec surface)."""
    problem = PdeProblem(params, mesh)
    base_u = problem.from_field(base.u)
    u, lam, iters = newton_correct(problem, base_u, base.lam, tan, ds, cfg)
    l2, linf = problem.norms(u)
    return BranchSample(base.step + 1, base.s + ds, lam, problem.field(u), l2, linf,
                        problem.n_dof, mesh.n_elements, iters, ds, 0, math.nan, True)


def step_size_update(iters: int, failed: bool, ds: float, cfg: ContinuationConfig) -> float:
    if failed:
        return max(ds * cfg.shrink_factor, cfg.ds_min)
    if iters <= cfg.fast_iters:
        return min(ds * cfg.grow_factor, cfg.ds_max)
    return ds


def classify_stability(J, k: int = 2, factorization=None):
    """(stable, eigenvalue nearest zero) from the spectrum of J.

    Stability means the smallest eigenvalue is positive; the k
    eigenvalues nearest zero are inspected.  Returns (None, nan) when the
    eigensolver stagnates.
    """
    try:
        pairs = eigenpairs_near(J, 0.0, k=k, factorization=factorization)
    except EigenConvergenceError:
        return None, math.nan
    if not pairs:
        return None, math.nan
    stable = all(mu > 0 for mu, _ in pairs)
    return stable, pairs[0][0]


def locate_fold(problem, base_u, base_lam, tan: Tangent, ds_hi: float,
                cfg: ContinuationConfig, index: int,
                tol: float = 1e-8, max_iter: int = 60) -> FoldRecord:
    """Bisect on arc length until the tangent's lambda component vanishes.

    Assumes lamdot changes sign between the base point and the corrected
    point at ds_hi; each trial re-corrects from the base.
    """
    sign0 = 1.0 if tan.lamdot >= 0 else -1.0
    lo, hi = 0.0, ds_hi
    last = None
    for _ in range(max_iter):
        mid = 0.5 * (lo + hi)
        try:
            u, lam, _ = newton_correct(problem, base_u, base_lam, tan, mid, cfg)
        except NewtonFailure:
            hi = mid
            continue
        try:
            tmid = compute_tangent(problem, u, lam, tan)
            lamdot = tmid.lamdot
        except TangentAtFold:
            lamdot = 0.0
        last = (u, lam)
        if abs(lamdot) <= tol:
            l2, linf = problem.norms(u)
            fld = problem.field(u) if hasattr(problem, "field") else None
            return FoldRecord(index, lam, l2, linf, fld)
        if lamdot * sign0 > 0:
            lo = mid
        else:
            hi = mid
    raise FoldLocalizationError(
        f"fold not localized in {max_iter} bisections (last lambda {last[1] if last else None})"
    )


# ---------------------------------------------------------------------------
# tracing


def _stability(problem, J, F, cfg, folds_count):
    if cfg.stability_mode == "parity":
        return folds_count % 2 == 0, math.nan, 0
    try:
        pairs = eigenpairs_near(J, 0.0, k=cfg.eig_count, factorization=F)
    except EigenConvergenceError:
        pairs = []
    if not pairs:
        return folds_count % 2 == 0, math.nan, 0
    stable = all(mu > 0 for mu, _ in pairs)
    neg = sum(1 for mu, _ in pairs if mu < 0)
    return stable, pairs[0][0], neg


def _make_sample(step, s, lam, problem, u, iters, ds, det_sign, stable, mu, neg, keep):
    l2, linf = problem.norms(u)
    fld = problem.field(u) if keep else None
    n_el = problem.mesh.n_elements if hasattr(problem, "mesh") else problem.n_dof
    return BranchSample(step, s, lam, fld, l2, linf, problem.n_dof, n_el,
                        iters, ds, det_sign, mu, stable, neg)


def _register_mesh(branch, problem):
    if hasattr(problem, "mesh"):
        branch.meshes[problem.mesh.generation] = problem.mesh


def adapt_mesh(problem: PdeProblem, u, lam, tan: Tangent, cfg: ContinuationConfig,
               refine_only: bool = False):
    """One estimate/mark/refine/coarsen cycle with state carried across.

    The solution and tangent are interpolated onto the new mesh, the base
    point is re-corrected there (zero arc-length step, so folds stay
    safe), and the tangent is recomputed with its direction checked
    against the interpolated one.  Returns (problem, u, tangent, changed).
    """
    mesh = problem.mesh
    fld = problem.field(u)
    err = estimate(fld, lam, problem.params, mesh)
    refine_set, coarsen_set = mark(err, cfg.kappa, cfg.rho)
    symmetric = cfg.symmetric_marks and mesh.domain.kind == "annulus"
    if symmetric:
        refine_set = symmetrize_marks(mesh, refine_set, mode="union")
    udot_f = problem.field(tan.udot)

    new_mesh = mesh
    if refine_set:
        new_mesh = refine(mesh, refine_set)
    if not refine_only:
        mid_fld = interpolate(fld, mesh, new_mesh) if new_mesh is not mesh else fld
        err2 = estimate(mid_fld, lam, problem.params, new_mesh)
        _, coarsen_set = mark(err2, cfg.kappa, cfg.rho)
        if symmetric:
            coarsen_set = symmetrize_marks(new_mesh, coarsen_set, mode="intersection")
        if coarsen_set:
            before = new_mesh
            new_mesh = coarsen(new_mesh, coarsen_set)
            if new_mesh.n_elements == before.n_elements:
                new_mesh = before
    if new_mesh is mesh:
        return problem, u, tan, False

    fld2 = interpolate(fld, mesh, new_mesh)
    udot2 = interpolate(udot_f, mesh, new_mesh)
    problem2 = PdeProblem(problem.params, new_mesh)
    u2 = problem2.from_field(fld2)
    ud = problem2.from_field(udot2)
    nrm = math.sqrt(float(ud @ ud) + tan.lamdot**2)
    tan2 = Tangent(ud / nrm, tan.lamdot / nrm)
    # re-converge the interpolated base on the new mesh (ds = 0 keeps the
    # corrector regular at folds)
    try:
        u2, lam2, _ = newton_correct(problem2, u2, lam, tan2, 0.0, cfg)
    except NewtonFailure:
        lam2 = lam
    try:
        tan_new = compute_tangent(problem2, u2, lam2, tan2)
    except TangentAtFold:
        tan_new = tan2
    return problem2, u2, tan_new, True


def trace_problem(problem, cfg: ContinuationConfig, u0, lam0,
                  tangent0: Tangent | None = None, adapt=None, observers=()):
    """Trace a branch from (u0, lam0) until a stop rule fires.

    ``adapt`` is an optional callback (problem, u, lam, tan, refine_only)
    -> (problem, u, tan, changed) used every ``nu`` admitted steps and,
    with refine_only=True, once per step when Newton fails at ds_min.
    """
    branch = Branch([], [], [], {}, getattr(problem, "params", None), cfg)
    u = np.asarray(u0, dtype=float).copy()
    lam = float(lam0)

    J = sp.csc_matrix(problem.jacobian(u, lam))
    F = factorize(J)
    tan = tangent0 if tangent0 is not None else compute_tangent(problem, u, lam, None, F)
    stable, mu, neg = _stability(problem, J, F, cfg, 0)
    sample = _make_sample(0, 0.0, lam, problem, u, 0, 0.0, F.det_sign, stable, mu, neg,
                          cfg.keep_fields)
    branch.samples.append(sample)
    _register_mesh(branch, problem)
    for obs in observers:
        obs(sample, problem, u)

    ds = cfg.ds0
    s = 0.0
    step = 0
    in_solve_used = False
    while True:
        if step >= cfg.max_steps or s >= cfg.s_max:
            break
        if lam > cfg.lambda_max or branch.samples[-1].linf > cfg.linf_max:
            break
        if problem.n_dof > cfg.max_dofs:
            break
        if cfg.stop_after_folds and len(branch.folds) >= cfg.stop_after_folds:
            break
        try:
            u1, lam1, iters = newton_correct(problem, u, lam, tan, ds, cfg)
            failed = False
        except NewtonFailure:
            failed = True
        if failed:
            if ds > cfg.ds_min * (1.0 + 1e-12):
                ds = step_size_update(0, True, ds, cfg)
                continue
            if adapt is not None and not in_solve_used:
                problem, u, tan, changed = adapt(problem, u, lam, tan, True)
                in_solve_used = True
                if changed:
                    _register_mesh(branch, problem)
                    continue
            raise CannotProceed(f"newton failed at ds_min (step {step}, lambda {lam:.6g})",
                                branch)
        in_solve_used = False
        step += 1
        s += ds

        J1 = sp.csc_matrix(problem.jacobian(u1, lam1))
        F1 = factorize(J1)
        try:
            tan1 = compute_tangent(problem, u1, lam1, tan, F1)
        except TangentAtFold:
            tan1 = tan
        if tan1.lamdot * tan.lamdot < 0:
            try:
                fold = locate_fold(problem, u, lam, tan, ds, cfg, len(branch.folds))
                fold.s = s - ds
                branch.folds.append(fold)
            except FoldLocalizationError:
                pass
        stable, mu, neg = _stability(problem, J1, F1, cfg, len(branch.folds))
        sample = _make_sample(step, s, lam1, problem, u1, iters, ds, F1.det_sign,
                              stable, mu, neg, cfg.keep_fields)
        branch.samples.append(sample)
        _register_mesh(branch, problem)
        for obs in observers:
            obs(sample, problem, u1)

        ds = step_size_update(iters, False, ds, cfg)
        u, lam, tan = u1, lam1, tan1

        if adapt is not None and cfg.nu > 0 and step % cfg.nu == 0:
            problem, u, tan, changed = adapt(problem, u, lam, tan, False)
            if changed:
                _register_mesh(branch, problem)

    from .branching import monitor  # late import; branching builds on this module

    det_hist = [smp.det_sign for smp in branch.samples]
    eig_hist = [smp.smallest_eig for smp in branch.samples]
    branch.suspicions = monitor(list(zip(det_hist, eig_hist)), _detect_tol(branch, cfg))
    return branch


def _detect_tol(branch, cfg):
    # branch_detect_tol is relative to the Jacobian scale; the largest
    # |smallest_eig| seen is a usable proxy for that scale here
    eigs = [abs(smp.smallest_eig) for smp in branch.samples
            if not math.isnan(smp.smallest_eig)]
    scale = max(eigs) if eigs else 1.0
    return cfg.branch_detect_tol * max(scale, 1.0)


def trace(params: ProblemParams, cfg: ContinuationConfig, start=None, observers=()):
    """Trace the equilibrium branch of the PDE from (u, lambda) = (0, 0).

    ``start`` may be a (problem, u, lam, tangent) tuple to continue from
    a switched branch point instead.
    """
    if start is None:
        mesh = generate_domain(params.domain, cfg.resolution)
        problem = PdeProblem(params, mesh)
        u0 = np.zeros(problem.n_dof)
        lam0 = 0.0
        tan0 = None
    else:
        problem, u0, lam0, tan0 = start

    def adapt(pb, u, lam, tan, refine_only):
        return adapt_mesh(pb, u, lam, tan, cfg, refine_only)

    return trace_problem(problem, cfg, u0, lam0, tan0, adapt=adapt, observers=observers)


# ---------------------------------------------------------------------------
# CSV output

BRANCH_HEADER = "step,s,lambda,u_l2,u_linf,n_dof,n_tri,newton_iters,ds,det_sign,smallest_eig,stable"
FOLDS_HEADER = "index,lambda,u_l2,u_linf"


def _fmt(x) -> str:
    if isinstance(x, float):
        return f"{x:.17g}"
    return str(x)


def write_branch_csv(branch: Branch, path) -> None:
    lines = [BRANCH_HEADER]
    for smp in branch.samples:
        lines.append(",".join([
            str(smp.step), _fmt(smp.s), _fmt(smp.lam), _fmt(smp.l2), _fmt(smp.linf),
            str(smp.n_dof), str(smp.n_elements), str(smp.newton_iters), _fmt(smp.ds),
            str(smp.det_sign), _fmt(smp.smallest_eig), "1" if smp.stable else "0",
        ]))
    with open(path, "w", newline="\n") as fh:
        fh.write("\n".join(lines) + "\n")


def write_folds_csv(folds, path) -> None:
    lines = [FOLDS_HEADER]
    for f in folds:
        lines.append(",".join([str(f.index), _fmt(f.lam), _fmt(f.l2), _fmt(f.linf)]))
    with open(path, "w", newline="\n") as fh:
        fh.write("\n".join(lines) + "\n")
