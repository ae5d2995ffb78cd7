"""Bifurcation-point detection, localization and branch switching.

Branch points are flagged by watching the determinant sign and the
eigenvalue of the Jacobian nearest zero along a traced branch (modes of
dihedral-symmetric domains cross zero in pairs, so the determinant only
touches zero there and the eigenvalue dip is the reliable signal).  A
flagged point seeds Newton on the extended system

    f(u, lambda) + beta v = 0
    J(u, lambda)^T v      = 0
    v . f_lambda          = 0
    v . v - 1             = 0

whose regular solutions with beta ~ 0 are simple branch points; the null
vector v then drives the predictor onto the bifurcating branch.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field as dc_field, replace as dc_replace

import numpy as np
import scipy.sparse as sp

from .assembly import SingularDeflectionError
from .continuation import (
    Branch,
    BranchSample,
    ContinuationConfig,
    NewtonFailure,
    PdeProblem,
    Tangent,
    compute_tangent,
    newton_correct,
    trace,
)
from .linsolve import (
    EigenConvergenceError,
    SingularFactorizationError,
    StructurallySingularError,
    eigenpairs_near,
    factorize,
)
from .mesh import Field, Mesh

N_SECTORS = 64


class BranchPointError(Exception):
    pass


class BranchSwitchError(Exception):
    pass


@dataclass
class Suspicion:
    kind: str  # "sign_change" | "touch" | "near_zero"
    step: int


@dataclass
class BranchPointRecord:
    lam: float
    u: Field
    v: np.ndarray  # unit null vector over free dofs
    beta: float
    mesh_generation: int
    l2: float = math.nan
    linf: float = math.nan
    mode: int | None = None  # angular wavenumber of v on disk/annulus


def monitor(history, branch_detect_tol: float):
    """Scan (det_sign, smallest_eig) pairs for bifurcation suspicion.

    Flags determinant sign changes between consecutive entries, dips of
    |smallest_eig| below the tolerance that rise again (zero touching),
    and entries currently below the tolerance.
    """
    sus = []
    for k in range(1, len(history)):
        d_prev, _ = history[k - 1]
        d_cur, _ = history[k]
        if d_prev != 0 and d_cur != 0 and d_prev != d_cur:
            sus.append(Suspicion("sign_change", k))
    for k in range(len(history)):
        _, e = history[k]
        if not math.isnan(e) and abs(e) < branch_detect_tol:
            if 0 < k < len(history) - 1:
                _, e_prev = history[k - 1]
                _, e_next = history[k + 1]
                if abs(e_prev) > abs(e) and abs(e_next) > abs(e):
                    sus.append(Suspicion("touch", k))
                    continue
            sus.append(Suspicion("near_zero", k))
    sus.sort(key=lambda s: s.step)
    return sus


# ---------------------------------------------------------------------------
# extended system


def _extended_residual(problem, u, lam, beta, v):
    f = problem.residual(u, lam)
    J = sp.csr_matrix(problem.jacobian(u, lam))
    flam = problem.df_dlam(u, lam)
    r1 = f + beta * v
    r2 = J.T @ v
    r3 = float(v @ flam)
    r4 = float(v @ v) - 1.0
    return r1, r2, r3, r4, J, flam


def extended_newton(problem, u0, lam0, v0, tol: float = 1e-9, max_iter: int = 30):
    """Newton on the branch-point system; returns (u, lam, beta, v).

    The analytic Jacobian needs the second-derivative action of f, taken
    from the problem protocol (``d2f_action`` and ``dflam_jacobian``).
    """
    n = problem.n_dof
    u = np.asarray(u0, dtype=float).copy()
    lam = float(lam0)
    v = np.asarray(v0, dtype=float).copy()
    v /= np.linalg.norm(v)
    beta = 0.0
    for _ in range(max_iter):
        try:
            r1, r2, r3, r4, J, flam = _extended_residual(problem, u, lam, beta, v)
        except SingularDeflectionError as exc:
            raise BranchPointError(str(exc)) from exc
        res = max(np.abs(r1).max() if n else 0.0,
                  np.abs(r2).max() if n else 0.0, abs(r3), abs(r4))
        if res <= tol:
            return u, lam, beta, v
        C = sp.csr_matrix(problem.d2f_action(u, lam, v))
        D = sp.csr_matrix(problem.dflam_jacobian(u, lam))
        Dv = D @ v
        eye = sp.identity(n, format="csr")
        M = sp.bmat(
            [
                [J, flam[:, None], v[:, None], beta * eye],
                [C, Dv[:, None], None, J.T],
                [Dv[None, :], None, None, flam[None, :]],
                [None, None, None, 2.0 * v[None, :]],
            ],
            format="csc",
        )
        rhs = -np.concatenate([r1, r2, [r3], [r4]])
        try:
            F = factorize(M)
            dx = F.solve(rhs)
        except (SingularFactorizationError, StructurallySingularError) as exc:
            raise BranchPointError("extended system is singular") from exc
        u += dx[:n]
        lam += dx[n]
        beta += dx[n + 1]
        v += dx[n + 2 :]
        nv = np.linalg.norm(v)
        if nv == 0:
            raise BranchPointError("null vector collapsed")
        v /= nv
    raise BranchPointError(f"extended system did not converge in {max_iter} iterations")


def locate_branch_point(seed: BranchSample, params, mesh: Mesh,
                        cfg: ContinuationConfig | None = None,
                        v0: np.ndarray | None = None,
                        tol: float = 1e-9, beta_tol: float = 1e-7) -> BranchPointRecord:
    """Refine a suspicion into a branch-point record via the extended system."""
    cfg = cfg or ContinuationConfig()
    problem = PdeProblem(params, mesh)
    u = problem.from_field(seed.u)
    candidates = []
    if v0 is not None:
        candidates.append(np.asarray(v0, dtype=float))
    else:
        J = sp.csc_matrix(problem.jacobian(u, seed.lam))
        pairs = eigenpairs_near(J, 0.0, k=max(2, cfg.eig_count))
        candidates = [vec for _, vec in pairs]
        if len(pairs) >= 2:
            mix = pairs[0][1] + 0.05 * pairs[1][1]
            candidates.append(mix / np.linalg.norm(mix))
    last_err = None
    for cand in candidates:
        try:
            ub, lamb, beta, v = extended_newton(problem, u, seed.lam, cand, tol=tol)
        except BranchPointError as exc:
            last_err = exc
            continue
        if abs(beta) > beta_tol:
            last_err = BranchPointError(
                f"converged with |beta| = {abs(beta):.3g}; likely a fold, not a branch point")
            continue
        l2, linf = problem.norms(ub)
        mode = None
        if mesh.domain.kind in ("disk", "annulus"):
            full = np.zeros(mesh.n_vertices)
            full[problem.free] = v
            mode = angular_mode(full, mesh)
        return BranchPointRecord(lamb, problem.field(ub), v, beta,
                                 mesh.generation, l2, linf, mode)
    raise last_err or BranchPointError("no usable null vector candidate")


def switch(bp: BranchPointRecord, delta: float, direction: int, params,
           cfg: ContinuationConfig, mesh: Mesh):
    """Step off a branch point along its null vector.

    Returns a (problem, u, lam, tangent) start for ``trace``.  The
    corrector runs against the hyperplane with normal (v, 0); on failure
    the predictor distance is reduced tenfold once before giving up.
    """
    if direction not in (-1, 1):
        raise ValueError("direction must be +1 or -1")
    problem = PdeProblem(params, mesh)
    u_bp = problem.from_field(bp.u)
    tan = Tangent(direction * bp.v.copy(), 0.0)
    for d in (delta, delta / 10.0):
        try:
            u, lam, _ = newton_correct(problem, u_bp, bp.lam, tan, d, cfg)
        except NewtonFailure:
            continue
        try:
            tan_out = compute_tangent(problem, u, lam, tan)
        except Exception:
            tan_out = tan
        return problem, u, lam, tan_out
    raise BranchSwitchError(f"corrector failed for both predictor sizes (delta {delta:g})")


def default_switch_delta(bp: BranchPointRecord, cfg: ContinuationConfig,
                         amplitude: float = 1e-2) -> float:
    """Predictor distance giving a pointwise perturbation of the stated
    relative amplitude.

    The null vector is unit in the coefficient 2-norm, so its sup norm
    shrinks as the mesh grows; scaling by it keeps the physical kick off
    the branch point mesh-independent.
    """
    vmax = float(np.abs(bp.v).max()) if len(bp.v) else 1.0
    return amplitude * (1.0 + bp.linf) / max(vmax, 1e-30)


def angular_mode(values: np.ndarray, mesh: Mesh) -> int:
    """Dominant angular wavenumber of a nodal field on a disk or annulus.

    Sector means over 64 angular bins are Fourier-transformed; the
    strongest nonzero frequency is the mode.  A symmetry-breaking null
    vector cos(k theta) phi(r) reports k.
    """
    theta = np.arctan2(mesh.vertices[:, 1], mesh.vertices[:, 0])
    sector = np.floor((theta % (2.0 * np.pi)) / (2.0 * np.pi / N_SECTORS)).astype(int)
    sector = np.clip(sector, 0, N_SECTORS - 1)
    sums = np.zeros(N_SECTORS)
    counts = np.zeros(N_SECTORS)
    np.add.at(sums, sector, values)
    np.add.at(counts, sector, 1.0)
    means = np.where(counts > 0, sums / np.maximum(counts, 1.0), 0.0)
    spec = np.abs(np.fft.rfft(means))
    if len(spec) <= 1:
        return 0
    return int(np.argmax(spec[1:])) + 1


def angular_asymmetry(u: Field, mesh: Mesh) -> float:
    """Spread of sector-mean nodal values over 64 angular sectors.

    Zero for exactly radially symmetric data (0/0 defined as 0); about
    two for a pure cos(theta) mode.  Only defined on disks and annuli.
    """
    if mesh.domain.kind not in ("disk", "annulus"):
        raise ValueError("angular asymmetry needs a disk or annulus domain")
    if not u.bound_to(mesh):
        raise ValueError("field is not bound to the mesh")
    theta = np.arctan2(mesh.vertices[:, 1], mesh.vertices[:, 0])
    sector = np.floor((theta % (2.0 * np.pi)) / (2.0 * np.pi / N_SECTORS)).astype(int)
    sector = np.clip(sector, 0, N_SECTORS - 1)
    sums = np.zeros(N_SECTORS)
    counts = np.zeros(N_SECTORS)
    np.add.at(sums, sector, u.values)
    np.add.at(counts, sector, 1.0)
    present = counts > 0
    means = sums[present] / counts[present]
    spread = float(means.max() - means.min()) if len(means) else 0.0
    linf = float(np.abs(u.values).max())
    if linf == 0.0:
        return 0.0
    return spread / linf


# ---------------------------------------------------------------------------
# hunt orchestration


@dataclass
class HuntResult:
    main: Branch
    branch_points: list
    asym_branches: list = dc_field(default_factory=list)  # (bp index, direction, Branch)


def _candidate_brackets(branch: Branch):
    """Sample index pairs that straddle an eigenvalue crossing not
    explained by a recorded fold.

    Eigenvalue counts come from a fixed-size nearest-zero window, so a
    count change of one without a determinant flip is just an eigenvalue
    sliding out of the window, not a crossing; double crossings show up
    as count jumps of two with the determinant sign intact.
    """
    out = []
    fold_ss = [f.s for f in branch.folds]
    for i in range(1, len(branch.samples)):
        a, b = branch.samples[i - 1], branch.samples[i]
        jump = abs(b.neg_near_zero - a.neg_near_zero)
        det_flip = a.det_sign != 0 and b.det_sign != 0 and a.det_sign != b.det_sign
        has_fold = any(a.s - 1e-12 <= fs <= b.s + 1e-12 for fs in fold_ss)
        unexplained = jump - (1 if has_fold else 0)
        if unexplained >= 2:
            out.append((i - 1, i))
        elif det_flip and not has_fold:
            out.append((i - 1, i))
    return out


def _bisect_crossing(problem, branch, ia, ib, cfg, max_halvings=10):
    """Shrink a crossing bracket by re-correcting midpoints; returns the
    state (u, lam) nearest the crossing."""
    a, b = branch.samples[ia], branch.samples[ib]
    u_a = problem.from_field(a.u)
    tan = None
    try:
        tan = compute_tangent(problem, u_a, a.lam, None)
        # orient toward b
        u_b = problem.from_field(b.u)
        if float(tan.udot @ (u_b - u_a)) + tan.lamdot * (b.lam - a.lam) < 0:
            tan = Tangent(-tan.udot, -tan.lamdot)
    except Exception:
        return (problem.from_field(b.u), b.lam) if abs(b.smallest_eig) < abs(a.smallest_eig) \
            else (u_a, a.lam)
    lo, hi = 0.0, b.s - a.s
    neg_a = a.neg_near_zero
    best = (problem.from_field(b.u), b.lam, abs(b.smallest_eig))
    if abs(a.smallest_eig) < best[2]:
        best = (u_a, a.lam, abs(a.smallest_eig))
    for _ in range(max_halvings):
        mid = 0.5 * (lo + hi)
        try:
            u_m, lam_m, _ = newton_correct(problem, u_a, a.lam, tan, mid, cfg)
        except NewtonFailure:
            hi = mid
            continue
        J = sp.csc_matrix(problem.jacobian(u_m, lam_m))
        F = factorize(J)
        try:
            pairs = eigenpairs_near(J, 0.0, k=cfg.eig_count, factorization=F)
        except EigenConvergenceError:
            break
        if not pairs:
            break
        mu = pairs[0][0]
        neg = sum(1 for m, _ in pairs if m < 0)
        if abs(mu) < best[2]:
            best = (u_m, lam_m, abs(mu))
        if neg == neg_a:
            lo = mid
        else:
            hi = mid
    return best[0], best[1]


def branch_hunt(params, cfg: ContinuationConfig, switch_steps: int = 40,
                switch_delta: float | None = None, observers=()) -> HuntResult:
    """Trace the main branch, locate its branch points, switch and follow
    each bifurcating branch in both directions."""
    if not cfg.keep_fields:
        raise ValueError("branch hunting needs keep_fields=True")
    main = trace(params, cfg, observers=observers)
    records = []
    for ia, ib in _candidate_brackets(main):
        seed_smp = main.samples[ib]
        mesh = main.meshes.get(_field_gen(seed_smp))
        mesh_a = main.meshes.get(_field_gen(main.samples[ia]))
        if mesh is None or mesh_a is None or mesh.generation != mesh_a.generation:
            continue  # remeshed inside the bracket; skip this candidate
        problem = PdeProblem(params, mesh)
        u_c, lam_c = _bisect_crossing(problem, main, ia, ib, cfg)
        l2, linf = problem.norms(u_c)
        seed = BranchSample(seed_smp.step, seed_smp.s, lam_c, problem.field(u_c),
                            l2, linf, problem.n_dof, mesh.n_elements, 0, 0.0, 0,
                            math.nan, False)
        try:
            bp = locate_branch_point(seed, params, mesh, cfg)
        except BranchPointError:
            continue
        # a nearby candidate pair can converge onto the same point; the
        # entry/exit crossings of one mode stay well separated in lambda
        if any(bp.mode == r.mode
               and abs(bp.lam - r.lam) < 1e-2 * (1 + abs(r.lam))
               and abs(bp.l2 - r.l2) < 1e-2 * (1 + r.l2) for r in records):
            continue
        records.append(bp)

    asym = []
    sub_cfg = dc_replace(cfg, max_steps=switch_steps)
    for idx, bp in enumerate(records):
        mesh = main.meshes[bp.mesh_generation]
        delta = switch_delta or default_switch_delta(bp, cfg)
        for direction in (1, -1):
            try:
                start = switch(bp, delta, direction, params, cfg, mesh)
            except BranchSwitchError:
                continue
            try:
                br = trace(params, sub_cfg, start=start, observers=observers)
            except Exception:
                continue
            asym.append((idx, direction, br))
    return HuntResult(main, records, asym)


def _field_gen(sample: BranchSample):
    return sample.u.mesh_generation if sample.u is not None else None
