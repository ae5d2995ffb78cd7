import math

import numpy as np
import pytest
import scipy.sparse as sp

from conftest import ScalarFold
from bifurcurve.assembly import ProblemParams, jacobian, residual
from bifurcurve.continuation import (
    ContinuationConfig,
    PdeProblem,
    Tangent,
    classify_stability,
    compute_tangent,
    locate_fold,
    newton_correct,
    step_size_update,
    tangent,
    trace,
    trace_problem,
    write_branch_csv,
)
from bifurcurve.mesh import DomainSpec, generate_domain, make_field


def toy_cfg(**kw):
    base = dict(ds0=0.05, ds_max=0.1, newton_tol=1e-12, max_steps=80,
                nu=0, resolution=1)
    base.update(kw)
    return ContinuationConfig(**base)


def test_tangent_scalar_toy():
    # f(u, lam) = u - lam: J = [1], f_lam = [-1], z = 1
    J = sp.csr_matrix(np.array([[1.0]]))
    t = tangent(J, np.array([-1.0]))
    assert t.lamdot == pytest.approx(1.0 / math.sqrt(2.0))
    assert t.udot[0] == pytest.approx(1.0 / math.sqrt(2.0))
    assert t.norm == pytest.approx(1.0, abs=1e-10)


def test_tangent_direction_flip():
    J = sp.csr_matrix(np.array([[1.0]]))
    prev = Tangent(np.array([-1.0 / math.sqrt(2.0)]), -1.0 / math.sqrt(2.0))
    t = tangent(J, np.array([-1.0]), prev)
    assert t.lamdot < 0
    assert t.udot[0] * prev.udot[0] + t.lamdot * prev.lamdot > 0


def test_tangent_at_pde_origin_increases_lambda():
    mesh = generate_domain(DomainSpec.square(), 4)
    params = ProblemParams(0.1, 4, mesh.domain)
    problem = PdeProblem(params, mesh)
    t = compute_tangent(problem, np.zeros(problem.n_dof), 0.0)
    assert t.lamdot > 0
    # load is positive, so deflection goes down as lambda grows
    assert t.udot.max() < 0
    assert t.norm == pytest.approx(1.0, abs=1e-10)


def test_step_size_update_rules():
    cfg = ContinuationConfig(ds0=0.1, ds_min=0.01, ds_max=1.0,
                             grow_factor=1.3, shrink_factor=0.5, fast_iters=4)
    assert step_size_update(3, False, 0.1, cfg) == pytest.approx(0.13)
    assert step_size_update(0, True, 0.1, cfg) == pytest.approx(0.05)
    assert step_size_update(0, True, 0.015, cfg) == pytest.approx(0.01)
    assert step_size_update(7, False, 0.1, cfg) == pytest.approx(0.1)


def test_classify_stability():
    stable, mu = classify_stability(sp.identity(3, format="csc"))
    assert stable is True and mu == pytest.approx(1.0, abs=1e-8)
    stable, mu = classify_stability(sp.diags([-1.0, 1.0]).tocsc())
    assert stable is False and mu == pytest.approx(-1.0, abs=1e-8)


def test_stability_of_trivial_pde_solution():
    mesh = generate_domain(DomainSpec.square(), 4)
    params = ProblemParams(0.0, 4, mesh.domain)
    fld = make_field(mesh, np.zeros(mesh.n_vertices))
    J = jacobian(fld, 0.2, params, mesh)
    stable, mu = classify_stability(sp.csc_matrix(J))
    assert stable is True
    oracle = np.linalg.eigvalsh(J.toarray()).min()
    assert mu == pytest.approx(oracle, abs=1e-8 * np.abs(J.toarray()).sum(axis=1).max())


def test_scalar_fold_trace_and_localization():
    problem = ScalarFold()
    cfg = toy_cfg(s_max=2.2)
    # start on the curve at (u, lam) = (1, 0); tangent with decreasing u
    t0 = compute_tangent(problem, np.array([1.0]), 0.0)
    if t0.udot[0] > 0:
        t0 = Tangent(-t0.udot, -t0.lamdot)
    branch = trace_problem(problem, cfg, np.array([1.0]), 0.0, t0)
    for smp in branch.samples:
        assert smp.u.values[0] ** 2 + smp.lam - 1.0 == pytest.approx(0.0, abs=10 * cfg.newton_tol)
    assert len(branch.folds) == 1
    fold = branch.folds[0]
    assert fold.lam == pytest.approx(1.0, abs=1e-8)
    assert fold.linf == pytest.approx(0.0, abs=1e-4)
    # arc length increases strictly
    ss = [smp.s for smp in branch.samples]
    assert all(b > a for a, b in zip(ss, ss[1:]))
    # stability flips at the fold: u > 0 side of u^2 = 1 - lam has J = 2u > 0
    top = [smp for smp in branch.samples if smp.u.values[0] > 0.05]
    bot = [smp for smp in branch.samples if smp.u.values[0] < -0.05]
    assert all(smp.stable for smp in top)
    assert all(not smp.stable for smp in bot)


def test_correct_wrapper_on_pde():
    import math

    from bifurcurve.continuation import BranchSample, correct
    from bifurcurve.mesh import zero_field

    mesh = generate_domain(DomainSpec.square(), 4)
    params = ProblemParams(0.1, 4, mesh.domain)
    problem = PdeProblem(params, mesh)
    cfg = ContinuationConfig(resolution=4, nu=0)
    base = BranchSample(0, 0.0, 0.0, zero_field(mesh), 0.0, 0.0, problem.n_dof,
                        mesh.n_elements, 0, 0.0, 1, math.nan, True)
    tan = compute_tangent(problem, np.zeros(problem.n_dof), 0.0)
    out = correct(base, tan, 5e-3, params, mesh, cfg)
    assert out.step == 1
    assert out.lam > 0
    # near the trivial branch the corrector converges in very few sweeps
    assert out.newton_iters <= 4
    f = residual(out.u, out.lam, params, mesh)
    assert np.abs(f).max() <= cfg.newton_tol


def test_correct_admits_hyperplane_tolerance():
    problem = ScalarFold()
    cfg = toy_cfg()
    t0 = compute_tangent(problem, np.array([1.0]), 0.0)
    ds = 0.07
    u, lam, iters = newton_correct(problem, np.array([1.0]), 0.0, t0, ds, cfg)
    hyp = t0.udot[0] * (u[0] - 1.0) + t0.lamdot * lam - ds
    assert abs(hyp) <= cfg.newton_tol
    assert abs(u[0] ** 2 + lam - 1.0) <= cfg.newton_tol


def test_locate_fold_requires_bracket():
    problem = ScalarFold()
    cfg = toy_cfg()
    u0 = np.array([0.35])
    lam0 = 1.0 - u0[0] ** 2
    tan = compute_tangent(problem, u0, lam0)
    if tan.udot[0] > 0:
        tan = Tangent(-tan.udot, -tan.lamdot)
    rec = locate_fold(problem, u0, lam0, tan, 0.8, cfg, index=0)
    assert rec.lam == pytest.approx(1.0, abs=1e-8)


def test_tangent_normalization_along_pde_branch():
    params = ProblemParams(0.3, 4, DomainSpec.interval(-1.0, 1.0))
    cfg = ContinuationConfig(resolution=16, max_steps=25, nu=0,
                             stability_mode="parity", lambda_max=1.5)
    branch = trace(params, cfg)
    assert len(branch.samples) > 5
    for smp in branch.samples:
        f = residual(smp.u, smp.lam, params, branch.meshes[smp.u.mesh_generation])
        assert np.abs(f).max() <= cfg.newton_tol * 10


def test_trace_with_adaptation_keeps_residual_small():
    params = ProblemParams(0.2, 4, DomainSpec.square())
    cfg = ContinuationConfig(resolution=4, max_steps=12, nu=2, kappa=5e-3,
                             stability_mode="parity", lambda_max=3.0)
    branch = trace(params, cfg)
    gens = {smp.u.mesh_generation for smp in branch.samples}
    for smp in branch.samples:
        mesh = branch.meshes[smp.u.mesh_generation]
        f = residual(smp.u, smp.lam, params, mesh)
        assert np.abs(f).max() <= cfg.newton_tol * 10
    assert len(branch.samples) == 13  # initial point plus max_steps


def test_consecutive_tangent_dot_positive_scalar():
    problem = ScalarFold()
    cfg = toy_cfg(s_max=2.2)
    t0 = compute_tangent(problem, np.array([1.0]), 0.0)
    if t0.udot[0] > 0:
        t0 = Tangent(-t0.udot, -t0.lamdot)
    prev = t0
    u, lam = np.array([1.0]), 0.0
    for _ in range(25):
        u, lam, _ = newton_correct(problem, u, lam, prev, 0.08, cfg)
        t = compute_tangent(problem, u, lam, prev)
        assert t.udot @ prev.udot + t.lamdot * prev.lamdot > 0
        assert t.norm == pytest.approx(1.0, abs=1e-10)
        prev = t


def test_branch_csv_format(tmp_path):
    problem = ScalarFold()
    cfg = toy_cfg(max_steps=5)
    t0 = compute_tangent(problem, np.array([1.0]), 0.0)
    branch = trace_problem(problem, cfg, np.array([1.0]), 0.0, t0)
    p = tmp_path / "branch.csv"
    write_branch_csv(branch, p)
    lines = p.read_text().splitlines()
    assert lines[0] == "step,s,lambda,u_l2,u_linf,n_dof,n_tri,newton_iters,ds,det_sign,smallest_eig,stable"
    assert len(lines) == len(branch.samples) + 1
    first = lines[1].split(",")
    assert first[0] == "0"
    assert first[11] in ("0", "1")


def test_config_validation():
    with pytest.raises(ValueError):
        ContinuationConfig(ds0=1e-9, ds_min=1e-8)
    with pytest.raises(ValueError):
        ContinuationConfig(kappa=1e-6, rho=1e-3)
    with pytest.raises(ValueError):
        ContinuationConfig(newton_tol=0.0)
