import numpy as np
import pytest

from hvacfem import fem
from hvacfem.errors import ConvergenceError, DomainError
from hvacfem.flow import (
    FlowProblem,
    flow_workspace,
    linearized_flow_operator,
    solve_flow,
    solve_flow_robust,
)
from hvacfem.geometry import (
    ElementField,
    FanRegion,
    PointLocator,
    RegionSpec,
    build_mesh,
    material_fields,
    rect,
)
from hvacfem.quadrature import TRI_WEIGHTS, physical_points


def cavity(h):
    return build_mesh(rect(0, 0, 1, 1), RegionSpec(), h)


def zero_alpha(mesh):
    return ElementField(mesh, np.zeros(mesh.n_triangles))


def gaussian_jet(amplitude=5.0, center=(0.5, 0.3), width=0.15):
    cx, cy = center

    def fn(x, y):
        g = amplitude * np.exp(-((x - cx) ** 2 + (y - cy) ** 2) / width**2)
        return np.stack([np.zeros_like(g), g])

    return fn


def test_zero_forcing_zero_solution():
    mesh = cavity(0.25)
    vspace = fem.p2v_space(mesh)
    sol = solve_flow(FlowProblem(100.0, zero_alpha(mesh), fem.zero_field(vspace)))
    assert np.max(np.abs(sol.u.coeffs)) <= 1e-10
    assert np.max(np.abs(sol.p.coeffs)) <= 1e-10
    assert sol.iterations == 0


def test_closed_door_velocity_suppression(two_door_mesh, two_door_regions):
    alpha, _ = material_fields(
        two_door_mesh, two_door_regions, [0.0, 0.0], 1e-2, 1e-4, 1e3
    )
    vspace = fem.p2v_space(two_door_mesh)
    g = np.zeros(vspace.dof_count)
    fan_elems = two_door_mesh.triangles_in("fan0")
    fan_dofs = np.unique(vspace.element_dofs()[fan_elems])
    g[fan_dofs[fan_dofs % 2 == 0]] = 1.0  # x-directed fan force
    sol = solve_flow(FlowProblem(100.0, alpha, fem.Field(vspace, g)))
    door_dofs = np.unique(
        vspace.element_dofs()[two_door_mesh.triangles_in("door0")]
    )
    u_door = np.max(np.abs(sol.u.coeffs[door_dofs]))
    u_max = np.max(np.abs(sol.u.coeffs))
    assert u_max > 0
    assert u_door <= 1e-2 * u_max


def _h1_difference(u_coarse, u_fine):
    mesh_f = u_fine.space.mesh
    pts = physical_points(mesh_f.coords()).reshape(-1, 2)
    gc = fem.evaluate_gradient(u_coarse, pts, PointLocator(u_coarse.space.mesh))
    gf = fem.evaluate_gradient(u_fine, pts, PointLocator(mesh_f))
    d2 = np.sum((gc - gf) ** 2, axis=(1, 2)).reshape(mesh_f.n_triangles, -1)
    return float(np.sqrt(np.einsum("t,q,tq->", mesh_f.areas(), TRI_WEIGHTS, d2)))


def test_self_convergence_rate():
    sols = []
    for h in (1 / 8, 1 / 16, 1 / 32):
        mesh = cavity(h)
        vspace = fem.p2v_space(mesh)
        g = fem.interpolate_p2v(vspace, gaussian_jet())
        sols.append(solve_flow(FlowProblem(100.0, zero_alpha(mesh), g)))
    e1 = _h1_difference(sols[0].u, sols[1].u)
    e2 = _h1_difference(sols[1].u, sols[2].u)
    assert np.log2(e1 / e2) >= 1.7


def test_linearized_operator_stokes_limit():
    mesh = cavity(0.25)
    vspace = fem.p2v_space(mesh)
    ws = flow_workspace(vspace)
    alpha = ElementField(mesh, np.full(mesh.n_triangles, 2.0))
    op = linearized_flow_operator(fem.zero_field(vspace), alpha, 10.0, ws)
    # u* = 0: the velocity block is symmetric (Brinkman + viscous only)
    n_u = ws.n_u
    block = op.matrix.toarray()[:n_u, :n_u]
    assert np.max(np.abs(block - block.T)) <= 1e-12


def test_linearized_operator_adjoint_identity():
    mesh = cavity(0.25)
    vspace = fem.p2v_space(mesh)
    ws = flow_workspace(vspace)
    u_star = fem.interpolate_p2v(vspace, gaussian_jet(2.0))
    op = linearized_flow_operator(u_star, zero_alpha(mesh), 100.0, ws)
    rng = np.random.default_rng(4)
    n = op.matrix.shape[0]
    for _ in range(5):
        w = rng.normal(size=n)
        v = rng.normal(size=n)
        w[vspace.boundary_dofs] = 0.0
        v[vspace.boundary_dofs] = 0.0
        lhs = v @ (op.matrix @ w)
        rhs = w @ (op.matrix.T @ v)
        assert abs(lhs - rhs) <= 1e-10 * max(abs(lhs), 1.0)


def test_newton_step_at_solution_is_zero():
    mesh = cavity(0.25)
    vspace = fem.p2v_space(mesh)
    ws = flow_workspace(vspace)
    g = fem.interpolate_p2v(vspace, gaussian_jet(3.0))
    prob = FlowProblem(50.0, zero_alpha(mesh), g, tolerance=1e-12)
    sol = solve_flow(prob)
    from hvacfem.flow import _residual

    force = ws.mass_v @ g.coeffs
    r = _residual(ws, prob, force, sol.u.coeffs, sol.p.coeffs, 0.0)
    op = linearized_flow_operator(sol.u, prob.alpha, prob.reynolds, ws)
    step = op.factor().solve(-r)
    assert np.linalg.norm(step) <= 1e-9


def test_newton_monotone_and_superlinear():
    mesh = cavity(1 / 16)
    vspace = fem.p2v_space(mesh)
    g = fem.interpolate_p2v(vspace, gaussian_jet())
    sol = solve_flow(FlowProblem(100.0, zero_alpha(mesh), g))
    tail = sol.history[-4:]
    assert all(tail[i + 1] < tail[i] for i in range(len(tail) - 1))
    # observed convergence order on the final triple
    r0, r1, r2 = tail[-3], tail[-2], tail[-1]
    order = np.log(r2 / r1) / np.log(r1 / r0)
    assert order >= 1.5


def test_initial_guess_independence_with_positive_margin():
    mesh = cavity(0.25)
    vspace = fem.p2v_space(mesh)
    g = fem.interpolate_p2v(vspace, gaussian_jet(0.5))
    prob = FlowProblem(1.0, zero_alpha(mesh), g)
    sol1 = solve_flow(prob)
    assert sol1.uniqueness_margin > 0
    rng = np.random.default_rng(9)
    guess = fem.Field(vspace, 0.1 * rng.normal(size=vspace.dof_count))
    sol2 = solve_flow(prob, initial_guess=guess)
    assert np.max(np.abs(sol1.u.coeffs - sol2.u.coeffs)) <= 1e-7


def test_stokes_limit_linearity():
    mesh = cavity(0.25)
    vspace = fem.p2v_space(mesh)
    g1 = fem.interpolate_p2v(vspace, gaussian_jet(1.0))
    g2 = fem.interpolate_p2v(vspace, gaussian_jet(2.0))
    re = 1e-4  # convection suppressed
    s1 = solve_flow(FlowProblem(re, zero_alpha(mesh), g1, tolerance=1e-13))
    s2 = solve_flow(FlowProblem(re, zero_alpha(mesh), g2, tolerance=1e-13))
    diff = np.linalg.norm(s2.u.coeffs - 2.0 * s1.u.coeffs)
    assert diff <= 1e-8 * np.linalg.norm(s2.u.coeffs)


def test_divergence_and_boundary_invariants(two_door_mesh, two_door_regions):
    alpha, _ = material_fields(
        two_door_mesh, two_door_regions, [0.5, 0.5], 1e-2, 1e-4, 1e3
    )
    vspace = fem.p2v_space(two_door_mesh)
    ws = flow_workspace(vspace)
    g = fem.interpolate_p2v(
        vspace, lambda x, y: np.stack([0.3 * np.sin(y), 0.3 * np.cos(x)])
    )
    sol = solve_flow(FlowProblem(100.0, alpha, g))
    assert sol.divergence_norm <= 1e-9
    assert np.all(sol.u.coeffs[vspace.boundary_dofs] == 0.0)
    assert abs(ws.gauge @ sol.p.coeffs) <= 1e-10  # mean-zero pressure gauge


def test_problem_validation():
    mesh = cavity(0.5)
    vspace = fem.p2v_space(mesh)
    with pytest.raises(DomainError):
        FlowProblem(-1.0, zero_alpha(mesh), fem.zero_field(vspace))
    with pytest.raises(DomainError):
        FlowProblem(10.0, ElementField(mesh, -np.ones(mesh.n_triangles)),
                    fem.zero_field(vspace))


def test_nonconvergence_raises_with_history():
    # opposing jets at extreme amplitude with a tiny iteration budget
    mesh = cavity(0.25)
    vspace = fem.p2v_space(mesh)

    def opposing(x, y):
        g = 500.0 * np.exp(-((x - 0.5) ** 2) / 0.02)
        return np.stack([np.zeros_like(g), np.where(y > 0.5, g, -g)])

    g = fem.interpolate_p2v(vspace, opposing)
    with pytest.raises(ConvergenceError) as exc:
        solve_flow(FlowProblem(100.0, zero_alpha(mesh), g, max_iters=3))
    assert len(exc.value.history) >= 1


def test_robust_fallback_matches_direct():
    mesh = cavity(0.25)
    vspace = fem.p2v_space(mesh)
    g = fem.interpolate_p2v(vspace, gaussian_jet(2.0))
    prob = FlowProblem(100.0, zero_alpha(mesh), g)
    a = solve_flow(prob)
    b = solve_flow_robust(prob)
    assert np.allclose(a.u.coeffs, b.u.coeffs, atol=1e-9)
