import numpy as np
import pytest
import scipy.sparse as sp

from hvacfem import fem
from hvacfem.errors import AssemblyError, SolverError
from hvacfem.flow import FlowProblem, flow_workspace, solve_flow
from hvacfem.geometry import ElementField, RegionSpec, build_mesh, rect


def test_space_dof_counts(two_door_mesh):
    p1 = fem.p1_space(two_door_mesh)
    assert p1.dof_count == two_door_mesh.n_vertices
    v = fem.p2v_space(two_door_mesh)
    assert v.dof_count == 2 * (two_door_mesh.n_vertices + v.edges.shape[0])


def test_boundary_dofs_characterization():
    mesh = build_mesh(rect(0, 0, 1, 1), RegionSpec(), 0.25)
    v = fem.p2v_space(mesh)
    nodes = v.node_coords()
    on_boundary = (
        (np.abs(nodes[:, 0]) < 1e-12) | (np.abs(nodes[:, 0] - 1) < 1e-12)
        | (np.abs(nodes[:, 1]) < 1e-12) | (np.abs(nodes[:, 1] - 1) < 1e-12)
    )
    expect = np.sort(np.concatenate(
        [2 * np.nonzero(on_boundary)[0], 2 * np.nonzero(on_boundary)[0] + 1]
    ))
    assert np.array_equal(np.sort(v.boundary_dofs), expect)
    p1 = fem.p1_space(mesh)
    vb = (
        (np.abs(mesh.vertices[:, 0]) < 1e-12) | (np.abs(mesh.vertices[:, 0] - 1) < 1e-12)
        | (np.abs(mesh.vertices[:, 1]) < 1e-12) | (np.abs(mesh.vertices[:, 1] - 1) < 1e-12)
    )
    assert np.array_equal(np.sort(p1.boundary_dofs), np.nonzero(vb)[0])


def test_mass_partition_of_unity(two_door_mesh):
    space = fem.p1_space(two_door_mesh)
    M = fem.mass_matrix(space)
    one = np.ones(space.dof_count)
    assert one @ (M @ one) == pytest.approx(two_door_mesh.domain_area(), abs=1e-10)


def test_stiffness_harmonic_linear(unit_square_mesh):
    space = fem.p1_space(unit_square_mesh)
    K = fem.stiffness_matrix(space)  # kappa = 1
    f = fem.interpolate_p1(space, lambda x, y: x)
    r = K @ f.coeffs
    interior = np.setdiff1d(np.arange(space.dof_count), space.boundary_dofs)
    assert np.max(np.abs(r[interior])) < 1e-12


def test_divergence_free_after_stokes():
    mesh = build_mesh(rect(0, 0, 1, 1), RegionSpec(), 0.2)
    vspace = fem.p2v_space(mesh)
    ws = flow_workspace(vspace)
    alpha = ElementField(mesh, np.zeros(mesh.n_triangles))
    g = fem.interpolate_p2v(
        vspace, lambda x, y: np.stack([np.sin(np.pi * y), np.cos(np.pi * x)])
    )
    sol = solve_flow(FlowProblem(1.0, alpha, g))
    assert np.linalg.norm(ws.div @ sol.u.coeffs) <= 1e-10


def test_dirichlet_constant_laplace(unit_square_mesh):
    space = fem.p1_space(unit_square_mesh)
    K = fem.stiffness_matrix(space)
    A, b = fem.apply_dirichlet(K, np.zeros(space.dof_count), space.boundary_dofs, 7.0)
    x = fem.solve_sparse(A, b)
    assert np.allclose(x, 7.0, atol=1e-12)


def test_dirichlet_velocity_exact_zero():
    mesh = build_mesh(rect(0, 0, 1, 1), RegionSpec(), 0.25)
    vspace = fem.p2v_space(mesh)
    alpha = ElementField(mesh, np.zeros(mesh.n_triangles))
    g = fem.interpolate_p2v(vspace, lambda x, y: np.stack([y * 0 + 1, x * 0]))
    sol = solve_flow(FlowProblem(10.0, alpha, g))
    assert np.all(sol.u.coeffs[vspace.boundary_dofs] == 0.0)


def test_manufactured_poisson_second_order():
    errs = []
    for h in (0.25, 0.125, 0.0625):
        mesh = build_mesh(rect(0, 0, 1, 1), RegionSpec(), h)
        space = fem.p1_space(mesh)
        K = fem.stiffness_matrix(space)
        load = fem.load_vector(
            space,
            lambda x, y: 2 * np.pi**2 * np.sin(np.pi * x) * np.sin(np.pi * y),
        )
        A, b = fem.apply_dirichlet(K, load, space.boundary_dofs, 0.0)
        x = fem.solve_sparse(A, b)
        exact = fem.interpolate_p1(
            space, lambda px, py: np.sin(np.pi * px) * np.sin(np.pi * py)
        )
        err = fem.Field(space, x - exact.coeffs)
        errs.append(fem.l2_norm(err))
    r1 = np.log2(errs[0] / errs[1])
    r2 = np.log2(errs[1] / errs[2])
    assert r1 > 1.7 and r2 > 1.7


def test_solve_sparse_identity():
    A = sp.identity(10, format="csc")
    b = np.arange(10.0)
    assert np.array_equal(fem.solve_sparse(A, b), b)


def test_solve_sparse_vs_dense_oracle(unit_square_mesh):
    space = fem.p1_space(unit_square_mesh)
    K = fem.stiffness_matrix(space) + fem.mass_matrix(space)
    rng = np.random.default_rng(5)
    b = rng.normal(size=space.dof_count)
    x = fem.solve_sparse(K.tocsc(), b)
    x_dense = np.linalg.solve(K.toarray(), b)
    assert np.linalg.norm(x - x_dense) <= 1e-10 * np.linalg.norm(x_dense)


def test_solve_sparse_saddle_residual():
    mesh = build_mesh(rect(0, 0, 1, 1), RegionSpec(), 0.25)
    vspace = fem.p2v_space(mesh)
    ws = flow_workspace(vspace)
    alpha = ElementField(mesh, np.zeros(mesh.n_triangles))
    from hvacfem.flow import linearized_flow_operator

    op = linearized_flow_operator(fem.zero_field(vspace), alpha, 1.0, ws)
    rng = np.random.default_rng(6)
    b = rng.normal(size=op.matrix.shape[0])
    x = fem.solve_sparse(op.matrix, b)
    assert np.linalg.norm(op.matrix @ x - b) <= 1e-9 * np.linalg.norm(b)


def test_solver_error_on_singular():
    A = sp.csc_matrix(np.array([[1.0, 2.0], [2.0, 4.0]]))
    with pytest.raises(SolverError):
        fem.solve_sparse(A, np.array([1.0, 1.0]))


def test_assembly_bit_reproducible(two_door_mesh):
    space = fem.p1_space(two_door_mesh)
    vspace = fem.p2v_space(two_door_mesh)
    u = fem.interpolate_p2v(vspace, lambda x, y: np.stack([y, -x]))
    A1 = fem.advection_matrix(space, u)
    A2 = fem.advection_matrix(space, u)
    assert np.array_equal(A1.data, A2.data)
    assert np.array_equal(A1.indices, A2.indices)
    K1 = fem.stiffness_matrix(vspace)
    K2 = fem.stiffness_matrix(vspace)
    assert np.array_equal(K1.data, K2.data)


def test_advection_skew_symmetry():
    # exactly divergence-free polynomial velocity (curl of a cubic stream
    # function is representable in P2), zero-boundary scalar test vectors
    mesh = build_mesh(rect(0, 0, 1, 1), RegionSpec(), 0.2)
    space = fem.p1_space(mesh)
    vspace = fem.p2v_space(mesh)
    u = fem.interpolate_p2v(vspace, lambda x, y: np.stack([x * x, -2 * x * y]))
    N = fem.advection_matrix(space, u)
    rng = np.random.default_rng(8)
    interior = np.setdiff1d(np.arange(space.dof_count), space.boundary_dofs)
    for _ in range(5):
        x = np.zeros(space.dof_count)
        x[interior] = rng.normal(size=interior.size)
        assert abs(x @ (N @ x)) <= 1e-8 * (x @ x)


def test_taylor_hood_inf_sup_bounded():
    """Discrete inf-sup constant of the scaled divergence coupling stays
    bounded below across refinements (smallest eigenvalue of the pressure
    Schur complement w.r.t. the pressure mass matrix)."""
    betas = []
    for h in (0.5, 0.25, 0.125):
        mesh = build_mesh(rect(0, 0, 1, 1), RegionSpec(), h)
        vspace = fem.p2v_space(mesh)
        pspace = fem.pressure_space(mesh)
        B = fem.divergence_matrix(pspace, vspace)
        A = fem.stiffness_matrix(vspace)
        Q = fem.mass_matrix(pspace)
        interior = np.setdiff1d(np.arange(vspace.dof_count), vspace.boundary_dofs)
        Ai = A.toarray()[np.ix_(interior, interior)]
        Bi = B.toarray()[:, interior]
        S = Bi @ np.linalg.solve(Ai, Bi.T)
        evals = np.linalg.eigvalsh(np.linalg.solve(Q.toarray(), S))
        evals = np.sort(evals)
        beta = np.sqrt(max(evals[1], 0.0))  # skip the constant-pressure mode
        betas.append(beta)
    assert min(betas) > 0.1
    assert betas[-1] > 0.5 * betas[0]


def test_assemble_dispatch(two_door_mesh):
    space = fem.p1_space(two_door_mesh)
    M = fem.assemble("mass", space)
    assert M.shape == (space.dof_count, space.dof_count)
    with pytest.raises(AssemblyError):
        fem.assemble("unknown_form", space)


def test_assembly_mesh_mismatch(two_door_mesh, unit_square_mesh):
    space = fem.p1_space(two_door_mesh)
    other = fem.p2v_space(unit_square_mesh)
    u = fem.zero_field(other)
    with pytest.raises(AssemblyError):
        fem.advection_matrix(space, u)


def test_transient_field_validation():
    mesh = build_mesh(rect(0, 0, 1, 1), RegionSpec(), 0.5)
    space = fem.p1_space(mesh)
    from hvacfem.errors import DomainError

    with pytest.raises(DomainError):
        fem.TransientField(space, [0.0, 0.0, 1.0], np.zeros((3, space.dof_count)))
    with pytest.raises(DomainError):
        fem.Field(space, np.full(space.dof_count, np.nan))
