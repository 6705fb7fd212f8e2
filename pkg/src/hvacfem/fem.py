"""Finite element core: P1/P2 spaces on triangles, operator assembly,
Dirichlet elimination and sparse direct solves.

Taylor-Hood (P2 velocity / P1 pressure) is used for flow so the discrete
inf-sup condition holds without stabilization; temperature and the adjoint
temperature live in P1. One degree-5 quadrature rule makes every assembled
form exact for its polynomial degree, and assembly order is fixed so
matrices are bit-for-bit reproducible.
"""

from dataclasses import dataclass, field as dc_field

import numpy as np
import scipy.sparse as sp
import scipy.sparse.linalg as spla

from .errors import AssemblyError, DomainError, SolverError
from .geometry import ElementField, Mesh, PointLocator
from .quadrature import NQ, TRI_POINTS, TRI_WEIGHTS, physical_points

P1 = "P1-scalar"
P2V = "P2-vector"
P1P = "P1-scalar-pressure"

# ---------------------------------------------------------------------------
# reference element tables (degree-5 rule)
# ---------------------------------------------------------------------------

_L = TRI_POINTS  # (nq, 3)

# P2 shape functions: vertices 0-2, edge midpoints 3=(01), 4=(12), 5=(20)
_P2 = np.column_stack(
    [
        _L[:, 0] * (2 * _L[:, 0] - 1),
        _L[:, 1] * (2 * _L[:, 1] - 1),
        _L[:, 2] * (2 * _L[:, 2] - 1),
        4 * _L[:, 0] * _L[:, 1],
        4 * _L[:, 1] * _L[:, 2],
        4 * _L[:, 2] * _L[:, 0],
    ]
)  # (nq, 6)

# dN/dlambda_i, shape (nq, 6, 3)
_DP2 = np.zeros((NQ, 6, 3))
for _q in range(NQ):
    l0, l1, l2 = _L[_q]
    _DP2[_q, 0, 0] = 4 * l0 - 1
    _DP2[_q, 1, 1] = 4 * l1 - 1
    _DP2[_q, 2, 2] = 4 * l2 - 1
    _DP2[_q, 3, 0], _DP2[_q, 3, 1] = 4 * l1, 4 * l0
    _DP2[_q, 4, 1], _DP2[_q, 4, 2] = 4 * l2, 4 * l1
    _DP2[_q, 5, 2], _DP2[_q, 5, 0] = 4 * l0, 4 * l2

_LOCAL_EDGES = np.array([[0, 1], [1, 2], [2, 0]])


# ---------------------------------------------------------------------------
# spaces and fields
# ---------------------------------------------------------------------------

@dataclass(frozen=True, eq=False)
class Space:
    kind: str
    mesh: Mesh
    dof_count: int
    boundary_dofs: np.ndarray
    edges: np.ndarray | None = None       # (ne, 2), P2 only
    tri_edges: np.ndarray | None = None   # (nt, 3) local edge -> global edge
    _cache: dict = dc_field(default_factory=dict, repr=False)

    def element_dofs(self):
        """(nt, nloc) global dof indices per element, fixed ordering."""
        key = "element_dofs"
        if key not in self._cache:
            tri = self.mesh.triangles
            if self.kind in (P1, P1P):
                dofs = tri.copy()
            else:
                nv = self.mesh.n_vertices
                nodes = np.concatenate([tri, nv + self.tri_edges], axis=1)  # (nt, 6)
                dofs = np.empty((tri.shape[0], 12), dtype=int)
                dofs[:, 0::2] = 2 * nodes
                dofs[:, 1::2] = 2 * nodes + 1
            dofs.setflags(write=False)
            self._cache[key] = dofs
        return self._cache[key]

    def node_coords(self):
        """Coordinates of scalar nodes (vertices, then edge midpoints)."""
        if self.kind in (P1, P1P):
            return self.mesh.vertices
        mids = 0.5 * (
            self.mesh.vertices[self.edges[:, 0]] + self.mesh.vertices[self.edges[:, 1]]
        )
        return np.vstack([self.mesh.vertices, mids])


def p1_space(mesh):
    bdofs = np.unique(mesh.boundary_edges[:, :2])
    return Space(P1, mesh, mesh.n_vertices, bdofs)


def pressure_space(mesh):
    bdofs = np.unique(mesh.boundary_edges[:, :2])
    return Space(P1P, mesh, mesh.n_vertices, bdofs)


def p2v_space(mesh):
    tri = mesh.triangles
    pairs = np.sort(tri[:, _LOCAL_EDGES].reshape(-1, 2), axis=1)
    edges, inv = np.unique(pairs, axis=0, return_inverse=True)
    tri_edges = inv.reshape(tri.shape[0], 3)
    nv, ne = mesh.n_vertices, edges.shape[0]

    # boundary scalar nodes: boundary vertices plus boundary edge midpoints
    bedges = np.sort(mesh.boundary_edges[:, :2], axis=1)
    edge_lookup = {(int(a), int(b)): k for k, (a, b) in enumerate(edges)}
    bedge_ids = np.array([edge_lookup[(int(a), int(b))] for a, b in bedges], dtype=int)
    bnodes = np.concatenate([np.unique(bedges), nv + bedge_ids])
    bdofs = np.sort(np.concatenate([2 * bnodes, 2 * bnodes + 1]))
    return Space(P2V, mesh, 2 * (nv + ne), bdofs, edges=edges, tri_edges=tri_edges)


@dataclass
class Field:
    """Coefficient vector over a space (temperature degC, velocity m/s, ...)."""

    space: Space
    coeffs: np.ndarray

    def __post_init__(self):
        c = np.asarray(self.coeffs, dtype=float)
        if c.shape != (self.space.dof_count,):
            raise DomainError(
                f"field has {c.shape} coefficients, space wants ({self.space.dof_count},)"
            )
        if not np.all(np.isfinite(c)):
            raise DomainError("field coefficients must be finite")
        self.coeffs = c

    def copy(self):
        return Field(self.space, self.coeffs.copy())


def zero_field(space):
    return Field(space, np.zeros(space.dof_count))


@dataclass
class TransientField:
    """One coefficient vector per node of a strictly increasing time grid."""

    space: Space
    times: np.ndarray
    values: np.ndarray  # (n_times, dof_count)

    def __post_init__(self):
        self.times = np.asarray(self.times, dtype=float)
        self.values = np.asarray(self.values, dtype=float)
        if np.any(np.diff(self.times) <= 0):
            raise DomainError("time grid must be strictly increasing")
        if self.values.shape != (len(self.times), self.space.dof_count):
            raise DomainError("transient field values shape mismatch")

    @property
    def n_steps(self):
        return len(self.times) - 1

    def snapshot(self, n):
        return Field(self.space, self.values[n])

    def copy(self):
        return TransientField(self.space, self.times.copy(), self.values.copy())


def constant_transient(space, times, value=0.0):
    return TransientField(
        space, times, np.full((len(times), space.dof_count), float(value))
    )


# ---------------------------------------------------------------------------
# assembly
# ---------------------------------------------------------------------------

def _check_mesh(space, *fields):
    for f in fields:
        m = f.space.mesh if isinstance(f, Field) else f.mesh
        if m is not space.mesh:
            raise AssemblyError("all operands must live on the same mesh")


def _scatter(rows_map, cols_map, blocks, shape):
    nr, nc = blocks.shape[1], blocks.shape[2]
    rows = np.broadcast_to(rows_map[:, :, None], blocks.shape)
    cols = np.broadcast_to(cols_map[:, None, :], blocks.shape)
    mat = sp.coo_matrix(
        (blocks.ravel(), (rows.ravel(), cols.ravel())), shape=shape
    )
    return mat.tocsr()

def _coeff_values(space, coeff):
    """Per-element coefficient (nt,) from None, scalar or ElementField."""
    if coeff is None:
        return np.ones(space.mesh.n_triangles)
    if isinstance(coeff, ElementField):
        _check_mesh(space, coeff)
        return coeff.values
    return np.full(space.mesh.n_triangles, float(coeff))


def _p2_grads(mesh):
    """(nt, nq, 6, 2) physical gradients of P2 shape functions."""
    return np.einsum("qbi,tix->tqbx", _DP2, mesh.grad_bary())


def _expand_vector(scalar_blocks):
    """Turn (nt, n, m) scalar blocks into (nt, 2n, 2m) componentwise blocks."""
    nt, n, m = scalar_blocks.shape
    out = np.zeros((nt, 2 * n, 2 * m))
    out[:, 0::2, 0::2] = scalar_blocks
    out[:, 1::2, 1::2] = scalar_blocks
    return out


def mass_matrix(space, coeff=None):
    """\\int c phi_j phi_i, c piecewise constant per element."""
    mesh = space.mesh
    c = _coeff_values(space, coeff) * mesh.areas()
    if space.kind in (P1, P1P):
        ref = np.einsum("q,qi,qj->ij", TRI_WEIGHTS, _L, _L)
        blocks = c[:, None, None] * ref[None]
        dofs = space.element_dofs()
        return _scatter(dofs, dofs, blocks, (space.dof_count, space.dof_count))
    ref = np.einsum("q,qi,qj->ij", TRI_WEIGHTS, _P2, _P2)
    blocks = _expand_vector(c[:, None, None] * ref[None])
    dofs = space.element_dofs()
    return _scatter(dofs, dofs, blocks, (space.dof_count, space.dof_count))


def stiffness_matrix(space, coeff=None):
    """\\int c grad(phi_j) . grad(phi_i) (componentwise for vector spaces)."""
    mesh = space.mesh
    c = _coeff_values(space, coeff) * mesh.areas()
    if space.kind in (P1, P1P):
        g = mesh.grad_bary()  # (nt, 3, 2)
        blocks = c[:, None, None] * np.einsum("tix,tjx->tij", g, g)
        dofs = space.element_dofs()
        return _scatter(dofs, dofs, blocks, (space.dof_count, space.dof_count))
    gp2 = _p2_grads(mesh)
    blocks = np.einsum("q,tqix,tqjx->tij", TRI_WEIGHTS, gp2, gp2) * c[:, None, None]
    blocks = _expand_vector(blocks)
    dofs = space.element_dofs()
    return _scatter(dofs, dofs, blocks, (space.dof_count, space.dof_count))


def _velocity_at_quadrature(u):
    """(nt, nq, 2) values of a P2 vector field at quadrature points."""
    dofs = u.space.element_dofs()
    ue = u.coeffs[dofs]  # (nt, 12)
    ux = np.einsum("qb,tb->tq", _P2, ue[:, 0::2])
    uy = np.einsum("qb,tb->tq", _P2, ue[:, 1::2])
    return np.stack([ux, uy], axis=-1)


def _velocity_grad_at_quadrature(u):
    """(nt, nq, 2, 2) du_c/dx_d at quadrature points."""
    gp2 = _p2_grads(u.space.mesh)
    dofs = u.space.element_dofs()
    ue = u.coeffs[dofs]
    gx = np.einsum("tqbd,tb->tqd", gp2, ue[:, 0::2])
    gy = np.einsum("tqbd,tb->tqd", gp2, ue[:, 1::2])
    return np.stack([gx, gy], axis=2)


def advection_matrix(space, u):
    """\\int (u . grad(phi_j)) phi_i on a P1 scalar space, u a P2 velocity."""
    if space.kind not in (P1, P1P):
        raise AssemblyError("advection_matrix expects a P1 scalar space")
    _check_mesh(space, u)
    mesh = space.mesh
    uq = _velocity_at_quadrature(u)  # (nt, nq, 2)
    g = mesh.grad_bary()  # (nt, 3, 2) constant gradients of P1 basis
    udotg = np.einsum("tqx,tjx->tqj", uq, g)
    blocks = np.einsum("q,qi,tqj->tij", TRI_WEIGHTS, _L, udotg) * mesh.areas()[:, None, None]
    dofs = space.element_dofs()
    return _scatter(dofs, dofs, blocks, (space.dof_count, space.dof_count))


def divergence_matrix(pspace, vspace):
    """b(v, q) entries \\int q div(v): rows pressure dofs, columns velocity."""
    if pspace.mesh is not vspace.mesh:
        raise AssemblyError("divergence_matrix: mismatched meshes")
    mesh = pspace.mesh
    gp2 = _p2_grads(mesh)  # (nt, nq, 6, 2)
    blocks12 = np.zeros((mesh.n_triangles, 3, 12))
    for comp in range(2):
        part = np.einsum("q,qi,tqbc->tib", TRI_WEIGHTS, _L, gp2[..., comp : comp + 1])
        blocks12[:, :, comp::2] = part
    blocks12 *= mesh.areas()[:, None, None]
    return _scatter(
        pspace.element_dofs(),
        vspace.element_dofs(),
        blocks12,
        (pspace.dof_count, vspace.dof_count),
    )


def convection_u_grad(vspace, w):
    """\\int ((w . grad) u_trial) . phi_test on P2 vectors (Oseen transport)."""
    _check_mesh(vspace, w)
    mesh = vspace.mesh
    wq = _velocity_at_quadrature(w)
    gp2 = _p2_grads(mesh)
    wdotg = np.einsum("tqx,tqbx->tqb", wq, gp2)
    scal = np.einsum("q,qi,tqb->tib", TRI_WEIGHTS, _P2, wdotg) * mesh.areas()[:, None, None]
    blocks = _expand_vector(scal)
    dofs = vspace.element_dofs()
    return _scatter(dofs, dofs, blocks, (vspace.dof_count, vspace.dof_count))


def convection_grad_u(vspace, w):
    """\\int ((u_trial . grad) w) . phi_test, the reaction part of the
    Navier-Stokes linearization."""
    _check_mesh(vspace, w)
    mesh = vspace.mesh
    gw = _velocity_grad_at_quadrature(w)  # (nt, nq, 2, 2): dw_c/dx_d
    nn = np.einsum("q,qi,qb->qib", TRI_WEIGHTS, _P2, _P2)
    blocks = np.zeros((mesh.n_triangles, 12, 12))
    for c_test in range(2):
        for d_trial in range(2):
            part = np.einsum("qib,tq->tib", nn, gw[:, :, c_test, d_trial])
            blocks[:, c_test::2, d_trial::2] += part
    blocks *= mesh.areas()[:, None, None]
    dofs = vspace.element_dofs()
    return _scatter(dofs, dofs, blocks, (vspace.dof_count, vspace.dof_count))


def temp_velocity_coupling(tspace, vspace, T):
    """\\int (v_trial . grad T) xi_test: P1 test rows, P2 velocity columns."""
    if tspace.mesh is not vspace.mesh or T.space.mesh is not tspace.mesh:
        raise AssemblyError("temp_velocity_coupling: mismatched meshes")
    mesh = tspace.mesh
    g = mesh.grad_bary()
    gradT = np.einsum("tjx,tj->tx", g, T.coeffs[mesh.triangles])  # (nt, 2)
    scal = np.einsum("q,qi,qb->qib", TRI_WEIGHTS, _L, _P2)
    blocks = np.zeros((mesh.n_triangles, 3, 12))
    for comp in range(2):
        blocks[:, :, comp::2] = np.einsum("qib,t->tib", scal, gradT[:, comp])
    blocks *= mesh.areas()[:, None, None]
    return _scatter(
        tspace.element_dofs(),
        vspace.element_dofs(),
        blocks,
        (tspace.dof_count, vspace.dof_count),
    )


def load_vector(space, g):
    """<g, phi> for g a Field on the space, an ElementField, or callable."""
    mesh = space.mesh
    if isinstance(g, Field):
        _check_mesh(space, g)
        if g.space is not space and g.space.kind != space.kind:
            raise AssemblyError("load_vector: field lives on a different space kind")
        return mass_matrix(space) @ g.coeffs
    areas = mesh.areas()
    out = np.zeros(space.dof_count)
    dofs = space.element_dofs()
    if isinstance(g, ElementField):
        _check_mesh(space, g)
        if space.kind in (P1, P1P):
            ref = np.einsum("q,qi->i", TRI_WEIGHTS, _L)
            elem = (g.values * areas)[:, None] * ref[None]
            np.add.at(out, dofs, elem)
            return out
        raise AssemblyError("ElementField loads only supported on scalar spaces")
    # callable g(x, y) -> scalar or (2,) vector values
    pts = physical_points(mesh.coords())
    vals = np.asarray(g(pts[..., 0], pts[..., 1]))
    if space.kind in (P1, P1P):
        elem = np.einsum("q,qi,tq->ti", TRI_WEIGHTS, _L, vals) * areas[:, None]
        np.add.at(out, dofs, elem)
    else:
        elem = np.zeros((mesh.n_triangles, 12))
        for comp in range(2):
            elem[:, comp::2] = np.einsum(
                "q,qb,tq->tb", TRI_WEIGHTS, _P2, vals[comp]
            )
        elem *= areas[:, None]
        np.add.at(out, dofs, elem)
    return out


def lumped_mass_diagonal(space):
    """Positive diagonal approximation of the mass matrix (row sums for P1,
    diagonal scaling for P2 where row sums vanish at vertices)."""
    M = mass_matrix(space)
    if space.kind in (P1, P1P):
        return np.asarray(M.sum(axis=1)).ravel()
    d = M.diagonal()
    total = space.mesh.domain_area() * 2.0  # two components
    return d * (total / d.sum())


def assemble(form_kind, *args, **kwargs):
    """Uniform entry point over the assembly kinds used by the PDE solvers."""
    table = {
        "mass": mass_matrix,
        "stiffness": stiffness_matrix,
        "advection": advection_matrix,
        "vector_laplacian": stiffness_matrix,
        "brinkman": mass_matrix,
        "divergence": divergence_matrix,
        "convection_u_grad": convection_u_grad,
        "convection_grad_u": convection_grad_u,
        "temp_velocity_coupling": temp_velocity_coupling,
        "load": load_vector,
    }
    if form_kind not in table:
        raise AssemblyError(f"unknown form kind {form_kind!r}")
    return table[form_kind](*args, **kwargs)


# ---------------------------------------------------------------------------
# Dirichlet conditions and sparse solves
# ---------------------------------------------------------------------------

def apply_dirichlet(A, b, dofs, values):
    """Symmetric elimination: returns (A_c, b_c) whose solution matches the
    prescribed values on `dofs` exactly and the interior equations after
    lifting. Keeping rows and columns eliminated makes the transpose of A_c
    directly usable for adjoint solves."""
    n = A.shape[0]
    dofs = np.asarray(dofs, dtype=int)
    vals = np.broadcast_to(np.asarray(values, dtype=float), dofs.shape)
    xD = np.zeros(n)
    xD[dofs] = vals
    mask = np.ones(n)
    mask[dofs] = 0.0
    P = sp.diags(mask)
    ID = sp.diags(1.0 - mask)
    A_c = (P @ A @ P + ID).tocsc()
    b_c = mask * (b - A @ xD)
    b_c[dofs] = vals
    return A_c, b_c


class LUSolver:
    """Deterministic sparse LU with forward and transpose solves."""

    def __init__(self, A):
        self.A = A.tocsc()
        try:
            self.lu = spla.splu(self.A)
        except RuntimeError as exc:  # singular factorization
            raise SolverError(
                f"sparse factorization failed: {exc}", diagnostics={"n": A.shape[0]}
            ) from exc

    def solve(self, b, trans="N"):
        x = self.lu.solve(np.asarray(b, dtype=float), trans=trans)
        A = self.A if trans == "N" else self.A.T
        scale = max(1.0, float(np.linalg.norm(b)))
        for _ in range(2):
            r = b - A @ x
            if np.linalg.norm(r) <= 1e-12 * scale:
                break
            x = x + self.lu.solve(r, trans=trans)
        resid = float(np.linalg.norm(b - A @ x))
        if resid > 1e-10 * scale:
            raise SolverError(
                "sparse solve residual too large",
                diagnostics={"residual": resid, "rhs_norm": scale},
            )
        return x


def solve_sparse(A, b):
    """Direct solve with iterative refinement; ||Ax-b|| <= 1e-10 max(1,||b||)."""
    return LUSolver(A).solve(b)


class DirichletSystem:
    """A matrix with symmetric-eliminated Dirichlet dofs, factorized once.

    solve() applies lifting for the boundary values; solve_transpose()
    solves with the transposed operator and homogeneous boundary data,
    which is exactly the discrete adjoint of solve().
    """

    def __init__(self, A_full, dofs, values):
        self.A_full = A_full.tocsr()
        self.dofs = np.asarray(dofs, dtype=int)
        n = A_full.shape[0]
        self.xD = np.zeros(n)
        self.xD[self.dofs] = values
        mask = np.ones(n)
        mask[self.dofs] = 0.0
        self.mask = mask
        P = sp.diags(mask)
        ID = sp.diags(1.0 - mask)
        self.A_c = (P @ self.A_full @ P + ID).tocsc()
        self.lu = LUSolver(self.A_c)

    def solve(self, rhs_full):
        b = self.mask * (rhs_full - self.A_full @ self.xD)
        b[self.dofs] = self.xD[self.dofs]
        return self.lu.solve(b)

    def solve_transpose(self, dual):
        z = self.mask * dual
        lam = self.lu.solve(z, trans="T")
        lam[self.dofs] = 0.0
        return lam


# ---------------------------------------------------------------------------
# evaluation and norms
# ---------------------------------------------------------------------------

def evaluate(fld, points, locator=None):
    """Point values of a field; (n,) for scalars, (n, 2) for velocities."""
    space = fld.space
    if locator is None:
        locator = PointLocator(space.mesh)
    tri, bary = locator.locate(points)
    if space.kind in (P1, P1P):
        vals = fld.coeffs[space.mesh.triangles[tri]]
        return np.einsum("ni,ni->n", bary, vals)
    dofs = space.element_dofs()[tri]
    shapes = _p2_shapes(bary)  # (n, 6)
    ux = np.einsum("nb,nb->n", shapes, fld.coeffs[dofs[:, 0::2]])
    uy = np.einsum("nb,nb->n", shapes, fld.coeffs[dofs[:, 1::2]])
    return np.column_stack([ux, uy])


def evaluate_gradient(fld, points, locator=None):
    """Gradients at points: (n, 2) for scalars, (n, 2, 2) du_c/dx_d."""
    space = fld.space
    if locator is None:
        locator = PointLocator(space.mesh)
    tri, bary = locator.locate(points)
    g = space.mesh.grad_bary()[tri]  # (n, 3, 2)
    if space.kind in (P1, P1P):
        vals = fld.coeffs[space.mesh.triangles[tri]]
        return np.einsum("nix,ni->nx", g, vals)
    dofs = space.element_dofs()[tri]
    dshapes = _p2_dshapes(bary)  # (n, 6, 3)
    gp2 = np.einsum("nbi,nix->nbx", dshapes, g)
    gx = np.einsum("nbx,nb->nx", gp2, fld.coeffs[dofs[:, 0::2]])
    gy = np.einsum("nbx,nb->nx", gp2, fld.coeffs[dofs[:, 1::2]])
    return np.stack([gx, gy], axis=1)


def _p2_shapes(bary):
    l0, l1, l2 = bary[:, 0], bary[:, 1], bary[:, 2]
    return np.column_stack(
        [
            l0 * (2 * l0 - 1),
            l1 * (2 * l1 - 1),
            l2 * (2 * l2 - 1),
            4 * l0 * l1,
            4 * l1 * l2,
            4 * l2 * l0,
        ]
    )


def _p2_dshapes(bary):
    n = bary.shape[0]
    out = np.zeros((n, 6, 3))
    l0, l1, l2 = bary[:, 0], bary[:, 1], bary[:, 2]
    out[:, 0, 0] = 4 * l0 - 1
    out[:, 1, 1] = 4 * l1 - 1
    out[:, 2, 2] = 4 * l2 - 1
    out[:, 3, 0], out[:, 3, 1] = 4 * l1, 4 * l0
    out[:, 4, 1], out[:, 4, 2] = 4 * l2, 4 * l1
    out[:, 5, 2], out[:, 5, 0] = 4 * l0, 4 * l2
    return out


def l2_norm(fld):
    M = cached_mass(fld.space)
    return float(np.sqrt(max(fld.coeffs @ (M @ fld.coeffs), 0.0)))


def h1_seminorm(fld):
    K = cached_stiffness(fld.space)
    return float(np.sqrt(max(fld.coeffs @ (K @ fld.coeffs), 0.0)))


def cached_mass(space):
    if "mass" not in space._cache:
        space._cache["mass"] = mass_matrix(space)
    return space._cache["mass"]


def cached_stiffness(space):
    if "stiffness" not in space._cache:
        space._cache["stiffness"] = stiffness_matrix(space)
    return space._cache["stiffness"]


def cached_mass_lu(space):
    if "mass_lu" not in space._cache:
        space._cache["mass_lu"] = LUSolver(cached_mass(space).tocsc())
    return space._cache["mass_lu"]


def cached_lumped_diag(space):
    if "lumped" not in space._cache:
        space._cache["lumped"] = lumped_mass_diagonal(space)
    return space._cache["lumped"]


def interpolate_p1(space, fn):
    """Nodal interpolation of fn(x, y) onto a P1 space."""
    v = space.mesh.vertices
    return Field(space, np.asarray(fn(v[:, 0], v[:, 1]), dtype=float))


def interpolate_p2v(space, fn):
    """Nodal interpolation of a vector fn(x, y) -> (2, n) onto P2 velocity."""
    nodes = space.node_coords()
    vals = np.asarray(fn(nodes[:, 0], nodes[:, 1]))
    coeffs = np.empty(space.dof_count)
    coeffs[0::2] = vals[0]
    coeffs[1::2] = vals[1]
    return Field(space, coeffs)


def directional_region_load(vspace, elements, direction):
    """Functional u -> \\int_{region} u . d dx over the given elements."""
    mesh = vspace.mesh
    elements = np.asarray(elements, dtype=int)
    out = np.zeros(vspace.dof_count)
    if elements.size == 0:
        return out
    areas = mesh.areas()[elements]
    ref = np.einsum("q,qb->b", TRI_WEIGHTS, _P2)  # \int N_b on the unit triangle
    elem = np.zeros((elements.size, 12))
    elem[:, 0::2] = areas[:, None] * ref[None] * float(direction[0])
    elem[:, 1::2] = areas[:, None] * ref[None] * float(direction[1])
    np.add.at(out, vspace.element_dofs()[elements], elem)
    return out


_SPACE_CACHE = {}


def spaces_for(mesh):
    """Shared (P1, P2 vector, pressure) spaces per mesh, so assembly caches
    are reused across repeated model constructions."""
    key = id(mesh)
    entry = _SPACE_CACHE.get(key)
    if entry is None or entry[0] is not mesh:
        entry = (mesh, p1_space(mesh), p2v_space(mesh), pressure_space(mesh))
        _SPACE_CACHE[key] = entry
    return entry[1], entry[2], entry[3]
