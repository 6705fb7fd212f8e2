"""Stationary incompressible Navier-Stokes with Brinkman friction.

Momentum:  alpha u - (1/Re) lap(u) + (u.grad)u + grad(p) = g_u
Mass:      div(u) = 0,   u = 0 on the boundary.

Large alpha inside closed doors and walls suppresses the velocity there.
Pure Dirichlet velocity leaves the pressure defined up to a constant; the
gauge is fixed by a scalar multiplier pinning the mean of p to zero, and
reported pressures are offset by the atmospheric value only on export.
"""

from dataclasses import dataclass, field as dc_field
from weakref import WeakKeyDictionary

import numpy as np
import scipy.sparse as sp

from .errors import ConvergenceError, DomainError
from .fem import (
    Field,
    LUSolver,
    P2V,
    convection_grad_u,
    convection_u_grad,
    divergence_matrix,
    load_vector,
    mass_matrix,
    p2v_space,
    pressure_space,
    stiffness_matrix,
)
from .geometry import ElementField

_WORKSPACES = WeakKeyDictionary()


@dataclass(eq=False)
class FlowWorkspace:
    """alpha-independent operators, cached per velocity space."""

    vspace: object
    pspace: object
    visc: sp.csr_matrix       # unscaled vector stiffness
    mass_v: sp.csr_matrix
    div: sp.csr_matrix        # pressure rows x velocity columns
    gauge: np.ndarray         # \int q dx per pressure dof
    area: float

    @property
    def n_u(self):
        return self.vspace.dof_count

    @property
    def n_p(self):
        return self.pspace.dof_count


def flow_workspace(vspace, pspace=None):
    ws = _WORKSPACES.get(vspace)
    if ws is not None:
        return ws
    if pspace is None:
        pspace = pressure_space(vspace.mesh)
    mesh = vspace.mesh
    gauge = load_vector(pspace, ElementField(mesh, np.ones(mesh.n_triangles)))
    ws = FlowWorkspace(
        vspace=vspace,
        pspace=pspace,
        visc=stiffness_matrix(vspace),
        mass_v=mass_matrix(vspace),
        div=divergence_matrix(pspace, vspace),
        gauge=gauge,
        area=mesh.domain_area(),
    )
    _WORKSPACES[vspace] = ws
    return ws


@dataclass
class FlowProblem:
    reynolds: float
    alpha: ElementField
    g_u: Field
    tolerance: float = 1e-9
    max_iters: int = 40

    def __post_init__(self):
        if self.reynolds <= 0:
            raise DomainError("Reynolds number must be positive")
        if self.tolerance <= 0:
            raise DomainError("tolerance must be positive")
        if np.any(self.alpha.values < -1e-12):
            raise DomainError("alpha must be nonnegative")
        if self.g_u.space.kind != P2V:
            raise DomainError("g_u must live on the P2 vector space")


@dataclass
class FlowSolution:
    u: Field
    p: Field
    residual_norm: float
    uniqueness_margin: float
    divergence_norm: float
    iterations: int
    history: list


@dataclass(eq=False)
class LinearizedFlow:
    """Constrained bordered saddle operator at a linearization state.

    Rows/cols: [velocity | pressure | gauge]. Velocity Dirichlet dofs are
    symmetric-eliminated, so the assembled transpose is directly the
    adjoint operator (boundary and gauge handled identically).
    """

    workspace: FlowWorkspace
    matrix: sp.csc_matrix
    lu: LUSolver = dc_field(default=None)

    def factor(self):
        if self.lu is None:
            self.lu = LUSolver(self.matrix)
        return self.lu

    def unpack(self, x):
        n_u, n_p = self.workspace.n_u, self.workspace.n_p
        return x[:n_u], x[n_u : n_u + n_p], float(x[-1])

    def solve_forcing(self, rhs_u, rhs_p=None):
        """Tangent solve with momentum forcing (boundary rows zeroed)."""
        ws = self.workspace
        rhs = np.zeros(ws.n_u + ws.n_p + 1)
        rhs[: ws.n_u] = rhs_u
        rhs[ws.vspace.boundary_dofs] = 0.0
        if rhs_p is not None:
            rhs[ws.n_u : ws.n_u + ws.n_p] = rhs_p
        return self.unpack(self.factor().solve(rhs))

    def solve_adjoint(self, dual_u):
        """Transpose solve: returns (lambda2, lambda3, gauge multiplier)."""
        ws = self.workspace
        rhs = np.zeros(ws.n_u + ws.n_p + 1)
        rhs[: ws.n_u] = dual_u
        rhs[ws.vspace.boundary_dofs] = 0.0
        return self.unpack(self.factor().solve(rhs, trans="T"))


def _bordered(ws, A_uu):
    n_u, n_p = ws.n_u, ws.n_p
    m = sp.csr_matrix(
        (ws.gauge, (np.arange(n_p), np.zeros(n_p, dtype=int))), shape=(n_p, 1)
    )
    mat = sp.bmat(
        [
            [A_uu, -ws.div.T, None],
            [ws.div, None, m],
            [None, m.T, None],
        ],
        format="csr",
    )
    # symmetric elimination of velocity Dirichlet dofs (homogeneous values)
    n = mat.shape[0]
    mask = np.ones(n)
    mask[ws.vspace.boundary_dofs] = 0.0
    P = sp.diags(mask)
    return (P @ mat @ P + sp.diags(1.0 - mask)).tocsc()


def linearized_flow_operator(u_star, alpha, reynolds, workspace=None):
    """alpha w - (1/Re) lap w + (u*.grad)w + (w.grad)u* + grad q, div w = 0,
    assembled as one constrained saddle operator."""
    ws = workspace or flow_workspace(u_star.space)
    A = (
        mass_matrix(ws.vspace, alpha)
        + (1.0 / reynolds) * ws.visc
        + convection_u_grad(ws.vspace, u_star)
        + convection_grad_u(ws.vspace, u_star)
    )
    return LinearizedFlow(ws, _bordered(ws, A))


def _picard_operator(ws, alpha, reynolds, u):
    A = mass_matrix(ws.vspace, alpha) + (1.0 / reynolds) * ws.visc
    A = A + convection_u_grad(ws.vspace, u)
    return LinearizedFlow(ws, _bordered(ws, A))


def _residual(ws, problem, force, u, p, mu):
    conv = convection_u_grad(ws.vspace, Field(ws.vspace, u)) @ u
    brink = mass_matrix(ws.vspace, problem.alpha) @ u
    r_u = brink + (1.0 / problem.reynolds) * (ws.visc @ u) + conv - ws.div.T @ p - force
    r_u[ws.vspace.boundary_dofs] = u[ws.vspace.boundary_dofs]
    r_p = ws.div @ u + mu * ws.gauge
    r_g = np.array([ws.gauge @ p])
    return np.concatenate([r_u, r_p, r_g])


def uniqueness_margin_of(ws, problem, u):
    grad_norm = float(np.sqrt(max(u @ (ws.visc @ u), 0.0)))
    return 2.0 / (np.sqrt(ws.area) * problem.reynolds) - grad_norm


N_PICARD = 3  # Oseen iterations before switching to Newton


def solve_flow(problem, initial_guess=None, workspace=None):
    """Picard/Newton iteration down to the nonlinear residual tolerance.

    Three Picard sweeps enter the Newton basin; Newton runs with full
    steps and falls back to damped Picard (factor 0.5) if its residual
    increases. Returns the solution with the uniqueness-margin diagnostic
    (negative margin is a warning, not an error).
    """
    ws = workspace or flow_workspace(problem.g_u.space)
    n_u, n_p = ws.n_u, ws.n_p
    u = np.zeros(n_u) if initial_guess is None else initial_guess.coeffs.copy()
    u[ws.vspace.boundary_dofs] = 0.0
    p = np.zeros(n_p)
    mu = 0.0
    force = ws.mass_v @ problem.g_u.coeffs

    history = []
    r = _residual(ws, problem, force, u, p, mu)
    rnorm = float(np.linalg.norm(r))
    history.append(rnorm)
    it = 0

    def try_direction(op, first_step):
        """Backtrack along the solver direction until the residual drops."""
        delta = op.factor().solve(-r)
        du, dp, dmu = op.unpack(delta)
        step = first_step
        for _ in range(9):
            cand = (u + step * du, p + step * dp, mu + step * dmu)
            r_new = _residual(ws, problem, force, *cand)
            rnorm_new = float(np.linalg.norm(r_new))
            if rnorm_new < rnorm:
                return cand, r_new, rnorm_new
            step *= 0.5
        return None

    while rnorm > problem.tolerance:
        if it >= problem.max_iters:
            raise ConvergenceError(
                f"flow solve stalled at residual {rnorm:.3e} after {it} iterations",
                history=history,
            )
        uf = Field(ws.vspace, u)
        if it < N_PICARD:
            op = _picard_operator(ws, problem.alpha, problem.reynolds, uf)
            accepted = try_direction(op, 1.0)
        else:
            op = linearized_flow_operator(uf, problem.alpha, problem.reynolds, ws)
            accepted = try_direction(op, 1.0)
            if accepted is None:  # Newton basin missed: damped Picard step
                op = _picard_operator(ws, problem.alpha, problem.reynolds, uf)
                accepted = try_direction(op, 0.5)
        if accepted is None:
            raise ConvergenceError(
                f"flow solve cannot decrease the residual below {rnorm:.3e}",
                history=history,
            )
        (u, p, mu), r, rnorm = accepted
        history.append(rnorm)
        it += 1

    sol_u = Field(ws.vspace, u)
    sol_p = Field(ws.pspace, p)
    return FlowSolution(
        u=sol_u,
        p=sol_p,
        residual_norm=rnorm,
        uniqueness_margin=uniqueness_margin_of(ws, problem, u),
        divergence_norm=float(np.linalg.norm(ws.div @ u)),
        iterations=it,
        history=history,
    )


def solve_flow_robust(problem, initial_guess=None, workspace=None):
    """solve_flow with deterministic fallbacks for hard forcing states:
    cold restart, then a forcing-continuation ladder. Raises the final
    ConvergenceError only when every rung fails."""
    ws = workspace or flow_workspace(problem.g_u.space)
    try:
        return solve_flow(problem, initial_guess, ws)
    except ConvergenceError:
        pass
    if initial_guess is not None:
        try:
            return solve_flow(problem, None, ws)
        except ConvergenceError:
            pass
    guess = None
    sol = None
    for s in (0.25, 0.5, 0.75, 1.0):
        sub = FlowProblem(
            reynolds=problem.reynolds, alpha=problem.alpha,
            g_u=Field(problem.g_u.space, s * problem.g_u.coeffs),
            tolerance=problem.tolerance, max_iters=problem.max_iters,
        )
        sol = solve_flow(sub, guess, ws)
        guess = sol.u
    return sol
