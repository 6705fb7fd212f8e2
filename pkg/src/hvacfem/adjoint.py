"""Coupled forward model, objectives, discrete adjoints and gradients.

Adjoints are exact transposes of the discrete forward operators
(discretize-then-differentiate): the heat adjoint reuses the factorized
implicit-Euler step with transposed solves, and the flow adjoint reuses
the factorized Newton operator of the converged Navier-Stokes solve. The
continuous adjoint system of the underlying theory is recovered in the
mesh limit, while the discrete gradients match finite differences of the
composed objective to near machine precision.

Conventions: "duals" are derivatives with respect to raw coefficient
vectors; gradient *fields* (the Riesz representatives with respect to the
L2 inner products) are obtained from duals through mass solves. The
source time grid indexes steps by their right endpoint; the adjoint
temperature reported at node n is the step dual of step n+1 divided by dt,
with an exactly zero terminal snapshot.
"""

from dataclasses import dataclass, field as dc_field

import numpy as np

from .comfort import (
    PersonalParams,
    clamp_flow,
    compute_coefficients,
    pmv_flow_derivative,
    pmv_simplified,
    pmv_temperature_derivative,
)
from .errors import DataError, DomainError
from .fem import (
    Field,
    TransientField,
    cached_mass,
    cached_mass_lu,
    directional_region_load,
    load_vector,
    mass_matrix,
    spaces_for,
    stiffness_matrix,
    temp_velocity_coupling,
    zero_field,
)
from .flow import FlowProblem, flow_workspace, linearized_flow_operator, solve_flow_robust
from .geometry import (
    ElementField,
    material_fields,
    material_theta_derivative,
    normalize_bump,
    physical_points,
)
from .heat import make_stepper
from .quadrature import TRI_POINTS, TRI_WEIGHTS


# ---------------------------------------------------------------------------
# coupled forward model
# ---------------------------------------------------------------------------

@dataclass(eq=False)
class ClimateModel:
    """Discrete forward chain theta/g_u -> flow -> temperature on one mesh
    and one uniform time grid."""

    mesh: object
    regions: object
    reynolds: float
    kappa0: float
    kappa_wall: float
    alpha_wall: float
    t_ambient: float
    times: np.ndarray
    flow_tolerance: float = 1e-9
    flow_max_iters: int = 60

    def __post_init__(self):
        self.times = np.asarray(self.times, dtype=float)
        self.tspace, self.vspace, self.pspace = spaces_for(self.mesh)
        self.workspace = flow_workspace(self.vspace, self.pspace)

    @property
    def dt(self):
        return float(self.times[1] - self.times[0])

    @property
    def n_steps(self):
        return len(self.times) - 1

    @property
    def n_doors(self):
        return self.regions.n_doors

    def material(self, theta):
        return material_fields(
            self.mesh, self.regions, theta, self.kappa0, self.kappa_wall,
            self.alpha_wall,
        )

    def material_derivatives(self, i):
        da, dk = material_theta_derivative(
            self.mesh, self.regions, i, self.kappa0, self.kappa_wall, self.alpha_wall
        )
        return ElementField(self.mesh, da), ElementField(self.mesh, dk)

    def solve_forward(self, pi0, theta, g_te, g_u, flow_guess=None):
        """pi0 (n1,), theta (n_d,), g_te (n_steps, n1), g_u (nu,)."""
        pi0 = np.asarray(pi0, dtype=float)
        theta = np.asarray(theta, dtype=float)
        g_te = np.asarray(g_te, dtype=float).reshape(self.n_steps, -1)
        g_u = np.asarray(g_u, dtype=float)
        alpha, kappa = self.material(theta)
        problem = FlowProblem(
            reynolds=self.reynolds,
            alpha=alpha,
            g_u=Field(self.vspace, g_u),
            tolerance=self.flow_tolerance,
            max_iters=self.flow_max_iters,
        )
        flow = solve_flow_robust(problem, initial_guess=flow_guess, workspace=self.workspace)
        stepper = make_stepper(self.tspace, kappa, flow.u, self.dt, self.t_ambient)
        T = np.empty((self.n_steps + 1, self.tspace.dof_count))
        T[0] = stepper.initial(Field(self.tspace, pi0))
        for n in range(1, self.n_steps + 1):
            T[n] = stepper.step(T[n - 1], g_te[n - 1])
        return ForwardState(
            model=self, pi0=pi0.copy(), theta=theta.copy(), g_te=g_te.copy(),
            g_u=g_u.copy(), alpha=alpha, kappa=kappa, flow=flow, stepper=stepper,
            T=T,
        )

    def trapezoid_weights(self):
        w = np.full(self.n_steps + 1, self.dt)
        w[0] = w[-1] = 0.5 * self.dt
        return w


@dataclass(eq=False)
class ForwardState:
    model: ClimateModel
    pi0: np.ndarray
    theta: np.ndarray
    g_te: np.ndarray
    g_u: np.ndarray
    alpha: ElementField
    kappa: ElementField
    flow: object
    stepper: object
    T: np.ndarray
    _linop: object = dc_field(default=None, repr=False)
    _cmats: dict = dc_field(default_factory=dict, repr=False)

    def linearized(self):
        if self._linop is None:
            self._linop = linearized_flow_operator(
                self.flow.u, self.alpha, self.model.reynolds, self.model.workspace
            )
        return self._linop

    def coupling(self, n):
        """Velocity-to-temperature coupling matrix at snapshot n."""
        if n not in self._cmats:
            self._cmats[n] = temp_velocity_coupling(
                self.model.tspace, self.model.vspace,
                Field(self.model.tspace, self.T[n]),
            )
        return self._cmats[n]

    def temperature(self):
        return TransientField(self.model.tspace, self.model.times, self.T.copy())


# ---------------------------------------------------------------------------
# sensors
# ---------------------------------------------------------------------------

@dataclass(eq=False)
class SensorArray:
    """Normalized bumps plus their load vectors on a P1 space."""

    bumps: list
    loads: np.ndarray  # (n_sensors, n1)

    @property
    def n_sensors(self):
        return len(self.bumps)

    def sample_trajectory(self, T):
        """(n_times, n_sensors) bump-averaged samples of a trajectory."""
        return T @ self.loads.T


def build_sensors(tspace, regions):
    mesh = tspace.mesh
    bumps = [
        normalize_bump(mesh, p, regions.sensor_radius) for p in regions.sensor_points
    ]
    loads = np.array([_bump_load(tspace, b) for b in bumps])
    return SensorArray(bumps=bumps, loads=loads.reshape(len(bumps), -1))


def _bump_load(tspace, bump):
    mesh = tspace.mesh
    pts = physical_points(mesh.coords())
    phi = bump.values(pts.reshape(-1, 2)).reshape(mesh.n_triangles, -1)
    elem = np.einsum("q,tq,qi->ti", TRI_WEIGHTS, phi, TRI_POINTS) * mesh.areas()[:, None]
    out = np.zeros(tspace.dof_count)
    np.add.at(out, mesh.triangles, elem)
    return out


# ---------------------------------------------------------------------------
# objectives
# ---------------------------------------------------------------------------

@dataclass
class ObjectiveEval:
    """Value plus explicit gradients (all in dual/coefficient form)."""

    value: float
    state_duals: np.ndarray          # dJ/dT^n, shape (n_times, n1)
    pi0_dual: np.ndarray | None = None
    g_te_dual: np.ndarray | None = None   # (n_steps, n1)
    g_u_dual: np.ndarray | None = None
    u_dual: np.ndarray | None = None      # explicit dJ/du (fan-flow pathway)
    extras: dict = dc_field(default_factory=dict)


@dataclass(eq=False)
class EstimationObjective:
    """Sensor mismatch over the lookback window plus initial-state ridge.

    J_e = sum_k [ eta0 (s_k(T^0) - d_k(t_0))^2
                  + int_window (s_k(T) - d_k)^2 dt ]  + eta1 ||pi0||^2,
    with the time integral discretized by the trapezoidal rule on the
    model grid.
    """

    model: ClimateModel
    sensors: SensorArray
    data: np.ndarray  # (n_times, n_sensors)
    eta0: float
    eta1: float

    def __post_init__(self):
        self.data = np.asarray(self.data, dtype=float)
        want = (self.model.n_steps + 1, self.sensors.n_sensors)
        if self.data.shape != want:
            raise DataError(f"sensor data shape {self.data.shape}, expected {want}")
        if not np.all(np.isfinite(self.data)):
            raise DataError("sensor data contains non-finite values")
        if self.eta0 <= 0 or self.eta1 <= 0:
            raise DomainError("estimation weights must be positive")

    def evaluate(self, state):
        model = self.model
        samples = self.sensors.sample_trajectory(state.T)  # (n_times, n_k)
        mis = samples - self.data
        tau = model.trapezoid_weights()
        J = float(
            self.eta0 * np.sum(mis[0] ** 2)
            + np.sum(tau[:, None] * mis**2)
        )
        M = cached_mass(model.tspace)
        Mpi0 = M @ state.pi0
        J += self.eta1 * float(state.pi0 @ Mpi0)

        G = 2.0 * np.einsum("n,nk,kj->nj", tau, mis, self.sensors.loads)
        G[0] += 2.0 * self.eta0 * (mis[0] @ self.sensors.loads)
        return ObjectiveEval(
            value=J,
            state_duals=G,
            pi0_dual=2.0 * self.eta1 * Mpi0,
            extras={"samples": samples},
        )


@dataclass(eq=False)
class FanModel:
    """Aggregate volumetric fan throughput sum_j A |mean speed_j| with its
    linear mean-speed functionals."""

    functionals: np.ndarray  # (n_fans, nu)
    fan_area: float
    flow_floor: float

    def flow(self, u):
        if self.functionals.shape[0] == 0:
            return clamp_flow(0.0, self.flow_floor)
        means = self.functionals @ u
        raw = self.fan_area * float(np.sum(np.abs(means)))
        return clamp_flow(raw, self.flow_floor)

    def flow_gradient(self, u):
        """d flow / d u; zero on the clamped branch."""
        f, clamped = self.flow(u)
        if clamped or self.functionals.shape[0] == 0:
            return f, np.zeros(self.functionals.shape[1] if self.functionals.ndim > 1 else 0)
        means = self.functionals @ u
        g = self.fan_area * (np.sign(means) @ self.functionals)
        return f, g


def build_fan_model(vspace, regions, personal):
    mesh = vspace.mesh
    funcs = []
    for j, fan in enumerate(regions.fan_regions):
        elems = mesh.triangles_in(f"fan{j}")
        area = float(np.sum(mesh.areas()[elems]))
        w = directional_region_load(vspace, elems, fan.direction) / area
        funcs.append(w)
    funcs = np.array(funcs).reshape(len(funcs), -1) if funcs else np.zeros((0, vspace.dof_count))
    return FanModel(
        functionals=funcs, fan_area=personal.fan_area, flow_floor=personal.flow_floor
    )


@dataclass(eq=False)
class ControlObjective:
    """Squared comfort index over the target area plus control effort.

    J_c = int_target int |pmv(T, flow)|^2 dt dx
          + eta0' ||g_Te||^2_{space-time} + eta1' ||g_u||^2.
    """

    model: ClimateModel
    personal: PersonalParams
    fan_model: FanModel
    eta0p: float
    eta1p: float

    def __post_init__(self):
        if self.eta0p <= 0 or self.eta1p <= 0:
            raise DomainError("control weights must be positive")
        self.coeffs = compute_coefficients(self.personal)
        mesh = self.model.mesh
        elems = mesh.triangles_in("target")
        if elems.size == 0:
            elems = np.arange(mesh.n_triangles)  # default: whole domain
        self.target_elements = elems
        self.target_area = float(np.sum(mesh.areas()[elems]))
        self._tri = mesh.triangles[elems]
        self._wq = np.einsum("t,q->tq", mesh.areas()[elems], TRI_WEIGHTS)

    def _pmv_at_quadrature(self, T_nodal, flow):
        Tq = np.einsum("qi,ti->tq", TRI_POINTS, T_nodal[self._tri])
        pmv = pmv_simplified(self.coeffs, Tq, flow, self.personal.flow_floor)
        return Tq, pmv

    def evaluate(self, state):
        model = self.model
        tau = model.trapezoid_weights()
        flow, dflow_du = self.fan_model.flow_gradient(state.flow.u.coeffs)
        n1 = model.tspace.dof_count

        J_pmv = 0.0
        G = np.zeros((model.n_steps + 1, n1))
        dJ_dflow = 0.0
        mean_abs = 0.0
        for n in range(model.n_steps + 1):
            Tq, pmv = self._pmv_at_quadrature(state.T[n], flow)
            J_pmv += tau[n] * float(np.sum(self._wq * pmv**2))
            dpmv_dT = pmv_temperature_derivative(self.coeffs, Tq)
            gq = tau[n] * 2.0 * self._wq * pmv * dpmv_dT  # (ntt, nq)
            elem = np.einsum("tq,qi->ti", gq, TRI_POINTS)
            np.add.at(G[n], self._tri, elem)
            dJ_dflow += tau[n] * float(
                np.sum(self._wq * 2.0 * pmv * pmv_flow_derivative(
                    self.coeffs, flow, self.personal.flow_floor))
            )
            mean_abs += tau[n] * float(np.sum(self._wq * np.abs(pmv)))
        horizon = model.times[-1] - model.times[0]
        mean_abs /= self.target_area * horizon

        M = cached_mass(model.tspace)
        Mv = model.workspace.mass_v
        reg_te = 0.0
        g_dual = np.empty_like(state.g_te)
        for n in range(model.n_steps):
            Mg = M @ state.g_te[n]
            reg_te += model.dt * float(state.g_te[n] @ Mg)
            g_dual[n] = 2.0 * self.eta0p * model.dt * Mg
        Mvgu = Mv @ state.g_u
        reg_u = float(state.g_u @ Mvgu)

        J = J_pmv + self.eta0p * reg_te + self.eta1p * reg_u
        u_dual = dJ_dflow * dflow_du
        return ObjectiveEval(
            value=J,
            state_duals=G,
            g_te_dual=g_dual,
            g_u_dual=2.0 * self.eta1p * Mvgu,
            u_dual=u_dual,
            extras={
                "pmv_term": J_pmv,
                "mean_abs_pmv": mean_abs,
                "fan_flow": flow,
            },
        )


def objective_eval(kind, objective, state):
    """Uniform surface over the two objectives: value + explicit gradients.

    kind: 'estimation' or 'control'; objective must match.
    """
    if kind == "estimation" and isinstance(objective, EstimationObjective):
        return objective.evaluate(state)
    if kind == "control" and isinstance(objective, ControlObjective):
        return objective.evaluate(state)
    raise DomainError(f"objective kind {kind!r} does not match {type(objective).__name__}")


# ---------------------------------------------------------------------------
# adjoint solve and Frechet derivatives
# ---------------------------------------------------------------------------

@dataclass(eq=False)
class AdjointBundle:
    """lambda1 (adjoint temperature, backward in time), lambda2/lambda3
    (adjoint velocity/pressure) and lambda6 = lambda1(t_0)."""

    lambda1: TransientField
    lambda2: Field
    lambda3: Field
    lambda6: Field
    divergence_norm: float
    _step_duals: np.ndarray = None  # row 0: initial-condition dual; rows 1..N: step duals
    _u_source: np.ndarray = None


def solve_adjoint(state, state_duals, u_dual_explicit=None):
    """Backward-in-time transposed heat steps, then the transposed flow
    operator with the accumulated temperature-gradient source."""
    model = state.model
    N = model.n_steps
    G = np.asarray(state_duals, dtype=float)
    if G.shape != (N + 1, model.tspace.dof_count):
        raise DataError("state duals do not match the model grid")

    lam = np.zeros_like(G)
    carry = np.zeros(model.tspace.dof_count)
    M = state.stepper.mass
    for n in range(N, 0, -1):
        rhs = -G[n] + carry
        lam[n] = state.stepper.step_transpose(rhs)
        carry = M @ (lam[n] / model.dt)
    lam[0] = -G[0] + carry
    lam[0][model.tspace.boundary_dofs] = 0.0

    u_source = np.zeros(model.vspace.dof_count)
    for n in range(1, N + 1):
        u_source += state.coupling(n).T @ lam[n]
    total = u_source + (0.0 if u_dual_explicit is None else u_dual_explicit)

    lam2, lam3, _gauge = state.linearized().solve_adjoint(-total)

    lam1 = np.zeros_like(G)
    lam1[:N] = lam[1:] / model.dt
    bundle = AdjointBundle(
        lambda1=TransientField(model.tspace, model.times, lam1),
        lambda2=Field(model.vspace, lam2),
        lambda3=Field(model.pspace, lam3),
        lambda6=Field(model.tspace, lam1[0].copy()),
        divergence_norm=float(np.linalg.norm(model.workspace.div @ lam2)),
        _step_duals=lam,
        _u_source=total,
    )
    return bundle


@dataclass(eq=False)
class GradientBundle:
    """Gradients of the composed objective: fields are the L2 Riesz
    representatives, `duals` the raw coefficient derivatives."""

    d_pi0: Field
    d_theta: np.ndarray
    d_g_te: TransientField
    d_g_u: Field
    duals: dict

    def __post_init__(self):
        if not np.all(np.isfinite(self.d_theta)):
            raise DomainError("non-finite theta gradient")


def frechet_derivatives(state, bundle, evaluation):
    """Assemble all four gradients from the adjoint bundle.

    d_pi0 = grad_pi0 J - lambda6-dual, d_theta from the Brinkman and
    diffusivity pathways, d_gTe = grad_gTe J - lambda1, d_gu = grad_gu J
    - lambda2 (all discrete-exact).
    """
    model = state.model
    N = model.n_steps
    lam = bundle._step_duals
    M = cached_mass(model.tspace)
    Mv = model.workspace.mass_v

    pi0_expl = evaluation.pi0_dual
    dual_pi0 = (0.0 if pi0_expl is None else pi0_expl) - lam[0]

    g_expl = evaluation.g_te_dual
    dual_g = np.empty((N, model.tspace.dof_count))
    for n in range(1, N + 1):
        dual_g[n - 1] = -(M @ lam[n])
    if g_expl is not None:
        dual_g += g_expl

    gu_expl = evaluation.g_u_dual
    dual_gu = (0.0 if gu_expl is None else gu_expl) - (Mv @ bundle.lambda2.coeffs)

    d_theta = np.zeros(model.n_doors)
    u = state.flow.u.coeffs
    for i in range(model.n_doors):
        dalpha, dkappa = model.material_derivatives(i)
        Malpha = mass_matrix(model.vspace, dalpha)
        d_theta[i] = bundle.lambda2.coeffs @ (Malpha @ u)
        Kkappa = stiffness_matrix(model.tspace, dkappa)
        for n in range(1, N + 1):
            d_theta[i] += lam[n] @ (Kkappa @ state.T[n])

    mlu = cached_mass_lu(model.tspace)
    d_pi0 = Field(model.tspace, mlu.solve(dual_pi0))
    g_fields = np.empty((N + 1, model.tspace.dof_count))
    for n in range(N):
        g_fields[n + 1] = mlu.solve(dual_g[n]) / model.dt
    g_fields[0] = g_fields[1] if N >= 1 else 0.0

    mvlu = _mass_v_lu(model)
    d_gu = Field(model.vspace, mvlu.solve(np.asarray(dual_gu)))

    return GradientBundle(
        d_pi0=d_pi0,
        d_theta=d_theta,
        d_g_te=TransientField(model.tspace, model.times, g_fields),
        d_g_u=d_gu,
        duals={"pi0": dual_pi0, "theta": d_theta, "g_te": dual_g, "g_u": np.asarray(dual_gu)},
    )


def _mass_v_lu(model):
    cache = model.workspace.vspace._cache
    if "mass_v_lu" not in cache:
        from .fem import LUSolver

        cache["mass_v_lu"] = LUSolver(model.workspace.mass_v.tocsc())
    return cache["mass_v_lu"]


def directional_derivative(state, grads, d_pi0=None, d_theta=None, d_g_te=None, d_g_u=None):
    """<gradient, direction> with the mesh-consistent L2 inner products."""
    model = state.model
    out = 0.0
    M = cached_mass(model.tspace)
    if d_pi0 is not None:
        out += float(grads.d_pi0.coeffs @ (M @ np.asarray(d_pi0)))
    if d_theta is not None:
        out += float(grads.d_theta @ np.asarray(d_theta))
    if d_g_te is not None:
        d = np.asarray(d_g_te).reshape(model.n_steps, -1)
        for n in range(model.n_steps):
            out += model.dt * float(grads.d_g_te.values[n + 1] @ (M @ d[n]))
    if d_g_u is not None:
        out += float(grads.d_g_u.coeffs @ (model.workspace.mass_v @ np.asarray(d_g_u)))
    return out


# ---------------------------------------------------------------------------
# tangent (directional) forward solve -- used by the adjoint identity tests
# ---------------------------------------------------------------------------

def tangent_solve(state, d_pi0=None, d_theta=None, d_g_te=None, d_g_u=None):
    """Exact linearization of the forward chain along a direction.

    Returns (dT trajectory, du). Together with solve_adjoint this realizes
    the <L w, v> = <w, L^T v> identity at the discrete level.
    """
    model = state.model
    N = model.n_steps
    n1 = model.tspace.dof_count
    nu = model.vspace.dof_count
    d_pi0 = np.zeros(n1) if d_pi0 is None else np.asarray(d_pi0, dtype=float)
    d_theta = np.zeros(model.n_doors) if d_theta is None else np.asarray(d_theta, dtype=float)
    d_g_te = np.zeros((N, n1)) if d_g_te is None else np.asarray(d_g_te, dtype=float).reshape(N, n1)
    d_g_u = np.zeros(nu) if d_g_u is None else np.asarray(d_g_u, dtype=float)

    Mv = model.workspace.mass_v
    rhs_u = Mv @ d_g_u
    d_Kkappa = []
    for i in range(model.n_doors):
        dalpha, dkappa = model.material_derivatives(i)
        if d_theta[i] != 0.0:
            rhs_u -= d_theta[i] * (mass_matrix(model.vspace, dalpha) @ state.flow.u.coeffs)
        d_Kkappa.append(dkappa)
    du, _dp, _dmu = state.linearized().solve_forcing(rhs_u)

    M = state.stepper.mass
    dT = np.zeros((N + 1, n1))
    dT[0] = d_pi0
    dT[0][model.tspace.boundary_dofs] = 0.0
    dK = None
    if np.any(d_theta != 0.0):
        vals = sum(
            d_theta[i] * d_Kkappa[i].values for i in range(model.n_doors)
        )
        dK = stiffness_matrix(model.tspace, ElementField(model.mesh, vals))
    duf = Field(model.vspace, du)
    for n in range(1, N + 1):
        rhs = M @ (dT[n - 1] / model.dt) + M @ d_g_te[n - 1]
        rhs -= state.coupling(n) @ du
        if dK is not None:
            rhs -= dK @ state.T[n]
        dT[n] = state.stepper.step_homogeneous(rhs)
    return dT, du


# ---------------------------------------------------------------------------
# optimizer-facing problem closures
# ---------------------------------------------------------------------------

class EstimationProblem:
    """Variables (pi0, theta) with the lookback controls held fixed."""

    blocks = ("pi0", "theta")

    def __init__(self, model, objective, g_te_fixed, g_u_fixed, metrics=None,
                 estimate_theta=True):
        self.model = model
        self.objective = objective
        self.g_te_fixed = np.asarray(g_te_fixed, dtype=float).reshape(model.n_steps, -1)
        self.g_u_fixed = np.asarray(g_u_fixed, dtype=float)
        self.metrics = metrics or {}
        self.estimate_theta = estimate_theta
        n1 = model.tspace.dof_count
        inf = np.inf
        self.bounds = {
            "pi0": (np.full(n1, -inf), np.full(n1, inf)),
            "theta": (np.zeros(model.n_doors), np.ones(model.n_doors)),
        }
        if not estimate_theta:
            self.blocks = ("pi0",)
        self._flow_guess = None

    def evaluate(self, point):
        state = self.model.solve_forward(
            point["pi0"], point.get("theta", np.zeros(self.model.n_doors)),
            self.g_te_fixed, self.g_u_fixed, flow_guess=self._flow_guess,
        )
        self._flow_guess = state.flow.u
        ev = self.objective.evaluate(state)
        return ev.value, (state, ev)

    def gradient_duals(self, point, aux):
        state, ev = aux
        bundle = solve_adjoint(state, ev.state_duals, ev.u_dual)
        grads = frechet_derivatives(state, bundle, ev)
        self.last_gradients = grads
        out = {"pi0": grads.duals["pi0"]}
        if self.estimate_theta:
            out["theta"] = grads.duals["theta"]
        return out

    def weights(self):
        from .fem import cached_lumped_diag

        return {
            "pi0": cached_lumped_diag(self.model.tspace),
            "theta": np.ones(self.model.n_doors),
        }


class ControlProblem:
    """Variables (g_Te, g_u) with theta and the initial state held fixed."""

    blocks = ("g_te", "g_u")

    def __init__(self, model, objective, pi0_fixed, theta_fixed, bounds_g_te,
                 bounds_g_u, metrics=None):
        self.model = model
        self.objective = objective
        self.pi0_fixed = np.asarray(pi0_fixed, dtype=float)
        self.theta_fixed = np.asarray(theta_fixed, dtype=float)
        self.metrics = metrics or {}
        n1 = model.tspace.dof_count
        nu = model.vspace.dof_count
        lo_te = np.full((model.n_steps, n1), bounds_g_te[0])
        hi_te = np.full((model.n_steps, n1), bounds_g_te[1])
        self.bounds = {
            "g_te": (lo_te, hi_te),
            "g_u": (np.asarray(bounds_g_u[0], dtype=float) * np.ones(nu)
                    if np.isscalar(bounds_g_u[0]) else np.asarray(bounds_g_u[0]),
                    np.asarray(bounds_g_u[1], dtype=float) * np.ones(nu)
                    if np.isscalar(bounds_g_u[1]) else np.asarray(bounds_g_u[1])),
        }
        self._flow_guess = None

    def evaluate(self, point):
        state = self.model.solve_forward(
            self.pi0_fixed, self.theta_fixed, point["g_te"], point["g_u"],
            flow_guess=self._flow_guess,
        )
        self._flow_guess = state.flow.u
        ev = self.objective.evaluate(state)
        return ev.value, (state, ev)

    def gradient_duals(self, point, aux):
        state, ev = aux
        bundle = solve_adjoint(state, ev.state_duals, ev.u_dual)
        grads = frechet_derivatives(state, bundle, ev)
        self.last_gradients = grads
        return {"g_te": grads.duals["g_te"], "g_u": grads.duals["g_u"]}

    def weights(self):
        from .fem import cached_lumped_diag

        n1 = self.model.tspace.dof_count
        w_te = np.broadcast_to(
            cached_lumped_diag(self.model.tspace) * self.model.dt,
            (self.model.n_steps, n1),
        ).copy()
        return {
            "g_te": w_te,
            "g_u": cached_lumped_diag(self.model.vspace),
        }


# ---------------------------------------------------------------------------
# finite-difference gradient report (CLI gradcheck)
# ---------------------------------------------------------------------------

def gradient_check(scenario, variables="all", fd_step=1e-4, seed=0, n_steps=5):
    """Central finite differences of the composed objectives against the
    adjoint gradients on the scenario's controller mesh.

    theta and pi0 are checked through the estimation objective, g_Te and
    g_u through the control objective. Returns {name: (fd, adjoint,
    rel_err)}.
    """
    from .geometry import build_mesh

    sc = scenario
    mesh = build_mesh(sc.outer, sc.regions, sc.controller_h)
    times = np.linspace(0.0, sc.delta, n_steps + 1)
    model = ClimateModel(
        mesh=mesh, regions=sc.regions, reynolds=sc.reynolds, kappa0=sc.kappa0,
        kappa_wall=sc.kappa_wall, alpha_wall=sc.alpha_wall,
        t_ambient=sc.t_ambient, times=times,
    )
    rng = np.random.default_rng(seed)
    n1, nu, N = model.tspace.dof_count, model.vspace.dof_count, model.n_steps
    n_d = model.n_doors
    pi0 = sc.t_ambient + 0.5 * rng.standard_normal(n1)
    theta = np.full(n_d, 0.5)
    g_te = 0.05 * rng.standard_normal((N, n1))
    g_u = 0.05 * rng.standard_normal(nu)

    report = {}
    want = {variables} if variables != "all" else {"theta", "pi0", "g_te", "g_u"}

    if want & {"theta", "pi0"}:
        sensors = build_sensors(model.tspace, sc.regions)
        theta_star = np.where(np.arange(n_d) % 2 == 0, 0.9, 0.1)
        truth = model.solve_forward(
            np.full(n1, sc.t_ambient + 1.0), theta_star, g_te, g_u
        )
        data = sensors.sample_trajectory(truth.T)
        eobj = EstimationObjective(
            model=model, sensors=sensors, data=data, eta0=sc.eta0, eta1=sc.eta1
        )
        eprob = EstimationProblem(model, eobj, g_te, g_u)
        point = {"pi0": pi0, "theta": theta}
        J0, aux = eprob.evaluate(point)
        duals = eprob.gradient_duals(point, aux)

        def J_e(pt):
            eprob._flow_guess = None
            return eprob.evaluate(pt)[0]

        if "theta" in want and n_d:
            worst = (0.0, 0.0, 0.0)
            for i in range(n_d):
                d = np.zeros(n_d)
                d[i] = 1.0
                fd = (J_e({**point, "theta": theta + fd_step * d})
                      - J_e({**point, "theta": theta - fd_step * d})) / (2 * fd_step)
                adj = float(duals["theta"][i])
                rel = abs(fd - adj) / max(abs(fd), 1e-30)
                if rel >= worst[2]:
                    worst = (fd, adj, rel)
            report["theta"] = worst
        if "pi0" in want:
            d = rng.standard_normal(n1)
            fd = (J_e({**point, "pi0": pi0 + fd_step * d})
                  - J_e({**point, "pi0": pi0 - fd_step * d})) / (2 * fd_step)
            adj = float(duals["pi0"] @ d)
            report["pi0"] = (fd, adj, abs(fd - adj) / max(abs(fd), 1e-30))

    if want & {"g_te", "g_u"}:
        personal = sc.occupant
        fan_model = build_fan_model(model.vspace, sc.regions, personal)
        cobj = ControlObjective(
            model=model, personal=personal, fan_model=fan_model,
            eta0p=sc.eta0_prime, eta1p=sc.eta1_prime,
        )
        cprob = ControlProblem(
            model, cobj, pi0, theta, (sc.g_te_min, sc.g_te_max),
            (sc.g_u_min, sc.g_u_max),
        )
        point = {"g_te": g_te, "g_u": g_u}
        J0, aux = cprob.evaluate(point)
        duals = cprob.gradient_duals(point, aux)

        def J_c(pt):
            cprob._flow_guess = None
            return cprob.evaluate(pt)[0]

        for name in ("g_te", "g_u"):
            if name not in want:
                continue
            d = rng.standard_normal(point[name].shape)
            fd = (J_c({**point, name: point[name] + fd_step * d})
                  - J_c({**point, name: point[name] - fd_step * d})) / (2 * fd_step)
            adj = float(np.sum(duals[name] * d))
            report[name] = (fd, adj, abs(fd - adj) / max(abs(fd), 1e-30))
    return report
