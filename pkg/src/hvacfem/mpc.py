"""Receding-horizon estimation and control.

Each cycle at time t_i: estimate (pi0, theta) over the past window
[t_i - T, t_i] from thermostat samples, advance the estimated state to
t_i, solve the comfort control problem over [t_i, t_i + T'], apply the
first Delta of the plan to the plant, ingest the new sensor data and
slide the window.

The plant is the same solver stack on a finer mesh with a smaller time
step and optional Gaussian sensor noise; the controller never reads the
plant state directly, only the sensor log crosses the boundary.
"""

import time
from dataclasses import dataclass, field as dc_field

import numpy as np

from .adjoint import (
    ClimateModel,
    ControlObjective,
    ControlProblem,
    EstimationObjective,
    EstimationProblem,
    build_fan_model,
    build_sensors,
)
from .comfort import pmv_simplified
from .errors import DataError, DomainError
from .fem import (
    Field,
    TransientField,
    cached_mass,
    evaluate,
    spaces_for,
)
from .geometry import PointLocator, build_mesh, material_fields, point_in_polygon
from .optim import BFGSMetric, optimize
from .quadrature import TRI_POINTS, TRI_WEIGHTS


# ---------------------------------------------------------------------------
# configuration and logs
# ---------------------------------------------------------------------------

@dataclass
class HorizonConfig:
    delta: float
    lookback: float
    lookahead: float
    eps_tol: float = 1e-6
    armijo_a: float = 0.1
    est_steps: int = 6
    ctl_steps: int = 6
    max_outer_estimation: int = 15
    max_outer_control: int = 12

    def __post_init__(self):
        if not (self.lookback > self.delta > 0):
            raise DomainError("need lookback T > delta > 0")
        if not (self.lookahead > self.delta):
            raise DomainError("need lookahead T' > delta")
        dt_c = self.lookahead / self.ctl_steps
        ratio = self.delta / dt_c
        if abs(ratio - round(ratio)) > 1e-9 or round(ratio) < 1:
            raise DomainError("delta must be a whole number of control steps")

    @property
    def apply_steps(self):
        return int(round(self.delta / (self.lookahead / self.ctl_steps)))


@dataclass
class SensorLog:
    """Per-sensor time series on the plant sampling grid."""

    times: list = dc_field(default_factory=list)
    values: list = dc_field(default_factory=list)

    def append(self, t, sample):
        if self.times and t <= self.times[-1]:
            raise DataError("sensor log times must be strictly increasing")
        self.times.append(float(t))
        self.values.append(np.asarray(sample, dtype=float))

    def window(self, grid):
        """Linear interpolation of every sensor channel onto a time grid."""
        if not self.times:
            raise DataError("sensor log is empty")
        t = np.asarray(self.times)
        v = np.asarray(self.values)
        g = np.asarray(grid, dtype=float)
        if g[0] < t[0] - 1e-9 or g[-1] > t[-1] + 1e-9:
            raise DataError(
                f"sensor log covers [{t[0]}, {t[-1]}], window needs [{g[0]}, {g[-1]}]"
            )
        return np.column_stack(
            [np.interp(g, t, v[:, k]) for k in range(v.shape[1])]
        )


@dataclass
class AppliedControls:
    """First-Delta restriction of a control plan, bound-checked."""

    g_te: TransientField
    g_u: Field
    g_te_bounds: tuple
    g_u_bounds: tuple

    def __post_init__(self):
        lo, hi = self.g_te_bounds
        if np.any(self.g_te.values < lo - 1e-9) or np.any(self.g_te.values > hi + 1e-9):
            raise DomainError("applied heat controls violate their bounds")
        lo_u, hi_u = self.g_u_bounds
        if np.any(self.g_u.coeffs < np.asarray(lo_u) - 1e-9) or np.any(
            self.g_u.coeffs > np.asarray(hi_u) + 1e-9
        ):
            raise DomainError("applied fan controls violate their bounds")


@dataclass
class CycleRow:
    cycle: int
    t_i: float
    J_e: float
    J_c: float
    theta_hat: np.ndarray
    mean_abs_pmv: float
    energy_surrogate: float
    wall_ms_est: float
    wall_ms_ctl: float


@dataclass
class MPCLog:
    n_doors: int
    rows: list = dc_field(default_factory=list)
    snapshots: list = dc_field(default_factory=list)


@dataclass
class EstimationResult:
    pi0_hat: np.ndarray
    theta_hat: np.ndarray
    terminal_T: np.ndarray  # estimated temperature at t_i (control IC)
    trajectory: np.ndarray
    window: np.ndarray
    optimality: float
    value: float
    status: str
    trace: list


@dataclass
class ControlResult:
    g_te: np.ndarray
    g_u: np.ndarray
    applied: AppliedControls
    predicted_T: np.ndarray
    value: float
    optimality: float
    status: str
    trace: list
    mean_abs_pmv_predicted: float


# ---------------------------------------------------------------------------
# field transfer between meshes
# ---------------------------------------------------------------------------

def transfer_p1(src_field, dst_space, locator=None):
    vals = evaluate(src_field, dst_space.mesh.vertices, locator)
    return Field(dst_space, np.asarray(vals))


def transfer_p2v(src_field, dst_space, locator=None):
    nodes = dst_space.node_coords()
    vals = evaluate(src_field, nodes, locator)
    coeffs = np.empty(dst_space.dof_count)
    coeffs[0::2] = vals[:, 0]
    coeffs[1::2] = vals[:, 1]
    return Field(dst_space, coeffs)


# ---------------------------------------------------------------------------
# plant (truth) simulator
# ---------------------------------------------------------------------------

class PlantSimulator:
    """Same solver stack on its own (finer) mesh, stepped incrementally."""

    def __init__(self, mesh, regions, scenario, theta_schedule, seed=None):
        self.mesh = mesh
        self.regions = regions
        self.sc = scenario
        self.theta_schedule = theta_schedule
        self.tspace, self.vspace, self.pspace = spaces_for(mesh)
        self.sensors = build_sensors(self.tspace, regions)
        self.dt = scenario.plant_dt
        self.rng = np.random.default_rng(
            scenario.noise_seed if seed is None else seed
        )
        self.noise = scenario.sensor_noise_sigma
        self.T = np.full(self.tspace.dof_count, scenario.t_ambient)
        self.t = 0.0
        self._flow_key = None
        self._flow = None
        self._stepper = None
        self._coeffs = None
        self.fan_model = build_fan_model(self.vspace, regions, scenario.occupant)
        from .comfort import compute_coefficients

        self._pmv_coeffs = compute_coefficients(scenario.occupant)
        elems = mesh.triangles_in("target")
        if elems.size == 0:
            elems = np.arange(mesh.n_triangles)
        self._target_tri = mesh.triangles[elems]
        self._target_wq = np.einsum("t,q->tq", mesh.areas()[elems], TRI_WEIGHTS)
        self._target_area = float(np.sum(mesh.areas()[elems]))

    def _ensure_operators(self, theta, g_u_plant):
        key = (np.round(theta, 12).tobytes(), np.round(g_u_plant, 12).tobytes())
        if key == self._flow_key:
            return
        from .flow import FlowProblem, solve_flow_robust

        alpha, kappa = material_fields(
            self.mesh, self.regions, theta, self.sc.kappa0, self.sc.kappa_wall,
            self.sc.alpha_wall,
        )
        problem = FlowProblem(
            reynolds=self.sc.reynolds, alpha=alpha,
            g_u=Field(self.vspace, g_u_plant),
        )
        guess = self._flow.u if self._flow is not None else None
        self._flow = solve_flow_robust(problem, initial_guess=guess)
        from .heat import make_stepper

        self._stepper = make_stepper(
            self.tspace, kappa, self._flow.u, self.dt, self.sc.t_ambient
        )
        self._flow_key = key

    def sample(self):
        s = self.sensors.loads @ self.T
        if self.noise > 0:
            s = s + self.rng.normal(0.0, self.noise, s.shape)
        return s

    def comfort_now(self):
        """Area-mean |pmv| over the target region at the current state."""
        flow, _ = self.fan_model.flow(self._flow.u.coeffs) if self._flow else (
            self.sc.occupant.flow_floor, True)
        Tq = np.einsum("qi,ti->tq", TRI_POINTS, self.T[self._target_tri])
        pmv = pmv_simplified(
            self._pmv_coeffs, Tq, flow, self.sc.occupant.flow_floor
        )
        return float(np.sum(self._target_wq * np.abs(pmv))) / self._target_area

    def advance(self, duration, g_te_of_t, g_u_plant, log):
        """Step the plant for `duration`, logging a sensor sample per step.
        g_te_of_t(t) returns the plant-mesh source vector active at time t.
        Returns the time-averaged target-area |pmv|."""
        n = int(round(duration / self.dt))
        if abs(n * self.dt - duration) > 1e-9:
            raise DomainError("plant step does not divide the apply interval")
        acc = 0.0
        for _ in range(n):
            t_mid = self.t + 0.5 * self.dt
            theta = np.asarray(self.theta_schedule(t_mid), dtype=float)
            self._ensure_operators(theta, g_u_plant)
            self.T = self._stepper.step(self.T, g_te_of_t(t_mid))
            self.t += self.dt
            log.append(self.t, self.sample())
            acc += self.comfort_now()
        return acc / max(n, 1)


# ---------------------------------------------------------------------------
# the receding-horizon runner
# ---------------------------------------------------------------------------

class MPCRunner:
    """Builds controller and plant stacks from a scenario and runs the
    estimate -> control -> apply -> ingest loop."""

    def __init__(self, scenario, theta_schedule=None, estimate_theta=True,
                 frozen_theta=None, metric="identity", seed=None):
        self.sc = scenario
        self.regions = scenario.regions
        self.config = HorizonConfig(
            delta=scenario.delta, lookback=scenario.lookback,
            lookahead=scenario.lookahead, eps_tol=scenario.eps_tol,
            armijo_a=scenario.armijo_a, est_steps=scenario.est_steps,
            ctl_steps=scenario.ctl_steps,
            max_outer_estimation=scenario.max_outer_estimation,
            max_outer_control=scenario.max_outer_control,
        )
        self.mesh_c = build_mesh(scenario.outer, self.regions, scenario.controller_h)
        self.mesh_p = build_mesh(scenario.outer, self.regions, scenario.plant_h)
        self.tspace_c, self.vspace_c, _ = spaces_for(self.mesh_c)
        n_d = self.regions.n_doors
        if theta_schedule is None:
            theta_schedule = lambda t: np.zeros(n_d)
        self.plant = PlantSimulator(
            self.mesh_p, self.regions, scenario, theta_schedule, seed=seed
        )
        self.estimate_theta = estimate_theta
        self.frozen_theta = (
            np.zeros(n_d) if frozen_theta is None else np.asarray(frozen_theta, float)
        )
        self.metric_kind = metric
        self.sensors_c = build_sensors(self.tspace_c, self.regions)
        self.fan_model_c = build_fan_model(self.vspace_c, self.regions, scenario.occupant)
        self._ctl_locator = PointLocator(self.mesh_c)
        self.g_u_bounds_arr = self._fan_bounds()
        # warm state
        self.warm_pi0 = np.full(self.tspace_c.dof_count, scenario.t_ambient)
        self.warm_theta = np.full(n_d, 0.5)
        n_ctl = self.config.ctl_steps
        self.warm_g_te = np.zeros((n_ctl, self.tspace_c.dof_count))
        self.warm_g_u = np.zeros(self.vspace_c.dof_count)
        self.applied_g_te = []  # (t0, t1, coeff vector) piecewise-constant history
        self.applied_g_u = []   # (t0, t1, coeff vector)
        self.log = SensorLog()
        self.t_hist0 = None

    def _fan_bounds(self):
        """Force bounds: the scenario amplitude box applies to the dof
        component along each fan's declared axis (signed by the direction);
        cross-axis components and dofs outside fan areas are pinned at
        zero. Keeps every admissible force a one-way jet, for which the
        stationary flow problem stays robustly solvable."""
        nodes = self.vspace_c.node_coords()
        lo = np.zeros(self.vspace_c.dof_count)
        hi = np.zeros(self.vspace_c.dof_count)
        for fan in self.regions.fan_regions:
            d = fan.direction
            if abs(d[0]) > 1e-12 and abs(d[1]) > 1e-12:
                raise DomainError("fan directions must be axis-aligned")
            comp = 0 if abs(d[0]) > abs(d[1]) else 1
            sign = np.sign(d[comp])
            inside = np.array([point_in_polygon(p, fan.polygon) for p in nodes])
            dofs = 2 * np.nonzero(inside)[0] + comp
            a, b = sign * self.sc.g_u_min, sign * self.sc.g_u_max
            lo[dofs] = min(a, b)
            hi[dofs] = max(a, b)
        return lo, hi

    # -- plant-side control transfer ------------------------------------

    def _g_te_plant_lookup(self, applied):
        """Transfer each applied step onto the plant mesh once; return a
        time lookup."""
        steps = []
        times = applied.g_te.times
        for n in range(1, len(times)):
            f = Field(self.tspace_c, applied.g_te.values[n])
            steps.append(
                (times[n - 1], times[n],
                 transfer_p1(f, self.plant.tspace, self._ctl_locator).coeffs)
            )

        def lookup(t):
            for t0, t1, vec in steps:
                if t0 - 1e-9 <= t <= t1 + 1e-9:
                    return vec
            return steps[-1][2]

        return lookup

    # -- history lookups --------------------------------------------------

    def _history_g_te(self, grid):
        """Past applied heat controls resampled on an estimation grid."""
        out = np.zeros((len(grid) - 1, self.tspace_c.dof_count))
        for n in range(1, len(grid)):
            mid = 0.5 * (grid[n - 1] + grid[n])
            for t0, t1, vec in self.applied_g_te:
                if t0 - 1e-9 <= mid <= t1 + 1e-9:
                    out[n - 1] = vec
                    break
        return out

    def _history_g_u(self, t):
        for t0, t1, vec in reversed(self.applied_g_u):
            if t0 - 1e-9 <= t:
                return vec
        return np.zeros(self.vspace_c.dof_count)

    def _metrics(self, names):
        if self.metric_kind == "bfgs":
            return {n: BFGSMetric() for n in names}
        return {}

    # -- spec operations ---------------------------------------------------

    def spin_up(self, duration=None, heat_source=None):
        """Run the plant to synthesize sensor history before cycle 0.

        heat_source: optional controller-mesh P1 coefficient vector applied
        as a constant g_Te during the spin-up (recorded in the applied
        history so the estimator sees the same excitation)."""
        duration = self.config.delta if duration is None else duration
        self.t_hist0 = self.plant.t
        self.log.append(self.plant.t, self.plant.sample())
        if heat_source is None:
            g_plant = np.zeros(self.plant.tspace.dof_count)
        else:
            heat_source = np.asarray(heat_source, dtype=float)
            g_plant = transfer_p1(
                Field(self.tspace_c, heat_source), self.plant.tspace,
                self._ctl_locator,
            ).coeffs
            self.applied_g_te.append(
                (self.plant.t, self.plant.t + duration, heat_source)
            )
        self.plant.advance(
            duration, lambda t: g_plant,
            np.zeros(self.plant.vspace.dof_count), self.log,
        )

    def run_estimation_cycle(self, t_i):
        cfg = self.config
        w0 = max(t_i - cfg.lookback, self.t_hist0)
        grid = np.linspace(w0, t_i, cfg.est_steps + 1)
        data = self.log.window(grid)
        model = ClimateModel(
            mesh=self.mesh_c, regions=self.regions, reynolds=self.sc.reynolds,
            kappa0=self.sc.kappa0, kappa_wall=self.sc.kappa_wall,
            alpha_wall=self.sc.alpha_wall, t_ambient=self.sc.t_ambient,
            times=grid,
        )
        objective = EstimationObjective(
            model=model, sensors=self.sensors_c, data=data,
            eta0=self.sc.eta0, eta1=self.sc.eta1,
        )
        problem = EstimationProblem(
            model, objective, self._history_g_te(grid), self._history_g_u(t_i),
            metrics=self._metrics(("pi0", "theta")),
            estimate_theta=self.estimate_theta,
        )
        init = {"pi0": self.warm_pi0.copy()}
        if self.estimate_theta:
            init["theta"] = self.warm_theta.copy()
        res = optimize(
            problem, init, eps_tol=cfg.eps_tol,
            max_outer=cfg.max_outer_estimation, a=cfg.armijo_a,
        )
        state = res.aux[0]
        theta_hat = res.point.get("theta", self.frozen_theta)
        return EstimationResult(
            pi0_hat=res.point["pi0"], theta_hat=theta_hat,
            terminal_T=state.T[-1].copy(), trajectory=state.T.copy(),
            window=grid, optimality=res.optimality, value=res.value,
            status=res.status, trace=res.trace,
        )

    def run_control_cycle(self, t_i, initial_T, theta_hat):
        cfg = self.config
        grid = t_i + np.linspace(0.0, cfg.lookahead, cfg.ctl_steps + 1)
        model = ClimateModel(
            mesh=self.mesh_c, regions=self.regions, reynolds=self.sc.reynolds,
            kappa0=self.sc.kappa0, kappa_wall=self.sc.kappa_wall,
            alpha_wall=self.sc.alpha_wall, t_ambient=self.sc.t_ambient,
            times=grid,
        )
        objective = ControlObjective(
            model=model, personal=self.sc.occupant, fan_model=self.fan_model_c,
            eta0p=self.sc.eta0_prime, eta1p=self.sc.eta1_prime,
        )
        problem = ControlProblem(
            model, objective, initial_T, theta_hat,
            (self.sc.g_te_min, self.sc.g_te_max), self.g_u_bounds_arr,
            metrics=self._metrics(("g_te", "g_u")),
        )
        init = {"g_te": self.warm_g_te.copy(), "g_u": self.warm_g_u.copy()}
        res = optimize(
            problem, init, eps_tol=cfg.eps_tol,
            max_outer=cfg.max_outer_control, a=cfg.armijo_a,
        )
        state, ev = res.aux
        k = cfg.apply_steps
        dt_c = cfg.lookahead / cfg.ctl_steps
        apply_times = t_i + dt_c * np.arange(k + 1)
        vals = np.vstack([res.point["g_te"][0:1], res.point["g_te"][:k]])
        applied = AppliedControls(
            g_te=TransientField(self.tspace_c, apply_times, vals),
            g_u=Field(self.vspace_c, res.point["g_u"]),
            g_te_bounds=(self.sc.g_te_min, self.sc.g_te_max),
            g_u_bounds=self.g_u_bounds_arr,
        )
        return ControlResult(
            g_te=res.point["g_te"], g_u=res.point["g_u"], applied=applied,
            predicted_T=state.T.copy(), value=res.value,
            optimality=res.optimality, status=res.status, trace=res.trace,
            mean_abs_pmv_predicted=ev.extras["mean_abs_pmv"],
        )

    def cycle_energy(self, applied):
        """Surrogate \\int ||g_Te||^2 dt over the applied interval."""
        M = cached_mass(self.tspace_c)
        dt = np.diff(applied.g_te.times)
        total = 0.0
        for n in range(1, len(applied.g_te.times)):
            g = applied.g_te.values[n]
            total += dt[n - 1] * float(g @ (M @ g))
        return total

    def run(self, n_cycles, collect_fields=False):
        if self.t_hist0 is None:
            self.spin_up()
        mpc_log = MPCLog(n_doors=self.regions.n_doors)
        cfg = self.config
        for cycle in range(n_cycles):
            t_i = self.plant.t
            t0 = time.perf_counter()
            est = self.run_estimation_cycle(t_i)
            wall_est = (time.perf_counter() - t0) * 1e3
            t0 = time.perf_counter()
            ctl = self.run_control_cycle(t_i, est.terminal_T, est.theta_hat)
            wall_ctl = (time.perf_counter() - t0) * 1e3

            lookup = self._g_te_plant_lookup(ctl.applied)
            g_u_plant = transfer_p2v(
                ctl.applied.g_u, self.plant.vspace, self._ctl_locator
            ).coeffs
            mean_pmv = self.plant.advance(cfg.delta, lookup, g_u_plant, self.log)

            self.applied_g_te += [
                (ctl.applied.g_te.times[n - 1], ctl.applied.g_te.times[n],
                 ctl.applied.g_te.values[n])
                for n in range(1, len(ctl.applied.g_te.times))
            ]
            self.applied_g_u.append((t_i, t_i + cfg.delta, ctl.applied.g_u.coeffs))

            # warm start for the next cycle: slide the estimate by delta
            next_w0 = max(t_i + cfg.delta - cfg.lookback, self.t_hist0)
            self.warm_pi0 = _interp_trajectory(est.window, est.trajectory, next_w0)
            self.warm_theta = est.theta_hat.copy()
            k = cfg.apply_steps
            self.warm_g_te = np.vstack(
                [ctl.g_te[k:], np.repeat(ctl.g_te[-1:], k, axis=0)]
            )
            self.warm_g_u = ctl.g_u.copy()

            mpc_log.rows.append(CycleRow(
                cycle=cycle, t_i=t_i, J_e=est.value, J_c=ctl.value,
                theta_hat=est.theta_hat.copy(), mean_abs_pmv=mean_pmv,
                energy_surrogate=self.cycle_energy(ctl.applied),
                wall_ms_est=wall_est, wall_ms_ctl=wall_ctl,
            ))
            if collect_fields:
                mpc_log.snapshots.append(
                    (cycle, Field(self.tspace_c, est.terminal_T.copy()))
                )
        return mpc_log


def _interp_trajectory(grid, trajectory, t):
    t = min(max(t, grid[0]), grid[-1])
    n = int(np.searchsorted(grid, t, side="right")) - 1
    n = min(max(n, 0), len(grid) - 2)
    w = (t - grid[n]) / (grid[n + 1] - grid[n])
    return (1.0 - w) * trajectory[n] + w * trajectory[n + 1]


def run_mpc(scenario, theta_schedule, n_cycles, estimate_theta=True,
            frozen_theta=None, metric="identity", seed=None, collect_fields=False):
    """Convenience wrapper: build an MPCRunner and execute n_cycles."""
    runner = MPCRunner(
        scenario, theta_schedule=theta_schedule, estimate_theta=estimate_theta,
        frozen_theta=frozen_theta, metric=metric, seed=seed,
    )
    return runner.run(n_cycles, collect_fields=collect_fields)
