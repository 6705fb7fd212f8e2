"""Transient advection-diffusion for temperature with a frozen velocity.

Implicit Euler: (M/dt + K(kappa) + N(u)) T^{n+1} = (M/dt) T^n + M g^{n+1}.
The step matrix is factorized once per (kappa, u, dt) and reused; its
transpose solve is the exact discrete adjoint step, which is why implicit
Euler was chosen over Crank-Nicolson. Sources are piecewise constant per
step with right-endpoint evaluation, matching the implicit scheme.
"""

from dataclasses import dataclass

import numpy as np

from .errors import DataError, DomainError
from .fem import (
    DirichletSystem,
    Field,
    TransientField,
    advection_matrix,
    cached_mass,
    p1_space,
    stiffness_matrix,
)
from .geometry import ElementField


@dataclass
class HeatProblem:
    kappa: ElementField
    u: Field | None  # P2 velocity; None means pure diffusion
    g: TransientField  # source; row n applies on the step ending at times[n]
    pi0: Field
    t_ambient: float
    times: np.ndarray

    def __post_init__(self):
        self.times = np.asarray(self.times, dtype=float)
        dts = np.diff(self.times)
        if len(dts) < 1 or np.any(dts <= 0):
            raise DomainError("need a strictly increasing time grid")
        if not np.allclose(dts, dts[0], rtol=1e-10, atol=0.0):
            raise DomainError("time grid must be uniform")
        if np.any(self.kappa.values <= 0):
            raise DomainError("kappa must be positive everywhere")
        if self.g.values.shape[0] != len(self.times):
            raise DataError("source grid does not match the problem time grid")

    @property
    def dt(self):
        return float(self.times[1] - self.times[0])


@dataclass
class HeatSolution:
    T: TransientField
    stepper: "HeatStepper"


@dataclass(eq=False)
class HeatStepper:
    """Factorized implicit-Euler step operator with Dirichlet handling."""

    space: object
    mass: object
    A_full: object
    system: DirichletSystem
    dt: float
    t_ambient: float

    def initial(self, pi0):
        T0 = pi0.coeffs.copy()
        T0[self.space.boundary_dofs] = self.t_ambient
        return T0

    def step(self, T_prev, g_n):
        rhs = self.mass @ (T_prev / self.dt) + self.mass @ g_n
        return self.system.solve(rhs)

    def step_homogeneous(self, rhs):
        """Linearized step: homogeneous boundary data, raw interior rhs."""
        b = self.system.mask * rhs
        return self.system.lu.solve(b)

    def step_transpose(self, dual):
        return self.system.solve_transpose(dual)


def make_stepper(tspace, kappa, u, dt, t_ambient):
    M = cached_mass(tspace)
    A = M / dt + stiffness_matrix(tspace, kappa)
    if u is not None:
        A = A + advection_matrix(tspace, u)
    system = DirichletSystem(A.tocsr(), tspace.boundary_dofs, t_ambient)
    return HeatStepper(
        space=tspace, mass=M, A_full=A.tocsr(), system=system, dt=dt,
        t_ambient=t_ambient,
    )


def solve_heat(problem, tspace=None):
    """March the temperature over the grid; T(t_0) is the interpolated
    initial condition and boundary dofs equal the ambient value at every
    node."""
    tspace = tspace or problem.pi0.space
    if tspace.mesh is not problem.kappa.mesh:
        raise DomainError("kappa lives on a different mesh")
    stepper = make_stepper(
        tspace, problem.kappa, problem.u, problem.dt, problem.t_ambient
    )
    n_steps = len(problem.times) - 1
    values = np.empty((n_steps + 1, tspace.dof_count))
    values[0] = stepper.initial(problem.pi0)
    for n in range(1, n_steps + 1):
        values[n] = stepper.step(values[n - 1], problem.g.values[n])
    T = TransientField(tspace, problem.times, values)
    return HeatSolution(T=T, stepper=stepper)


def heat_space(mesh):
    return p1_space(mesh)
