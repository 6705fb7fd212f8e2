"""Projected-gradient machinery: box-constrained QP descent directions,
positive-definite metrics (scaled identity and BFGS), Armijo backtracking
and the outer descent loop.

Variable blocks are raw coefficient vectors; each block carries a positive
diagonal weight vector (a lumped L2 inner product) so the optimality value
V is mesh-consistent, while the box QP stays separable and its solution is
the componentwise clipped gradient step.
"""

import time
from dataclasses import dataclass, field as dc_field

import numpy as np
import scipy.linalg as sla

from .errors import DomainError, SolverError

BETA_FLOOR_POWER = 20  # smallest step 2**-20
CURVATURE_SKIP = 1e-12


class Metric:
    """Positive-definite bilinear operator M(d, d) used in the QP."""

    kind = "scaled-identity"

    def __init__(self, scale=1.0):
        if scale <= 0:
            raise DomainError("metric scale must be positive")
        self.scale = scale

    def value(self, delta, weights):
        return 0.5 * self.scale * float(np.sum(weights * delta * delta))


class BFGSMetric(Metric):
    """Limited-memory BFGS quadratic model with base matrix diag(weights).

    Updates are skipped when the curvature pairing is not safely positive,
    so the implied matrix stays positive definite.
    """

    kind = "bfgs"

    def __init__(self, max_history=20):
        self.max_history = max_history
        self.pairs = []

    def update(self, s, y):
        s = np.asarray(s, dtype=float).ravel()
        y = np.asarray(y, dtype=float).ravel()
        sy = float(s @ y)
        if sy <= CURVATURE_SKIP * np.linalg.norm(s) * np.linalg.norm(y):
            return False
        self.pairs.append((s, y))
        if len(self.pairs) > self.max_history:
            self.pairs.pop(0)
        return True

    def dense(self, weights):
        """Materialize the implied matrix by replaying the update history."""
        n = weights.size
        B = np.diag(weights.astype(float).ravel())
        for s, y in self.pairs:
            Bs = B @ s
            B -= np.outer(Bs, Bs) / float(s @ Bs)
            B += np.outer(y, y) / float(s @ y)
        return B

    def value(self, delta, weights):
        d = np.asarray(delta, dtype=float).ravel()
        B = self.dense(np.asarray(weights, dtype=float).ravel())
        return 0.5 * float(d @ (B @ d))


@dataclass
class DescentResult:
    direction: dict
    value: float                      # V <= 0; 0 iff the direction vanishes
    active: dict = dc_field(default_factory=dict)
    block_values: dict = dc_field(default_factory=dict)


def _clip_step(x, g_over_d, lo, hi):
    """clip(x - g/d, bounds) - x, the separable box-QP solution."""
    return np.clip(x - g_over_d, lo, hi) - x


def _identity_block(dual, weights, x, lo, hi, scale):
    delta = _clip_step(x, dual / (scale * weights), lo, hi)
    V = float(np.sum(dual * delta)) + 0.5 * scale * float(
        np.sum(weights * delta * delta)
    )
    return delta, V


def _bfgs_block(metric, dual, weights, x, lo, hi, max_iter=40):
    """Projected Newton on the box; falls back to the closed form whenever
    it does not improve the QP value."""
    v = dual.ravel()
    w = weights.ravel()
    xr, lor, hir = x.ravel(), lo.ravel(), hi.ravel()
    delta_id, V_id = _identity_block(v, w, xr, lor, hir, 1.0)
    if not metric.pairs:
        return delta_id, V_id
    B = metric.dense(w)
    try:
        sla.cholesky(B)
    except sla.LinAlgError as exc:
        raise SolverError("BFGS metric lost positive definiteness") from exc

    def qp_value(d):
        return float(v @ d) + 0.5 * float(d @ (B @ d))

    delta = delta_id.copy()
    prev_free = None
    for _ in range(max_iter):
        xn = xr + delta
        grad_q = v + B @ delta
        at_lo = xn <= lor + 1e-14
        at_hi = xn >= hir - 1e-14
        free = ~((at_lo & (grad_q > 0)) | (at_hi & (grad_q < 0)))
        if not free.any():
            break
        fixed = ~free
        rhs = -(v[free] + B[np.ix_(free, fixed)] @ delta[fixed])
        try:
            step = sla.solve(B[np.ix_(free, free)], rhs, assume_a="pos")
        except sla.LinAlgError:
            break
        new = delta.copy()
        new[free] = step
        new = np.clip(xr + new, lor, hir) - xr
        if prev_free is not None and np.array_equal(free, prev_free) and np.allclose(
            new, delta, rtol=0, atol=1e-14
        ):
            delta = new
            break
        delta, prev_free = new, free
    V = qp_value(delta)
    if V > V_id:  # guarantee V <= closed-form value <= 0
        return delta_id, V_id
    return delta, V


def descent_qp(duals, point, bounds, weights, metrics=None):
    """Minimize <g, d> + M(d, d) subject to the updated point staying in
    its box, blockwise. With the scaled-identity metric the solution is
    the componentwise clipped negative gradient."""
    metrics = metrics or {}
    direction = {}
    active = {}
    block_values = {}
    V = 0.0
    for name, dual in duals.items():
        x = np.asarray(point[name], dtype=float)
        lo, hi = bounds.get(name, (np.full_like(x, -np.inf), np.full_like(x, np.inf)))
        lo = np.broadcast_to(np.asarray(lo, dtype=float), x.shape)
        hi = np.broadcast_to(np.asarray(hi, dtype=float), x.shape)
        if np.any(x < lo - 1e-12) or np.any(x > hi + 1e-12):
            raise DomainError(f"block {name!r}: current point violates its bounds")
        w = np.broadcast_to(np.asarray(weights[name], dtype=float), x.shape)
        d = np.asarray(dual, dtype=float)
        metric = metrics.get(name, Metric())
        if isinstance(metric, BFGSMetric):
            delta_r, Vb = _bfgs_block(metric, d, w, x, lo, hi)
            delta = delta_r.reshape(x.shape)
        else:
            delta, Vb = _identity_block(d, w, x, lo, hi, metric.scale)
        direction[name] = delta
        block_values[name] = Vb
        V += Vb
        xn = x + delta
        active[name] = {
            "lower": int(np.sum(xn <= lo + 1e-14)),
            "upper": int(np.sum(xn >= hi - 1e-14)),
        }
    return DescentResult(direction=direction, value=V, active=active,
                         block_values=block_values)


def armijo(evaluate, point, direction, V, J0, a=0.1):
    """Largest beta in {1, 1/2, ..., 2^-20} with
    J(point + beta*direction) - J0 <= a*beta*V; None when every step on
    the grid fails (caller treats that as converged-or-stalled)."""
    if not 0.0 < a < 1.0:
        raise DomainError("Armijo parameter must lie in (0, 1)")
    if V >= 0:
        raise DomainError("Armijo requires a strict descent direction (V < 0)")
    for k in range(BETA_FLOOR_POWER + 1):
        beta = 0.5**k
        trial = {n: point[n] + beta * direction[n] for n in point}
        J, aux = evaluate(trial)
        if J - J0 <= a * beta * V:
            return beta, trial, J, aux
    return None


@dataclass
class TraceRow:
    iteration: int
    value: float
    optimality: float
    beta: float
    wall_ms: float


@dataclass
class OptimizeResult:
    point: dict
    value: float
    optimality: float
    iterations: int
    status: str  # converged | stalled | max_outer
    trace: list
    aux: object = None


def optimize(problem, init_point, eps_tol=1e-6, max_outer=50, a=0.1):
    """Outer descent loop: forward evaluation, gradients, box QP, Armijo,
    update; stops when V >= -eps_tol. J decreases strictly on every
    accepted step. BFGS metrics are refreshed with the (s, y) pair of the
    accepted move."""
    if eps_tol < 0:
        raise DomainError("eps_tol must be nonnegative")
    point = {n: np.asarray(v, dtype=float).copy() for n, v in init_point.items()}
    weights = problem.weights()
    metrics = getattr(problem, "metrics", {}) or {}
    J, aux = problem.evaluate(point)
    trace = []
    status = "max_outer"
    prev = None  # (point, duals) for BFGS curvature pairs
    V = 0.0
    it = 0
    for it in range(max_outer):
        t0 = time.perf_counter()
        duals = problem.gradient_duals(point, aux)
        for name, metric in metrics.items():
            if isinstance(metric, BFGSMetric) and prev is not None and name in duals:
                metric.update(
                    point[name].ravel() - prev[0][name].ravel(),
                    duals[name].ravel() - prev[1][name].ravel(),
                )
        result = descent_qp(duals, point, problem.bounds, weights, metrics)
        V = result.value
        if V >= -eps_tol:
            trace.append(TraceRow(it, J, V, 0.0, (time.perf_counter() - t0) * 1e3))
            status = "converged"
            break
        step = armijo(problem.evaluate, point, result.direction, V, J, a=a)
        if step is None:
            trace.append(TraceRow(it, J, V, 0.0, (time.perf_counter() - t0) * 1e3))
            status = "stalled"
            break
        beta, new_point, J_new, aux_new = step
        trace.append(TraceRow(it, J, V, beta, (time.perf_counter() - t0) * 1e3))
        prev = (point, duals)
        point, J, aux = new_point, J_new, aux_new
    return OptimizeResult(
        point=point, value=J, optimality=V, iterations=it, status=status,
        trace=trace, aux=aux,
    )
