"""Resonant (Q) equations and the outer P/Q alternation.

On the resonant modes (m, 1), |m| = |m0|, the equation reads

    sigma p_m + 2 <m0>^alpha (u^3)^(m, 1) = 0,   sigma = eps^-2 (-lam^2 + |m0|^2 + rho),

the m0 component fixing sigma (hence lam) and the others fixing p_m.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np

from .errors import ExcludedParameter, FrequencyCollapse, NoOuterConvergence, ResidualIncrease
from .lattice import (DEFAULT_MAX_RADIUS, FourierField, ProblemParams, bracket, l1_grid,
                      pointwise_cube, resonant_modes, resonant_set, site_mask)
from .outputs import write_json
from .p_solver import (ScaleSchedule, amplitude_vector, base_field, full_residual, is_excluded,
                       run_p_solver)


@dataclass(frozen=True)
class QState:
    p0: float
    p_m: tuple
    lam: float
    sigma: float
    iteration: int = 0
    converged: bool = False

    @property
    def p(self) -> tuple:
        return (self.p0,) + tuple(self.p_m)


def sigma_from_lambda(lam: float, params: ProblemParams) -> float:
    return (-lam * lam + params.lambda0_sq) / params.eps ** 2


def lambda_from_sigma(sigma: float, params: ProblemParams) -> float:
    lam_sq = params.lambda0_sq - sigma * params.eps ** 2
    if not lam_sq > 0:
        raise FrequencyCollapse(f"lambda^2 = {lam_sq:.6g} is not positive", sigma=sigma)
    return math.sqrt(lam_sq)


def initial_qstate(p0: float, params: ProblemParams, p_m=()) -> QState:
    p = amplitude_vector(p0, p_m, params)
    return QState(p[0], p[1:], params.lambda0, 0.0)


def resonant_values(f: FourierField, params: ProblemParams) -> np.ndarray:
    """f at (m, 1) for the resonant modes, in ``resonant_modes`` order."""
    return np.array([f[(*m, 1)] for m in resonant_modes(params)])


def resonant_cubic_coefficients(p0: float, p_m, params: ProblemParams) -> np.ndarray:
    """(u0^3)^(m, 1) for each resonant mode, computed by convolution."""
    p = amplitude_vector(p0, p_m, params)
    return resonant_values(pointwise_cube(base_field(p, params)), params)


def leading_order_coefficients(p0: float, p_m, params: ProblemParams) -> np.ndarray:
    """3/8 p0^3 at m0 and 3/4 p0^2 p_m elsewhere."""
    p = amplitude_vector(p0, p_m, params)
    out = 0.75 * p0 * p0 * np.asarray(p, dtype=float)
    out[0] = 0.375 * p0 ** 3
    return out


def leading_order_sigma(p0: float, params: ProblemParams) -> float:
    return -0.75 * bracket(params.m0) ** params.alpha * p0 * p0


def leading_order_lambda_sq(p0: float, params: ProblemParams) -> float:
    """lam^2 = |m0|^2 + rho + (3/4) <m0>^alpha p0^2 eps^2."""
    return params.lambda0_sq - leading_order_sigma(p0, params) * params.eps ** 2


def q_update(u: FourierField, state: QState, params: ProblemParams, damping: float = 1.0) -> QState:
    """One sweep: sigma from the m0 component, then a damped step on each p_m."""
    if state.p0 == 0:
        raise ValueError("p0 must be nonzero")
    w = bracket(params.m0) ** params.alpha
    cubic = resonant_values(pointwise_cube(u), params)
    sigma = -2.0 * w * cubic[0] / state.p0
    p_m = np.asarray(state.p_m, dtype=float)
    if p_m.size:
        # Jacobian diagonal of sigma p_m + 2 w (u^3)(m,1) in p_m at leading order
        slope = sigma + 1.5 * w * state.p0 ** 2
        p_m = p_m - damping * (sigma * p_m + 2.0 * w * cubic[1:]) / slope
    lam = params.lambda0 if params.eps == 0 else lambda_from_sigma(sigma, params)
    return QState(state.p0, tuple(float(x) for x in p_m), lam, float(sigma), state.iteration + 1, False)


@dataclass(frozen=True, eq=False)
class CoupledSolution:
    state: QState
    u: FourierField
    v: FourierField
    traces: list
    history: list = field(default_factory=list)  # per outer iteration: (lam, p_m, delta)
    excluded: bool = False
    reason: str | None = None
    params: ProblemParams | None = None

    @property
    def lam(self) -> float:
        return self.state.lam

    @property
    def final_trace(self) -> list:
        return self.traces[-1] if self.traces else []

    @property
    def failing_certificate(self):
        if not self.excluded or not self.final_trace:
            return None
        return self.final_trace[-1].last_certificate


def solve_coupled(p0: float, params: ProblemParams, schedule: ScaleSchedule, p_m=(),
                  damping: float = 1.0, tol: float = 1e-12, max_outer: int = 50,
                  strict: bool = False) -> CoupledSolution:
    """Alternate the P-solver at frozen (lam, p_m) with ``q_update``.

    Stops when |d lam| + |d p_m|_1 < tol. Exclusion (failed certificate,
    residual growth, frequency collapse) is reported by flag; with
    ``strict`` it raises instead.
    """
    if not 1.0 <= p0 <= 2.0:
        raise ValueError("p0 must lie in [1, 2]")
    state = initial_qstate(p0, params, p_m)
    traces, history = [], []
    v = FourierField.zeros(params.d)

    def finish(excluded, reason, state=state):
        sol = CoupledSolution(state, base_field(state.p, params) + v, v, traces, history,
                              excluded, reason, params)
        if strict and excluded:
            exc = NoOuterConvergence if reason == NoOuterConvergence.code else ExcludedParameter
            raise exc(f"p0={p0} excluded: {reason}", solution=sol)
        return sol

    for it in range(max_outer):
        try:
            v, trace = run_p_solver(state.p, state.lam, schedule, params)
        except ResidualIncrease as exc:
            return finish(True, exc.code)
        traces.append(trace)
        if is_excluded(trace):
            return finish(True, trace[-1].reason)
        u = base_field(state.p, params) + v
        try:
            new = q_update(u, state, params, damping)
        except FrequencyCollapse as exc:
            return finish(True, exc.code)
        delta = abs(new.lam - state.lam) + float(np.sum(np.abs(np.subtract(new.p_m, state.p_m))))
        history.append((new.lam, new.p_m, delta))
        state = new
        if delta < tol:
            # re-solve P at the final frequency so u is consistent with lam
            try:
                v, trace = run_p_solver(state.p, state.lam, schedule, params)
            except ResidualIncrease as exc:
                return finish(True, exc.code, state)
            traces.append(trace)
            if is_excluded(trace):
                return finish(True, trace[-1].reason, state)
            state = QState(state.p0, state.p_m, state.lam, state.sigma, it + 1, True)
            return finish(False, None, state)
    return finish(True, NoOuterConvergence.code, state)


# ----------------------------------------------------------------------------
# audit

@dataclass(frozen=True)
class ResidualReport:
    sup: float
    l2: float
    weighted: float
    sup_on_S: float
    sup_off_S: float
    gevrey_tail: float
    tail_bound: float
    N_audit: int
    c: float

    @property
    def tail_ok(self) -> bool:
        return self.gevrey_tail < self.tail_bound

    def to_dict(self) -> dict:
        return dict(self.__dict__)


def verify_solution(u: FourierField, lam: float, params: ProblemParams, N_audit: int,
                    c: float = 0.04, max_radius: int = DEFAULT_MAX_RADIUS) -> ResidualReport:
    """Full equation residual at every site with |xi|_1 <= N_audit, S included."""
    F = full_residual(u, lam, params, max_radius)
    R = max(F.radius, N_audit)
    F = F.resized(R)
    l1 = l1_grid(params.d, R)
    ball = l1 <= N_audit
    onS = site_mask(params.d, R, resonant_set(params))
    vals = np.abs(F.coeffs)
    weights = np.exp(l1.astype(float) ** c)
    U = u.resized(max(u.radius, R)) if u.radius < R else u
    Ul1 = l1_grid(params.d, U.radius)
    Uoff = ~site_mask(params.d, U.radius, resonant_set(params))
    tail = float(np.sum(np.abs(U.coeffs[Uoff]) * np.exp(Ul1[Uoff].astype(float) ** c)))
    return ResidualReport(
        sup=float(vals[ball].max(initial=0.0)),
        l2=float(np.sqrt(np.sum(vals[ball] ** 2))),
        weighted=float(np.sum(vals[ball] * weights[ball])),
        sup_on_S=float(vals[ball & onS].max(initial=0.0)),
        sup_off_S=float(vals[ball & ~onS].max(initial=0.0)),
        gevrey_tail=tail,
        tail_bound=params.eps ** 0.125,
        N_audit=N_audit,
        c=c,
    )


def solution_bundle(sol: CoupledSolution, report: ResidualReport | None = None) -> dict:
    return {
        "params": sol.params.to_dict() if sol.params is not None else None,
        "lambda": sol.state.lam,
        "sigma": sol.state.sigma,
        "p0": sol.state.p0,
        "p_m": list(sol.state.p_m),
        "modes": [list(m) for m in resonant_modes(sol.params)] if sol.params is not None else None,
        "excluded": sol.excluded,
        "reason": sol.reason,
        "outer_iterations": sol.state.iteration,
        "field": sol.u.to_json_dict(),
        "residual_report": report.to_dict() if report is not None else None,
    }


def export_solution_bundle(path, sol: CoupledSolution, report: ResidualReport | None = None,
                           config_sha: str | None = None) -> None:
    write_json(path, solution_bundle(sol, report), config_sha)
