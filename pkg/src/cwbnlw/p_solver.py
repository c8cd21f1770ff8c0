"""Multiscale Newton iteration on the non-resonant (P) equations.

For fixed amplitudes p and frequency lam, find v supported off S with
Gamma_P F_lam(u0 + v) = 0, where

    F_lam(u)^(m, n) = (-(n lam)^2 + |m|^2 + rho) u(m, n) + eps^2 <m>^alpha (u^3)^(m, n).

Step j inverts the linearization restricted to |xi|_1 < N_{j+1} and only
proceeds when that inverse passes its certificate.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, replace

import numpy as np

from .errors import CertificateFailed, ResidualIncrease
from .lattice import (DEFAULT_MAX_RADIUS, FourierField, ProblemParams, apply_fractional,
                      ball_mask, l1_grid, pointwise_cube, project_P, resonant_modes,
                      resonant_set, symbol_grid)
from .operator import InverseCertificate, assemble, invert_with_certificate
from .outputs import write_csv


@dataclass(frozen=True)
class ScaleSchedule:
    M: int = 4
    c: float = 0.04
    C1: float = 3.0
    C2: float = 2.5
    j0: int = 1
    j_max: int = 6
    n_cap: int | None = 16
    residual_floor: float = 1e-13
    tail_slack: float = 10.0
    bound_factor: float = 1.0
    max_radius: int = DEFAULT_MAX_RADIUS
    enforce: bool = True

    def __post_init__(self):
        if self.M < 2:
            raise ValueError("M must be >= 2")
        if not 0 <= self.j0 <= self.j_max:
            raise ValueError("need 0 <= j0 <= j_max")
        if self.n_cap is not None and self.n_cap < 2:
            raise ValueError("n_cap must be >= 2")
        if self.enforce:
            for msg in self.violations():
                raise ValueError(msg)

    @property
    def c_limit(self) -> float:
        return math.log(17 / 16) / math.log(self.M)

    def violations(self) -> list:
        out = []
        if not 0 < self.c < self.c_limit:
            out.append(f"c={self.c} must lie in (0, log(17/16)/log M = {self.c_limit:.6g})")
        if not self.C1 > self.C2 > 2:
            out.append(f"need C1 > C2 > 2, got C1={self.C1}, C2={self.C2}")
        return out

    def N(self, j: int) -> int:
        n = self.M ** j
        return n if self.n_cap is None else min(n, self.n_cap)

    def mesh_size(self, j: int) -> float:
        """Parameter-box side exp(-(log N_j)^C1)."""
        return math.exp(-math.log(self.N(j)) ** self.C1)

    def residual_target(self, j: int) -> float:
        return math.exp(-2.0 * float(self.M ** j) ** self.c)


@dataclass(frozen=True, eq=False)
class NewtonState:
    j: int
    v: FourierField
    residual_norm: float
    residual_field: FourierField
    certificate_history: tuple = ()
    accepted: bool = True
    lam: float = float("nan")
    p: tuple = ()
    w: FourierField | None = None
    N: int | None = None
    gevrey_sup: float = 0.0
    reason: str | None = None
    stalled: bool = False

    @property
    def last_certificate(self) -> InverseCertificate | None:
        return self.certificate_history[-1] if self.certificate_history else None

    @property
    def support_size(self) -> int:
        return int(np.count_nonzero(self.v.coeffs))


# ----------------------------------------------------------------------------
# fields and residuals

def amplitude_vector(p0: float, p_m=(), params: ProblemParams | None = None) -> tuple:
    """(p0, p_m...) ordered like ``resonant_modes``; missing p_m are zero."""
    p_m = tuple(float(x) for x in p_m)
    if params is not None:
        b = len(resonant_modes(params))
        if len(p_m) > b - 1:
            raise ValueError(f"expected at most {b - 1} secondary amplitudes")
        p_m = p_m + (0.0,) * (b - 1 - len(p_m))
    return (float(p0),) + p_m


def base_field(p, params: ProblemParams) -> FourierField:
    """u0 = sum_k p_k cos(m_k . x + theta) over the modes with |m| = |m0|."""
    modes = resonant_modes(params)
    p = tuple(p) + (0.0,) * (len(modes) - len(p))
    if len(p) != len(modes):
        raise ValueError(f"expected {len(modes)} amplitudes")
    items = {(*m, 1): 0.5 * pk for m, pk in zip(modes, p)}
    return FourierField.from_items(params.d, items, radius=max(1, max(abs(k) for k in params.m0)))


def full_residual(u: FourierField, lam: float, params: ProblemParams,
                  max_radius: int = DEFAULT_MAX_RADIUS) -> FourierField:
    """F_lam(u) on every site of the lattice (resonant ones included)."""
    cube = pointwise_cube(u, max_radius=max_radius)
    R = cube.radius
    lin = u.resized(R).coeffs * symbol_grid(params.d, R, lam, params.rho)
    nl = apply_fractional(cube, params.alpha).coeffs
    out = lin + params.eps ** 2 * nl
    out = 0.5 * (out + np.flip(out))
    return FourierField(params.d, out)


def evaluate_G(p, lam: float, v: FourierField, params: ProblemParams,
               max_radius: int = DEFAULT_MAX_RADIUS) -> FourierField:
    """Gamma_P F_lam(u0 + v)."""
    u = base_field(p, params) + v
    return project_P(full_residual(u, lam, params, max_radius), resonant_set(params))


def _gevrey_sup(f: FourierField, c: float) -> float:
    R = f.radius
    return float(np.max(np.abs(f.coeffs) * np.exp(l1_grid(f.d, R).astype(float) ** c), initial=0.0))


def initial_state(p, lam: float, params: ProblemParams, schedule: ScaleSchedule,
                  v: FourierField | None = None) -> NewtonState:
    v = FourierField.zeros(params.d) if v is None else v
    G = evaluate_G(p, lam, v, params, schedule.max_radius)
    u = base_field(p, params) + v
    return NewtonState(schedule.j0, v, G.norm(), G, (), True, float(lam), tuple(p),
                       gevrey_sup=_gevrey_sup(u, schedule.c))


def newton_step(state: NewtonState, lam: float, p, schedule: ScaleSchedule,
                params: ProblemParams) -> NewtonState:
    """v_{j+1} = v_j - T_{N_{j+1}}^{-1} G(v_j), with T^{-1} = T~^{-1} Lambda^{-1}."""
    if not state.accepted:
        raise CertificateFailed("state was not accepted; no further scales are attempted")
    p = tuple(p)
    N = schedule.N(state.j + 1)
    if state.residual_norm == 0.0:
        return replace(state, j=state.j + 1, w=FourierField.zeros(params.d), N=N, lam=lam, p=p)
    u = base_field(p, params) + state.v
    op = assemble(u, lam, params, N, "T_tilde", max_radius=schedule.max_radius)
    Minv, cert = invert_with_certificate(op, schedule.C2, schedule.c, schedule.bound_factor)
    history = state.certificate_history + (cert,)
    if not cert.passed:
        raise CertificateFailed(
            f"inverse certificate failed at N={N}: |T~^-1|={cert.l2_norm:.3g} "
            f"(bound {cert.l2_bound:.3g}), offdiag ratio {cert.worst_ratio:.3g}",
            certificate=cert, history=history, j=state.j)
    G_vals = op.basis.gather(state.residual_field)
    w_vals = -(Minv @ (G_vals / op.weights))
    w = op.basis.scatter(w_vals, radius=N)
    w = FourierField(params.d, 0.5 * (w.coeffs + np.flip(w.coeffs)))
    v_new = state.v + w
    G_new = evaluate_G(p, lam, v_new, params, schedule.max_radius)
    r_new = G_new.norm()
    capped = schedule.N(state.j) == N
    # at the cap the system is fixed; growth below this is rounding noise
    noise = 1e-14 * max(1.0, (base_field(p, params) + v_new).norm())
    if r_new > state.residual_norm and r_new > schedule.residual_floor:
        if not (capped and r_new < noise):
            raise ResidualIncrease(
                f"residual grew from {state.residual_norm:.3g} to {r_new:.3g} at N={N}",
                old=state.residual_norm, new=r_new, history=history, j=state.j)
    stalled = capped and r_new > schedule.residual_floor and r_new >= state.residual_norm * (1 - 1e-6)
    return NewtonState(state.j + 1, v_new, r_new, G_new, history, True, float(lam), p, w, N,
                       _gevrey_sup(base_field(p, params) + v_new, schedule.c), None, stalled)


def run_p_solver(p, lam: float, schedule: ScaleSchedule, params: ProblemParams,
                 v0: FourierField | None = None):
    """Iterate newton_step from v0 (default 0) until j_max, the residual floor,
    or stagnation at the truncation cap.

    Returns (v, trace). A failed certificate ends the run with a final state
    whose ``accepted`` is False and whose ``reason`` names the failure.
    """
    state = initial_state(p, lam, params, schedule, v0)
    trace = [state]
    while state.j < schedule.j_max and state.residual_norm > schedule.residual_floor:
        try:
            state = newton_step(state, lam, p, schedule, params)
        except CertificateFailed as exc:
            failed = replace(state, accepted=False, reason=exc.code,
                             certificate_history=exc.info.get("history", state.certificate_history))
            trace.append(failed)
            return state.v, trace
        trace.append(state)
        if state.stalled:
            break
    return state.v, trace


def is_excluded(trace) -> bool:
    return not trace[-1].accepted


# ----------------------------------------------------------------------------
# audits

def apply_T_full(w: FourierField, u: FourierField, lam: float, params: ProblemParams,
                 max_radius: int = DEFAULT_MAX_RADIUS) -> FourierField:
    """R_P (D + eps^2 Lambda S_{3u^2}) R_P w on the whole lattice."""
    from .lattice import convolve
    S = resonant_set(params)
    w = project_P(w, S)
    phi = 3.0 * convolve(u, u, max_radius=max_radius)
    conv = convolve(phi, w, max_radius=max_radius)
    R = conv.radius
    lin = w.resized(R).coeffs * symbol_grid(params.d, R, lam, params.rho)
    out = lin + params.eps ** 2 * apply_fractional(conv, params.alpha).coeffs
    return project_P(FourierField(params.d, out), S)


@dataclass(frozen=True)
class TailReport:
    total: float
    piece_inner: float
    piece_outer: float
    bound: float
    split_error: float

    @property
    def passed(self) -> bool:
        return bool(self.piece_inner < self.bound and self.piece_outer < self.bound)


def tail_split_check(state: NewtonState, schedule: ScaleSchedule, params: ProblemParams) -> TailReport:
    """||(T - T_N) w|| and its split (I-P_N) T P_{N/2} w + (I-P_N) T (I-P_{N/2}) w.

    The bound is tail_slack * (1/3) exp(-2 (M^{j})^c) where j is the index
    reached by the step.
    """
    if state.w is None or state.N is None:
        raise ValueError("tail_split_check needs a state produced by newton_step")
    N = state.N
    bound = schedule.tail_slack * math.exp(-2.0 * float(schedule.M ** state.j) ** schedule.c) / 3.0
    w = state.w
    if not np.any(w.coeffs):
        return TailReport(0.0, 0.0, 0.0, bound, 0.0)
    u = base_field(state.p, params) + (state.v - w)
    half = w.masked(l1_grid(w.d, w.radius) < N / 2)
    rest = w - half

    def outside(f):
        return f.masked(~ball_mask(f, N)).norm() if np.any(f.coeffs) else 0.0

    Tw = apply_T_full(w, u, state.lam, params, schedule.max_radius)
    T_half = apply_T_full(half, u, state.lam, params, schedule.max_radius)
    T_rest = apply_T_full(rest, u, state.lam, params, schedule.max_radius) if np.any(rest.coeffs) else None
    total = outside(Tw)
    p1 = outside(T_half)
    p2 = outside(T_rest) if T_rest is not None else 0.0
    split_err = (Tw - T_half - T_rest).masked(~ball_mask(Tw, N)).norm() if T_rest is not None \
        else (Tw - T_half).masked(~ball_mask(Tw, N)).norm()
    return TailReport(total, p1, p2, bound, split_err)


def derivative_audit(p, lam: float, schedule: ScaleSchedule, params: ProblemParams,
                     h: float = 1e-6) -> dict:
    """Central differences of the final correction and residual in lam and p0.

    Recorded for comparison with the shape of the derivative bounds; not gating.
    """
    p = tuple(p)
    out = {}

    def solve(pp, ll):
        v, trace = run_p_solver(pp, ll, schedule, params)
        return v, trace[-1].residual_field, not is_excluded(trace)

    for name, plus, minus in (
        ("lambda", (p, lam + h), (p, lam - h)),
        ("p0", ((p[0] + h,) + p[1:], lam), ((p[0] - h,) + p[1:], lam)),
    ):
        vp, Gp, okp = solve(*plus)
        vm, Gm, okm = solve(*minus)
        out[f"dv_d{name}"] = (vp - vm).norm() / (2 * h)
        out[f"dG_d{name}"] = (Gp - Gm).norm() / (2 * h)
        out[f"accepted_{name}"] = okp and okm
    return out


def export_trace_csv(path, trace, config_sha: str | None = None) -> None:
    rows = []
    for st in trace:
        cert = st.last_certificate
        rows.append((st.j, st.N if st.N is not None else "", st.residual_norm,
                     cert.l2_norm if cert is not None else "",
                     cert.passed if cert is not None else "", st.support_size))
    write_csv(path, ("j", "N_j", "residual_norm", "l2_norm_of_inverse", "certificate_pass",
                     "support_size"), rows, config_sha)
