"""Command-line harness: ``cwbnlw <mode> --config FILE [--seed N] [--out DIR] [--replay FILE]``.

Exit codes: 0 when every gating check of the mode passes, 1 on a failed
check or runtime error, 2 on an invalid config.
"""

from __future__ import annotations

import argparse
import dataclasses
import math
import os
import sys
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass, field

import numpy as np

from . import __version__
from .arithmetic import (GdcSpec, check_gdc_poly, check_rho_condition, excluded_measure_estimate,
                         export_measure_csv, sublevel_measure_bruteforce)
from .config import MODES, RunConfig, describe_error, load_config
from .coupling import CouplingInstance, run_harness, verify
from .errors import CWBError, ConfigError
from .lattice import ProblemParams
from .operator import (assemble, invert, invert_with_certificate, neumann_invert,
                       perturbative_regime_value)
from .outputs import write_csv, write_json
from .p_solver import export_trace_csv, tail_split_check
from .q_solver import export_solution_bundle, solve_coupled, verify_solution
from .separation import (cluster_decompose, cluster_distance, cluster_eigen_variation,
                         cluster_neighborhood, explicit_null_chain, export_chain_csv,
                         export_cluster_report, far_clusters, max_chain_length, singular_sites)


@dataclass
class ModeResult:
    checks: dict = field(default_factory=dict)
    artifacts: list = field(default_factory=list)
    summary: dict = field(default_factory=dict)

    @property
    def ok(self) -> bool:
        return all(bool(v) for v in self.checks.values())


def _out(cfg: RunConfig, name: str) -> str:
    os.makedirs(cfg.out, exist_ok=True)
    return os.path.join(cfg.out, name)


def _header(cfg: RunConfig) -> dict:
    return {"mode": cfg.mode, "seed": cfg.seed, "warnings": list(cfg.warnings)}


# ----------------------------------------------------------------------------
# solve / audit

def _solve(cfg: RunConfig, params: ProblemParams | None = None):
    params = params or cfg.problem
    sv = cfg.solve
    sol = solve_coupled(sv.p0, params, cfg.schedule, p_m=sv.p_m, damping=sv.damping,
                        tol=sv.tol, max_outer=sv.max_outer)
    report = None if sol.excluded else verify_solution(sol.u, sol.lam, params, sv.N_audit, sv.gevrey_c)
    return sol, report


def run_solve(cfg: RunConfig) -> ModeResult:
    return _run_solve(cfg)[0]


def _run_solve(cfg: RunConfig):
    res = ModeResult()
    sol, report = _solve(cfg)
    path = _out(cfg, "solution.json")
    export_solution_bundle(path, sol, report, cfg.source_hash)
    res.artifacts.append(path)
    if sol.final_trace:
        tpath = _out(cfg, "trace.csv")
        export_trace_csv(tpath, sol.final_trace, cfg.source_hash)
        res.artifacts.append(tpath)
    res.checks["included"] = not sol.excluded
    if report is not None:
        res.checks["residual_sup"] = report.sup < cfg.tolerances.residual_sup
        res.checks["gevrey_tail"] = report.tail_ok
    res.summary = {"lambda": sol.lam, "excluded": sol.excluded, "reason": sol.reason,
                   "residual": report.to_dict() if report else None}
    return res, sol


def contraction_ok(trace, power: float) -> list:
    """Steps after the first satisfy r_{j+1} <= r_j^power (or hit the floor)."""
    rs = [st.residual_norm for st in trace if st.accepted]
    flags = []
    for k in range(2, len(rs)):
        flags.append(bool(rs[k] <= rs[k - 1] ** power))
    return flags


def certificate_sweep(cfg: RunConfig, sol) -> dict:
    """Certificate and Neumann/dense agreement for the truncated T~ at ``certificate_N``."""
    params, N = cfg.problem, cfg.solve.certificate_N
    op = assemble(sol.u, sol.lam, params, N, "T_tilde", max_radius=cfg.schedule.max_radius)
    Minv, cert = invert_with_certificate(op, cfg.schedule.C2, cfg.schedule.c, cfg.schedule.bound_factor)
    out = {"N": N, "regime_value": perturbative_regime_value(params, N, 5), "certificate_pass": cert.passed,
           "l2_norm": cert.l2_norm, "l2_bound": cert.l2_bound}
    try:
        S, rep = neumann_invert(op, cfg.tolerances.neumann_gamma, c=cfg.schedule.c, slack=cfg.tolerances.slack)
        dense = invert(op.entries)
        out["neumann_pass"] = rep.passed
        out["neumann_dense_diff"] = float(np.max(np.abs(S - dense)))
    except CWBError as exc:
        out["neumann_pass"] = False
        out["neumann_error"] = exc.code
    return out


def run_audit(cfg: RunConfig) -> ModeResult:
    res, sol = _run_solve(cfg)
    if sol.excluded:
        return res
    trace = sol.final_trace
    flags = contraction_ok(trace, cfg.tolerances.contraction_power)
    res.checks["contraction"] = all(flags)
    tails = [tail_split_check(st, cfg.schedule, cfg.problem) for st in trace[1:] if st.accepted]
    res.checks["tail_split"] = all(t.passed for t in tails)
    certs = certificate_sweep(cfg, sol)
    if certs["regime_value"] < 1:
        res.checks["certificate_in_regime"] = certs["certificate_pass"]
        res.checks["neumann_agreement"] = certs.get("neumann_dense_diff", math.inf) < cfg.tolerances.inverse_agreement
    payload = dict(_header(cfg), contraction=flags,
                   tails=[dataclasses.asdict(t) for t in tails], certificates=certs,
                   checks=res.checks)
    path = _out(cfg, "audit.json")
    write_json(path, payload, cfg.source_hash)
    res.artifacts.append(path)
    return res


# ----------------------------------------------------------------------------
# scan

def _scan_one(args):
    p0, params, schedule, sv = args
    sol = solve_coupled(p0, params, schedule, damping=sv.damping, tol=sv.tol, max_outer=sv.max_outer)
    cert = sol.failing_certificate
    return {
        "eps": params.eps, "p0": p0, "included": not sol.excluded, "reason": sol.reason or "",
        "lambda": sol.lam,
        "failing_l2_norm": cert.l2_norm if cert is not None else None,
        "failing_l2_bound": cert.l2_bound if cert is not None else None,
    }


def scan_grid(cfg: RunConfig) -> np.ndarray:
    sc = cfg.scan
    if sc.random:
        return np.sort(np.random.default_rng(cfg.seed).uniform(sc.p0_min, sc.p0_max, sc.samples))
    return np.linspace(sc.p0_min, sc.p0_max, sc.samples)


def scan_p0(cfg: RunConfig, grid=None, eps_grid=None) -> dict:
    """Solve at every (eps, p0); per-sample failures are recorded, never raised."""
    grid = scan_grid(cfg) if grid is None else np.asarray(grid, dtype=float)
    eps_grid = cfg.scan.eps_grid if eps_grid is None else eps_grid
    jobs = [(float(p0), cfg.problem.replace(eps=float(e)), cfg.schedule, cfg.solve)
            for e in eps_grid for p0 in grid]
    if cfg.workers > 1:
        with ProcessPoolExecutor(cfg.workers) as pool:
            rows = list(pool.map(_scan_one, jobs))
    else:
        rows = [_scan_one(j) for j in jobs]
    fractions = []
    for e in eps_grid:
        sub = [r for r in rows if r["eps"] == float(e)]
        fractions.append(sum(not r["included"] for r in sub) / len(sub))
    order = np.argsort(-np.asarray(eps_grid, dtype=float))
    ordered = [fractions[i] for i in order]
    trend = all(b <= a for a, b in zip(ordered, ordered[1:]))
    return {"rows": rows, "eps_grid": [float(e) for e in eps_grid], "excluded_fraction": fractions,
            "nonincreasing": trend}


def run_scan(cfg: RunConfig) -> ModeResult:
    res = ModeResult()
    rep = scan_p0(cfg)
    cols = ("eps", "p0", "included", "reason", "lambda", "failing_l2_norm", "failing_l2_bound")
    path = _out(cfg, "scan.csv")
    write_csv(path, cols, [tuple(r[c] for c in cols) for r in rep["rows"]], cfg.source_hash)
    spath = _out(cfg, "scan_summary.json")
    write_json(spath, dict(_header(cfg), eps_grid=rep["eps_grid"], excluded_fraction=rep["excluded_fraction"],
                           nonincreasing=rep["nonincreasing"], samples=cfg.scan.samples), cfg.source_hash)
    res.artifacts += [path, spath]
    res.checks["nonincreasing"] = rep["nonincreasing"]
    res.checks["exclusions_explained"] = all(r["included"] or r["reason"] for r in rep["rows"])
    res.summary = {"excluded_fraction": rep["excluded_fraction"]}
    return res


# ----------------------------------------------------------------------------
# separation

def gdc_lambda_samples(cfg: RunConfig) -> tuple:
    """Uniform lambda samples passing the polynomial condition; also the rejected ones."""
    sep = cfg.separation
    spec = GdcSpec(1, sep.gdc_degree, sep.gdc_gamma, sep.gdc_tau, sep.gdc_coeff_bound)
    rng = np.random.default_rng(cfg.seed)
    kept, rejected = [], []
    while len(kept) < sep.lambda_samples and len(rejected) < 100 * sep.lambda_samples:
        lam = float(rng.uniform(sep.lambda_min, sep.lambda_max))
        ok, _, _ = check_gdc_poly([lam], spec)
        (kept if ok else rejected).append(lam)
    return tuple(kept), tuple(rejected)


def chain_study(cfg: RunConfig, lambdas) -> dict:
    sep = cfg.separation
    B, Bp = sep.chain_B, sep.chain_B_prime
    results = [max_chain_length(lam, B, Bp, sep.N, sep.d, sep.search_budget) for lam in lambdas]
    control = max_chain_length(1.0, B, Bp, sep.N, sep.d, sep.search_budget)
    null_chain = explicit_null_chain(sep.N, sep.d)
    # a result flagged inexact is only a lower bound; the capacity bound still caps the true maximum
    worst = max((r.k_max if r.exact else r.upper_bound) for r in results) if results else 0
    fitted = math.log(max(worst, 1)) / math.log(B * Bp)
    return {"results": results, "control": control, "null_chain_length": len(null_chain),
            "worst": worst, "fitted_exponent": fitted}


def run_separation(cfg: RunConfig) -> ModeResult:
    res = ModeResult()
    sep, params = cfg.separation, cfg.problem
    sol, _ = _solve(cfg)
    lam = sep.lam if sep.lam is not None else sol.lam
    B = sep.B if sep.B is not None else 2.0 * sep.N ** params.alpha
    sites = singular_sites(lam, sep.N, B, params.d)
    clusters = cluster_decompose(sites, B)
    union = sum(c.size for c in clusters)
    res.checks["partition"] = union == len(sites)
    res.checks["separation"] = separation_sound(clusters, B)
    far = far_clusters(clusters, sep.N)[: cfg.solve.far_cluster_limit]
    rels, mins = [], []
    for c in far:
        nb = cluster_neighborhood(c, sep.N ** (params.alpha / 2), params)
        ev = cluster_eigen_variation(sol.u, params, nb, lam)
        if not ev.degenerate:
            rels.append(ev.rel_agreement)
        mins.append(ev.min_abs_derivative)
    deriv_bound = 0.5 * 2 * lam * sep.N ** (1 / 6 - params.alpha)
    if far:
        res.checks["eigen_agreement"] = max(rels, default=0.0) < 1e-6
        res.checks["eigen_derivative"] = min(mins) >= deriv_bound
    cpath = _out(cfg, "clusters.json")
    export_cluster_report(cpath, clusters, dict(_header(cfg), lam=lam, N=sep.N, B=B, sites=len(sites),
                                                far_clusters=len(far), eigen_rel_agreement=max(rels, default=None),
                                                eigen_min_derivative=min(mins, default=None),
                                                eigen_derivative_bound=deriv_bound), cfg.source_hash)
    lambdas, rejected = gdc_lambda_samples(cfg)
    study = chain_study(cfg, lambdas)
    hpath = _out(cfg, "chains.csv")
    export_chain_csv(hpath, study["results"] + [study["control"]], cfg.source_hash)
    spath = _out(cfg, "chains.json")
    cap = None
    if sep.chain_exponent is not None:
        cap = (sep.chain_B * sep.chain_B_prime) ** sep.chain_exponent
        res.checks["chain_bound"] = study["worst"] <= cap
        res.checks["control_violates"] = max(study["control"].k_max, study["null_chain_length"]) > cap
    write_json(spath, dict(_header(cfg), lambdas=list(lambdas), rejected=len(rejected),
                           k_max=[r.k_max for r in study["results"]], exact=[r.exact for r in study["results"]],
                           upper_bound=[r.upper_bound for r in study["results"]],
                           control_k_max=study["control"].k_max, null_chain_length=study["null_chain_length"],
                           fitted_exponent=study["fitted_exponent"], cap=cap), cfg.source_hash)
    res.artifacts += [cpath, hpath, spath]
    return res


def separation_sound(clusters, gap: float) -> bool:
    """Pairwise l1 distance between distinct clusters is at least ``gap``."""
    for i, a in enumerate(clusters):
        for b in clusters[i + 1:]:
            if cluster_distance(a, b) < gap:
                return False
    return True


# ----------------------------------------------------------------------------
# diophantine

def run_diophantine(cfg: RunConfig) -> ModeResult:
    res = ModeResult()
    dio, params = cfg.diophantine, cfg.problem
    rho_ok, rho_w = check_rho_condition(params.rho, dio.rho_gamma, dio.n_max, params.d)
    lam_spec = GdcSpec(1, dio.lambda_degree, dio.lambda_gamma, dio.lambda_tau, dio.lambda_coeff_bound)
    lam_ok, lam_w, _ = check_gdc_poly([math.sqrt(params.lambda0_sq)], lam_spec)
    spec = GdcSpec(dio.b_tilde, dio.degree, dio.gamma, dio.tau, dio.coeff_bound)
    est = excluded_measure_estimate(spec, dio.interval, dio.samples, dio.gammas, cfg.seed)
    mpath = _out(cfg, "measure.csv")
    export_measure_csv(mpath, spec, est, cfg.source_hash)
    rows = []
    for k in dio.sublevel_powers:
        P = [0.0] * k + [1.0]
        for e in dio.sublevel_eps:
            got = sublevel_measure_bruteforce(P, e, (-1.0, 1.0))
            rows.append((k, e, got, 2 * e ** (1 / k), abs(got - 2 * e ** (1 / k))))
    spath = _out(cfg, "sublevel.csv")
    write_csv(spath, ("k", "epsilon", "measure", "closed_form", "abs_error"), rows, cfg.source_hash)
    res.checks["rho_condition"] = rho_ok
    res.checks["measure_slope"] = est.slope >= spec.exponent - cfg.tolerances.slope_margin
    res.checks["sublevel_closed_form"] = all(r[-1] < 1e-6 for r in rows)
    jpath = _out(cfg, "diophantine.json")
    write_json(jpath, dict(_header(cfg), rho_pass=rho_ok, rho_witness=list(rho_w),
                           lambda0_gdc_pass=lam_ok, lambda0_witness=dataclasses.asdict(lam_w),
                           slope=est.slope, envelope_exponent=spec.exponent, fractions=list(est.fractions),
                           checks=res.checks), cfg.source_hash)
    res.artifacts += [mpath, spath, jpath]
    return res


# ----------------------------------------------------------------------------
# coupling

def coupling_kwargs(cfg: RunConfig, lemma: str, d: int = 1) -> dict:
    cp = cfg.coupling
    if lemma == "C1":
        return dict(K=cp.c1_K, B=cp.c1_B, c=cp.c1_c, C_prime=cp.c1_C_prime, C=cp.c1_C, side=cp.c1_side, d=cp.c1_d)
    return dict(M=cp.c2_M, eps1=cp.c2_eps1, eps2=cp.c2_eps2, eps3=cp.c2_eps3, eps=cp.c2_eps, rho=cp.c2_rho,
                c=cp.c2_c, C=cp.c2_C, n_clusters=cp.c2_clusters, d=d)


def run_coupling(cfg: RunConfig, replay: str | None = None) -> ModeResult:
    res = ModeResult()
    if replay is not None:
        inst = CouplingInstance.load(replay)
        rep = verify(inst)
        res.checks["hypotheses"] = rep.hypotheses_ok
        res.checks["conclusions"] = rep.conclusions_ok
        path = _out(cfg, "replay_report.json")
        write_json(path, dict(_header(cfg), replay=os.path.basename(replay), **dataclasses.asdict(rep)),
                   cfg.source_hash)
        res.artifacts.append(path)
        return res
    lemmas = ("C1", "C2") if cfg.coupling.lemma == "both" else (cfg.coupling.lemma,)
    seeds = range(cfg.seed, cfg.seed + cfg.coupling.instances)
    summary = {}
    for lemma in lemmas:
        dims = cfg.coupling.c2_dims if lemma == "C2" else (cfg.coupling.c1_d,)
        for d in dims:
            key = f"{lemma}_d{d}"
            h = run_harness(lemma, seeds, **coupling_kwargs(cfg, lemma, d))
            summary[key] = {"generated": h.generated, "generation_failures": h.generation_failures,
                            "hypothesis_failures": h.hypothesis_failures,
                            "violations": [s for s, _, _ in h.violations]}
            for s, inst, _ in h.violations:
                p = _out(cfg, f"violation_{key}_seed{s}.json")
                inst.dump(p)
                res.artifacts.append(p)
            res.checks[f"{key}_no_violation"] = h.ok
            res.checks[f"{key}_generated"] = h.generated > h.hypothesis_failures
    path = _out(cfg, "coupling_report.json")
    write_json(path, dict(_header(cfg), lemmas=summary), cfg.source_hash)
    res.artifacts.append(path)
    return res


# ----------------------------------------------------------------------------

RUNNERS = {
    "solve": run_solve,
    "scan": run_scan,
    "separation": run_separation,
    "diophantine": run_diophantine,
    "audit": run_audit,
}


def run(cfg: RunConfig, replay: str | None = None) -> tuple:
    """Dispatch on ``cfg.mode``; returns (exit code, ModeResult)."""
    try:
        if cfg.mode == "coupling":
            res = run_coupling(cfg, replay)
        else:
            res = RUNNERS[cfg.mode](cfg)
    except CWBError as exc:
        print(f"{cfg.mode}: {exc.code}: {exc}", file=sys.stderr)
        return 1, None
    return (0 if res.ok else 1), res


def build_parser() -> argparse.ArgumentParser:
    ap = argparse.ArgumentParser(prog="cwbnlw", description="Periodic solutions of the nonlinear wave equation "
                                 "by a multiscale Newton scheme, with its audits.")
    ap.add_argument("mode", choices=MODES)
    ap.add_argument("--config", required=True)
    ap.add_argument("--seed", type=int)
    ap.add_argument("--out")
    ap.add_argument("--replay")
    ap.add_argument("--workers", type=int)
    ap.add_argument("--version", action="version", version=f"cwbnlw {__version__}")
    return ap


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    text = None
    try:
        with open(args.config) as fh:
            text = fh.read()
        cfg = load_config(args.config, args.mode)
        changes = {k: getattr(args, k) for k in ("seed", "out", "workers") if getattr(args, k) is not None}
        if changes.get("workers", 1) < 1:
            raise ConfigError("--workers must be >= 1", field="run.workers")
        cfg = dataclasses.replace(cfg, **changes)
    except OSError as exc:
        print(f"config error: cannot read {args.config}: {exc}", file=sys.stderr)
        return 2
    except ConfigError as exc:
        print(describe_error(exc, text), file=sys.stderr)
        return 2
    for w in cfg.warnings:
        print(f"warning: {w}", file=sys.stderr)
    code, res = run(cfg, args.replay)
    if res is not None:
        for name, ok in res.checks.items():
            print(f"{'PASS' if ok else 'FAIL'} {name}")
        for a in res.artifacts:
            print(f"wrote {a}")
    return code


if __name__ == "__main__":  # pragma: no cover
    sys.exit(main())
