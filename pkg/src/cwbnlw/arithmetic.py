"""Diophantine conditions on rho and on the frequency, and empirical checks of
the polynomial sublevel-set measure bounds."""

from __future__ import annotations

import itertools
import math
from dataclasses import dataclass
from functools import lru_cache

import numpy as np
from numpy.polynomial import polynomial as npoly

from .outputs import write_csv


@dataclass(frozen=True)
class GdcSpec:
    """|P(x)| > gamma |a|_1^(-tau) for integer polynomials P of bounded degree
    in ``b_tilde`` variables with coefficient vector a, 0 < |a|_1 <= coeff_bound."""

    b_tilde: int
    degree: int
    gamma: float
    tau: float
    coeff_bound: int | None = None

    def __post_init__(self):
        if self.b_tilde < 1:
            raise ValueError("b_tilde must be >= 1")
        if self.degree < 1:
            raise ValueError("degree must be >= 1")
        if not self.gamma > 0:
            raise ValueError("gamma must be > 0")
        if not self.tau > 0:
            raise ValueError("tau must be > 0")
        if self.coeff_bound is not None and self.coeff_bound < 1:
            raise ValueError("coeff_bound must be >= 1")

    @property
    def exponent(self) -> float:
        """1/(b_tilde * degree), the measure-bound exponent."""
        return 1.0 / (self.b_tilde * self.degree)


def max_degree(d: int) -> int:
    return 10 * d


def check_rho_condition(rho: float, gamma: float, n_max: int, d: int = 1):
    """|n rho - k| > gamma |n|^(-2d) for 1 <= |n| <= n_max.

    Returns (pass, (n, k, |n rho - k| n^(2d))) with the minimizing witness.
    """
    if n_max < 1:
        raise ValueError("n_max must be >= 1")
    n = np.arange(1, n_max + 1, dtype=np.int64)
    x = n * float(rho)
    k = np.rint(x)
    score = np.abs(x - k) * n.astype(float) ** (2 * d)
    i = int(np.argmin(score))
    worst = (int(n[i]), int(k[i]), float(score[i]))
    return bool(score[i] > gamma), worst


# ----------------------------------------------------------------------------
# coefficient enumeration

@lru_cache(maxsize=32)
def _l1_vectors(dim: int, K: int) -> np.ndarray:
    """Integer vectors with 0 < |a|_1 <= K, first nonzero entry positive,
    sorted by |a|_1 then lexicographically."""
    # nonnegative vectors with sum <= K: stars and bars with a slack part
    cuts = np.array(list(itertools.combinations(range(K + dim), dim)), dtype=np.int64).reshape(-1, dim)
    base = np.diff(np.concatenate([np.full((len(cuts), 1), -1), cuts], axis=1), axis=1) - 1
    base = base[base.sum(axis=1) > 0]
    out = []
    for signs in itertools.product((1, -1), repeat=dim):
        out.append(base * np.array(signs, dtype=np.int64))
    allv = np.unique(np.concatenate(out), axis=0)
    first = allv[np.arange(len(allv)), np.argmax(allv != 0, axis=1)]
    allv = allv[first > 0]
    norms = np.abs(allv).sum(axis=1)
    order = np.lexsort(tuple(allv.T[::-1]) + (norms,))
    res = allv[order]
    res.setflags(write=False)
    return res


@lru_cache(maxsize=32)
def monomial_exponents(b_tilde: int, degree: int) -> np.ndarray:
    """Exponent tuples of total degree <= degree, graded order."""
    exps = [e for t in range(degree + 1)
            for e in itertools.product(range(t + 1), repeat=b_tilde) if sum(e) == t]
    arr = np.array(exps, dtype=np.int64).reshape(-1, b_tilde)
    arr.setflags(write=False)
    return arr


def monomial_values(x: np.ndarray, b_tilde: int, degree: int) -> np.ndarray:
    """(samples, n_monomials) matrix of x^e."""
    x = np.asarray(x, dtype=float).reshape(-1, b_tilde)
    exps = monomial_exponents(b_tilde, degree)
    return np.prod(x[:, None, :] ** exps[None, :, :], axis=2)


def coefficient_vectors(spec: GdcSpec, budget: int | None = None):
    """Returns (vectors, partial). Vectors are ordered by |a|_1, so a budget
    keeps the low-height polynomials."""
    if spec.coeff_bound is None:
        raise ValueError("coeff_bound must be set for exhaustive enumeration")
    dim = len(monomial_exponents(spec.b_tilde, spec.degree))
    A = _l1_vectors(dim, spec.coeff_bound)
    if budget is not None and len(A) > budget:
        return A[:budget], True
    return A, False


def gdc_scores(x: np.ndarray, spec: GdcSpec, budget: int | None = None, chunk: int = 2048):
    """Per sample: min over a of |P_a(x)| |a|_1^tau, and the minimizing index."""
    A, partial = coefficient_vectors(spec, budget)
    heights = np.abs(A).sum(axis=1).astype(float) ** spec.tau
    X = monomial_values(x, spec.b_tilde, spec.degree)
    scores = np.empty(len(X))
    arg = np.empty(len(X), dtype=np.int64)
    Af = A.T.astype(float)
    for s in range(0, len(X), chunk):
        vals = np.abs(X[s:s + chunk] @ Af) * heights
        arg[s:s + chunk] = np.argmin(vals, axis=1)
        scores[s:s + chunk] = vals[np.arange(len(vals)), arg[s:s + chunk]]
    return scores, A[arg], partial


@dataclass(frozen=True)
class GdcWitness:
    coeffs: tuple
    value: float
    height: int
    ratio: float  # |P(x)| / (gamma |a|_1^-tau); the condition holds iff ratio > 1


def check_gdc_poly(x, spec: GdcSpec, budget: int | None = None):
    """Exhaustive check over |a|_1 <= coeff_bound. Returns (pass, witness, partial)."""
    x = np.atleast_1d(np.asarray(x, dtype=float))
    if x.shape != (spec.b_tilde,):
        raise ValueError(f"x must have {spec.b_tilde} components")
    scores, arg, partial = gdc_scores(x[None, :], spec, budget)
    a = arg[0]
    value = float(monomial_values(x[None, :], spec.b_tilde, spec.degree)[0] @ a)
    h = int(np.abs(a).sum())
    witness = GdcWitness(tuple(int(k) for k in a), value, h, float(scores[0]) / spec.gamma)
    return bool(scores[0] > spec.gamma), witness, partial


def poly_eval(coeffs, x, b_tilde: int = 1, degree: int | None = None) -> float:
    """Evaluate sum_k a_k x^(e_k) with graded monomial order."""
    coeffs = np.asarray(coeffs, dtype=float)
    if b_tilde == 1:
        return float(npoly.polyval(float(np.atleast_1d(x)[0]), coeffs))
    degree = degree if degree is not None else _degree_for(len(coeffs), b_tilde)
    return float(monomial_values(np.atleast_1d(x)[None, :], b_tilde, degree)[0] @ coeffs)


def _degree_for(n_monomials: int, b_tilde: int) -> int:
    for deg in range(64):
        if len(monomial_exponents(b_tilde, deg)) == n_monomials:
            return deg
    raise ValueError("coefficient count does not match any degree")


# ----------------------------------------------------------------------------
# measure estimates

@dataclass(frozen=True)
class MeasureEstimate:
    gammas: tuple
    fractions: tuple
    envelope: tuple
    envelope_constant: float
    slope: float
    samples: int
    partial: bool


def excluded_fraction(scores: np.ndarray, gamma: float) -> float:
    """Share of samples violating |P| > gamma |a|^-tau for some a."""
    return float(np.mean(scores <= gamma))


def fit_log_slope(gammas, fractions) -> float:
    g = np.asarray(gammas, dtype=float)
    f = np.asarray(fractions, dtype=float)
    keep = (g > 0) & (f > 0)
    if keep.sum() < 2:
        return float("nan")
    return float(np.polyfit(np.log(g[keep]), np.log(f[keep]), 1)[0])


def sample_points(spec: GdcSpec, interval, samples: int, seed: int = 0, shards: int = 1) -> np.ndarray:
    """Uniform samples in interval^b_tilde; per-shard seeds, concatenated in shard order."""
    lo, hi = float(interval[0]), float(interval[1])
    seqs = np.random.SeedSequence(seed).spawn(shards)
    sizes = [samples // shards + (1 if i < samples % shards else 0) for i in range(shards)]
    parts = [np.random.default_rng(s).uniform(lo, hi, size=(n, spec.b_tilde)) for s, n in zip(seqs, sizes)]
    return np.concatenate(parts)


def excluded_measure_estimate(spec: GdcSpec, interval, samples: int, gammas=None, seed: int = 0,
                              budget: int | None = None, shards: int = 1) -> MeasureEstimate:
    """Monte Carlo share of ``interval`` failing the condition at each gamma.

    The excluded set is measured against the finite coefficient budget, so
    the result is a lower bound for the true excluded measure.
    """
    if samples < 1000:
        raise ValueError("samples must be >= 1000")
    gammas = (spec.gamma,) if gammas is None else tuple(float(g) for g in gammas)
    x = sample_points(spec, interval, samples, seed, shards)
    scores, _, partial = gdc_scores(x, spec, budget)
    fractions = tuple(excluded_fraction(scores, g) for g in gammas)
    e = spec.exponent
    ratios = [f / g ** e for g, f in zip(gammas, fractions) if g > 0]
    C = max(ratios) if ratios else 0.0
    env = tuple(C * g ** e if g > 0 else 0.0 for g in gammas)
    return MeasureEstimate(gammas, fractions, env, C, fit_log_slope(gammas, fractions), samples, partial)


def export_measure_csv(path, spec: GdcSpec, est: MeasureEstimate, config_sha: str | None = None) -> None:
    rows = [(g, spec.tau, spec.degree, spec.coeff_bound, est.samples, f, env)
            for g, f, env in zip(est.gammas, est.fractions, est.envelope)]
    write_csv(path, ("gamma", "tau", "degree", "coeff_bound", "samples", "excluded_fraction", "envelope"),
              rows, config_sha)


def sublevel_measure_bruteforce(P, epsilon: float, interval, tol: float = 1e-10) -> float:
    """mes{t in interval : |P(t)| < epsilon}, P given by ascending coefficients.

    Adaptive bisection with Taylor range bounds; undecided cells narrower
    than ``tol`` are classified by their midpoint.
    """
    P = np.trim_zeros(np.asarray(P, dtype=float), "b")
    if P.size == 0:
        raise ValueError("polynomial must be nonzero")
    derivs = [P]
    while derivs[-1].size > 1:
        derivs.append(npoly.polyder(derivs[-1]))
    fact = [math.factorial(k) for k in range(len(derivs))]
    a0, b0 = float(interval[0]), float(interval[1])
    total = 0.0
    stack = [(a0, b0)]
    while stack:
        a, b = stack.pop()
        mid, h = 0.5 * (a + b), 0.5 * (b - a)
        vals = [npoly.polyval(mid, dk) for dk in derivs]
        spread = sum(abs(vals[k]) / fact[k] * h ** k for k in range(1, len(vals)))
        centre = abs(vals[0])
        if centre - spread >= epsilon:
            continue
        if centre + spread < epsilon:
            total += b - a
            continue
        if b - a <= tol:
            if centre < epsilon:
                total += b - a
            continue
        stack.append((a, mid))
        stack.append((mid, b))
    return total
