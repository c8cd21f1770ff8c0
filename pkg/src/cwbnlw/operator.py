"""Truncated linearized operators T = R_P (D + eps^2 Lambda S_phi) R_P and the
symmetric variant T~ = R_P (D~ + eps^2 S_phi) R_P, their certified inverses and
the perturbative (Neumann series) inverse."""

from __future__ import annotations

import math
import struct
from dataclasses import dataclass, field

import numpy as np
import scipy.linalg

from .errors import OutsidePerturbativeRegime
from .lattice import (FourierField, ProblemParams, linear_symbol, pointwise_power,
                      resonant_set, DEFAULT_MAX_RADIUS)

KINDS = ("T", "T_tilde")
DEFAULT_COND_CAP = 1e14
DEFAULT_SLACK = 0.9


@dataclass(frozen=True, eq=False)
class SiteBasis:
    sites: np.ndarray  # (K, d+1) int
    index_of: dict = field(repr=False)

    @classmethod
    def from_sites(cls, sites, exclude=()) -> "SiteBasis":
        excl = {tuple(int(k) for k in s) for s in exclude}
        keys = sorted({tuple(int(k) for k in s) for s in sites} - excl)
        arr = np.array(keys, dtype=np.int64).reshape(len(keys), -1)
        arr.setflags(write=False)
        return cls(arr, {k: i for i, k in enumerate(keys)})

    @classmethod
    def ball(cls, d: int, N: int, exclude=()) -> "SiteBasis":
        """Sites with |xi|_1 < N, minus ``exclude``."""
        ax = np.arange(-(N - 1), N)
        mesh = np.array(np.meshgrid(*([ax] * (d + 1)), indexing="ij")).reshape(d + 1, -1).T
        mesh = mesh[np.abs(mesh).sum(axis=1) < N]
        return cls.from_sites(mesh, exclude)

    def __len__(self) -> int:
        return len(self.sites)

    @property
    def d(self) -> int:
        return self.sites.shape[1] - 1

    def l1_distances(self) -> np.ndarray:
        s = self.sites
        return np.abs(s[:, None, :] - s[None, :, :]).sum(axis=2)

    def gather(self, f: FourierField) -> np.ndarray:
        """Coefficients of f at the basis sites."""
        R = f.radius
        inside = np.all(np.abs(self.sites) <= R, axis=1)
        out = np.zeros(len(self))
        idx = tuple((self.sites[inside] + R).T)
        out[inside] = f.coeffs[idx]
        return out

    def scatter(self, values: np.ndarray, radius: int | None = None) -> FourierField:
        R = int(np.abs(self.sites).max(initial=0)) if radius is None else radius
        arr = np.zeros((2 * R + 1,) * (self.d + 1))
        arr[tuple((self.sites + R).T)] = values
        return FourierField(self.d, arr)


@dataclass(frozen=True, eq=False)
class TruncatedOperator:
    basis: SiteBasis
    entries: np.ndarray
    kind: str
    params: ProblemParams
    lam: float
    source_field: FourierField  # phi = 3 u^2
    N: int
    symbol: np.ndarray  # diagonal of D (kind T) or D~ (kind T_tilde)
    weights: np.ndarray  # <m>^alpha at the basis sites

    @property
    def toeplitz_part(self) -> np.ndarray:
        return self.entries - np.diag(self.symbol)


@dataclass(frozen=True)
class InverseCertificate:
    l2_norm: float
    l2_bound: float
    offdiag_ok: bool
    worst_ratio: float
    N: int
    c: float
    C2: float
    condition: float = float("nan")

    @property
    def passed(self) -> bool:
        return bool(self.l2_norm < self.l2_bound and self.offdiag_ok)


@dataclass(frozen=True)
class NeumannReport:
    l2_norm: float
    l2_bound: float
    decay_ok: bool
    worst_decay_ratio: float
    terms: int
    regime_value: float
    diag_min: float
    diag_bound: float

    @property
    def passed(self) -> bool:
        return bool(self.l2_norm < self.l2_bound and self.decay_ok)


def toeplitz_lookup(phi: FourierField, basis: SiteBasis, rows=None) -> np.ndarray:
    """S_phi(xi, xi') = phi(xi - xi') over the basis (optionally a row subset)."""
    s = basis.sites
    rs = s if rows is None else s[rows]
    R = phi.radius
    out = np.empty((len(rs), len(s)))
    # row chunks keep the (rows, K, d+1) difference tensor small
    step = max(1, 2_000_000 // max(1, len(s) * s.shape[1]))
    for a in range(0, len(rs), step):
        diff = rs[a:a + step, None, :] - s[None, :, :]
        inside = np.all(np.abs(diff) <= R, axis=2)
        block = np.zeros(inside.shape)
        block[inside] = phi.coeffs[tuple((diff[inside] + R).T)]
        out[a:a + step] = block
    return out


def assemble(u: FourierField, lam: float, params: ProblemParams, N: int, kind: str = "T_tilde",
             basis: SiteBasis | None = None, max_radius: int = DEFAULT_MAX_RADIUS) -> TruncatedOperator:
    """Linearization of the cubic equation at u, restricted to |xi|_1 < N off S."""
    if kind not in KINDS:
        raise ValueError(f"kind must be one of {KINDS}")
    if basis is None:
        if N < 2:
            raise ValueError("N must be >= 2")
        basis = SiteBasis.ball(params.d, N, resonant_set(params))
    if len(basis) == 0:
        raise ValueError("empty site basis")
    phi = 3.0 * pointwise_power(u, 2, max_radius=max_radius)
    weights = np.sqrt(np.sum(basis.sites[:, :-1].astype(float) ** 2, axis=1) + 1.0) ** params.alpha
    D = linear_symbol(basis.sites, lam, params.rho)
    S = toeplitz_lookup(phi, basis)
    eps2 = params.eps ** 2
    if kind == "T":
        symbol = D
        entries = np.diag(D) + eps2 * weights[:, None] * S
    else:
        symbol = D / weights
        entries = np.diag(symbol) + eps2 * S
    return TruncatedOperator(basis, entries, kind, params, lam, phi, N, symbol, weights)


def operator_norm(A: np.ndarray, tol: float = 1e-10, max_iter: int = 1000) -> float:
    """Largest singular value by power iteration on A^T A."""
    n = A.shape[1]
    if n == 0:
        return 0.0
    x = np.ones(n) + np.linspace(0.0, 1.0, n) * 1e-3
    x /= np.linalg.norm(x)
    est = 0.0
    for _ in range(max_iter):
        with np.errstate(over="ignore", invalid="ignore"):
            y = A.T @ (A @ x)
        ny = np.linalg.norm(y)
        if ny == 0.0 or not np.isfinite(ny):
            return 0.0 if ny == 0.0 else float("inf")
        new = math.sqrt(ny)
        x = y / ny
        if abs(new - est) <= tol * new:
            return new
        est = new
    return est


def invert(entries: np.ndarray) -> np.ndarray | None:
    """Pivoted-LU inverse, or None if the factorization breaks down."""
    try:
        lu, piv = scipy.linalg.lu_factor(entries, check_finite=True)
        if np.any(np.diag(lu) == 0):
            return None
        inv = scipy.linalg.lu_solve((lu, piv), np.eye(len(entries)))
    except (np.linalg.LinAlgError, ValueError):
        return None
    if not np.all(np.isfinite(inv)):
        return None
    return inv


def _offdiag_check(Minv, basis, N, c, bound_factor):
    dist = basis.l1_distances()
    far = dist > math.sqrt(N)
    if not far.any():
        return True, 0.0
    bound = bound_factor * np.exp(-0.5 * dist[far].astype(float) ** c)
    ratio = float(np.max(np.abs(Minv[far]) / bound))
    return ratio < 1.0, ratio


def invert_with_certificate(op: TruncatedOperator, C2: float, c: float, bound_factor: float = 1.0,
                            cond_cap: float = DEFAULT_COND_CAP):
    """Dense inverse plus the two inverse-bound checks; never raises on failure.

    Checks ||M^-1|| < f exp((log N)^C2) and
    |M^-1(xi, xi')| < f exp(-|xi - xi'|_1^c / 2) for |xi - xi'|_1 > sqrt(N),
    with f = ``bound_factor``.
    """
    M = op.entries
    n = len(M)
    if n == 0 or M.shape != (n, n):
        raise ValueError("operator must be a nonempty square matrix")
    if op.kind == "T_tilde" and not np.allclose(M, M.T, rtol=0, atol=1e-12 * max(1.0, np.abs(M).max())):
        raise ValueError("T_tilde operator is not symmetric")
    l2_bound = bound_factor * math.exp(math.log(op.N) ** C2)
    Minv = invert(M)
    if Minv is None:
        cert = InverseCertificate(float("inf"), l2_bound, False, float("inf"), op.N, c, C2, float("inf"))
        return None, cert
    inv_norm = operator_norm(Minv)
    cond = operator_norm(M) * inv_norm
    if not np.isfinite(cond) or cond > cond_cap:
        cert = InverseCertificate(float("inf"), l2_bound, False, float("inf"), op.N, c, C2, cond)
        return Minv, cert
    ok, ratio = _offdiag_check(Minv, op.basis, op.N, c, bound_factor)
    return Minv, InverseCertificate(inv_norm, l2_bound, ok, ratio, op.N, c, C2, cond)


def perturbative_regime_value(params: ProblemParams, N: int, exponent_d: int) -> float:
    """eps^2 N^(4 C3 + 2 alpha + k d) with C3 = 2d; k = 2 (Neumann) or 5 (finite-step)."""
    C3 = 2 * params.d
    return params.eps ** 2 * float(N) ** (4 * C3 + 2 * params.alpha + exponent_d * params.d)


def neumann_invert(op: TruncatedOperator, gamma: float, c: float = 0.04, slack: float = DEFAULT_SLACK,
                   tol: float = 1e-16, max_terms: int = 500):
    """Inverse of T~ by the geometric series around its diagonal D~.

    Requires |D~| > (gamma/2) N^(-2 C3 - alpha) on the basis and
    eps^2 N^(4 C3 + 2 alpha + 2 d) < 1/2. Returns the summed inverse and a
    report checking ||T~^-1|| < (4/gamma) N^(2 C3 + alpha) and
    |T~^-1(xi, xi')| < exp(-slack |xi - xi'|_1^c) off the diagonal.
    """
    if op.kind != "T_tilde":
        raise ValueError("neumann_invert expects a T_tilde operator")
    p, N = op.params, op.N
    C3 = 2 * p.d
    regime = perturbative_regime_value(p, N, 2)
    diag_bound = 0.5 * gamma * float(N) ** (-2 * C3 - p.alpha)
    diag_min = float(np.min(np.abs(op.symbol)))
    if not diag_min > diag_bound or not regime < 0.5:
        raise OutsidePerturbativeRegime(
            f"min|D~|={diag_min:.3g} (need > {diag_bound:.3g}), regime={regime:.3g} (need < 0.5)",
            diag_min=diag_min, regime=regime)
    dinv = 1.0 / op.symbol
    K = -(dinv[:, None] * op.toeplitz_part)
    term = np.diag(dinv)
    total = term.copy()
    terms = 1
    scale = np.linalg.norm(total)
    while terms < max_terms:
        term = K @ term
        total += term
        terms += 1
        if np.linalg.norm(term) < tol * scale:
            break
    l2 = operator_norm(total)
    l2_bound = 4.0 / gamma * float(N) ** (2 * C3 + p.alpha)
    dist = op.basis.l1_distances()
    off = dist > 0
    if off.any():
        ratio = float(np.max(np.abs(total[off]) / np.exp(-slack * dist[off].astype(float) ** c)))
    else:
        ratio = 0.0
    report = NeumannReport(l2, l2_bound, ratio < 1.0, ratio, terms, regime, diag_min, diag_bound)
    return total, report


def offdiag_decay_profile(Minv: np.ndarray, basis: SiteBasis) -> list:
    """[(s, max |Minv(xi, xi')| over |xi - xi'|_1 = s)] for every separation s present."""
    dist = basis.l1_distances().ravel()
    vals = np.abs(np.asarray(Minv)).ravel()
    smax = int(dist.max(initial=0))
    prof = np.zeros(smax + 1)
    np.maximum.at(prof, dist, vals)
    present = np.zeros(smax + 1, dtype=bool)
    present[np.unique(dist)] = True
    return [(int(s), float(prof[s])) for s in range(smax + 1) if present[s]]


# ----------------------------------------------------------------------------
# binary dump: magic, then little-endian int64 N, size, kind code, has_inverse,
# then row-major float64 entries (and the inverse if present)

_MAGIC = b"CWBOP001"
_HEADER = struct.Struct("<8sqqqq")


def dump_operator(path, op: TruncatedOperator, inverse: np.ndarray | None = None) -> None:
    n = len(op.entries)
    with open(path, "wb") as fh:
        fh.write(_HEADER.pack(_MAGIC, op.N, n, KINDS.index(op.kind), int(inverse is not None)))
        fh.write(np.ascontiguousarray(op.entries, dtype="<f8").tobytes())
        if inverse is not None:
            fh.write(np.ascontiguousarray(inverse, dtype="<f8").tobytes())


def load_operator(path):
    """Returns (header dict, entries, inverse or None)."""
    with open(path, "rb") as fh:
        magic, N, n, kind, has_inv = _HEADER.unpack(fh.read(_HEADER.size))
        if magic != _MAGIC:
            raise ValueError("not an operator dump")
        entries = np.frombuffer(fh.read(8 * n * n), dtype="<f8").reshape(n, n)
        inverse = np.frombuffer(fh.read(8 * n * n), dtype="<f8").reshape(n, n) if has_inv else None
    return {"N": N, "size": n, "kind": KINDS[kind]}, entries, inverse
