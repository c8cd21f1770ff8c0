"""Space-time Fourier lattice Z^d x Z, symmetric coefficient fields and the
resonant / non-resonant split.

A field is stored densely on the centred box [-R, R]^(d+1); axis order is
(m_1, ..., m_d, n). Index ``R + k`` on an axis holds mode ``k``, so flipping
every axis maps the coefficient at xi to the one at -xi.
"""

from __future__ import annotations

import math
from dataclasses import dataclass
from functools import lru_cache
from typing import Iterable, Mapping, NamedTuple

import numpy as np
from scipy import signal

from .errors import SupportExceeded

DEFAULT_MAX_RADIUS = 256
# product of operand sizes above which convolution switches to FFT
DIRECT_WORK_LIMIT = 2.0e7


class LatticeIndex(NamedTuple):
    m: tuple
    n: int

    @property
    def key(self) -> tuple:
        return (*self.m, self.n)

    @classmethod
    def from_key(cls, key) -> "LatticeIndex":
        key = tuple(int(k) for k in key)
        return cls(key[:-1], key[-1])


def as_key(xi) -> tuple:
    if isinstance(xi, LatticeIndex):
        return xi.key
    return tuple(int(k) for k in xi)


def one_norm(xi) -> int:
    return sum(abs(k) for k in as_key(xi))


def bracket(m) -> float:
    """<m> = sqrt(|m|^2 + 1)."""
    return math.sqrt(sum(int(k) ** 2 for k in m) + 1)


@dataclass(frozen=True)
class ProblemParams:
    d: int
    m0: tuple
    rho: float
    alpha: float
    eps: float
    lambda0: float | None = None

    def __post_init__(self):
        m0 = tuple(int(k) for k in self.m0)
        object.__setattr__(self, "m0", m0)
        if self.d < 1 or len(m0) != self.d:
            raise ValueError(f"m0 must have length d={self.d}")
        if not any(m0):
            raise ValueError("m0 must be nonzero")
        if not self.rho > 0:
            raise ValueError("rho must be > 0")
        if self.alpha < 0:
            raise ValueError("alpha must be >= 0")
        if self.eps < 0:
            raise ValueError("eps must be >= 0")
        if self.lambda0 is None:
            object.__setattr__(self, "lambda0", math.sqrt(self.lambda0_sq))

    @property
    def m0_sq(self) -> int:
        return sum(k * k for k in self.m0)

    @property
    def lambda0_sq(self) -> float:
        # the one place |m0|^2 + rho is formed
        return self.m0_sq + self.rho

    def replace(self, **changes) -> "ProblemParams":
        fields = dict(d=self.d, m0=self.m0, rho=self.rho, alpha=self.alpha, eps=self.eps)
        fields.update(changes)
        return ProblemParams(**fields)

    def to_dict(self) -> dict:
        return dict(d=self.d, m0=list(self.m0), rho=self.rho, alpha=self.alpha,
                    eps=self.eps, lambda0=self.lambda0)


# ----------------------------------------------------------------------------
# grids

@lru_cache(maxsize=64)
def _grids(d: int, R: int):
    ax = np.arange(-R, R + 1)
    mesh = np.meshgrid(*([ax] * (d + 1)), indexing="ij")
    m_sq = sum(g.astype(np.int64) ** 2 for g in mesh[:d])
    l1 = sum(np.abs(g) for g in mesh)
    n = mesh[d]
    for a in (m_sq, l1, n):
        a.setflags(write=False)
    return m_sq, l1, n


def l1_grid(d: int, R: int) -> np.ndarray:
    return _grids(d, R)[1]


def bracket_grid(d: int, R: int) -> np.ndarray:
    return np.sqrt(_grids(d, R)[0] + 1.0)


def symbol_grid(d: int, R: int, lam: float, rho: float) -> np.ndarray:
    """-(n lam)^2 + |m|^2 + rho on the box."""
    m_sq, _, n = _grids(d, R)
    return -((n * lam) ** 2) + (m_sq + rho)


def linear_symbol(sites: np.ndarray, lam: float, rho: float) -> np.ndarray:
    sites = np.asarray(sites)
    m_sq = np.sum(sites[:, :-1].astype(np.int64) ** 2, axis=1)
    n = sites[:, -1]
    return -((n * lam) ** 2) + (m_sq + rho)


def site_mask(d: int, R: int, sites: Iterable) -> np.ndarray:
    mask = np.zeros((2 * R + 1,) * (d + 1), dtype=bool)
    for key in sites:
        key = as_key(key)
        if all(abs(k) <= R for k in key):
            mask[tuple(k + R for k in key)] = True
    return mask


# ----------------------------------------------------------------------------
# fields

@dataclass(frozen=True, eq=False)
class FourierField:
    """Finitely supported real coefficients with f(xi) = f(-xi)."""

    d: int
    coeffs: np.ndarray

    def __post_init__(self):
        arr = np.array(self.coeffs, dtype=float)
        if arr.ndim != self.d + 1 or len(set(arr.shape)) != 1 or arr.shape[0] % 2 != 1:
            raise ValueError(f"coeffs must be a centred odd box of rank {self.d + 1}")
        if not np.all(np.isfinite(arr)):
            raise ValueError("coefficients must be finite")
        arr.setflags(write=False)
        object.__setattr__(self, "coeffs", arr)

    # -- construction --------------------------------------------------------
    @classmethod
    def zeros(cls, d: int, radius: int = 0) -> "FourierField":
        return cls(d, np.zeros((2 * radius + 1,) * (d + 1)))

    @classmethod
    def from_items(cls, d: int, items: Mapping, radius: int | None = None) -> "FourierField":
        """Build from ``{xi: value}``; the mirror site -xi is filled in."""
        keys = {as_key(k): float(v) for k, v in dict(items).items()}
        for k in keys:
            if len(k) != d + 1:
                raise ValueError(f"site {k} does not have {d + 1} components")
        need = max((max(abs(c) for c in k) for k in keys), default=0)
        R = need if radius is None else radius
        if R < need:
            raise SupportExceeded(f"radius {R} cannot hold site of size {need}")
        arr = np.zeros((2 * R + 1,) * (d + 1))
        for k, v in keys.items():
            mk = tuple(-c for c in k)
            if mk in keys and keys[mk] != v:
                raise ValueError(f"asymmetric values at {k} and {mk}")
            arr[tuple(c + R for c in k)] = v
            arr[tuple(c + R for c in mk)] = v
        return cls(d, arr)

    @classmethod
    def cosine(cls, m, n: int, amplitude: float) -> "FourierField":
        """amplitude * cos(m.x + n theta)."""
        key = (*[int(k) for k in m], int(n))
        return cls.from_items(len(key) - 1, {key: 0.5 * amplitude})

    # -- access ----------------------------------------------------------------
    @property
    def radius(self) -> int:
        return (self.coeffs.shape[0] - 1) // 2

    @property
    def support_radius(self) -> int:
        nz = self.coeffs != 0
        if not nz.any():
            return 0
        return int(l1_grid(self.d, self.radius)[nz].max())

    def __getitem__(self, xi) -> float:
        key = as_key(xi)
        R = self.radius
        if any(abs(k) > R for k in key):
            return 0.0
        return float(self.coeffs[tuple(k + R for k in key)])

    def items(self):
        R = self.radius
        idx = np.argwhere(self.coeffs != 0)
        for row in idx:
            yield tuple(int(i) - R for i in row), float(self.coeffs[tuple(row)])

    def representatives(self):
        """One (xi, value) per {xi, -xi} pair; xi is the lexicographically larger."""
        for key, val in self.items():
            if key >= tuple(-k for k in key):
                yield key, val

    def to_dict(self) -> dict:
        return dict(self.items())

    # -- reshaping -------------------------------------------------------------
    def resized(self, radius: int) -> "FourierField":
        R = self.radius
        if radius == R:
            return self
        if radius > R:
            pad = radius - R
            return FourierField(self.d, np.pad(self.coeffs, pad))
        cut = R - radius
        inner = self.coeffs[(slice(cut, cut + 2 * radius + 1),) * (self.d + 1)]
        if np.count_nonzero(inner) != np.count_nonzero(self.coeffs):
            raise SupportExceeded(f"cropping to radius {radius} drops nonzero coefficients")
        return FourierField(self.d, inner)

    def trimmed(self) -> "FourierField":
        nz = np.argwhere(self.coeffs != 0)
        if len(nz) == 0:
            return self.resized(0)
        return self.resized(int(np.abs(nz - self.radius).max()))

    def masked(self, keep: np.ndarray) -> "FourierField":
        return FourierField(self.d, np.where(keep, self.coeffs, 0.0))

    # -- arithmetic ------------------------------------------------------------
    def _aligned(self, other: "FourierField"):
        if other.d != self.d:
            raise ValueError("dimension mismatch")
        R = max(self.radius, other.radius)
        return self.resized(R).coeffs, other.resized(R).coeffs

    def __add__(self, other: "FourierField") -> "FourierField":
        a, b = self._aligned(other)
        return FourierField(self.d, a + b)

    def __sub__(self, other: "FourierField") -> "FourierField":
        a, b = self._aligned(other)
        return FourierField(self.d, a - b)

    def __neg__(self) -> "FourierField":
        return FourierField(self.d, -self.coeffs)

    def __mul__(self, scalar: float) -> "FourierField":
        return FourierField(self.d, float(scalar) * self.coeffs)

    __rmul__ = __mul__

    def norm(self) -> float:
        return float(np.sqrt(np.sum(self.coeffs ** 2)))

    def sup(self) -> float:
        return float(np.max(np.abs(self.coeffs), initial=0.0))

    def is_symmetric(self, tol: float = 0.0) -> bool:
        return bool(np.all(np.abs(self.coeffs - np.flip(self.coeffs)) <= tol))

    def allclose(self, other: "FourierField", rtol=1e-12, atol=0.0) -> bool:
        a, b = self._aligned(other)
        return bool(np.allclose(a, b, rtol=rtol, atol=atol))

    # -- serialization ---------------------------------------------------------
    def to_json_dict(self) -> dict:
        return {
            "d": self.d,
            "support_radius": self.support_radius,
            "coeffs": [{"m": list(k[:-1]), "n": k[-1], "value": v}
                       for k, v in self.representatives()],
        }

    @classmethod
    def from_json_dict(cls, data: Mapping) -> "FourierField":
        d = int(data["d"])
        items = {(*rec["m"], rec["n"]): rec["value"] for rec in data["coeffs"]}
        R = int(data.get("support_radius", 0))
        need = max((max(abs(c) for c in k) for k in items), default=0)
        return cls.from_items(d, items, radius=max(R, need))


# ----------------------------------------------------------------------------
# operations

def convolve(f: FourierField, g: FourierField, method: str = "auto",
             max_radius: int = DEFAULT_MAX_RADIUS) -> FourierField:
    """Coefficients of the physical-space product f*g."""
    if f.d != g.d:
        raise ValueError("dimension mismatch")
    out_radius = f.support_radius + g.support_radius
    if out_radius > max_radius:
        raise SupportExceeded(f"product support radius {out_radius} > cap {max_radius}",
                              radius=out_radius, cap=max_radius)
    a, b = f.trimmed().coeffs, g.trimmed().coeffs
    if method == "auto":
        method = "direct" if a.size * b.size <= DIRECT_WORK_LIMIT else "fft"
    out = signal.convolve(a, b, mode="full", method=method)
    if method == "fft":
        R = (out.shape[0] - 1) // 2
        out = np.where(l1_grid(f.d, R) <= out_radius, out, 0.0)
    # exact symmetry: x + y == y + x in floating point
    out = 0.5 * (out + np.flip(out))
    return FourierField(f.d, out)


def pointwise_power(f: FourierField, k: int, method: str = "auto",
                    max_radius: int = DEFAULT_MAX_RADIUS) -> FourierField:
    if k < 1:
        raise ValueError("k must be >= 1")
    out = f
    for _ in range(k - 1):
        out = convolve(out, f, method=method, max_radius=max_radius)
    return out


def pointwise_cube(f: FourierField, method: str = "auto",
                   max_radius: int = DEFAULT_MAX_RADIUS) -> FourierField:
    """Coefficients of u^3, i.e. the triple convolution of f with itself."""
    return pointwise_power(f, 3, method=method, max_radius=max_radius)


def apply_fractional(f: FourierField, alpha: float) -> FourierField:
    """D^alpha: multiply the coefficient at (m, n) by <m>^alpha."""
    if alpha < 0:
        raise ValueError("alpha must be >= 0")
    if alpha == 0:
        return f
    return FourierField(f.d, f.coeffs * bracket_grid(f.d, f.radius) ** alpha)


def gevrey_weighted_sum(f: FourierField, c: float, exclude: Iterable = ()) -> float:
    """sum over xi not in ``exclude`` of |f(xi)| exp(|xi|_1^c)."""
    if not 0 < c < 1:
        raise ValueError("c must lie in (0, 1)")
    R = f.radius
    weights = np.exp(l1_grid(f.d, R).astype(float) ** c)
    keep = ~site_mask(f.d, R, exclude)
    return float(np.sum(np.abs(f.coeffs[keep]) * weights[keep]))


def resonant_modes(params: ProblemParams) -> list:
    """Spatial modes m with |m| = |m0|; m0 first, the rest sorted."""
    r = int(math.isqrt(params.m0_sq))
    ax = range(-r, r + 1)
    grid = np.array(np.meshgrid(*([list(ax)] * params.d), indexing="ij")).reshape(params.d, -1).T
    modes = [tuple(int(k) for k in row) for row in grid if int(np.sum(row ** 2)) == params.m0_sq]
    modes.remove(params.m0)
    return [params.m0] + sorted(modes)


def resonant_set(params: ProblemParams) -> frozenset:
    """S = {(m, n): |m| = |m0|, n = +-1}; b = len(resonant_modes(params))."""
    return frozenset((*m, n) for m in resonant_modes(params) for n in (1, -1))


def project_P(f: FourierField, S: Iterable) -> FourierField:
    return f.masked(~site_mask(f.d, f.radius, S))


def project_Q(f: FourierField, S: Iterable) -> FourierField:
    return f.masked(site_mask(f.d, f.radius, S))


def project_N(f: FourierField, S: Iterable, N: int) -> FourierField:
    """Gamma_N: off S and strictly inside the l1 ball of radius N."""
    keep = ~site_mask(f.d, f.radius, S) & (l1_grid(f.d, f.radius) < N)
    return f.masked(keep)


def ball_mask(f: FourierField, N: int, strict: bool = True) -> np.ndarray:
    l1 = l1_grid(f.d, f.radius)
    return l1 < N if strict else l1 <= N
