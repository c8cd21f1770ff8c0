"""Random instances for the two coupling lemmas (local inverse bounds on a
cover or on separated clusters imply bounds on the global inverse), with a
hypothesis audit that shares no code with the generators."""

from __future__ import annotations

import itertools
import json
import math
from dataclasses import dataclass, field

import numpy as np
import scipy.linalg

from .errors import InstanceGenerationFailed
from .outputs import _jsonable

MAX_SIZE = 2000


@dataclass(frozen=True, eq=False)
class CouplingInstance:
    lemma: str  # "C1" or "C2"
    matrix: np.ndarray
    sites: np.ndarray  # (n, D) integer sites of Omega, row i <-> matrix index i
    blocks: tuple  # C1: cover windows; C2: clusters. Each a tuple of site indices
    constants: dict
    seed: int | None = None
    diagonal: np.ndarray | None = None  # C2: the D part of T = D + S

    def to_json_dict(self) -> dict:
        return {
            "lemma": self.lemma,
            "seed": self.seed,
            "constants": dict(self.constants),
            "sites": self.sites.tolist(),
            "blocks": [list(map(int, b)) for b in self.blocks],
            "matrix": self.matrix.tolist(),
            "diagonal": None if self.diagonal is None else self.diagonal.tolist(),
        }

    @classmethod
    def from_json_dict(cls, data: dict) -> "CouplingInstance":
        diag = data.get("diagonal")
        return cls(data["lemma"], np.array(data["matrix"], dtype=float),
                   np.array(data["sites"], dtype=np.int64), tuple(tuple(b) for b in data["blocks"]),
                   dict(data["constants"]), data.get("seed"),
                   None if diag is None else np.array(diag, dtype=float))

    def dump(self, path) -> None:
        with open(path, "w") as fh:
            json.dump(_jsonable(self.to_json_dict()), fh)

    @classmethod
    def load(cls, path) -> "CouplingInstance":
        with open(path) as fh:
            return cls.from_json_dict(json.load(fh))


@dataclass(frozen=True)
class CouplingReport:
    lemma: str
    hypotheses: dict
    conclusions: dict
    margins: dict

    @property
    def hypotheses_ok(self) -> bool:
        return all(self.hypotheses.values())

    @property
    def conclusions_ok(self) -> bool:
        return all(self.conclusions.values())

    @property
    def violation(self) -> bool:
        """Hypotheses hold but a conclusion fails."""
        return self.hypotheses_ok and not self.conclusions_ok


# ----------------------------------------------------------------------------
# generation


def _box(shape) -> np.ndarray:
    return np.array(list(itertools.product(*[range(s) for s in shape])), dtype=np.int64)


def _l1_dist(sites: np.ndarray) -> np.ndarray:
    return np.abs(sites[:, None, :] - sites[None, :, :]).sum(axis=2)


def _windows_1d(L: int, w: int, stride: int) -> list:
    if w >= L:
        return [(0, L)]
    starts = list(range(0, L - w + 1, stride))
    if starts[-1] != L - w:
        starts.append(L - w)
    return [(s, s + w) for s in starts]


def c1_window(K: int, C_prime: float, d: int) -> int:
    """Largest box side w with l1 diameter d (w - 1) < C' K."""
    w = int(math.floor(C_prime * K / d)) + 1
    while d * (w - 1) >= C_prime * K:
        w -= 1
    return w


def gen_c1_instance(seed: int, K: int, B: float, c: float, C_prime: float, d: int = 1,
                    side: int = 200, C: float = 3.0, delta: float = 1e-5,
                    diag_range=(1.2, 2.0), max_attempts: int = 100) -> CouplingInstance:
    """Symmetric T on the box Omega = [0, side)^d with |T(x, y)| < exp(-|x - y|_1^c)
    off the diagonal, covered by overlapping windows of l1 diameter < C' K."""
    if not math.log(B) < K ** c / 100:
        raise ValueError(f"need log B < K^c / 100: log B = {math.log(B):.4g}, K^c/100 = {K ** c / 100:.4g}")
    w = c1_window(K, C_prime, d)
    if w < min(side, 2 * K + 1):
        raise ValueError(f"C' = {C_prime} gives windows of side {w}, too small to hold K-balls")
    if side ** d > MAX_SIZE:
        raise ValueError(f"|Omega| = {side ** d} exceeds {MAX_SIZE}")
    sites = _box((side,) * d)
    n = len(sites)
    dist = _l1_dist(sites)
    ranges = _windows_1d(side, w, max(1, w - 2 * K))
    index = {tuple(s): i for i, s in enumerate(sites.tolist())}
    cover = []
    for combo in itertools.product(ranges, repeat=d):
        block = [index[p] for p in itertools.product(*[range(a, b) for a, b in combo])]
        cover.append(tuple(sorted(block)))
    rng = np.random.default_rng(seed)
    env = np.exp(-dist.astype(float) ** c)
    scale = delta
    for _ in range(max_attempts):
        U = rng.uniform(-1.0, 1.0, size=(n, n))
        U = np.triu(U, 1)
        U = U + U.T
        T = scale * U * env
        T[np.diag_indices(n)] = rng.uniform(*diag_range, size=n)
        inst = CouplingInstance("C1", T, sites, tuple(cover),
                                {"K": K, "B": B, "c": c, "C_prime": C_prime, "C": C, "d": d}, seed)
        if audit_c1(inst)["hypotheses"]:
            return inst
        scale *= 0.5
    raise InstanceGenerationFailed("no C1 instance met the hypotheses", seed=seed)


def gen_c2_instance(seed: int, M: float = 400, eps1: float = 0.09, eps2: float = 0.05,
                    eps3: float = 0.02, eps: float = 0.01, rho: float = 1.0, d: int = 1,
                    n_clusters: int = 1, cluster_size: int = 3, c: float = 0.3, C: float = 1.0,
                    cluster_diag=(0.2, 0.5), omega_shape=None,
                    max_attempts: int = 100) -> CouplingInstance:
    """T = D + S on a box Omega in Z^(d+1) with a few small far-apart clusters
    where |D| is smaller than rho; |D| > rho elsewhere."""
    if not 0.1 > eps1 > eps2 > eps3 > 0:
        raise ValueError("need 1/10 > eps1 > eps2 > eps3 > 0")
    D = d + 1
    if omega_shape is None:
        omega_shape = (20, 20) if D == 2 else (7, 7, 8)
    sites = _box(omega_shape)
    n = len(sites)
    if n > MAX_SIZE:
        raise ValueError(f"|Omega| = {n} exceeds {MAX_SIZE}")
    if np.abs(sites).sum(axis=1).max() > M:
        raise ValueError("Omega must lie in the M-ball")
    rng = np.random.default_rng(seed)
    dist_l1 = _l1_dist(sites)
    shapes = [s for s in _cluster_shapes(D, cluster_size) if _euclid_diam(s) < M ** eps1]
    if not shapes:
        raise ValueError("no cluster shape of the requested size fits diam < M^eps1")
    for _ in range(max_attempts):
        clusters = []
        occupied = []
        ok = True
        for _k in range(n_clusters):
            shape = shapes[rng.integers(len(shapes))]
            placed = False
            for _try in range(200):
                origin = np.array([rng.integers(0, s - 2) for s in omega_shape])
                pts = shape + origin
                if np.any(pts >= np.array(omega_shape)):
                    continue
                if occupied and _euclid_min_dist(pts, np.concatenate(occupied)) <= M ** eps2:
                    continue
                occupied.append(pts)
                idx = [int(np.flatnonzero((sites == p).all(axis=1))[0]) for p in pts]
                clusters.append(tuple(sorted(idx)))
                placed = True
                break
            if not placed:
                ok = False
                break
        if not ok:
            continue
        in_cluster = np.zeros(n, dtype=bool)
        for cl in clusters:
            in_cluster[list(cl)] = True
        diag = rng.uniform(1.05 * rho, 2.0 * rho, size=n) * rng.choice((-1.0, 1.0), size=n)
        diag[in_cluster] = rng.uniform(cluster_diag[0] * rho, cluster_diag[1] * rho, size=in_cluster.sum())
        U = np.triu(rng.uniform(-1.0, 1.0, size=(n, n)), 1)
        S = 0.9 * eps * (U + U.T) * np.exp(-dist_l1.astype(float) ** c)
        norm = np.linalg.norm(S, 2)
        if norm >= eps:
            S *= 0.9 * eps / norm
        T = np.diag(diag) + S
        inst = CouplingInstance("C2", T, sites, tuple(clusters),
                                {"M": M, "eps1": eps1, "eps2": eps2, "eps3": eps3, "eps": eps,
                                 "rho": rho, "c": c, "C": C, "d": d}, seed, diag)
        if audit_c2(inst)["hypotheses"]:
            return inst
    raise InstanceGenerationFailed("no C2 instance met the hypotheses", seed=seed)


def _cluster_shapes(D: int, size: int) -> list:
    """Connected lattice animals of ``size`` cells containing the origin (small sizes)."""
    shapes = {((0,) * D,)}
    units = [tuple(int(i == k) * s for i in range(D)) for k in range(D) for s in (1, -1)]
    for _ in range(size - 1):
        grown = set()
        for sh in shapes:
            for p in sh:
                for u in units:
                    q = tuple(a + b for a, b in zip(p, u))
                    if q not in sh:
                        new = np.array(sh + (q,))
                        new = new - new.min(axis=0)
                        grown.add(tuple(sorted(map(tuple, new.tolist()))))
        shapes = grown
    return [np.array(s, dtype=np.int64) for s in sorted(shapes)]


def _euclid_diam(pts: np.ndarray) -> float:
    if len(pts) < 2:
        return 0.0
    return float(max(math.dist(a, b) for a, b in itertools.combinations(pts.tolist(), 2)))


def _euclid_min_dist(a: np.ndarray, b: np.ndarray) -> float:
    return float(np.sqrt(((a[:, None, :] - b[None, :, :]) ** 2).sum(axis=2)).min())


# ----------------------------------------------------------------------------
# audit: recomputes every hypothesis from the raw instance data


def audit_c1(inst: CouplingInstance) -> dict:
    k = inst.constants
    K, B, c, Cp, C = k["K"], k["B"], k["c"], k["C_prime"], k["C"]
    T, X = inst.matrix, inst.sites
    n = len(X)
    h = {}
    sep = np.zeros((n, n), dtype=np.int64)
    for a in range(X.shape[1]):
        sep += np.abs(X[:, a][:, None] - X[:, a][None, :])
    off = ~np.eye(n, dtype=bool)
    h["offdiag_decay"] = bool(np.all(np.abs(T[off]) < np.exp(-sep[off].astype(float) ** c)))
    h["relation"] = bool(math.log(B) < K ** c / 100)
    local_B, local_tail, diam_ok = True, True, True
    for blk in inst.blocks:
        idx = np.array(blk)
        inv = np.linalg.inv(T[np.ix_(idx, idx)])
        local_B &= bool(np.all(np.abs(inv) < B))
        far = sep[np.ix_(idx, idx)] > K / 100
        local_tail &= bool(np.all(np.abs(inv[far]) < K ** (-C)))
        diam_ok &= bool(sep[np.ix_(idx, idx)].max() < Cp * K)
    h["local_bound"] = local_B
    h["local_tail"] = local_tail
    h["window_diameter"] = diam_ok
    block_sets = [set(b) for b in inst.blocks]
    covered = True
    for i in range(n):
        ball = set(np.flatnonzero(sep[i] <= K).tolist())
        if not any(ball <= bs for bs in block_sets):
            covered = False
            break
    h["k_ball_cover"] = covered
    return {"hypotheses": all(h.values()), "detail": h, "sep": sep}


def audit_c2(inst: CouplingInstance) -> dict:
    k = inst.constants
    M, e1, e2, e3, eps, rho, c, C = (k["M"], k["eps1"], k["eps2"], k["eps3"], k["eps"], k["rho"],
                                     k["c"], k["C"])
    T, X = inst.matrix, inst.sites
    n = len(X)
    Dg = np.diag(T).copy() if inst.diagonal is None else np.asarray(inst.diagonal)
    S = T - np.diag(Dg)
    sep = np.zeros((n, n), dtype=np.int64)
    sq = np.zeros((n, n), dtype=np.int64)
    for a in range(X.shape[1]):
        diff = X[:, a][:, None] - X[:, a][None, :]
        sep += np.abs(diff)
        sq += diff * diff
    euclid = np.sqrt(sq)
    h = {}
    h["constants_order"] = bool(0.1 > e1 > e2 > e3 > 0)
    h["in_M_ball"] = bool(np.abs(X).sum(axis=1).max() <= M)
    clusters = [np.array(b) for b in inst.blocks]
    h["cluster_diameter"] = all(euclid[np.ix_(cl, cl)].max() < M ** e1 for cl in clusters)
    sepd = True
    for a, b in itertools.combinations(clusters, 2):
        sepd &= bool(euclid[np.ix_(a, b)].min() > M ** e2)
    h["cluster_separation"] = sepd
    h["S_norm"] = bool(np.linalg.norm(S, 2) < eps)
    h["S_decay"] = bool(np.all(np.abs(S) < eps * np.exp(-sep.astype(float) ** c) + (sep == 0) * eps))
    outside = np.ones(n, dtype=bool)
    for cl in clusters:
        outside[cl] = False
    h["good_diagonal"] = bool(np.all(np.abs(Dg[outside]) > rho))
    loc = True
    for cl in clusters:
        nb = np.flatnonzero((euclid[cl] <= M ** e3).any(axis=0))
        loc &= bool(np.linalg.norm(np.linalg.inv(T[np.ix_(nb, nb)]), 2) < M ** C)
    h["local_inverse"] = loc
    return {"hypotheses": all(h.values()), "detail": h, "sep": sep}


# ----------------------------------------------------------------------------
# conclusions


def verify_c1(inst: CouplingInstance) -> CouplingReport:
    audit = audit_c1(inst)
    k = inst.constants
    B, c, K, Cp = k["B"], k["c"], k["K"], k["C_prime"]
    inv = scipy.linalg.inv(inst.matrix)
    sep = audit["sep"]
    sup = float(np.abs(inv).max())
    thresh = (100 * Cp * K) ** (1 / (1 - c))
    far = sep > thresh
    if far.any():
        ratio = float(np.max(np.abs(inv[far]) / np.exp(-0.5 * sep[far].astype(float) ** c)))
    else:
        ratio = 0.0
    conclusions = {"sup_bound": sup < 2 * B, "decay": ratio < 1.0}
    margins = {"sup": sup, "sup_bound": 2 * B, "sup_margin": 2 * B - sup, "decay_ratio": ratio,
               "decay_threshold": thresh, "decay_pairs": int(far.sum())}
    return CouplingReport("C1", audit["detail"], conclusions, margins)


def verify_c2(inst: CouplingInstance) -> CouplingReport:
    audit = audit_c2(inst)
    k = inst.constants
    M, rho, C, c, e1 = k["M"], k["rho"], k["C"], k["c"], k["eps1"]
    inv = scipy.linalg.inv(inst.matrix)
    norm = float(np.linalg.norm(inv, 2))
    bound = M ** (C + 1) / rho
    sep = audit["sep"]
    far = sep > M ** (2 * e1)
    ratio = float(np.max(np.abs(inv[far]) / np.exp(-0.1 * sep[far].astype(float) ** c))) if far.any() else 0.0
    conclusions = {"norm_bound": norm < bound, "decay": ratio < 1.0}
    margins = {"norm": norm, "norm_bound": bound, "decay_ratio": ratio,
               "decay_threshold": M ** (2 * e1), "decay_pairs": int(far.sum())}
    return CouplingReport("C2", audit["detail"], conclusions, margins)


def verify(inst: CouplingInstance) -> CouplingReport:
    if inst.lemma == "C1":
        return verify_c1(inst)
    if inst.lemma == "C2":
        return verify_c2(inst)
    raise ValueError(f"unknown lemma {inst.lemma!r}")


def violating_c2_instance(seed: int = 0, bad_diag: float = 1e-6, C: float = 3.0) -> CouplingInstance:
    """A C2 instance whose hypotheses hold at desk constants but whose decay
    conclusion fails: one cluster with a nearly vanishing diagonal."""
    inst = gen_c2_instance(seed, C=C)
    diag = inst.diagonal.copy()
    for i in inst.blocks[0]:
        diag[i] = bad_diag
    T = inst.matrix - np.diag(inst.diagonal) + np.diag(diag)
    return CouplingInstance("C2", T, inst.sites, inst.blocks, dict(inst.constants), seed, diag)


@dataclass
class HarnessSummary:
    lemma: str
    generated: int = 0
    generation_failures: int = 0
    hypothesis_failures: int = 0
    violations: list = field(default_factory=list)

    @property
    def ok(self) -> bool:
        return not self.violations


def run_harness(lemma: str, seeds, **kwargs) -> HarnessSummary:
    summary = HarnessSummary(lemma)
    gen = gen_c1_instance if lemma == "C1" else gen_c2_instance
    for s in seeds:
        try:
            inst = gen(int(s), **kwargs)
        except InstanceGenerationFailed:
            summary.generation_failures += 1
            continue
        summary.generated += 1
        rep = verify(inst)
        if not rep.hypotheses_ok:
            summary.hypothesis_failures += 1
        elif rep.violation:
            summary.violations.append((int(s), inst, rep))
    return summary
