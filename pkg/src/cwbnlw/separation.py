"""Singular sites |-(n lam)^2 + |m|^2| < B, their cluster decomposition,
chain-length enumeration and the eigenvalue variation of cluster operators."""

from __future__ import annotations

import itertools
import math
from dataclasses import dataclass

import numpy as np
from scipy.sparse import coo_matrix
from scipy.sparse.csgraph import connected_components
from scipy.spatial import cKDTree

from .lattice import FourierField, ProblemParams, resonant_set
from .operator import SiteBasis, assemble
from .outputs import write_csv, write_json


@dataclass(frozen=True, eq=False)
class SingularCluster:
    sites: np.ndarray  # (k, d+1)
    diameter: int  # l1
    id: int

    @property
    def size(self) -> int:
        return len(self.sites)

    @property
    def min_abs_n(self) -> int:
        return int(np.abs(self.sites[:, -1]).min())

    @property
    def centroid(self) -> tuple:
        return tuple(float(x) for x in self.sites.mean(axis=0))

    def keys(self) -> frozenset:
        return frozenset(tuple(int(k) for k in s) for s in self.sites)


def l1_diameter(points: np.ndarray) -> int:
    """max_{x,y} |x - y|_1 = max over sign vectors s of (max s.x - min s.x)."""
    pts = np.asarray(points, dtype=np.int64)
    if len(pts) < 2:
        return 0
    D = pts.shape[1]
    best = 0
    for s in itertools.product((1, -1), repeat=D - 1):
        proj = pts @ np.array((1,) + s, dtype=np.int64)
        best = max(best, int(proj.max() - proj.min()))
    return best


def _m_ball(d: int, r: int) -> np.ndarray:
    """Integer vectors in Z^d with |m|_1 <= r."""
    if d == 0:
        return np.zeros((1, 0), dtype=np.int64)
    ax = np.arange(-r, r + 1)
    g = np.array(np.meshgrid(*([ax] * d), indexing="ij")).reshape(d, -1).T
    return g[np.abs(g).sum(axis=1) <= r]


def singular_sites(lam: float, N: int, B: float, d: int, sigma: float = 0.0) -> np.ndarray:
    """All (m, n) with |(m, n)|_1 <= N and |-(n lam + sigma)^2 + |m|^2| < B.

    Rows are sorted lexicographically. For each n the last spatial
    coordinate is solved from the annulus condition, so the cost is that of
    the (d-1)-dimensional slice rather than the full ball.
    """
    if N < 0 or not B > 0:
        raise ValueError("need N >= 0 and B > 0")
    out = []
    for n in range(-N, N + 1):
        r = N - abs(n)
        t = (n * lam + sigma) ** 2
        lo, hi = t - B, t + B
        heads = _m_ball(d - 1, r)
        s = np.sum(heads ** 2, axis=1).astype(float)
        rem = r - np.abs(heads).sum(axis=1)
        k_lo = np.floor(np.sqrt(np.maximum(lo - s, 0.0))).astype(np.int64)
        k_hi = np.ceil(np.sqrt(np.maximum(hi - s, 0.0))).astype(np.int64)
        keep = (hi - s > 0) & (rem >= 0)
        if not keep.any():
            continue
        heads, s, rem, k_lo, k_hi = heads[keep], s[keep], rem[keep], k_lo[keep], k_hi[keep]
        span = int((k_hi - k_lo).max())
        for off in range(span + 1):
            k = k_lo + off
            val = s + k.astype(float) ** 2
            ok = (k <= k_hi) & (k <= rem) & (np.abs(val - t) < B)
            if not ok.any():
                continue
            h, kk = heads[ok], k[ok]
            nz = kk != 0
            out.append(np.column_stack([h, kk, np.full(len(kk), n)]))
            out.append(np.column_stack([h[nz], -kk[nz], np.full(int(nz.sum()), n)]))
    if not out:
        return np.zeros((0, d + 1), dtype=np.int64)
    return np.unique(np.concatenate(out).astype(np.int64), axis=0)


def cluster_decompose(sites, gap: float) -> list:
    """Connected components of the graph joining sites at l1 distance < gap."""
    if not gap > 0:
        raise ValueError("gap must be > 0")
    pts = np.unique(np.asarray(sites, dtype=np.int64).reshape(len(sites), -1), axis=0) \
        if len(sites) else np.zeros((0, 1), dtype=np.int64)
    if len(pts) == 0:
        return []
    # integer distances: |x - y|_1 < gap  <=>  |x - y|_1 <= ceil(gap) - 1
    r = math.ceil(gap) - 1
    pairs = cKDTree(pts).query_pairs(r, p=1, output_type="ndarray") if r >= 1 else np.zeros((0, 2), int)
    n = len(pts)
    g = coo_matrix((np.ones(len(pairs)), (pairs[:, 0], pairs[:, 1])), shape=(n, n))
    ncomp, labels = connected_components(g, directed=False)
    order = np.argsort(labels, kind="stable")
    bounds = np.flatnonzero(np.diff(labels[order])) + 1
    clusters = []
    for cid, idx in enumerate(np.split(order, bounds)):
        members = pts[np.sort(idx)]
        clusters.append(SingularCluster(members, l1_diameter(members), cid))
    return clusters


def cluster_distance(a: SingularCluster, b: SingularCluster) -> int:
    diff = np.abs(a.sites[:, None, :] - b.sites[None, :, :]).sum(axis=2)
    return int(diff.min())


def cluster_report(clusters) -> list:
    return [{"id": c.id, "size": c.size, "diameter": c.diameter, "min_abs_n": c.min_abs_n,
             "centroid": list(c.centroid)} for c in clusters]


def export_cluster_report(path, clusters, meta: dict | None = None, config_sha: str | None = None) -> None:
    payload = dict(meta or {})
    payload["clusters"] = cluster_report(clusters)
    write_json(path, payload, config_sha)


# ----------------------------------------------------------------------------
# chains


@dataclass(frozen=True)
class ChainResult:
    k_max: int
    chain: tuple  # witness sites
    exact: bool
    upper_bound: int  # largest component capacity sum_m min(count_m, cap)
    nodes: int
    B: float
    B_prime: int


def chain_sites(lambda_prime: float, B: float, N: int, d: int, sigma: float = 0.0) -> np.ndarray:
    return singular_sites(lambda_prime, N, B, d, sigma)


def max_chain_length(lambda_prime: float, B: float, B_prime: int, N: int, d: int,
                     search_budget: int = 10 ** 6, sigma: float = 0.0, sites=None) -> ChainResult:
    """Longest chain of distinct singular sites with consecutive Euclidean
    distance < B in which each spatial mode m occurs at most B_prime times.

    Bounded depth-first search per connected component; ``exact`` is False
    when the node budget ran out (the chain is then a lower bound).
    """
    if B_prime < 1:
        raise ValueError("B_prime must be >= 1")
    pts = chain_sites(lambda_prime, B, N, d, sigma) if sites is None else np.asarray(sites, dtype=np.int64)
    if len(pts) == 0:
        return ChainResult(0, (), True, 0, 0, B, B_prime)
    tree = cKDTree(pts.astype(float))
    # Euclidean distance < B between integer points <=> squared distance <= ceil(B^2) - 1
    r = math.sqrt(math.ceil(B * B) - 1) if B > 1 else 0.0
    pairs = tree.query_pairs(r + 1e-9, output_type="ndarray") if r > 0 else np.zeros((0, 2), int)
    if len(pairs):
        sq = np.sum((pts[pairs[:, 0]] - pts[pairs[:, 1]]) ** 2, axis=1)
        pairs = pairs[sq < B * B]
    n = len(pts)
    adj = [[] for _ in range(n)]
    for a, b in pairs:
        adj[a].append(int(b))
        adj[b].append(int(a))
    deg = np.array([len(x) for x in adj])
    for i in range(n):
        # Warnsdorff-style: try low-degree neighbours first
        adj[i].sort(key=lambda j: deg[j])
    mkeys = [tuple(p[:-1]) for p in pts.tolist()]
    g = coo_matrix((np.ones(len(pairs)), (pairs[:, 0], pairs[:, 1])), shape=(n, n)) if len(pairs) \
        else coo_matrix((n, n))
    _, labels = connected_components(g, directed=False)

    best, best_chain, nodes, exhausted = 1, (0,), 0, False
    upper = 0
    for comp in np.unique(labels):
        members = np.flatnonzero(labels == comp)
        counts = {}
        for i in members:
            counts[mkeys[i]] = counts.get(mkeys[i], 0) + 1
        cap = sum(min(c, B_prime) for c in counts.values())
        upper = max(upper, cap)
        if cap <= best:
            continue
        starts = sorted(members, key=lambda i: deg[i])
        for s in starts:
            if nodes >= search_budget:
                exhausted = True
                break
            used = {mkeys[s]: 1}
            on_path = {int(s)}
            path = [int(s)]
            stack = [iter(adj[s])]
            while stack:
                if nodes >= search_budget:
                    exhausted = True
                    break
                advanced = False
                for nb in stack[-1]:
                    if nb in on_path or used.get(mkeys[nb], 0) >= B_prime:
                        continue
                    nodes += 1
                    on_path.add(nb)
                    used[mkeys[nb]] = used.get(mkeys[nb], 0) + 1
                    path.append(nb)
                    stack.append(iter(adj[nb]))
                    if len(path) > best:
                        best, best_chain = len(path), tuple(path)
                    advanced = True
                    break
                if not advanced:
                    stack.pop()
                    last = path.pop()
                    on_path.discard(last)
                    used[mkeys[last]] -= 1
                if best >= cap:
                    break
            if exhausted or best >= cap:
                break
        if exhausted:
            break
    chain = tuple(tuple(int(k) for k in pts[i]) for i in best_chain)
    return ChainResult(best, chain, not exhausted, int(upper), nodes, B, B_prime)


def explicit_null_chain(N: int, d: int = 2) -> np.ndarray:
    """For lam = 1: sites (m, n) = ((k, j, 0...), k), j in {-1, 0, 1}, with
    |m|^2 - n^2 = j^2 <= 1, consecutive Euclidean distance <= sqrt(2)."""
    rows = []
    for k in range(1, N):
        # snake through j so the step from one k to the next stays at distance sqrt(2)
        js = (-1, 0, 1) if k % 2 else (1, 0, -1)
        for j in (js if d >= 2 else (0,)):
            m = [k, j] + [0] * (d - 2) if d >= 2 else [k]
            if sum(abs(x) for x in m) + k <= N:
                rows.append(m + [k])
    return np.array(rows, dtype=np.int64).reshape(-1, d + 1)


def is_valid_chain(chain, lam: float, B: float, B_prime: int, sigma: float = 0.0) -> bool:
    """Independent audit of the three chain conditions."""
    chain = [tuple(int(k) for k in c) for c in chain]
    if len(set(chain)) != len(chain):
        return False
    counts = {}
    for c in chain:
        m, n = c[:-1], c[-1]
        if not abs((n * lam + sigma) ** 2 - sum(x * x for x in m)) < B:
            return False
        counts[m] = counts.get(m, 0) + 1
    if counts and max(counts.values()) > B_prime:
        return False
    return all(math.dist(a, b) < B for a, b in zip(chain, chain[1:]))


def export_chain_csv(path, results, config_sha: str | None = None) -> None:
    write_csv(path, ("B", "B_prime", "k_max", "exact_flag"),
              [(r.B, r.B_prime, r.k_max, r.exact) for r in results], config_sha)


# ----------------------------------------------------------------------------
# eigenvalue variation on far clusters


def far_clusters(clusters, N: int):
    """Clusters with every |n| > N^(1/6) lying at l1 distance > N^(1/4) from the origin."""
    out = []
    for c in clusters:
        if c.min_abs_n > N ** (1 / 6) and int(np.abs(c.sites).sum(axis=1).min()) > N ** 0.25:
            out.append(c)
    return out


def cluster_neighborhood(cluster: SingularCluster, radius: float, params: ProblemParams) -> np.ndarray:
    """Sites at l1 distance < radius from the cluster, resonant sites removed."""
    r = max(0, math.ceil(radius) - 1)
    D = cluster.sites.shape[1]
    ax = np.arange(-r, r + 1)
    offs = np.array(np.meshgrid(*([ax] * D), indexing="ij")).reshape(D, -1).T
    offs = offs[np.abs(offs).sum(axis=1) <= r]
    allp = np.unique((cluster.sites[:, None, :] + offs[None, :, :]).reshape(-1, D), axis=0)
    S = resonant_set(params)
    return np.array([p for p in allp.tolist() if tuple(p) not in S], dtype=np.int64).reshape(-1, D)


@dataclass(frozen=True)
class EigenVariation:
    eigenvalues: np.ndarray
    finite_difference: np.ndarray
    first_order: np.ndarray
    rel_agreement: float
    min_abs_derivative: float
    degenerate: bool
    min_gap: float


def cluster_eigen_variation(u: FourierField, params: ProblemParams, sites, lam: float,
                            delta: float = 1e-6, N: int | None = None,
                            degeneracy_tol: float = 1e-8) -> EigenVariation:
    """Eigenvalue derivatives of T~ restricted to ``sites`` in lam, by centred
    differences and by <psi, (dT~/dlam) psi> with dT~/dlam = diag(-2 n^2 lam / <m>^alpha)."""
    basis = SiteBasis.from_sites(sites, resonant_set(params))
    Nb = int(N or max(2, int(np.abs(basis.sites).sum(axis=1).max()) + 1))

    def mat(l):
        return assemble(u, l, params, Nb, "T_tilde", basis=basis)

    op = mat(lam)
    E, V = np.linalg.eigh(op.entries)
    Ep = np.linalg.eigvalsh(mat(lam + delta).entries)
    Em = np.linalg.eigvalsh(mat(lam - delta).entries)
    fd = (Ep - Em) / (2 * delta)
    n = basis.sites[:, -1].astype(float)
    dT = -2.0 * n * n * lam / op.weights
    gaps = np.diff(E)
    min_gap = float(gaps.min()) if gaps.size else float("inf")
    degenerate = bool(min_gap < degeneracy_tol * max(1.0, float(np.abs(E).max())))
    if degenerate:
        first = np.full_like(E, np.nan)
        rel = float("nan")
    else:
        first = np.einsum("ij,i,ij->j", V, dT, V)
        rel = float(np.max(np.abs(fd - first) / np.maximum(np.abs(first), 1e-300)))
    return EigenVariation(E, fd, first, rel, float(np.min(np.abs(fd))), degenerate, min_gap)
