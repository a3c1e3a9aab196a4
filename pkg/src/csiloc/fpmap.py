"""Unsupervised mapping between a fingerprint transition graph and a floor
plan: centrality-based corridor extraction, spectral-clustering skeletons,
scale normalization, skeleton/corridor/room matching and AP positioning.

Both graphs share the walkable manifold's structure, so matching proceeds
coarse-to-fine: tiny skeleton graphs are matched exactly, bridge points anchor
the corridor chains, and room clusters attach through their door points.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Dict, List, Optional, Sequence, Set, Tuple

import numpy as np
from scipy.sparse import csr_matrix
from scipy.sparse.csgraph import connected_components, dijkstra

from . import gmatch
from .floorplan import FloorPlan, Room, SampledMap, sample_floorplan, shortest_path_nodes
from .gmatch import Assignment, WeightedGraph

__all__ = [
    "FloorPlan", "Room", "SampledMap", "sample_floorplan",
    "centrality", "extract_corridor", "CorridorResult", "skeletonize",
    "SkeletonGraph", "normalize_scale", "match_skeletons", "bridge_centrality",
    "match_corridor_points", "match_rooms", "estimate_ap_positions",
    "mds_embed", "Mapping", "kruskal_stress",
]

_TIE_TOL = 1e-9

try:
    from numba import njit as _njit
    _HAVE_NUMBA = True
except ImportError:        # pragma: no cover - numba is an optional speedup
    _HAVE_NUMBA = False

    def _njit(*a, **k):
        def wrap(f):
            return f
        return wrap if not (len(a) == 1 and callable(a[0])) else a[0]


def _adjacency_lists(w: np.ndarray):
    nbr = []
    wts = []
    for i in range(w.shape[0]):
        idx = np.nonzero(w[i])[0]
        nbr.append(idx)
        wts.append(w[i, idx])
    return nbr, wts


def _geodesic(w: np.ndarray) -> np.ndarray:
    return dijkstra(csr_matrix(w), directed=False)


def _csr_arrays(w: np.ndarray):
    m = csr_matrix(w)
    return m.indptr.astype(np.int64), m.indices.astype(np.int64), m.data


@_njit(cache=True)
def _path_count_kernel(indptr, indices, data, dmat, in_target, restrict_targets):
    """Per-source shortest-path count DP.

    For every source s: sigma[u] = number of shortest s->u paths; phi[u] =
    number of shortest-path continuations from u to any target; the
    contribution of interior node u is sigma[u] * phi[u].  Targets are either
    all nodes or the in_target subset.
    """
    n = dmat.shape[0]
    out = np.zeros(n)
    for s in range(n):
        if restrict_targets and not in_target[s]:
            continue
        d = dmat[s]
        order = np.argsort(d)
        sigma = np.zeros(n)
        sigma[s] = 1.0
        for oi in range(n):
            u = order[oi]
            if u == s or not np.isfinite(d[u]):
                continue
            acc = 0.0
            for e in range(indptr[u], indptr[u + 1]):
                p = indices[e]
                if abs(d[p] + data[e] - d[u]) <= _TIE_TOL * (1.0 + d[u]):
                    acc += sigma[p]
            sigma[u] = acc
        phi = np.zeros(n)
        for oi in range(n - 1, -1, -1):
            u = order[oi]
            if not np.isfinite(d[u]):
                continue
            acc = 0.0
            for e in range(indptr[u], indptr[u + 1]):
                v = indices[e]
                if abs(d[u] + data[e] - d[v]) <= _TIE_TOL * (1.0 + d[v]):
                    hit = 1.0 if (not restrict_targets or in_target[v]) else 0.0
                    acc += hit + phi[v]
            phi[u] = acc
        for u in range(n):
            if u != s:
                out[u] += sigma[u] * phi[u]
    return out


def centrality(g: WeightedGraph) -> np.ndarray:
    """Shortest-path count centrality: C(v) = sum over ordered pairs (s, t) of
    the number of shortest s-t paths passing through interior node v, counting
    every path on ties."""
    n = g.n
    if n == 0:
        return np.zeros(0)
    dmat = _geodesic(g.weights)
    indptr, indices, data = _csr_arrays(g.weights)
    dummy = np.zeros(n, dtype=np.bool_)
    return _path_count_kernel(indptr, indices, data, dmat, dummy, False)


@dataclass
class CorridorResult:
    nodes: np.ndarray            # original node ids surviving extraction
    graph: WeightedGraph         # subgraph re-linked through pruned nodes
    tau: float
    low_confidence: bool = False


def _relink_subgraph(w_full: np.ndarray, nodes: np.ndarray,
                     radius_mult: float = 4.0) -> WeightedGraph:
    """Subgraph whose edges carry full-graph geodesic distances between
    surviving nodes within a small radius: pruning interior nodes must not
    sever chains that were walked through them."""
    if nodes.size == 0:
        return WeightedGraph(np.zeros((0, 0)))
    geo = dijkstra(csr_matrix(w_full), directed=False, indices=nodes)[:, nodes]
    pos_edges = w_full[w_full > 0]
    radius = radius_mult * float(np.median(pos_edges)) if pos_edges.size else np.inf
    w = np.where((geo > 0) & (geo <= radius), geo, 0.0)
    w = np.minimum(w, w.T)
    return WeightedGraph(w)


def _alg1_fixed_point(w: np.ndarray, alive: np.ndarray, tau: float) -> np.ndarray:
    """Iteratively drop nodes with centrality <= tau until nothing changes."""
    alive = alive.copy()
    while alive.any():
        idx = np.nonzero(alive)[0]
        sub = WeightedGraph(w[np.ix_(idx, idx)])
        c = centrality(sub)
        drop = c <= tau
        if not drop.any():
            break
        alive[idx[drop]] = False
    return alive


def _is_connected(w: np.ndarray) -> bool:
    if w.shape[0] <= 1:
        return True
    ncomp, _ = connected_components(csr_matrix(w), directed=False)
    return ncomp == 1


def extract_corridor(g: WeightedGraph, tau: Optional[float] = None,
                     n_grid: int = 10) -> CorridorResult:
    """Corridor-point extraction by iterated centrality pruning.

    With tau given, runs the pruning to its fixed point directly.  Otherwise
    tau is picked from the remaining-size-vs-tau curve: binary search finds
    the largest tau whose fixed point stays non-empty and connected, and the
    knee (maximum second difference, i.e. where the decline flattens into a
    plateau) of the curve up to that point is taken.
    """
    if g.n < 10:
        raise ValueError("corridor extraction needs at least 10 nodes")
    w = g.weights
    all_alive = np.ones(g.n, dtype=bool)

    if tau is not None:
        alive = _alg1_fixed_point(w, all_alive, tau)
        nodes = np.nonzero(alive)[0]
        low = nodes.size == 0
        return CorridorResult(nodes=nodes, graph=_relink_subgraph(w, nodes),
                              tau=tau, low_confidence=low)

    c0 = centrality(g)
    positive = np.sort(c0[c0 > 0])
    if positive.size == 0:
        return CorridorResult(nodes=np.array([], dtype=int),
                              graph=WeightedGraph(np.zeros((0, 0))),
                              tau=0.0, low_confidence=True)

    # Pruning is monotone in tau (a larger threshold removes a superset), so
    # an ascending scan can chain each fixed point off the previous one; the
    # scan doubles as the search for the largest viable tau.
    taus = np.unique(np.quantile(positive, np.linspace(0.02, 0.995, 2 * n_grid)))
    fp_cache: Dict[float, np.ndarray] = {}
    sizes_list: List[float] = []
    scanned: List[float] = []
    alive = all_alive
    plateau = 0
    for t in taus:
        alive = _alg1_fixed_point(w, alive, t)
        idx = np.nonzero(alive)[0]
        ok = idx.size > 0 and _is_connected(w[np.ix_(idx, idx)])
        if not ok:
            break
        fp_cache[t] = alive.copy()
        scanned.append(float(t))
        sizes_list.append(float(idx.size))
        plateau = plateau + 1 if len(sizes_list) > 1 and sizes_list[-1] == sizes_list[-2] else 0
        if plateau >= 5:
            break   # long plateau reached; the knee lies behind us
    if not scanned:
        alive = _alg1_fixed_point(w, all_alive, positive[0] * 0.5)
        nodes = np.nonzero(alive)[0]
        return CorridorResult(nodes=nodes, graph=_relink_subgraph(w, nodes),
                              tau=positive[0] * 0.5, low_confidence=True)
    # The scan already removed the low-flux mass (room points die in the first
    # step); every later step only erodes corridor coverage, so the smallest
    # viable threshold is the stable optimum.  A single-point scan cannot
    # confirm a plateau and is flagged.
    low_conf = len(scanned) < 2
    tau_star = scanned[0]

    alive = fp_cache[tau_star]
    nodes = np.nonzero(alive)[0]
    if nodes.size == 0:
        low_conf = True
    return CorridorResult(nodes=nodes, graph=_relink_subgraph(w, nodes),
                          tau=tau_star, low_confidence=low_conf)


@dataclass
class SkeletonGraph:
    clusters: List[np.ndarray]        # node ids per cluster (into the corridor graph)
    centers: List[int]                # central point per cluster
    graph: WeightedGraph              # inter-cluster skeleton
    scale: float = 1.0                # longest-geodesic normalizer applied

    @property
    def k(self) -> int:
        return len(self.clusters)


def choose_cluster_count(gc: WeightedGraph, target_frac: float = 0.15,
                         k_min: int = 6, k_max: int = 10) -> int:
    """Pick k so the mean cluster geodesic diameter is ~target_frac of the
    longest geodesic (about 8 clusters on an office-sized ring corridor)."""
    geo = _geodesic(gc.weights)
    longest = np.max(geo[np.isfinite(geo)])
    best_k, best_err = k_min, np.inf
    for k in range(k_min, min(k_max, gc.n // 2) + 1):
        labels = _spectral_labels(geo, k)
        diams = []
        for c in range(k):
            idx = np.nonzero(labels == c)[0]
            if idx.size:
                diams.append(np.max(geo[np.ix_(idx, idx)]))
        err = abs(float(np.mean(diams)) - target_frac * longest)
        if err < best_err:
            best_k, best_err = k, err
    return best_k


def _spectral_labels(geo: np.ndarray, k: int) -> np.ndarray:
    from sklearn.cluster import SpectralClustering

    sigma = np.median(geo[np.isfinite(geo) & (geo > 0)]) / 2.0
    aff = np.exp(-(geo / sigma) ** 2)
    aff[~np.isfinite(geo)] = 0.0
    sc = SpectralClustering(n_clusters=k, affinity="precomputed", random_state=0,
                            assign_labels="kmeans", n_init=10)
    return sc.fit_predict(aff)


def skeletonize(gc: WeightedGraph, k: Optional[int] = None) -> SkeletonGraph:
    """Cluster the corridor graph (normalized spectral clustering on a Gaussian
    geodesic similarity) and contract clusters to their central points.

    Edges follow the underlying points: clusters are linked iff some member
    edge crosses them, weighted by the geodesic distance between the two
    central points.
    """
    if gc.n < 4:
        raise ValueError("corridor graph too small to skeletonize")
    geo = _geodesic(gc.weights)
    if not np.all(np.isfinite(geo)):
        raise ValueError("corridor graph must be connected")
    if k is None:
        k = choose_cluster_count(gc)
    if not (2 <= k <= gc.n // 2):
        raise ValueError("cluster count must be in [2, n/2]")
    labels = _spectral_labels(geo, k)

    clusters = [np.nonzero(labels == c)[0] for c in range(k)]
    centers = []
    for idx in clusters:
        within = geo[np.ix_(idx, idx)].sum(axis=1)
        centers.append(int(idx[np.argmin(within)]))

    w = np.zeros((k, k))
    for a in range(k):
        for b in range(a + 1, k):
            linked = np.any(gc.weights[np.ix_(clusters[a], clusters[b])] > 0)
            if linked:
                w[a, b] = w[b, a] = geo[centers[a], centers[b]]
    return SkeletonGraph(clusters=clusters, centers=centers, graph=WeightedGraph(w))


def normalize_scale(g: WeightedGraph) -> Tuple[WeightedGraph, float]:
    """Divide all weights by the longest geodesic distance; returns the divisor."""
    geo = _geodesic(g.weights)
    finite = np.isfinite(geo)
    if not np.all(finite):
        raise ValueError("graph must be connected to normalize scale")
    scale = float(np.max(geo))
    if scale <= 0:
        return WeightedGraph(g.weights.copy(), labels=g.labels), 1.0
    return WeightedGraph(g.weights / scale, labels=g.labels), scale


def match_skeletons(sf: SkeletonGraph, sm: SkeletonGraph) -> Assignment:
    """Normalize both skeletons, build the Kronecker-style edge-compatibility
    affinity, solve by RRWM and discretize with the Hungarian algorithm.

    Matching runs on the all-pairs geodesic completion of each skeleton so
    every cluster pair constrains the assignment, not just adjacent ones.
    After unit normalization those distances sit well below 1, where the
    squared-difference affinity barely separates right from wrong pairs, so
    both graphs are stretched by a common factor that puts the mean entry at 2
    (a pure contrast change: identical on both sides, hence scale-free).
    """
    gf, scale_f = normalize_scale(WeightedGraph(_geodesic(sf.graph.weights)))
    gm, scale_m = normalize_scale(WeightedGraph(_geodesic(sm.graph.weights)))
    sf.scale, sm.scale = scale_f, scale_m
    nz = np.concatenate([gf.weights[gf.weights > 0], gm.weights[gm.weights > 0]])
    if nz.size:
        beta = 2.0 / float(np.mean(nz))
        gf = WeightedGraph(gf.weights * beta, labels=gf.labels)
        gm = WeightedGraph(gm.weights * beta, labels=gm.labels)
    aff = gmatch.affinity_kron(gf, gm)
    best = gmatch.rrwm(aff, gf.n, gm.n)
    alt = gmatch.spectral_match(aff, gf.n, gm.n)
    alt_pairs = gmatch.hungarian(alt.soft) if not alt.degenerate else []
    alt_score = gmatch.assignment_score(aff, alt_pairs, gm.n)
    if alt_score > (best.score or 0.0):
        best = gmatch.Assignment(soft=alt.soft, pairs=alt_pairs, score=alt_score)
    return best


def bridge_centrality(gc: WeightedGraph, clusters: Sequence[np.ndarray]) -> np.ndarray:
    """Shortest-path counts restricted to pairs from neighboring clusters:
    for v in cluster c_i, count s-t shortest paths through v where both s and
    t lie in clusters adjacent to c_i (and outside c_i)."""
    n = gc.n
    k = len(clusters)
    label = np.full(n, -1)
    for ci, idx in enumerate(clusters):
        label[idx] = ci
    adj = np.zeros((k, k), dtype=bool)
    for a in range(k):
        for b in range(a + 1, k):
            if np.any(gc.weights[np.ix_(clusters[a], clusters[b])] > 0):
                adj[a, b] = adj[b, a] = True

    dmat = _geodesic(gc.weights)
    indptr, indices, data = _csr_arrays(gc.weights)
    out = np.zeros(n)
    for ci in range(k):
        neigh = np.nonzero(adj[ci])[0]
        if neigh.size == 0:
            continue
        in_t = np.zeros(n, dtype=np.bool_)
        for b in neigh:
            in_t[clusters[b]] = True
        in_t[clusters[ci]] = False
        contrib = _path_count_kernel(indptr, indices, data, dmat, in_t, True)
        members = np.zeros(n, dtype=bool)
        members[clusters[ci]] = True
        out[members] += contrib[members]
    return out


@dataclass
class Mapping:
    """Fingerprint-id -> floor-plan node-id correspondence."""

    pairs: Dict[int, int] = field(default_factory=dict)
    source: Dict[int, str] = field(default_factory=dict)   # "corridor" | "room"
    low_confidence: bool = False
    unmatched_rooms: List[int] = field(default_factory=list)

    def positions(self, smap: SampledMap) -> Dict[int, np.ndarray]:
        return {f: smap.points[m] for f, m in self.pairs.items()}

    def to_json(self) -> str:
        import json
        return json.dumps({"pairs": {str(k): int(v) for k, v in self.pairs.items()},
                           "source": self.source,
                           "low_confidence": self.low_confidence,
                           "unmatched_rooms": self.unmatched_rooms})


def _arc_fractions(graph: WeightedGraph, chain: List[int]) -> np.ndarray:
    if len(chain) == 1:
        return np.zeros(1)
    steps = [graph.weights[a, b] for a, b in zip(chain, chain[1:])]
    cum = np.concatenate([[0.0], np.cumsum(steps)])
    return cum / max(cum[-1], 1e-30)


def _signature_assign(geo_f: np.ndarray, geo_m: np.ndarray,
                      lm_f: Sequence[int], lm_m: Sequence[int]):
    """Geodesic trilateration of every left node against matched landmarks.

    The fingerprint metric's unit is calibrated from landmark pair ratios;
    each node maps to the floor-plan node with the closest landmark-distance
    signature.  Returns (assignment, mean residual, ratio spread).
    """
    ratios = []
    for i in range(len(lm_f)):
        for j in range(i + 1, len(lm_f)):
            df = geo_f[lm_f[i], lm_f[j]]
            dm = geo_m[lm_m[i], lm_m[j]]
            if np.isfinite(df) and np.isfinite(dm) and df > 0 and dm > 0:
                ratios.append(dm / df)
    if not ratios:
        return None, np.inf, np.inf
    alpha = float(np.median(ratios))
    spread = float(np.quantile(ratios, 0.75) / max(np.quantile(ratios, 0.25), 1e-12))

    sig_f = geo_f[:, list(lm_f)] * alpha          # meters
    sig_m = geo_m[:, list(lm_m)]
    cost = np.abs(sig_f[:, None, :] - sig_m[None, :, :])
    cost = np.where(np.isfinite(cost), cost, 1e6).sum(axis=2)
    assign = np.argmin(cost, axis=1)
    resid = float(cost[np.arange(cost.shape[0]), assign].mean()) / max(len(lm_f), 1)
    return assign, resid, spread


def _candidate_cluster_matches(sk_f: SkeletonGraph, sk_m: SkeletonGraph,
                               n_draws: int = 24, seed: int = 7):
    """Cluster correspondences worth scoring: both relaxation solvers plus
    Gumbel-perturbed Hungarian draws from the RRWM soft assignment (the
    skeleton instance is small and noisy enough that relaxations sometimes
    lock onto a near-symmetric alternative)."""
    gf, _ = normalize_scale(WeightedGraph(_geodesic(sk_f.graph.weights)))
    gm, _ = normalize_scale(WeightedGraph(_geodesic(sk_m.graph.weights)))
    nz = np.concatenate([gf.weights[gf.weights > 0], gm.weights[gm.weights > 0]])
    if nz.size:
        beta = 2.0 / float(np.mean(nz))
        gf = WeightedGraph(gf.weights * beta)
        gm = WeightedGraph(gm.weights * beta)
    aff = gmatch.affinity_kron(gf, gm)
    cands = []
    soft = None
    try:
        res = gmatch.rrwm(aff, gf.n, gm.n)
        soft = res.soft
        cands.append(tuple(res.pairs))
    except gmatch.MatchConvergenceError:
        pass
    try:
        alt = gmatch.spectral_match(aff, gf.n, gm.n)
        if not alt.degenerate:
            cands.append(tuple(gmatch.hungarian(alt.soft)))
            if soft is None:
                soft = alt.soft
    except gmatch.MatchConvergenceError:
        pass
    if soft is not None:
        rng = np.random.default_rng(seed)
        logits = np.log(np.maximum(soft, 1e-12))
        scale = np.std(logits[np.isfinite(logits)])
        for _ in range(n_draws):
            noisy = logits + rng.gumbel(0.0, 0.6 * scale + 1e-9, size=logits.shape)
            cands.append(tuple(gmatch.hungarian(noisy)))
    seen = set()
    out = []
    for c in cands:
        if c not in seen:
            seen.add(c)
            out.append(list(c))
    return out


def match_corridor_points(cf: WeightedGraph, cm: WeightedGraph,
                          sk_f: SkeletonGraph, sk_m: SkeletonGraph,
                          skeleton_match: Assignment) -> Mapping:
    """Match corridor points by geodesic trilateration against the matched
    cluster centers (arc-length interpolation generalized from one chain's
    two anchors to all matched anchors at once, which averages down the
    virtual-distance noise of any single anchor)."""
    cluster_map = dict(skeleton_match.pairs)
    if not cluster_map:
        return Mapping(low_confidence=True)
    geo_f = _geodesic(cf.weights)
    geo_m = _geodesic(cm.weights)
    lm_f = [sk_f.centers[a] for a in sorted(cluster_map)]
    lm_m = [sk_m.centers[cluster_map[a]] for a in sorted(cluster_map)]
    assign, resid, spread = _signature_assign(geo_f, geo_m, lm_f, lm_m)
    mapping = Mapping(low_confidence=(assign is None or spread > 1.5))
    if assign is None:
        return mapping
    for node in range(cf.n):
        mapping.pairs[node] = int(assign[node])
        mapping.source[node] = "corridor"
    return mapping


def _components_without(w: np.ndarray, removed: np.ndarray) -> List[np.ndarray]:
    keep = np.setdiff1d(np.arange(w.shape[0]), removed)
    if keep.size == 0:
        return []
    sub = w[np.ix_(keep, keep)]
    ncomp, labels = connected_components(csr_matrix(sub), directed=False)
    return [keep[labels == c] for c in range(ncomp)]


def estimate_ap_positions(mapping: Mapping, fp, smap: SampledMap,
                          top_n: int = 5) -> Dict[str, np.ndarray]:
    """Coarse AP positions: linear-power weighted centroid of the strongest
    mapped fingerprints hearing each AP; undefined below 2 mapped readings."""
    readings: Dict[str, List[Tuple[float, np.ndarray]]] = {}
    for fid, mid in mapping.pairs.items():
        f = fp.fingerprints[fid]
        for ap, rss in f.rss.items():
            if rss > -99.0:
                readings.setdefault(ap, []).append((rss, smap.points[mid]))
    out: Dict[str, np.ndarray] = {}
    for ap, obs in readings.items():
        if len(obs) < 2:
            continue
        obs.sort(key=lambda x: -x[0])
        top = obs[:top_n]
        wts = np.array([10.0 ** (r / 10.0) for r, _ in top])
        pts = np.array([p for _, p in top])
        out[ap] = (pts * wts[:, None]).sum(axis=0) / wts.sum()
    return out


def match_rooms(fp, fp_graph: WeightedGraph, corridor_f: np.ndarray,
                smap: SampledMap, corridor_m: np.ndarray, mapping: Mapping,
                path_loss_exp: float = 2.5, tx_power_dbm: float = -30.0) -> Mapping:
    """Attach room clusters through their door points.

    Removing corridor nodes splits both graphs into room components; each
    component keys on the corridor node it hangs off (its door).  Ambiguities
    between rooms sharing a door are resolved by comparing measured room RSS
    against log-distance predictions from the coarse AP positions.
    """
    ap_pos = estimate_ap_positions(mapping, fp, smap)
    geo_f = _geodesic(fp_graph.weights)

    comps_f = _components_without(fp_graph.weights, corridor_f)
    comps_m = _components_without(smap.graph.weights, corridor_m)

    door_f: List[Optional[int]] = []
    for comp in comps_f:
        doors = [c for c in corridor_f
                 if np.any(fp_graph.weights[np.ix_([c], comp)] > 0)]
        door_f.append(int(doors[0]) if doors else None)
    door_m: List[Optional[int]] = []
    for comp in comps_m:
        doors = [c for c in corridor_m
                 if np.any(smap.graph.weights[np.ix_([c], comp)] > 0)]
        door_m.append(int(doors[0]) if doors else None)

    geo_m = smap.geodesic
    for ci, comp in enumerate(comps_f):
        if door_f[ci] is None or door_f[ci] not in mapping.pairs:
            mapping.unmatched_rooms.append(ci)
            continue
        door_pos_node = mapping.pairs[door_f[ci]]
        # candidate map rooms ranked by door proximity
        cands = [(geo_m[door_pos_node, door_m[mi]], mi) for mi, c in enumerate(comps_m)
                 if door_m[mi] is not None]
        cands = sorted([c for c in cands if np.isfinite(c[0])])[:3]
        if not cands:
            mapping.unmatched_rooms.append(ci)
            continue
        near = [mi for d, mi in cands if d <= cands[0][0] + 2.0 * smap.grid]
        best_mi = near[0]
        if len(near) > 1 and ap_pos:
            # disambiguate by predicted vs measured RSS at the room centroid
            mean_rss: Dict[str, float] = {}
            for fid in comp:
                for ap, rss in fp.fingerprints[fid].rss.items():
                    if rss > -99.0:
                        mean_rss.setdefault(ap, 0.0)
                        mean_rss[ap] += rss / len(comp)
            best_err = np.inf
            for mi in near:
                centroid = smap.points[comps_m[mi]].mean(axis=0)
                errs = []
                for ap, meas in mean_rss.items():
                    if ap not in ap_pos:
                        continue
                    dist = max(float(np.hypot(*(centroid - ap_pos[ap]))), 0.3)
                    pred = tx_power_dbm - 10.0 * path_loss_exp * np.log10(dist)
                    errs.append(abs(pred - meas))
                err = float(np.mean(errs)) if errs else np.inf
                if err < best_err:
                    best_err, best_mi = err, mi

        comp_m = comps_m[best_mi]
        # rank nodes by distance from the door on both sides and match ranks
        df = np.array([geo_f[door_f[ci], fidx] for fidx in comp])
        dm = np.array([geo_m[door_m[best_mi], midx] for midx in comp_m])
        order_f = comp[np.argsort(df)]
        order_m = comp_m[np.argsort(dm)]
        fr_f = np.linspace(0.0, 1.0, len(order_f))
        fr_m = np.linspace(0.0, 1.0, len(order_m))
        for node, fr in zip(order_f, fr_f):
            target = int(order_m[int(np.argmin(np.abs(fr_m - fr)))])
            mapping.pairs[int(node)] = target
            mapping.source[int(node)] = "room"
    return mapping


@dataclass
class MappingDiagnostics:
    corridor_f_nodes: np.ndarray
    corridor_m_nodes: np.ndarray
    skeleton_match: Assignment
    tau_f: float
    tau_m: float
    k_f: int
    k_m: int
    n_anchors: int = 0


def _component_doors(weights: np.ndarray, cor_nodes: np.ndarray,
                     min_size: int) -> List[int]:
    """Local corridor index of the door node of each off-corridor component:
    the corridor node with the most edges into the component."""
    loc = {int(gn): i for i, gn in enumerate(cor_nodes)}
    doors = []
    for comp in _components_without(weights, cor_nodes):
        if comp.size < min_size:
            continue
        links = [(int((weights[np.ix_([int(c)], comp)] > 0).sum()), int(c))
                 for c in cor_nodes if np.any(weights[np.ix_([int(c)], comp)] > 0)]
        if links:
            doors.append(loc[max(links)[1]])
    return doors


def _pair_doors(doors_f: List[int], doors_m: List[int], assign: np.ndarray,
                geo_m: np.ndarray, gate: float) -> List[Tuple[int, int]]:
    cand = []
    for df in doors_f:
        opts = [(geo_m[assign[df], dm], dm) for dm in doors_m
                if np.isfinite(geo_m[assign[df], dm])]
        if opts:
            cand.append((*min(opts), df))
    cand.sort()
    used_f, used_m, out = set(), set(), []
    for dist, dm, df in cand:
        if df in used_f or dm in used_m or dist > gate:
            continue
        out.append((df, dm))
        used_f.add(df)
        used_m.add(dm)
    return out


def _anchor_alpha(anchors, geo_f, geo_m) -> float:
    ratios = []
    for i in range(len(anchors)):
        for j in range(i + 1, len(anchors)):
            df = geo_f[anchors[i][0], anchors[j][0]]
            dm = geo_m[anchors[i][1], anchors[j][1]]
            if np.isfinite(df) and np.isfinite(dm) and df > 0 and dm > 5:
                ratios.append(dm / df)
    return float(np.median(ratios)) if ratios else np.nan


def _trilaterate_cost(geo_f, geo_m, anchors, wts, alpha, soften: float = 3.0):
    sf = geo_f[:, [a for a, _ in anchors]] * alpha
    sm = geo_m[:, [b for _, b in anchors]]
    w = wts[None, :] / (sf + soften)
    r = np.abs(sf[:, None, :] - sm[None, :, :])
    return (np.where(np.isfinite(r), r, 1e6) * w[:, None, :]).sum(axis=2) / \
        w.sum(axis=1)[:, None]


def _trail_viterbi(fp, cor_nodes, geo_f, geo_m, cost, alpha, assign,
                   n_cand: int = 12, lam: float = 1.0) -> np.ndarray:
    """Re-align each walk's corridor trail by dynamic programming: emissions
    are trilateration costs, transitions penalize disagreement between walked
    and mapped step lengths; majority vote fuses overlapping walks."""
    from collections import Counter, defaultdict

    loc = {int(gn): i for i, gn in enumerate(cor_nodes)}
    votes = defaultdict(Counter)
    for trail in fp.trails.values():
        seq = [loc[f] for f in trail if f in loc]
        if len(seq) < 3:
            continue
        cands = [np.argsort(cost[i])[:n_cand] for i in seq]
        acc = [cost[seq[0]][cands[0]]]
        back = []
        for t in range(1, len(seq)):
            step = alpha * geo_f[seq[t - 1], seq[t]]
            trans = np.abs(geo_m[np.ix_(cands[t - 1], cands[t])] - step)
            trans = np.where(np.isfinite(trans), trans, 1e6)
            tot = acc[-1][:, None] + lam * trans
            back.append(np.argmin(tot, axis=0))
            acc.append(tot.min(axis=0) + cost[seq[t]][cands[t]])
        k = int(np.argmin(acc[-1]))
        rev = [cands[-1][k]]
        for t in range(len(seq) - 1, 0, -1):
            k = back[t - 1][k]
            rev.append(cands[t - 1][k])
        for i, m in zip(seq, rev[::-1]):
            votes[i][int(m)] += 1
    out = assign.copy()
    for i, ctr in votes.items():
        out[i] = ctr.most_common(1)[0][0]
    return out


def map_fingerprints_to_plan(fp, smap: SampledMap,
                             corridor_m: Optional[CorridorResult] = None,
                             k_clusters: Optional[int] = None
                             ) -> Tuple[Mapping, MappingDiagnostics]:
    """Full unsupervised mapping.

    Stages: corridor extraction on both graphs; skeleton clustering and
    candidate correspondence scoring; anchor assembly (junction bridge
    points, room door points paired through the draft alignment, cluster
    centers) with leave-one-out validation; geodesic trilateration against
    the anchors refined by a per-walk Viterbi pass; a second round with
    anchors re-derived from the improved alignment; then room attachment.
    """
    fp_graph = fp.to_weighted_graph()
    cor_f = extract_corridor(fp_graph)
    if cor_f.nodes.size < 4:
        raise ValueError("fingerprint corridor extraction collapsed")
    if corridor_m is None:
        corridor_m = extract_corridor(smap.graph)

    sk_f = skeletonize(cor_f.graph, k=k_clusters)
    sk_m = skeletonize(corridor_m.graph, k=sk_f.k)
    geo_f = _geodesic(cor_f.graph.weights)
    geo_m = _geodesic(corridor_m.graph.weights)
    n_anchors_used = 0

    # global alignment: candidate cluster correspondences scored at point level
    best_assign, best_resid, best_pairs, best_spread = None, np.inf, None, np.inf
    for pairs in _candidate_cluster_matches(sk_f, sk_m):
        lm_f = [sk_f.centers[a] for a, _ in pairs]
        lm_m = [sk_m.centers[b] for _, b in pairs]
        assign, resid, spread = _signature_assign(geo_f, geo_m, lm_f, lm_m)
        if assign is not None and resid < best_resid:
            best_assign, best_resid, best_pairs, best_spread = assign, resid, pairs, spread
    if best_assign is None:
        raise ValueError("no viable skeleton correspondence")
    skel = Assignment(soft=np.zeros((sk_f.k, sk_m.k)), pairs=best_pairs)
    for a, b in best_pairs:
        skel.soft[a, b] = 1.0
    assign = best_assign

    # anchor assembly: junction bridge points, doors, cluster centers
    bc_f = bridge_centrality(cor_f.graph, sk_f.clusters)
    bc_m = bridge_centrality(corridor_m.graph, sk_m.clusters)
    deg_f = (sk_f.graph.weights > 0).sum(axis=1)
    deg_m = (sk_m.graph.weights > 0).sum(axis=1)
    junctions = []
    for a, b in best_pairs:
        if deg_f[a] >= 3 and deg_m[b] >= 3:
            ja = int(sk_f.clusters[a][np.argmax(bc_f[sk_f.clusters[a]])])
            jb = int(sk_m.clusters[b][np.argmax(bc_m[sk_m.clusters[b]])])
            junctions.append((ja, jb))
    doors_f = _component_doors(fp_graph.weights, cor_f.nodes, min_size=3)
    doors_m = _component_doors(smap.graph.weights, corridor_m.nodes, min_size=2)
    centers = [(sk_f.centers[a], sk_m.centers[b]) for a, b in best_pairs]

    for round_no, door_gate in enumerate((6.0, 5.0)):
        door_pairs = _pair_doors(doors_f, doors_m, assign, geo_m, door_gate)
        anchors = junctions + door_pairs + centers
        wts = np.array([3.0] * len(junctions) + [2.0] * len(door_pairs)
                       + [1.0] * len(centers))
        alpha = _anchor_alpha(anchors, geo_f, geo_m)
        if not np.isfinite(alpha):
            break
        if round_no == 0:
            # leave-one-out anchor validation against the rest
            keep = []
            for k in range(len(anchors)):
                others = [anchors[j] for j in range(len(anchors)) if j != k]
                ow = np.array([wts[j] for j in range(len(anchors)) if j != k])
                c = _trilaterate_cost(geo_f, geo_m, others, ow, alpha)[anchors[k][0]]
                if geo_m[int(np.argmin(c)), anchors[k][1]] <= 4.0:
                    keep.append(k)
            anchors = [anchors[k] for k in keep]
            wts = wts[keep]
            alpha = _anchor_alpha(anchors, geo_f, geo_m)
            if not np.isfinite(alpha):
                break
        else:
            # refit the scale densely from the current alignment
            rng = np.random.default_rng(5)
            pp = rng.integers(0, len(assign), (6000, 2))
            df = geo_f[pp[:, 0], pp[:, 1]]
            dm = geo_m[assign[pp[:, 0]], assign[pp[:, 1]]]
            ok = np.isfinite(df) & np.isfinite(dm) & (dm > 10)
            if ok.sum() > 50:
                alpha = float(np.median(dm[ok] / df[ok]))
        cost = _trilaterate_cost(geo_f, geo_m, anchors, wts, alpha)
        assign = np.argmin(cost, axis=1)
        assign = _trail_viterbi(fp, cor_f.nodes, geo_f, geo_m, cost, alpha, assign)
        n_anchors_used = len(anchors)

    mapping = Mapping(low_confidence=best_spread > 1.5)
    for fi in range(cor_f.graph.n):
        mapping.pairs[int(cor_f.nodes[fi])] = int(corridor_m.nodes[assign[fi]])
        mapping.source[int(cor_f.nodes[fi])] = "corridor"

    mapping = match_rooms(fp, fp_graph, cor_f.nodes, smap, corridor_m.nodes, mapping)
    diag = MappingDiagnostics(corridor_f_nodes=cor_f.nodes,
                              corridor_m_nodes=corridor_m.nodes,
                              skeleton_match=skel, tau_f=cor_f.tau,
                              tau_m=corridor_m.tau, k_f=sk_f.k, k_m=sk_m.k,
                              n_anchors=n_anchors_used)
    return mapping, diag


def mds_embed(g: WeightedGraph) -> np.ndarray:
    """Classical MDS of the geodesic distance matrix (visualization only)."""
    geo = _geodesic(g.weights)
    if not np.all(np.isfinite(geo)):
        raise ValueError("graph must be connected")
    n = g.n
    h = np.eye(n) - np.ones((n, n)) / n
    b = -0.5 * h @ (geo ** 2) @ h
    vals, vecs = np.linalg.eigh(b)
    idx = np.argsort(vals)[::-1][:2]
    lam = np.clip(vals[idx], 0.0, None)
    return vecs[:, idx] * np.sqrt(lam)


def kruskal_stress(coords: np.ndarray, target: np.ndarray) -> float:
    """Kruskal stress-1 between embedded Euclidean and target distances."""
    n = coords.shape[0]
    diff = coords[:, None, :] - coords[None, :, :]
    d_emb = np.sqrt((diff ** 2).sum(axis=2))
    iu = np.triu_indices(n, 1)
    num = ((d_emb[iu] - target[iu]) ** 2).sum()
    den = (target[iu] ** 2).sum()
    return float(np.sqrt(num / max(den, 1e-30)))
