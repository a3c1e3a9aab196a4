"""RSS fingerprint extraction by iterative trajectory-to-graph matching.

Walks over the same path disagree by device offsets and directional body
shadowing, but their *pairwise* RSS distances are nearly invariant, so
trajectories are matched structurally (spectral matching on a pairwise
compatibility affinity) and merged into one fingerprint chain instead of
spawning parallel chains.  Transition edges carry virtual distances derived
from walking time under a constant-speed-per-trip assumption.
"""

from __future__ import annotations

import json
from dataclasses import dataclass, field
from typing import Dict, List, Optional, Sequence, Tuple

import numpy as np

from . import gmatch

RSS_FLOOR_DBM = -100.0


@dataclass(frozen=True)
class RssSample:
    timestamp: float
    rss: dict  # ap_id -> dBm

    def __post_init__(self):
        if not self.rss:
            raise ValueError("sample must hear at least one AP")
        for ap, v in self.rss.items():
            if not (-100.0 <= v <= 0.0):
                raise ValueError(f"rss[{ap}]={v} outside [-100, 0] dBm")


@dataclass
class RssTrajectory:
    samples: List[RssSample]
    walk_id: str

    def __post_init__(self):
        ts = [s.timestamp for s in self.samples]
        if any(b <= a for a, b in zip(ts, ts[1:])):
            raise ValueError("timestamps must be increasing")

    def __len__(self) -> int:
        return len(self.samples)

    @property
    def total_duration(self) -> float:
        if len(self.samples) < 2:
            return 0.0
        return self.samples[-1].timestamp - self.samples[0].timestamp

    def shifted(self, offset_db: float) -> "RssTrajectory":
        """Copy with a constant dB offset applied to every reading."""
        out = []
        for s in self.samples:
            out.append(RssSample(s.timestamp,
                                 {a: float(np.clip(v + offset_db, -100.0, 0.0))
                                  for a, v in s.rss.items()}))
        return RssTrajectory(out, walk_id=self.walk_id)


def rss_distance(a: RssSample, b: RssSample, p: float = 1.7) -> float:
    """Minkowski distance over the union of heard APs; unheard APs read as
    the -100 dBm noise floor."""
    if p < 1:
        raise ValueError("p must be >= 1")
    aps = set(a.rss) | set(b.rss)
    diffs = [abs(a.rss.get(ap, RSS_FLOOR_DBM) - b.rss.get(ap, RSS_FLOOR_DBM)) for ap in aps]
    return float(np.sum(np.power(diffs, p)) ** (1.0 / p))


def rss_distance_centered(a: RssSample, b: RssSample, p: float = 1.7) -> float:
    """Minkowski distance after removing each sample's mean level.

    A constant device/body offset shifts every AP reading equally, so the
    centered distance is offset-invariant and can gate same-place decisions
    far more tightly than the raw distance."""
    if p < 1:
        raise ValueError("p must be >= 1")
    aps = sorted(set(a.rss) | set(b.rss))
    va = np.array([a.rss.get(ap, RSS_FLOOR_DBM) for ap in aps])
    vb = np.array([b.rss.get(ap, RSS_FLOOR_DBM) for ap in aps])
    va = va - va.mean()
    vb = vb - vb.mean()
    return float(np.sum(np.abs(va - vb) ** p) ** (1.0 / p))


def _distance_matrix(samples: Sequence[RssSample], p: float) -> np.ndarray:
    """Pairwise Minkowski distances over a common AP vector (vectorized)."""
    aps = sorted({ap for s in samples for ap in s.rss})
    mat = np.full((len(samples), len(aps)), RSS_FLOOR_DBM)
    for i, s in enumerate(samples):
        for j, ap in enumerate(aps):
            if ap in s.rss:
                mat[i, j] = s.rss[ap]
    diff = np.abs(mat[:, None, :] - mat[None, :, :])
    return np.power(np.power(diff, p).sum(axis=2), 1.0 / p)


@dataclass
class Fingerprint:
    rss: dict                      # ap_id -> dBm (running mean)
    count: int = 1
    sources: list = field(default_factory=list)   # (walk_id, order_index)
    endpoint: bool = False

    def as_sample(self, timestamp: float = 0.0) -> RssSample:
        return RssSample(timestamp, dict(self.rss))

    def merge(self, sample: RssSample):
        """Fold one sample in as a running per-AP mean."""
        n = self.count
        aps = set(self.rss) | set(sample.rss)
        merged = {}
        for ap in aps:
            old = self.rss.get(ap, RSS_FLOOR_DBM)
            new = sample.rss.get(ap, RSS_FLOOR_DBM)
            merged[ap] = (old * n + new) / (n + 1)
        self.rss = merged
        self.count = n + 1


@dataclass
class FingerprintGraph:
    """Representative RSS points, walkable adjacency and per-walk provenance."""

    fingerprints: List[Fingerprint] = field(default_factory=list)
    edges: Dict[Tuple[int, int], float] = field(default_factory=dict)   # virtual distance
    trails: Dict[str, List[int]] = field(default_factory=dict)          # walk -> fp ids in order
    trail_times: Dict[str, List[float]] = field(default_factory=dict)   # walk -> sample times
    components_flagged: bool = False

    def __len__(self) -> int:
        return len(self.fingerprints)

    def fingerprint_samples(self) -> List[RssSample]:
        return [f.as_sample(float(i)) for i, f in enumerate(self.fingerprints)]

    def edge_key(self, i: int, j: int) -> Tuple[int, int]:
        return (i, j) if i < j else (j, i)

    def to_weighted_graph(self) -> "gmatch.WeightedGraph":
        n = len(self.fingerprints)
        w = np.zeros((n, n))
        for (i, j), d in self.edges.items():
            w[i, j] = w[j, i] = d
        return gmatch.WeightedGraph(w)

    def to_json(self) -> str:
        return json.dumps({
            "fingerprints": [{"rss": f.rss, "count": f.count, "sources": f.sources,
                              "endpoint": f.endpoint} for f in self.fingerprints],
            "edges": [[i, j, d] for (i, j), d in sorted(self.edges.items())],
            "trails": self.trails,
        })

    @staticmethod
    def from_json(text: str) -> "FingerprintGraph":
        obj = json.loads(text)
        fps = [Fingerprint(rss=d["rss"], count=d["count"],
                           sources=[tuple(s) for s in d["sources"]],
                           endpoint=d.get("endpoint", False))
               for d in obj["fingerprints"]]
        edges = {(int(i), int(j)): float(d) for i, j, d in obj["edges"]}
        return FingerprintGraph(fps, edges, {k: list(v) for k, v in obj["trails"].items()})


def match_trajectory(traj: RssTrajectory, fp: FingerprintGraph, epsilon: float = 8.0,
                     p: float = 1.7, prune_radius: float = 12.0,
                     top_k: int = 15) -> "gmatch.Assignment":
    """Match trajectory samples against the fingerprint set structurally.

    Affinity compares pairwise RSS distances (offset-invariant) and is solved
    by spectral matching.  Candidate fingerprints per sample are pre-pruned by
    the centered RSS distance, which a constant device offset cannot inflate,
    so pruning only removes pairs whose affinity support would be empty anyway.
    """
    if len(traj) == 0 or len(fp) == 0:
        raise ValueError("need a non-empty trajectory and fingerprint graph")
    t_samples = list(traj.samples)
    f_samples = fp.fingerprint_samples()
    n_t, n_f = len(t_samples), len(f_samples)

    d_t = _distance_matrix(t_samples, p)
    d_f = _distance_matrix(f_samples, p)
    d_cross = np.array([[rss_distance_centered(a, b, p) for b in f_samples]
                        for a in t_samples])

    cand = np.zeros((n_t, n_f), dtype=bool)
    for i in range(n_t):
        order = np.argsort(d_cross[i])
        keep = order[: top_k]
        cand[i, keep[d_cross[i, keep] <= prune_radius]] = True
    if not cand.any():
        return gmatch.Assignment(soft=np.zeros((n_t, n_f)), pairs=[], degenerate=True)

    pair_idx = np.argwhere(cand)              # assignment candidates (i, i')
    m = len(pair_idx)
    ti, fi = pair_idx[:, 0], pair_idx[:, 1]
    dt_pairs = d_t[np.ix_(ti, ti)]
    df_pairs = d_f[np.ix_(fi, fi)]
    gap = np.abs(dt_pairs - df_pairs)
    aff = np.where(gap <= epsilon, np.exp(-gap), 0.0)
    conflict = ((ti[:, None] == ti[None, :]) ^ (fi[:, None] == fi[None, :]))
    aff[conflict] = 0.0
    np.fill_diagonal(aff, 0.0)

    vec = gmatch.principal_eigenvector(aff)
    if vec is None:
        return gmatch.Assignment(soft=np.zeros((n_t, n_f)), pairs=[], degenerate=True)
    soft = np.zeros((n_t, n_f))
    soft[ti, fi] = vec
    pairs = gmatch.greedy_discretize(soft)
    return gmatch.Assignment(soft=soft, pairs=pairs)


def merge_trajectory(fp: FingerprintGraph, traj: RssTrajectory,
                     assoc: Optional["gmatch.Assignment"],
                     merge_threshold: float = 0.5,
                     merge_gate: float = 6.0, p: float = 1.7) -> FingerprintGraph:
    """Fold a matched trajectory into the graph.

    Samples whose hard match scores at least `merge_threshold` of their row
    maximum AND sit within `merge_gate` centered-RSS units of the matched
    fingerprint merge into it; the rest become new fingerprints.  The centered
    gate blocks wormhole merges between RSS-ambiguous distant spots without
    penalizing constant device offsets.  Consecutive samples leave a chain
    edge observation.
    """
    accepted = {}
    if assoc is not None and not assoc.degenerate:
        row_max = assoc.soft.max(axis=1)
        fp_samples = fp.fingerprint_samples()
        for i, j in assoc.pairs:
            if row_max[i] > 0 and assoc.soft[i, j] >= merge_threshold * row_max[i] \
                    and rss_distance_centered(traj.samples[i], fp_samples[j], p) <= merge_gate:
                accepted[i] = j

    trail: List[int] = []
    for i, sample in enumerate(traj.samples):
        if i in accepted:
            fid = accepted[i]
            fp.fingerprints[fid].merge(sample)
        else:
            fid = len(fp.fingerprints)
            fp.fingerprints.append(Fingerprint(rss=dict(sample.rss)))
        fp.fingerprints[fid].sources.append((traj.walk_id, i))
        if not trail or trail[-1] != fid:
            trail.append(fid)
    if trail:
        fp.fingerprints[trail[0]].endpoint = True
        fp.fingerprints[trail[-1]].endpoint = True
    fp.trails[traj.walk_id] = trail
    fp.trail_times[traj.walk_id] = [s.timestamp for s in traj.samples]
    return fp


def build_edges(fp: FingerprintGraph, epsilon: float = 8.0, p: float = 1.7) -> FingerprintGraph:
    """Create the transition edge set.

    Rule 1: consecutive fingerprints within one walk's trail.
    Rule 2: cross-walk pairs closer than epsilon in RSS space where at least
    one side is a trail start or end.
    """
    fp.edges = {}
    for walk, trail in fp.trails.items():
        for a, b in zip(trail, trail[1:]):
            if a != b:
                fp.edges.setdefault(fp.edge_key(a, b), 0.0)

    samples = fp.fingerprint_samples()
    ends = [i for i, f in enumerate(fp.fingerprints) if f.endpoint]
    walk_of = {i: {w for w, _ in f.sources} for i, f in enumerate(fp.fingerprints)}
    for i in ends:
        for j in range(len(fp.fingerprints)):
            if i == j:
                continue
            if not (walk_of[i] - walk_of[j]) and not (walk_of[j] - walk_of[i]):
                continue  # rule 2 joins different trajectories only
            if rss_distance_centered(samples[i], samples[j], p) < epsilon / 2.0:
                fp.edges.setdefault(fp.edge_key(i, j), 0.0)
    return fp


def assign_virtual_distance(fp: FingerprintGraph, walks: Sequence[RssTrajectory],
                            sweeps: int = 3) -> FingerprintGraph:
    """Weight edges by walking time under constant speed per walk.

    Each walk contributes edge-time observations; per-walk speed scales are
    reconciled by alternating least squares over shared edges (a few sweeps
    suffice because indoor walks overlap heavily), then all weights are
    divided by the longest geodesic so downstream matching sees unit scale.
    """
    walk_lookup = {w.walk_id: w for w in walks}
    obs: Dict[Tuple[int, int], List[Tuple[str, float]]] = {}
    for walk_id in fp.trails:
        if walk_id not in walk_lookup:
            continue
        w = walk_lookup[walk_id]
        # fingerprint id per sample, reconstructed from provenance
        per_sample: Dict[int, int] = {}
        for fid, f in enumerate(fp.fingerprints):
            for wid, idx in f.sources:
                if wid == walk_id:
                    per_sample[idx] = fid
        seq = [per_sample[i] for i in range(len(w.samples)) if i in per_sample]
        tseq = [w.samples[i].timestamp for i in range(len(w.samples)) if i in per_sample]
        # collapse each visit (run of consecutive identical fingerprints) to its
        # midpoint time, so merged samples do not swallow walked time
        runs: List[Tuple[int, float]] = []
        k = 0
        while k < len(seq):
            j = k
            while j + 1 < len(seq) and seq[j + 1] == seq[k]:
                j += 1
            runs.append((seq[k], 0.5 * (tseq[k] + tseq[j])))
            k = j + 1
        for (fa, ta), (fb, tb) in zip(runs, runs[1:]):
            key = fp.edge_key(fa, fb)
            if key in fp.edges:
                obs.setdefault(key, []).append((walk_id, tb - ta))

    scales = {w: 1.0 for w in fp.trails}
    lengths = {k: float(np.mean([dt for _, dt in v])) for k, v in obs.items()}
    for _ in range(sweeps):
        for k, v in obs.items():
            lengths[k] = float(np.mean([scales[w] * dt for w, dt in v]))
        for walk in scales:
            num = den = 0.0
            for k, v in obs.items():
                for w, dt in v:
                    if w == walk:
                        num += lengths[k] * dt
                        den += dt * dt
            if den > 0:
                scales[walk] = num / den

    for k in fp.edges:
        if k in lengths and lengths[k] > 0:
            fp.edges[k] = lengths[k]
    positive = [d for d in fp.edges.values() if d > 0]
    fallback = float(np.median(positive)) if positive else 1.0
    for k, d in fp.edges.items():
        if d <= 0:
            fp.edges[k] = max(0.25 * fallback, 1e-9)   # rule-2 stitch edges: short hops

    g = fp.to_weighted_graph()
    from .fpmap import normalize_scale
    try:
        _, scale = normalize_scale(g)
        for k in fp.edges:
            fp.edges[k] = fp.edges[k] / scale
    except ValueError:
        fp.components_flagged = True   # disconnected: leave per-component raw scales
    return fp


def consolidate(fp: FingerprintGraph, delta: float = 5.0, p: float = 1.7,
                max_rounds: int = 4) -> FingerprintGraph:
    """Collapse residual parallel chains: fingerprints within `delta`
    centered-RSS units of a graph neighbor (or a neighbor's neighbor) merge.
    Trails are re-pointed; edges must be rebuilt afterwards."""
    for _ in range(max_rounds):
        samples = fp.fingerprint_samples()
        nbrs: Dict[int, set] = {i: set() for i in range(len(fp.fingerprints))}
        for (i, j) in fp.edges:
            nbrs[i].add(j)
            nbrs[j].add(i)
        merged_into: Dict[int, int] = {}
        dead = set()
        for i in range(len(fp.fingerprints)):
            if i in dead:
                continue
            cand = set()
            for n in nbrs[i]:
                cand.add(n)
                cand |= nbrs[n]
            for j in sorted(cand):
                if j <= i or j in dead:
                    continue
                if rss_distance_centered(samples[i], samples[j], p) < delta:
                    fi, fj = fp.fingerprints[i], fp.fingerprints[j]
                    tot = fi.count + fj.count
                    aps_all = set(fi.rss) | set(fj.rss)
                    fi.rss = {a: (fi.rss.get(a, RSS_FLOOR_DBM) * fi.count +
                                  fj.rss.get(a, RSS_FLOOR_DBM) * fj.count) / tot
                              for a in aps_all}
                    fi.count = tot
                    fi.sources += fj.sources
                    fi.endpoint = fi.endpoint or fj.endpoint
                    dead.add(j)
                    merged_into[j] = i
        if not dead:
            break
        keep = [i for i in range(len(fp.fingerprints)) if i not in dead]
        new_id = {old: k for k, old in enumerate(keep)}

        def resolve(x: int) -> int:
            while x in merged_into:
                x = merged_into[x]
            return new_id[x]

        fp.fingerprints = [fp.fingerprints[i] for i in keep]
        fp.trails = {w: [resolve(f) for f in tr] for w, tr in fp.trails.items()}
        for w, tr in fp.trails.items():
            fp.trails[w] = [t for k, t in enumerate(tr) if k == 0 or t != tr[k - 1]]
        old_edges = fp.edges
        fp.edges = {}
        for (i, j) in old_edges:
            a, b = resolve(i), resolve(j)
            if a != b:
                fp.edges.setdefault(fp.edge_key(a, b), 0.0)
    return fp


def extract_fingerprints(walks: Sequence[RssTrajectory], epsilon: float = 8.0,
                         p: float = 1.7, merge_threshold: float = 0.5,
                         prune_radius: float = 12.0, merge_gate: float = 6.0,
                         consolidate_delta: float = 5.0) -> FingerprintGraph:
    """Full extraction pipeline: iteratively match and merge every walk,
    consolidate near-duplicates, then build transition edges and assign
    virtual distances."""
    fp = FingerprintGraph()
    for walk in walks:
        assoc = None
        if len(fp) > 0:
            assoc = match_trajectory(walk, fp, epsilon=epsilon, p=p,
                                     prune_radius=prune_radius)
        merge_trajectory(fp, walk, assoc, merge_threshold=merge_threshold,
                         merge_gate=merge_gate, p=p)
    build_edges(fp, epsilon=epsilon, p=p)
    if consolidate_delta > 0:
        consolidate(fp, delta=consolidate_delta, p=p)
        build_edges(fp, epsilon=epsilon, p=p)
    assign_virtual_distance(fp, walks)
    return fp
