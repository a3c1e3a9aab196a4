"""Unified localization and tracking: candidate pruning, graph-matching
position estimation, and particle-filter fusion with CSI speed.

A localization request is just a tracking request without history: the RSS
window is matched structurally against pruned fingerprint candidates, the
match is screened for spatial continuity, and a particle filter over
(map node, speed) states fuses matched positions with the walking speed.
Speed carries no direction, so prediction enumerates the available graph
directions and lets observation weighting plus resampling prune the wrong
branches.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Dict, List, Optional, Sequence, Set, Tuple

import numpy as np

from . import gmatch
from .floorplan import SampledMap
from .fpextract import FingerprintGraph, RssSample, rss_distance, _distance_matrix
from .fpmap import Mapping
from .speedest import SpeedSeries

DEFAULT_BACKTRACK_CAP = 40


@dataclass
class TrackRequest:
    samples: List[RssSample]
    session_id: str = ""

    def __post_init__(self):
        if len(self.samples) > DEFAULT_BACKTRACK_CAP:
            self.samples = self.samples[-DEFAULT_BACKTRACK_CAP:]
        ts = [s.timestamp for s in self.samples]
        if any(b <= a for a, b in zip(ts, ts[1:])):
            raise ValueError("request window must be time-ordered")


@dataclass
class PFParams:
    n_particles: int = 500
    sigma_v: float = 0.15     # m/s speed noise
    sigma_obs: float = 2.0    # m observation kernel
    resample_frac: float = 0.5


@dataclass
class TrackState:
    nodes: np.ndarray        # (N,) map node ids
    speeds: np.ndarray       # (N,) m/s
    weights: np.ndarray      # (N,), sum 1
    estimate: np.ndarray     # (2,) floor-plan coordinates
    covariance: np.ndarray   # (2, 2)
    reinitialized: bool = False

    def __post_init__(self):
        if not np.isclose(self.weights.sum(), 1.0, atol=1e-9):
            raise ValueError("particle weights must sum to 1")


@dataclass
class Trajectory:
    times: np.ndarray
    points: np.ndarray          # (n, 2)
    confidence: np.ndarray
    low_confidence: bool = False

    def __post_init__(self):
        if len(self.times) > 1 and np.any(np.diff(self.times) <= 0):
            raise ValueError("timestamps must increase")


def prune_candidates(req: TrackRequest, fp: FingerprintGraph, mapping: Mapping,
                     smap: SampledMap, epsilon: float = 3.0,
                     p: float = 1.7) -> np.ndarray:
    """Geodesic epsilon-neighborhood (on the mapped floor plan) of the
    request window's nearest-neighbor fingerprints."""
    if len(fp) == 0:
        raise ValueError("fingerprint database is empty")
    mapped = sorted(mapping.pairs)
    if not mapped:
        raise ValueError("no mapped fingerprints")
    fp_samples = fp.fingerprint_samples()
    nn_nodes = []
    for s in req.samples:
        dists = [rss_distance(s, fp_samples[f], p) for f in mapped]
        nn_nodes.append(mapping.pairs[mapped[int(np.argmin(dists))]])
    keep = []
    for f in mapped:
        node = mapping.pairs[f]
        if any(smap.geodesic[node, nn] <= epsilon for nn in nn_nodes):
            keep.append(f)
    return np.array(sorted(set(keep)), dtype=int)


def match_track(req: TrackRequest, candidates: np.ndarray, fp: FingerprintGraph,
                mapping: Mapping, smap: SampledMap, v_max: float = 1.6,
                epsilon: float = 8.0, p: float = 1.7) -> Trajectory:
    """Structural matching of the request window against candidate
    fingerprints, followed by a spatial-continuity screen: correspondences
    implying an inter-sample geodesic speed above v_max are discarded."""
    if candidates.size == 0:
        raise ValueError("candidate set is empty")
    fp_samples = fp.fingerprint_samples()
    cand_samples = [fp_samples[c] for c in candidates]
    times = np.array([s.timestamp for s in req.samples])

    if len(req.samples) == 1:
        dists = [rss_distance(req.samples[0], cs, p) for cs in cand_samples]
        best = int(np.argmin(dists))
        node = mapping.pairs[int(candidates[best])]
        return Trajectory(times=times, points=smap.points[[node]],
                          confidence=np.array([1.0]))

    d_req = _distance_matrix(req.samples, p)
    d_cand = _distance_matrix(cand_samples, p)
    gap = np.abs(d_req[:, None, :, None] - d_cand[None, :, None, :])
    n_r, n_c = len(req.samples), len(cand_samples)
    aff = np.where(gap <= epsilon, np.exp(-gap), 0.0).reshape(n_r * n_c, n_r * n_c)
    gmatch._zero_conflicts(aff, n_r, n_c)
    vec = gmatch.principal_eigenvector(aff)
    if vec is None:
        return Trajectory(times=np.array([]), points=np.zeros((0, 2)),
                          confidence=np.array([]), low_confidence=True)
    soft = vec.reshape(n_r, n_c)
    pairs = dict(gmatch.greedy_discretize(soft))

    # continuity screen: drop the weaker side of any overspeed link
    def overspeed(i: int, j: int) -> bool:
        ni = mapping.pairs[int(candidates[pairs[i]])]
        nj = mapping.pairs[int(candidates[pairs[j]])]
        dt = times[j] - times[i]
        return smap.geodesic[ni, nj] > v_max * dt + smap.grid

    changed = True
    while changed and len(pairs) > 1:
        changed = False
        idx = sorted(pairs)
        for i, j in zip(idx, idx[1:]):
            if overspeed(i, j):
                drop = i if soft[i, pairs[i]] < soft[j, pairs[j]] else j
                del pairs[drop]
                changed = True
                break

    if not pairs:
        return Trajectory(times=np.array([]), points=np.zeros((0, 2)),
                          confidence=np.array([]), low_confidence=True)
    idx = sorted(pairs)
    pts = np.array([smap.points[mapping.pairs[int(candidates[pairs[i]])]] for i in idx])
    row_max = soft.max(axis=1)
    conf = np.array([soft[i, pairs[i]] / row_max[i] if row_max[i] > 0 else 0.0
                     for i in idx])
    return Trajectory(times=times[idx], points=pts, confidence=conf)


def _walk_graph(smap: SampledMap, node: int, distance: float,
                rng: np.random.Generator) -> int:
    """Move `distance` along the visibility graph from `node`, choosing
    uniformly among directions at every junction; returns the landing node."""
    w = smap.graph.weights
    current = int(node)
    prev = -1
    remaining = float(distance)
    for _ in range(64):   # safety bound on hops
        nbrs = np.nonzero(w[current])[0]
        if nbrs.size == 0:
            return current
        choices = nbrs[nbrs != prev] if nbrs.size > 1 else nbrs
        nxt = int(choices[rng.integers(len(choices))])
        edge = w[current, nxt]
        if remaining <= edge:
            return nxt if remaining > edge / 2.0 else current
        remaining -= edge
        prev, current = current, nxt
    return current


def init_state(nodes: Sequence[int], smap: SampledMap, params: PFParams,
               rng: np.random.Generator, v0: float = 1.2) -> TrackState:
    """Particles spread uniformly over the given map nodes."""
    nodes = np.asarray(nodes, dtype=int)
    if nodes.size == 0:
        raise ValueError("cannot initialize on an empty node set")
    picks = nodes[rng.integers(nodes.size, size=params.n_particles)]
    speeds = np.clip(v0 + params.sigma_v * rng.standard_normal(params.n_particles), 0.0, None)
    weights = np.full(params.n_particles, 1.0 / params.n_particles)
    est, cov = _estimate(picks, weights, smap)
    return TrackState(nodes=picks, speeds=speeds, weights=weights,
                      estimate=est, covariance=cov)


def _estimate(nodes: np.ndarray, weights: np.ndarray, smap: SampledMap):
    pts = smap.points[nodes]
    mean = (pts * weights[:, None]).sum(axis=0)
    centered = pts - mean
    cov = (centered.T * weights) @ centered
    snapped = smap.points[smap.nearest_node(mean)]
    return snapped, cov


def _systematic_resample(weights: np.ndarray, rng: np.random.Generator) -> np.ndarray:
    n = len(weights)
    positions = (rng.random() + np.arange(n)) / n
    return np.searchsorted(np.cumsum(weights), positions)


def pf_step(state: TrackState, v_obs: float, matched_pos: Optional[np.ndarray],
            dt: float, smap: SampledMap, params: PFParams,
            rng: np.random.Generator,
            fallback_nodes: Optional[np.ndarray] = None) -> TrackState:
    """One predict/update/resample cycle.

    Prediction advances each particle v*dt along the graph in a direction
    drawn uniformly at its node; update reweights by a Gaussian observation
    kernel around the matched position; systematic resampling triggers when
    the effective sample size halves.
    """
    if dt <= 0:
        raise ValueError("dt must be positive")
    n = params.n_particles
    speeds = np.clip(v_obs + params.sigma_v * rng.standard_normal(n), 0.0, None)
    nodes = np.array([_walk_graph(smap, node, v * dt, rng)
                      for node, v in zip(state.nodes, speeds)], dtype=int)
    weights = state.weights.copy()
    reinit = False
    if matched_pos is not None:
        pts = smap.points[nodes]
        d2 = ((pts - np.asarray(matched_pos)) ** 2).sum(axis=1)
        weights = weights * np.exp(-d2 / (2.0 * params.sigma_obs ** 2))
        total = weights.sum()
        if total <= 0 or not np.isfinite(total):
            if fallback_nodes is None or len(fallback_nodes) == 0:
                raise ValueError("all particle weights vanished and no fallback set")
            fresh = init_state(fallback_nodes, smap, params, rng, v0=v_obs)
            fresh.reinitialized = True
            return fresh
        weights /= total
    ess = 1.0 / np.sum(weights ** 2)
    if ess < params.resample_frac * n:
        idx = _systematic_resample(weights, rng)
        nodes, speeds = nodes[idx], speeds[idx]
        weights = np.full(n, 1.0 / n)
    est, cov = _estimate(nodes, weights, smap)
    return TrackState(nodes=nodes, speeds=speeds, weights=weights,
                      estimate=est, covariance=cov, reinitialized=reinit)


class Tracker:
    """Stateful session: prune -> match -> particle-filter fusion per update.

    The first update carries no history and degrades to pure localization
    (the filter initializes on the matched candidates).
    """

    def __init__(self, fp: FingerprintGraph, mapping: Mapping, smap: SampledMap,
                 params: Optional[PFParams] = None, seed: int = 0,
                 prune_epsilon: float = 3.0, v_max: float = 1.6):
        self.fp = fp
        self.mapping = mapping
        self.smap = smap
        self.params = params or PFParams()
        self.rng = np.random.default_rng(seed)
        self.prune_epsilon = prune_epsilon
        self.v_max = v_max
        self.state: Optional[TrackState] = None
        self.last_time: Optional[float] = None
        self._last_candidates: Optional[np.ndarray] = None

    def update(self, req: TrackRequest, v_obs: float = 1.2) -> Tuple[np.ndarray, float]:
        """Process one request window; returns (position, confidence)."""
        cands = prune_candidates(req, self.fp, self.mapping, self.smap,
                                 epsilon=self.prune_epsilon)
        self._last_candidates = np.array([self.mapping.pairs[c] for c in cands])
        traj = match_track(req, cands, self.fp, self.mapping, self.smap,
                           v_max=self.v_max)
        matched_pos = traj.points[-1] if len(traj.times) else None
        conf = float(traj.confidence[-1]) if len(traj.times) else 0.0
        now = req.samples[-1].timestamp

        if self.state is None:
            if matched_pos is not None:
                seed_nodes = [self.smap.nearest_node(p) for p in traj.points]
            else:
                seed_nodes = self._last_candidates
            self.state = init_state(seed_nodes, self.smap, self.params, self.rng, v0=v_obs)
            if matched_pos is not None:
                self.state = pf_step(self.state, 0.0 + 1e-6, matched_pos, 1e-3,
                                     self.smap, self.params, self.rng,
                                     fallback_nodes=self._last_candidates)
            self.last_time = now
            return self.state.estimate, conf

        dt = max(now - self.last_time, 1e-3)
        self.state = pf_step(self.state, v_obs, matched_pos, dt, self.smap,
                             self.params, self.rng,
                             fallback_nodes=self._last_candidates)
        self.last_time = now
        return self.state.estimate, conf


def track_session(samples: List[RssSample], fp: FingerprintGraph, mapping: Mapping,
                  smap: SampledMap, speed_series: Optional[SpeedSeries] = None,
                  history_cap: int = DEFAULT_BACKTRACK_CAP, seed: int = 0,
                  params: Optional[PFParams] = None, v_default: float = 1.2,
                  start_index: int = 1) -> Trajectory:
    """Feed a growing sample window through a Tracker; one estimate per step."""
    tracker = Tracker(fp, mapping, smap, params=params, seed=seed)
    times, pts, confs = [], [], []
    for k in range(start_index, len(samples) + 1):
        window = samples[max(0, k - history_cap):k]
        req = TrackRequest(window)
        t = window[-1].timestamp
        v = v_default
        if speed_series is not None and np.isfinite(speed_series.speeds).any():
            good = np.isfinite(speed_series.speeds)
            v = float(np.interp(t, speed_series.times[good], speed_series.speeds[good]))
        pos, c = tracker.update(req, v_obs=v)
        times.append(t)
        pts.append(pos)
        confs.append(c)
    return Trajectory(times=np.array(times), points=np.array(pts),
                      confidence=np.array(confs))
