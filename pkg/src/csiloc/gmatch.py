"""Graph-matching kernels: spectral matching, reweighted random walks,
Hungarian discretization, affinity builders and a brute-force oracle.

All matchers operate on an assignment affinity matrix M over candidate
correspondences a=(i,i'), maximizing x^T M x subject to one-to-one
constraints.  The problem is NP-hard; spectral matching and RRWM are the two
relaxations used by the pipeline, and brute_force_match is the exact oracle
for small instances.
"""

from __future__ import annotations

import json
from dataclasses import dataclass, field
from itertools import permutations
from typing import List, Optional, Tuple

import numpy as np
from scipy.optimize import linear_sum_assignment


class MatchConvergenceError(RuntimeError):
    def __init__(self, iterations: int, residual: float):
        super().__init__(f"matcher did not converge after {iterations} iterations "
                         f"(residual {residual:.3e})")
        self.iterations = iterations
        self.residual = residual


@dataclass
class WeightedGraph:
    """Symmetric nonnegative weight matrix; zero means no edge."""

    weights: np.ndarray
    labels: Optional[list] = None

    def __post_init__(self):
        w = np.asarray(self.weights, dtype=float)
        if w.ndim != 2 or w.shape[0] != w.shape[1]:
            raise ValueError("weights must be square")
        if not np.allclose(w, w.T):
            raise ValueError("weights must be symmetric")
        if np.any(w < 0):
            raise ValueError("weights must be nonnegative")
        w = w.copy()
        np.fill_diagonal(w, 0.0)
        self.weights = w

    @property
    def n(self) -> int:
        return self.weights.shape[0]

    def edges(self) -> List[Tuple[int, int, float]]:
        out = []
        for i in range(self.n):
            for j in range(i + 1, self.n):
                if self.weights[i, j] > 0:
                    out.append((i, j, float(self.weights[i, j])))
        return out

    def to_json(self) -> str:
        return json.dumps({"n": self.n, "edges": self.edges(), "labels": self.labels})

    @staticmethod
    def from_json(text: str) -> "WeightedGraph":
        obj = json.loads(text)
        w = np.zeros((obj["n"], obj["n"]))
        for i, j, x in obj["edges"]:
            w[i, j] = w[j, i] = x
        return WeightedGraph(w, labels=obj.get("labels"))


@dataclass
class Assignment:
    """Soft correspondence scores plus a hard one-to-one map."""

    soft: np.ndarray                      # (nP, nQ) nonnegative
    pairs: List[Tuple[int, int]]          # injective hard map
    score: Optional[float] = None
    degenerate: bool = False

    def __post_init__(self):
        rows = [i for i, _ in self.pairs]
        cols = [j for _, j in self.pairs]
        if len(set(rows)) != len(rows) or len(set(cols)) != len(cols):
            raise ValueError("hard assignment must be one-to-one")

    def as_dict(self) -> dict:
        return dict(self.pairs)

    def to_json(self) -> str:
        return json.dumps({"pairs": [[int(i), int(j)] for i, j in self.pairs],
                           "degenerate": self.degenerate})


def _check_affinity(m: np.ndarray) -> np.ndarray:
    m = np.asarray(m, dtype=float)
    if m.ndim != 2 or m.shape[0] != m.shape[1]:
        raise ValueError("affinity must be square")
    if np.any(m < 0):
        raise ValueError("affinity must be nonnegative")
    return m


def assignment_score(m: np.ndarray, pairs: List[Tuple[int, int]], n_q: int) -> float:
    """x^T M x for the indicator of `pairs` (row-major candidate order)."""
    if not pairs:
        return 0.0
    idx = [i * n_q + j for i, j in pairs]
    sub = m[np.ix_(idx, idx)]
    return float(sub.sum())


def affinity_pairwise(gp: WeightedGraph, gq: WeightedGraph, epsilon: float) -> np.ndarray:
    """Pairwise-distance compatibility: exp(-|d_ij - d_i'j'|) gated at epsilon.

    Candidates are ordered row-major: a = i*nQ + i'.  Conflicting candidate
    pairs (shared node on exactly one side) and the diagonal are zeroed.
    """
    if gp.n == 0 or gq.n == 0:
        raise ValueError("graphs must be non-empty")
    dp, dq = gp.weights, gq.weights
    gap = np.abs(dp[:, None, :, None] - dq[None, :, None, :])   # (i, i', j, j')
    m = np.where(gap <= epsilon, np.exp(-gap), 0.0)
    n_p, n_q = gp.n, gq.n
    m = m.reshape(n_p * n_q, n_p * n_q)
    _zero_conflicts(m, n_p, n_q)
    return m


def affinity_kron(gp: WeightedGraph, gq: WeightedGraph) -> np.ndarray:
    """Edge-weight compatibility exp(-(A^P_ij - A^Q_i'j')^2) over all candidate
    pairs; graphs should be normalized to a common scale first."""
    if gp.n == 0 or gq.n == 0:
        raise ValueError("graphs must be non-empty")
    diff = gp.weights[:, None, :, None] - gq.weights[None, :, None, :]
    m = np.exp(-diff ** 2).reshape(gp.n * gq.n, gp.n * gq.n)
    _zero_conflicts(m, gp.n, gq.n)
    return m


def _zero_conflicts(m: np.ndarray, n_p: int, n_q: int) -> None:
    a = np.arange(n_p * n_q)
    ai, aj = a // n_q, a % n_q
    conflict = (ai[:, None] == ai[None, :]) ^ (aj[:, None] == aj[None, :])
    m[conflict] = 0.0
    np.fill_diagonal(m, 0.0)


def greedy_discretize(soft: np.ndarray) -> List[Tuple[int, int]]:
    """Standard spectral-matching discretization: repeatedly accept the largest
    remaining score and exclude its row and column."""
    s = soft.copy()
    pairs = []
    while True:
        idx = int(np.argmax(s))
        i, j = divmod(idx, s.shape[1])
        if s[i, j] <= 0:
            break
        pairs.append((i, j))
        s[i, :] = -1.0
        s[:, j] = -1.0
    return sorted(pairs)


def principal_eigenvector(m: np.ndarray, tol: float = 1e-8,
                          max_iter: int = 1000) -> Optional[np.ndarray]:
    """Power iteration on a nonnegative symmetric matrix; None if degenerate."""
    if not np.any(m > 0):
        return None
    x = np.full(m.shape[0], 1.0 / np.sqrt(m.shape[0]))
    residual = np.inf
    for _ in range(max_iter):
        y = m @ x
        norm = np.linalg.norm(y)
        if norm == 0:
            return None
        y /= norm
        residual = float(np.linalg.norm(y - x))
        x = y
        if residual < tol:
            return np.abs(x)
    raise MatchConvergenceError(max_iter, residual)


def spectral_match(m: np.ndarray, n_p: int, n_q: int, tol: float = 1e-8,
                   max_iter: int = 1000) -> Assignment:
    """Principal-eigenvector relaxation (power iteration) with greedy
    peak-picking discretization."""
    m = _check_affinity(m)
    if m.shape[0] != n_p * n_q:
        raise ValueError("affinity size does not match n_p * n_q")
    x = principal_eigenvector(m, tol=tol, max_iter=max_iter)
    if x is None:
        return Assignment(soft=np.zeros((n_p, n_q)), pairs=[], degenerate=True)
    soft = x.reshape(n_p, n_q)
    pairs = greedy_discretize(soft)
    return Assignment(soft=soft, pairs=pairs,
                      score=assignment_score(m, pairs, n_q))


def _sinkhorn(x: np.ndarray, iters: int = 10) -> np.ndarray:
    y = x.copy()
    for _ in range(iters):
        rs = y.sum(axis=1, keepdims=True)
        y = np.divide(y, rs, out=np.zeros_like(y), where=rs > 0)
        cs = y.sum(axis=0, keepdims=True)
        y = np.divide(y, cs, out=np.zeros_like(y), where=cs > 0)
    return y


def rrwm(m: np.ndarray, n_p: int, n_q: int, alpha: float = 0.2, beta: float = 30.0,
         tol: float = 1e-6, max_iter: int = 300) -> Assignment:
    """Reweighted random-walk matching.

    Affinity-preserving random walk with probability-`alpha` jumps to an
    inflated, Sinkhorn-normalized version of the current distribution; the
    stationary distribution is the soft assignment and Hungarian discretizes.
    """
    m = _check_affinity(m)
    if m.shape[0] != n_p * n_q:
        raise ValueError("affinity size does not match n_p * n_q")
    if not np.any(m > 0):
        return Assignment(soft=np.zeros((n_p, n_q)), pairs=[], degenerate=True)

    x = np.full(n_p * n_q, 1.0 / (n_p * n_q))
    residual = np.inf
    for it in range(max_iter):
        q = m @ x
        s = q.sum()
        if s <= 0:
            return Assignment(soft=np.zeros((n_p, n_q)), pairs=[], degenerate=True)
        q /= s
        y = np.exp(beta * q / q.max()).reshape(n_p, n_q)
        y = _sinkhorn(y)
        ys = y.sum()
        if ys > 0:
            y = y / ys
        x_new = (1.0 - alpha) * q + alpha * y.reshape(-1)
        x_new /= x_new.sum()
        residual = float(np.abs(x_new - x).sum())
        x = x_new
        if residual < tol:
            break
    else:
        raise MatchConvergenceError(max_iter, residual)
    soft = x.reshape(n_p, n_q)
    pairs = hungarian(soft)
    return Assignment(soft=soft, pairs=pairs,
                      score=assignment_score(m, pairs, n_q))


def hungarian(scores: np.ndarray) -> List[Tuple[int, int]]:
    """Maximum-total-score one-to-one assignment of min(nP, nQ) pairs."""
    scores = np.asarray(scores, dtype=float)
    if not np.all(np.isfinite(scores)):
        raise ValueError("scores must be finite")
    rows, cols = linear_sum_assignment(-scores)
    return sorted(zip(rows.tolist(), cols.tolist()))


def brute_force_match(m: np.ndarray, n_p: int, n_q: int) -> Assignment:
    """Exhaustive maximizer of x^T M x over injective maps; oracle for tests."""
    if n_p > 8 or n_q > 8:
        raise ValueError("brute force is limited to 8 nodes per side")
    m = _check_affinity(m)
    if m.shape[0] != n_p * n_q:
        raise ValueError("affinity size does not match n_p * n_q")
    best_pairs: List[Tuple[int, int]] = []
    best = -1.0
    k = min(n_p, n_q)
    rows = list(range(n_p))
    for cols in permutations(range(n_q), k):
        pairs = list(zip(rows[:k], cols))
        s = assignment_score(m, pairs, n_q)
        if s > best:
            best, best_pairs = s, pairs
    soft = np.zeros((n_p, n_q))
    for i, j in best_pairs:
        soft[i, j] = 1.0
    return Assignment(soft=soft, pairs=sorted(best_pairs), score=best)
