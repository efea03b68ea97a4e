"""Exact k-nearest-neighbor graphs and kNN density / utility scores.

The graph is exact under Euclidean distance with ties broken by lower
index. Two strategies share one contract:

* small inputs (n <= DIRECT_PATH_MAX_N): full pairwise distances computed
  directly from coordinate differences, which is the reference-precision
  formulation (no cancellation), then a stable (distance, index) sort.
* large inputs: a float32 Gram-matrix pass preselects k + CANDIDATE_PAD
  candidates per query (torch.topk when torch is importable, else numpy
  argpartition), whose distances are then recomputed exactly in float64
  from coordinate differences and re-ranked. Rows with an exact-distance
  tie crossing the k boundary fall back to a full-row recompute so the
  lower-index tie rule survives preselection.

Blocks of queries are independent, so results are bit-identical for any
worker count.
"""

from __future__ import annotations

import math
import os
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass

import numpy as np

from .errors import DataError, DuplicatePointsError
from .io import EmbeddingMatrix

try:  # optional acceleration for the candidate preselection only
    import torch

    torch.set_num_threads(1)
except ImportError:  # pragma: no cover - exercised on torch-free installs
    torch = None

DIRECT_PATH_MAX_N = 2048
CANDIDATE_PAD = 64
QUERY_BLOCK = 2048
JITTER_SCALE = 1e-12


def resolve_threads(threads: int | None = None) -> int:
    """Worker count: explicit argument, else LABELSEL_THREADS, else all cores."""
    if threads is None:
        env = os.environ.get("LABELSEL_THREADS")
        if env is not None:
            threads = int(env)
    if threads is None:
        threads = os.cpu_count() or 1
    return max(1, threads)


@dataclass(frozen=True)
class NeighborGraph:
    """Per-instance k nearest neighbors, sorted by ascending distance."""

    k: int
    neighbors: np.ndarray
    distances: np.ndarray

    def __post_init__(self):
        neighbors = np.asarray(self.neighbors, dtype=np.int64)
        distances = np.asarray(self.distances, dtype=np.float64)
        if neighbors.shape != distances.shape or neighbors.ndim != 2:
            raise DataError("neighbors and distances must be equal-shape 2-D arrays")
        if neighbors.shape[1] != self.k:
            raise DataError(f"graph claims k={self.k} but rows have {neighbors.shape[1]} entries")
        if (neighbors == np.arange(neighbors.shape[0])[:, None]).any():
            raise DataError("self-index present in neighbor rows")
        if (np.diff(distances, axis=1) < 0).any():
            raise DataError("neighbor distances must be non-decreasing per row")
        if distances.size and distances.min() < 0:
            raise DataError("negative neighbor distance")
        for a in (neighbors, distances):
            a.flags.writeable = False
        object.__setattr__(self, "neighbors", neighbors)
        object.__setattr__(self, "distances", distances)

    @property
    def n(self) -> int:
        return self.neighbors.shape[0]


@dataclass(frozen=True)
class UtilityScores:
    """Mean distance to the k nearest neighbors and its reciprocal."""

    mean_knn_distance: np.ndarray
    utility: np.ndarray

    def __post_init__(self):
        for a in (self.mean_knn_distance, self.utility):
            np.asarray(a).flags.writeable = False


def _exact_block(X: np.ndarray, i0: int, i1: int, cand: np.ndarray) -> np.ndarray:
    """Float64 distances from rows i0:i1 to per-row candidate indices.

    Computed from coordinate differences (never from expanded dot products)
    so close pairs keep full relative precision. Tiled to stay cache-resident.
    """
    b, c = i1 - i0, cand.shape[1]
    out = np.empty((b, c))
    tile = max(1, (16 << 20) // (c * X.shape[1] * 8))
    for t0 in range(0, b, tile):
        t1 = min(t0 + tile, b)
        diff = X[cand[t0:t1]]
        diff -= X[i0 + t0 : i0 + t1, None, :]
        np.square(diff, out=diff)
        np.sum(diff, axis=2, out=out[t0:t1])
    return np.sqrt(out, out=out)


def _rank_candidates(dist, cand, k):
    """Stable (distance, then index) ranking; returns k best per row."""
    order = np.lexsort((cand, dist), axis=1)[:, :k]
    rows = np.arange(dist.shape[0])[:, None]
    return cand[rows, order], dist[rows, order]


def _block_direct(X, i0, i1, k):
    n = X.shape[0]
    cand = np.broadcast_to(np.arange(n, dtype=np.int64), (i1 - i0, n))
    dist = _exact_block(X, i0, i1, cand)
    dist[np.arange(i1 - i0), np.arange(i0, i1)] = np.inf
    return _rank_candidates(dist, np.ascontiguousarray(cand), k)


def _block_preselect(X, X32, sq32, i0, i1, k):
    n = X.shape[0]
    kp = min(k + CANDIDATE_PAD, n - 1)
    Q32 = X32[i0:i1]
    d2 = Q32 @ X32.T
    d2 *= -2.0
    d2 += sq32[i0:i1, None]
    d2 += sq32[None, :]
    d2[np.arange(i1 - i0), np.arange(i0, i1)] = np.inf
    if torch is not None:
        cand = torch.topk(
            torch.from_numpy(d2), kp, dim=1, largest=False, sorted=False
        ).indices.numpy().astype(np.int64)
    else:
        cand = np.argpartition(d2, kp - 1, axis=1)[:, :kp].astype(np.int64)
    dist = _exact_block(X, i0, i1, cand)
    nbr, nbd = _rank_candidates(dist, cand, k)

    # Exact tie across the k boundary: preselection may have dropped a
    # lower-index equal-distance point, so redo those rows exhaustively.
    if kp > k:
        full = np.sort(dist, axis=1)
        for r in np.flatnonzero(full[:, k - 1] == full[:, k]):
            row_cand = np.arange(n, dtype=np.int64)[None, :]
            row_dist = _exact_block(X, i0 + r, i0 + r + 1, row_cand)
            row_dist[0, i0 + r] = np.inf
            nbr[r], nbd[r] = _rank_candidates(row_dist, row_cand, k)
    return nbr, nbd


def build_knn_graph(
    m: EmbeddingMatrix,
    k: int,
    *,
    threads: int | None = None,
    jitter: bool = False,
    seed: int = 0,
) -> NeighborGraph:
    """Exact k nearest neighbors of every instance under Euclidean distance.

    Coincident points (zero nearest-neighbor distance) raise
    DuplicatePointsError unless ``jitter`` is set, in which case the inputs
    are perturbed once by seeded uniform noise at 1e-12 scale and the graph
    rebuilt; silent infinite utility must never reach selection.
    """
    n = m.n
    if not 1 <= k <= n - 1:
        raise DataError(f"k must be in [1, n-1] = [1, {n - 1}], got {k}")
    X = m.data
    for attempt in range(2):
        neighbors, distances = _compute_graph(X, k, resolve_threads(threads))
        dup = np.flatnonzero(distances[:, 0] == 0.0)
        if dup.size == 0:
            return NeighborGraph(k=k, neighbors=neighbors, distances=distances)
        if not jitter or attempt == 1:
            raise DuplicatePointsError(dup.tolist())
        rng = np.random.default_rng(seed)
        X = m.data + rng.uniform(-JITTER_SCALE, JITTER_SCALE, size=m.data.shape)
    raise AssertionError("unreachable")


def _compute_graph(X, k, workers):
    n = X.shape[0]
    neighbors = np.empty((n, k), dtype=np.int64)
    distances = np.empty((n, k))
    direct = n <= DIRECT_PATH_MAX_N
    if direct:
        X32 = sq32 = None
    else:
        X32 = X.astype(np.float32)
        sq32 = np.einsum("ij,ij->i", X32, X32)

    def run(i0):
        i1 = min(i0 + QUERY_BLOCK, n)
        if direct:
            nbr, nbd = _block_direct(X, i0, i1, k)
        else:
            nbr, nbd = _block_preselect(X, X32, sq32, i0, i1, k)
        neighbors[i0:i1] = nbr
        distances[i0:i1] = nbd

    starts = range(0, n, QUERY_BLOCK)
    if workers > 1 and n > QUERY_BLOCK:
        with ThreadPoolExecutor(max_workers=workers) as pool:
            list(pool.map(run, starts))
    else:
        for i0 in starts:
            run(i0)
    return neighbors, distances


def mean_knn_distance(g: NeighborGraph) -> np.ndarray:
    """Average distance to the k nearest neighbors, per instance."""
    return g.distances.mean(axis=1)


def knn_density(g: NeighborGraph, d: int, mode: str = "mean") -> np.ndarray:
    """Log kNN density estimate, log p = log(k/n) - log A_d - d*log D.

    ``mode="kth"`` uses the distance to the k-th neighbor; ``mode="mean"``
    uses the average over all k neighbors, which is robust to noise. A_d is
    the unit-ball volume pi^(d/2) / Gamma(d/2 + 1), evaluated through
    log-Gamma so large d neither overflows nor underflows. Only orderings
    are ever consumed downstream; absolute values are exposed for
    completeness.
    """
    if d < 1:
        raise DataError(f"dimension must be >= 1, got {d}")
    if mode == "kth":
        D = g.distances[:, -1]
    elif mode == "mean":
        D = mean_knn_distance(g)
    else:
        raise DataError(f"unknown density mode {mode!r}")
    zero = np.flatnonzero(D == 0.0)
    if zero.size:
        raise DuplicatePointsError(zero.tolist())
    log_ad = (d / 2.0) * math.log(math.pi) - math.lgamma(d / 2.0 + 1.0)
    return math.log(g.k / g.n) - log_ad - d * np.log(D)


def utility_scores(g: NeighborGraph) -> UtilityScores:
    """Representativeness scores U = 1 / mean kNN distance."""
    mean = mean_knn_distance(g)
    zero = np.flatnonzero(mean == 0.0)
    if zero.size:
        raise DuplicatePointsError(zero.tolist())
    return UtilityScores(mean_knn_distance=mean, utility=1.0 / mean)
