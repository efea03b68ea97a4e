"""Training-free selector: density peaks within K-Means clusters, then
iterative inter-cluster regularization.

One instance per cluster is kept at every step. Each round, every
candidate's utility is penalized by an exponential-moving-average of its
total inverse distance to the instances currently selected in *other*
clusters, and the per-cluster argmax is re-picked. The loop starts from the
plain utility argmax and the EMA accumulator starts at zero, so zero
iterations (or a zero penalty weight) reproduce the unregularized pick.
"""

from __future__ import annotations

import warnings
from dataclasses import dataclass, field, asdict

import numpy as np

from .density import build_knn_graph, utility_scores, UtilityScores
from .errors import DataError, EmptyClusterError
from .io import EmbeddingMatrix
from .kmeans import Clustering, kmeans_fit

_REG_BLOCK_BYTES = 64 << 20


@dataclass(frozen=True)
class UslParams:
    """Knobs of the training-free selector.

    Defaults are the small-scale profile (k=400, momentum 0.9, ten
    rounds); ``small_scale``/``large_scale`` produce the two published
    profiles, where the small one switches (alpha, lambda) from
    (0.5, 0.5) to (1.0, 1.0) above 100 selections and the large one runs a
    single round without momentum over a 64-neighbor horizon.
    """

    k: int = 400
    reg_lambda: float = 0.5
    reg_alpha: float = 0.5
    momentum: float = 0.9
    iterations: int = 10
    horizon: int | None = None
    seed: int = 0

    def __post_init__(self):
        if self.k < 1:
            raise DataError("k must be >= 1")
        if self.reg_lambda < 0:
            raise DataError("reg_lambda must be >= 0")
        if self.reg_alpha <= 0:
            raise DataError("reg_alpha must be > 0")
        if not 0 <= self.momentum < 1:
            raise DataError("momentum must be in [0, 1)")
        if self.iterations < 0:
            raise DataError("iterations must be >= 0")
        if self.horizon is not None and self.horizon < 1:
            raise DataError("horizon must be >= 1 when set")

    @classmethod
    def small_scale(cls, budget: int, **overrides) -> "UslParams":
        base = dict(k=400, momentum=0.9, iterations=10, horizon=None)
        if budget <= 100:
            base.update(reg_alpha=0.5, reg_lambda=0.5)
        else:
            base.update(reg_alpha=1.0, reg_lambda=1.0)
        base.update(overrides)
        return cls(**base)

    @classmethod
    def large_scale(cls, **overrides) -> "UslParams":
        base = dict(
            k=20, reg_alpha=0.5, reg_lambda=1.5, momentum=0.0, iterations=1, horizon=64
        )
        base.update(overrides)
        return cls(**base)


@dataclass(frozen=True)
class SelectionResult:
    """Final selection plus the per-round pick history."""

    indices: np.ndarray
    cluster_of: np.ndarray
    history: tuple  # one (indices, scores) pair per round, round 0 included
    params: dict = field(default_factory=dict)
    trace: dict | None = None

    def __post_init__(self):
        idx = np.asarray(self.indices, dtype=np.int64)
        clu = np.asarray(self.cluster_of, dtype=np.int64)
        if idx.shape != clu.shape:
            raise DataError("indices and cluster_of must have equal length")
        if np.unique(idx).size != idx.size:
            raise DataError("selected indices must be distinct")
        if np.unique(clu).size != clu.size:
            raise DataError("each cluster must own exactly one selection")
        idx.flags.writeable = False
        clu.flags.writeable = False
        object.__setattr__(self, "indices", idx)
        object.__setattr__(self, "cluster_of", clu)

    @property
    def budget(self) -> int:
        return self.indices.size


def repick_per_cluster(scores: np.ndarray, clustering: Clustering) -> np.ndarray:
    """Per-cluster argmax of ``scores``; ties go to the lower index."""
    scores = np.asarray(scores, dtype=np.float64)
    n = scores.size
    order = np.lexsort((np.arange(n), -scores))
    clusters_sorted = clustering.assignment[order]
    present, first = np.unique(clusters_sorted, return_index=True)
    if present.size != clustering.num_clusters:
        missing = sorted(set(range(clustering.num_clusters)) - set(present.tolist()))
        raise EmptyClusterError(missing)
    picks = np.empty(clustering.num_clusters, dtype=np.int64)
    picks[present] = order[first]
    return picks


def regularize_utilities(
    matrix: EmbeddingMatrix,
    utilities: UtilityScores,
    clustering: Clustering,
    selected: np.ndarray,
    reg_state: np.ndarray,
    params: UslParams,
):
    """One regularization round.

    For every candidate, sums inverse distances (power ``reg_alpha``) to the
    selections owned by other clusters, optionally restricted to the
    ``horizon`` nearest selections, folds the sum into the EMA accumulator,
    and returns (penalized utilities, new accumulator). Candidates that
    coincide with another cluster's selection would receive an infinite
    penalty; they are excluded from this round (score -inf) with a warning
    while the accumulator keeps only their finite contributions.
    """
    X = matrix.data
    n = X.shape[0]
    selected = np.asarray(selected, dtype=np.int64)
    m = selected.size
    if m != clustering.num_clusters:
        raise DataError("need exactly one selected instance per cluster")
    sel_clusters = clustering.assignment[selected]
    if np.unique(sel_clusters).size != m:
        raise DataError("selected instances must cover every cluster exactly once")
    sel_X = X[selected]
    assignment = clustering.assignment
    h = params.horizon
    reg = np.empty(n)
    excluded: list[int] = []
    d = X.shape[1]
    # Gram expansion for bulk distances at scale; rows whose minimum comes
    # out below the cancellation floor are recomputed from differences so
    # coincidence detection stays exact.
    use_gemm = n * m * d > 1 << 24
    if use_gemm:
        sel_sq = (sel_X * sel_X).sum(1)
        block = 1 << 14
    else:
        block = max(1, _REG_BLOCK_BYTES // (m * d * 8))

    for i0 in range(0, n, block):
        i1 = min(i0 + block, n)
        if use_gemm:
            d2 = X[i0:i1] @ sel_X.T
            d2 *= -2.0
            d2 += np.einsum("bd,bd->b", X[i0:i1], X[i0:i1])[:, None]
            d2 += sel_sq[None, :]
            np.maximum(d2, 0.0, out=d2)
            for r in np.flatnonzero(d2.min(axis=1) < 1e-10):
                diff_r = X[i0 + r][None, :] - sel_X
                d2[r] = (diff_r * diff_r).sum(axis=1)
            dist = np.sqrt(d2, out=d2)
        else:
            diff = X[i0:i1, None, :] - sel_X[None, :, :]
            dist = np.sqrt(np.einsum("bjd,bjd->bj", diff, diff))
        eligible = assignment[i0:i1, None] != sel_clusters[None, :]
        if h is not None and h < m:
            ranking = np.lexsort(
                (np.broadcast_to(np.arange(m), dist.shape), dist), axis=1
            )
            keep = np.zeros_like(eligible)
            block_rows = np.arange(i1 - i0)[:, None]
            keep[block_rows, ranking[:, :h]] = True
            eligible &= keep
        zero_pairs = eligible & (dist == 0.0)
        if zero_pairs.any():
            hit = np.flatnonzero(zero_pairs.any(axis=1))
            excluded.extend((i0 + hit).tolist())
            eligible &= dist > 0.0
        with np.errstate(divide="ignore"):
            inv = np.where(eligible, 1.0 / dist**params.reg_alpha, 0.0)
        reg[i0:i1] = inv.sum(axis=1)

    new_state = params.momentum * reg_state + (1.0 - params.momentum) * reg
    u_prime = utilities.utility - params.reg_lambda * new_state
    if excluded:
        warnings.warn(
            f"{len(excluded)} candidate(s) coincide with a selection from "
            f"another cluster and are excluded this round: {excluded[:10]}",
            stacklevel=2,
        )
        u_prime = u_prime.copy()
        u_prime[excluded] = -np.inf
    return u_prime, new_state


def select_usl(
    matrix: EmbeddingMatrix,
    budget: int,
    params: UslParams | None = None,
    *,
    threads: int | None = None,
) -> SelectionResult:
    """Full training-free pipeline: kNN utilities, K-Means with one cluster
    per selection, then ``params.iterations`` regularization rounds."""
    params = params or UslParams.small_scale(budget)
    n = matrix.n
    if not 1 <= budget <= n:
        raise DataError(f"budget must be in [1, n] = [1, {n}], got {budget}")
    if not matrix.normalized:
        raise DataError("embeddings must be L2-normalized before selection")

    graph = build_knn_graph(matrix, params.k, threads=threads)
    util = utility_scores(graph)
    clustering = kmeans_fit(matrix, budget, seed=params.seed)

    selected = repick_per_cluster(util.utility, clustering)
    history = [(selected.copy(), util.utility[selected].copy())]
    reg_state = np.zeros(n)
    for _ in range(params.iterations):
        u_prime, reg_state = regularize_utilities(
            matrix, util, clustering, selected, reg_state, params
        )
        selected = repick_per_cluster(u_prime, clustering)
        history.append((selected.copy(), u_prime[selected].copy()))

    trace = {
        "kmeans_objective": float(clustering.objective),
        "kmeans_iterations": int(clustering.iterations_run),
        "generator": clustering.generator,
        "utility_summary": {
            "selected_mean": float(util.utility[selected].mean()),
            "selected_min": float(util.utility[selected].min()),
            "dataset_mean": float(util.utility.mean()),
            "dataset_max": float(util.utility.max()),
        },
    }
    return SelectionResult(
        indices=selected,
        cluster_of=np.arange(budget, dtype=np.int64),
        history=tuple(history),
        params=asdict(params),
        trace=trace,
    )
