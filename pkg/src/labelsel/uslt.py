"""Training-based selector: learnable centroids driven by a clustering loss
plus a neighbor-consistency loss, with logit adjustment and sharpening as
anti-collapse devices.

Everything here is a pure float64 numpy kernel with analytic centroid
gradients; features stay frozen. The hard assignment (and the confidence
filter) of the global term and the sharpened reference distribution of the
local term are treated as constants by the gradients, which is how the
losses are optimized; the ``*_loss_value`` helpers evaluate the same frozen
objectives so finite differences can validate the analytic gradients.
"""

from __future__ import annotations

import math
from dataclasses import asdict, dataclass, replace

import numpy as np

from .density import build_knn_graph
from .errors import DataError, EmptyClusterError, NumericalError
from .io import EmbeddingMatrix
from .usl import SelectionResult

METRICS = ("dot", "neg_sq_euclidean")


def _check_metric(metric: str) -> None:
    if metric not in METRICS:
        raise DataError(f"metric must be one of {METRICS}, got {metric!r}")


def softmax(z: np.ndarray, axis: int = -1) -> np.ndarray:
    z = np.asarray(z, dtype=np.float64)
    shifted = z - z.max(axis=axis, keepdims=True)
    e = np.exp(shifted)
    return e / e.sum(axis=axis, keepdims=True)


def logsumexp(z: np.ndarray, axis: int = -1) -> np.ndarray:
    z = np.asarray(z, dtype=np.float64)
    m = z.max(axis=axis, keepdims=True)
    out = np.log(np.exp(z - m).sum(axis=axis, keepdims=True)) + m
    return np.squeeze(out, axis=axis)


@dataclass(frozen=True)
class UsltParams:
    """Loss hyperparameters. Defaults follow the small-scale profile."""

    tau: float = 0.0
    adjust_alpha: float = 5.0
    temperature: float = 0.25
    loss_weight: float = 5.0
    momentum: float = 0.5
    neighbor_k: int = 20

    def __post_init__(self):
        if not 0.0 <= self.tau <= 1.0:
            raise DataError("tau must be in [0, 1]")
        if self.temperature <= 0:
            raise DataError("temperature must be > 0")
        if not 0.0 <= self.momentum <= 1.0:
            raise DataError("momentum must be in [0, 1]")
        if self.neighbor_k < 1:
            raise DataError("neighbor_k must be >= 1")

    @classmethod
    def small_scale(cls, **overrides) -> "UsltParams":
        base = dict(adjust_alpha=5.0, temperature=0.25, loss_weight=5.0)
        base.update(overrides)
        return cls(**base)

    @classmethod
    def large_scale(cls, **overrides) -> "UsltParams":
        base = dict(adjust_alpha=2.5, temperature=0.5, loss_weight=0.5)
        base.update(overrides)
        return cls(**base)


@dataclass(frozen=True)
class UsltState:
    """Learnable centroids plus the EMA of soft-assignment batch means."""

    centroids: np.ndarray
    running_mean: np.ndarray
    step: int = 0

    def __post_init__(self):
        c = np.asarray(self.centroids, dtype=np.float64)
        r = np.asarray(self.running_mean, dtype=np.float64)
        if c.ndim != 2:
            raise DataError("centroids must be a C x d array")
        if r.shape != (c.shape[0],):
            raise DataError("running_mean must have one entry per centroid")
        if (r <= 0).any() or abs(r.sum() - 1.0) > 1e-6:
            raise DataError("running_mean must be positive and sum to 1")
        c.flags.writeable = False
        r.flags.writeable = False
        object.__setattr__(self, "centroids", c)
        object.__setattr__(self, "running_mean", r)

    @property
    def num_clusters(self) -> int:
        return self.centroids.shape[0]


def initial_state(features: np.ndarray, num_clusters: int, rng: np.random.Generator) -> UsltState:
    """Centroids copied from randomly chosen feature rows, uniform EMA."""
    n = features.shape[0]
    if not 1 <= num_clusters <= n:
        raise DataError(f"num_clusters must be in [1, {n}], got {num_clusters}")
    rows = rng.choice(n, size=num_clusters, replace=False)
    centroids = features[rows].copy()
    return UsltState(
        centroids=centroids,
        running_mean=np.full(num_clusters, 1.0 / num_clusters),
        step=0,
    )


@dataclass(frozen=True)
class AssignmentPair:
    """Soft and hard cluster assignment of one instance."""

    soft: np.ndarray
    hard: np.ndarray
    confidence: float

    @property
    def hard_index(self) -> int:
        return int(self.hard.argmax())


def similarities(x: np.ndarray, state: UsltState, metric: str = "dot") -> np.ndarray:
    """Logits z_k = s(x, c_k); accepts a single row or a batch of rows."""
    _check_metric(metric)
    x = np.asarray(x, dtype=np.float64)
    c = state.centroids
    if x.shape[-1] != c.shape[1]:
        raise DataError(f"feature dim {x.shape[-1]} does not match centroid dim {c.shape[1]}")
    if metric == "dot":
        return x @ c.T
    diff = x[..., None, :] - c
    return -np.einsum("...kd,...kd->...k", diff, diff)


def assign(x: np.ndarray, state: UsltState, metric: str = "dot") -> AssignmentPair:
    """Soft assignment by softmax over similarities; hard one-hot at the
    closest centroid (ties to the lower id)."""
    z = similarities(x, state, metric)
    if z.ndim != 1:
        raise DataError("assign expects a single feature row")
    soft = softmax(z)
    hard = np.zeros_like(soft)
    hard[int(np.argmax(z))] = 1.0
    return AssignmentPair(soft=soft, hard=hard, confidence=float(soft.max()))


def _batch_assign(X: np.ndarray, state: UsltState, metric: str):
    z = similarities(X, state, metric)
    soft = softmax(z, axis=1)
    hard = np.argmax(z, axis=1)
    return z, soft, hard


@dataclass(frozen=True)
class GlobalLossResult:
    loss: float
    grad: np.ndarray
    per_sample: np.ndarray
    confident_mask: np.ndarray
    no_confident: bool
    hard_labels: np.ndarray


def _chain_to_centroids(W: np.ndarray, X: np.ndarray, centroids: np.ndarray, metric: str):
    """Map d(loss)/d(logits) weights W (n x C) onto centroid gradients."""
    if metric == "dot":
        return W.T @ X
    return 2.0 * (W.T @ X - W.sum(axis=0)[:, None] * centroids)


def global_loss(
    X: np.ndarray, state: UsltState, tau: float = 0.0, metric: str = "dot"
) -> GlobalLossResult:
    """Mean KL(hard || soft) over samples whose confidence reaches tau.

    The divisor is the full batch size, not the confident-subset size. If
    every sample is filtered out the loss is zero and ``no_confident`` is
    set.
    """
    X = np.atleast_2d(np.asarray(X, dtype=np.float64))
    if X.shape[0] == 0:
        raise DataError("empty batch")
    n = X.shape[0]
    z, soft, hard = _batch_assign(X, state, metric)
    conf = soft.max(axis=1)
    mask = conf >= tau
    per_sample = logsumexp(z, axis=1) - z[np.arange(n), hard]
    loss = float(per_sample[mask].sum() / n)
    W = soft.copy()
    W[np.arange(n), hard] -= 1.0
    W *= mask[:, None] / n
    grad = _chain_to_centroids(W, X, state.centroids, metric)
    return GlobalLossResult(
        loss=loss,
        grad=grad,
        per_sample=per_sample,
        confident_mask=mask,
        no_confident=not bool(mask.any()),
        hard_labels=hard,
    )


def global_loss_value(
    X: np.ndarray,
    centroids: np.ndarray,
    hard_labels: np.ndarray,
    confident_mask: np.ndarray,
    metric: str = "dot",
) -> float:
    """Global objective with frozen pseudo-labels and filter mask (the
    function the analytic gradient differentiates)."""
    state = UsltState(centroids=centroids, running_mean=np.full(centroids.shape[0], 1.0 / centroids.shape[0]))
    X = np.atleast_2d(np.asarray(X, dtype=np.float64))
    n = X.shape[0]
    z = similarities(X, state, metric)
    per_sample = logsumexp(z, axis=1) - z[np.arange(n), hard_labels]
    return float(per_sample[confident_mask].sum() / n)


def kmeans_equivalence_decomposition(
    x: np.ndarray, state: UsltState, metric: str = "neg_sq_euclidean"
):
    """Split the per-sample global loss (tau=0, squared-Euclidean
    similarity) into its clustering term ||x - c_hard||^2 and diversity
    term log sum_k exp(-||x - c_k||^2); the two must add up to the loss."""
    if metric != "neg_sq_euclidean":
        raise DataError("the decomposition requires the neg_sq_euclidean metric")
    x = np.asarray(x, dtype=np.float64)
    if x.ndim != 1:
        raise DataError("decomposition expects a single feature row")
    diff = x[None, :] - state.centroids
    d2 = np.array([float(np.dot(row, row)) for row in diff])
    hard = int(np.argmin(d2))
    main_term = float(d2[hard])
    reg_term = float(logsumexp(-d2))
    return main_term, reg_term


def logit_adjust(z: np.ndarray, running_mean: np.ndarray, adjust_alpha: float) -> np.ndarray:
    """Counteract cluster-frequency bias: z - alpha * log(running mean)."""
    running_mean = np.asarray(running_mean, dtype=np.float64)
    if (running_mean <= 0).any():
        raise DataError("running_mean entries must be strictly positive")
    return np.asarray(z, dtype=np.float64) - adjust_alpha * np.log(running_mean)


def ema_update(state: UsltState, batch_soft_mean: np.ndarray, momentum: float) -> UsltState:
    """running_mean <- momentum * batch mean + (1 - momentum) * running_mean."""
    batch_soft_mean = np.asarray(batch_soft_mean, dtype=np.float64)
    if batch_soft_mean.shape != state.running_mean.shape:
        raise DataError("batch mean must have one entry per centroid")
    if (batch_soft_mean < 0).any() or abs(batch_soft_mean.sum() - 1.0) > 1e-6:
        raise DataError("batch mean must be a probability vector")
    mixed = momentum * batch_soft_mean + (1.0 - momentum) * state.running_mean
    return replace(state, running_mean=mixed)


def sharpen(z_hat: np.ndarray, temperature: float) -> np.ndarray:
    """Temperature softmax; invariant to adding a constant to all logits."""
    if temperature <= 0:
        raise DataError("temperature must be > 0")
    return softmax(np.asarray(z_hat, dtype=np.float64) / temperature, axis=-1)


def local_targets(
    Xn: np.ndarray, state: UsltState, params: UsltParams, metric: str = "dot"
) -> np.ndarray:
    """Reference distributions built from the neighbor branch: adjusted
    logits pushed through the sharpener. Constant w.r.t. the gradients."""
    z = similarities(np.atleast_2d(np.asarray(Xn, dtype=np.float64)), state, metric)
    z_hat = logit_adjust(z, state.running_mean, params.adjust_alpha)
    return sharpen(z_hat, params.temperature)


@dataclass(frozen=True)
class LocalLossResult:
    loss: float
    grad: np.ndarray
    per_sample: np.ndarray
    targets: np.ndarray


def _xlogx(p: np.ndarray) -> np.ndarray:
    out = np.zeros_like(p)
    nz = p > 0
    out[nz] = p[nz] * np.log(p[nz])
    return out


def local_loss(
    X: np.ndarray,
    Xn: np.ndarray,
    state: UsltState,
    params: UsltParams,
    metric: str = "dot",
    targets: np.ndarray | None = None,
) -> LocalLossResult:
    """Mean KL(target(neighbor) || soft(x)). ``targets`` may be passed in
    precomputed; either way no gradient flows through them."""
    X = np.atleast_2d(np.asarray(X, dtype=np.float64))
    Xn = np.atleast_2d(np.asarray(Xn, dtype=np.float64))
    if X.shape[0] == 0:
        raise DataError("empty batch")
    if X.shape != Xn.shape:
        raise DataError("instance and neighbor batches must align")
    n = X.shape[0]
    if targets is None:
        targets = local_targets(Xn, state, params, metric)
    z = similarities(X, state, metric)
    log_soft = z - logsumexp(z, axis=1)[:, None]
    per_sample = _xlogx(targets).sum(axis=1) - (targets * log_soft).sum(axis=1)
    loss = float(per_sample.sum() / n)
    W = (softmax(z, axis=1) - targets) / n
    grad = _chain_to_centroids(W, X, state.centroids, metric)
    return LocalLossResult(loss=loss, grad=grad, per_sample=per_sample, targets=targets)


def local_loss_value(
    X: np.ndarray, centroids: np.ndarray, targets: np.ndarray, metric: str = "dot"
) -> float:
    """Local objective with frozen targets (for finite differences)."""
    state = UsltState(centroids=centroids, running_mean=np.full(centroids.shape[0], 1.0 / centroids.shape[0]))
    X = np.atleast_2d(np.asarray(X, dtype=np.float64))
    z = similarities(X, state, metric)
    log_soft = z - logsumexp(z, axis=1)[:, None]
    per_sample = _xlogx(targets).sum(axis=1) - (targets * log_soft).sum(axis=1)
    return float(per_sample.sum() / X.shape[0])


@dataclass(frozen=True)
class TotalLossResult:
    loss: float
    grad: np.ndarray
    global_result: GlobalLossResult
    local_result: LocalLossResult


def total_loss(
    X: np.ndarray,
    Xn: np.ndarray,
    state: UsltState,
    params: UsltParams,
    metric: str = "dot",
    local_targets_override: np.ndarray | None = None,
) -> TotalLossResult:
    """Global term plus loss_weight times the local term."""
    g = global_loss(X, state, params.tau, metric)
    l = local_loss(X, Xn, state, params, metric, targets=local_targets_override)
    return TotalLossResult(
        loss=g.loss + params.loss_weight * l.loss,
        grad=g.grad + params.loss_weight * l.grad,
        global_result=g,
        local_result=l,
    )


@dataclass(frozen=True)
class OptimizerConfig:
    """Plain gradient descent with optional momentum over minibatches.

    ``normalize_centroids`` renormalizes centroids to unit length after
    every step (the dot metric then behaves as an L2-normed linear layer,
    which keeps confidence from growing by norm inflation alone).
    """

    learning_rate: float = 0.2
    steps: int = 300
    batch_size: int = 256
    seed: int = 0
    momentum: float = 0.0
    normalize_centroids: bool = True
    reseed_interval: int = 25
    reseed_noise: float = 1e-3

    def __post_init__(self):
        if self.learning_rate <= 0:
            raise DataError("learning_rate must be > 0")
        if self.steps < 0:
            raise DataError("steps must be >= 0")
        if self.batch_size < 1:
            raise DataError("batch_size must be >= 1")
        if not 0.0 <= self.momentum < 1.0:
            raise DataError("optimizer momentum must be in [0, 1)")


@dataclass(frozen=True)
class UsltFitResult:
    state: UsltState
    loss_history: tuple[float, ...]
    occupancy_history: tuple  # (step, per-cluster counts) at epoch boundaries


def _hard_counts(X, state, metric, num_clusters):
    z = similarities(X, state, metric)
    return np.bincount(np.argmax(z, axis=1), minlength=num_clusters)


def fit_centroids(
    matrix: EmbeddingMatrix,
    num_clusters: int,
    params: UsltParams | None = None,
    optimizer: OptimizerConfig | None = None,
    metric: str = "dot",
    *,
    threads: int | None = None,
) -> UsltFitResult:
    """Minibatch descent on the total loss over frozen features.

    Centroids start as randomly chosen feature rows. Neighbor candidates
    come from an exact kNN graph built once up front. Clusters that go
    empty are periodically re-seeded to a perturbed copy of the head
    (largest) cluster's centroid. Divergence (non-finite loss) aborts.
    """
    _check_metric(metric)
    params = params or UsltParams()
    optimizer = optimizer or OptimizerConfig()
    if not matrix.normalized:
        raise DataError("features must be L2-normalized before fitting")
    X = matrix.data
    n = X.shape[0]
    rng = np.random.default_rng(optimizer.seed)
    state = initial_state(X, num_clusters, rng)
    if optimizer.steps == 0:
        return UsltFitResult(state=state, loss_history=(), occupancy_history=())

    graph = build_knn_graph(matrix, params.neighbor_k, threads=threads)
    velocity = np.zeros_like(state.centroids)
    batch = min(optimizer.batch_size, n)
    steps_per_epoch = max(1, math.ceil(n / batch))
    losses = []
    occupancy = []
    for step in range(1, optimizer.steps + 1):
        idx = rng.choice(n, size=batch, replace=False)
        nbr = graph.neighbors[idx, rng.integers(0, graph.k, size=batch)]
        Xb, Xnb = X[idx], X[nbr]
        with np.errstate(all="ignore"):  # divergence is caught right below
            result = total_loss(Xb, Xnb, state, params, metric)
        if not np.isfinite(result.loss) or not np.isfinite(result.grad).all():
            raise NumericalError(
                f"loss diverged at step {step}: loss={result.loss!r}; "
                f"try a smaller learning rate (current {optimizer.learning_rate})"
            )
        losses.append(result.loss)
        velocity = optimizer.momentum * velocity - optimizer.learning_rate * result.grad
        centroids = state.centroids + velocity
        if optimizer.normalize_centroids:
            norms = np.linalg.norm(centroids, axis=1, keepdims=True)
            centroids = centroids / np.maximum(norms, 1e-12)
        z_n = similarities(Xnb, state, metric)
        batch_mean = softmax(z_n, axis=1).mean(axis=0)
        state = ema_update(
            UsltState(centroids=centroids, running_mean=state.running_mean, step=step),
            batch_mean,
            params.momentum,
        )
        at_epoch = step % steps_per_epoch == 0 or step == optimizer.steps
        at_reseed = step % optimizer.reseed_interval == 0
        if at_epoch or at_reseed:
            counts = _hard_counts(X, state, metric, num_clusters)
            if at_epoch:
                occupancy.append((step, counts.copy()))
            empty = np.flatnonzero(counts == 0)
            if empty.size:
                centroids = state.centroids.copy()
                head = int(counts.argmax())
                for e in empty:
                    centroids[e] = centroids[head] + rng.normal(
                        0.0, optimizer.reseed_noise, size=centroids.shape[1]
                    )
                    velocity[e] = 0.0
                state = UsltState(
                    centroids=centroids, running_mean=state.running_mean, step=state.step
                )
    return UsltFitResult(
        state=state, loss_history=tuple(losses), occupancy_history=tuple(occupancy)
    )


def select_uslt(
    matrix: EmbeddingMatrix,
    budget: int,
    params: UsltParams | None = None,
    optimizer: OptimizerConfig | None = None,
    metric: str = "dot",
    *,
    threads: int | None = None,
) -> SelectionResult:
    """Fit one centroid per selection, then pick each cluster's
    highest-confidence member (ties to the lower index)."""
    params = params or UsltParams()
    optimizer = optimizer or OptimizerConfig()
    fit = fit_centroids(matrix, budget, params, optimizer, metric, threads=threads)
    _, soft, hard = _batch_assign(matrix.data, fit.state, metric)
    conf = soft.max(axis=1)
    picks = np.empty(budget, dtype=np.int64)
    shortfall = []
    for c in range(budget):
        members = np.flatnonzero(hard == c)
        if members.size == 0:
            shortfall.append(c)
            continue
        picks[c] = members[int(np.argmax(conf[members]))]
    if shortfall:
        raise EmptyClusterError(
            shortfall, f"budget shortfall: cluster(s) {shortfall} have no members"
        )
    trace = {
        "loss_history": list(fit.loss_history),
        "occupancy_history": [
            {"step": int(s), "counts": c.tolist()} for s, c in fit.occupancy_history
        ],
        "hard_assignment_rule": "argmax_similarity",
    }
    return SelectionResult(
        indices=picks,
        cluster_of=np.arange(budget, dtype=np.int64),
        history=(),
        params={**asdict(params), "optimizer": asdict(optimizer), "metric": metric},
        trace=trace,
    )
