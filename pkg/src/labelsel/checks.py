"""On-demand numerical verification suites.

Each check returns a CheckOutcome with its worst-case residual so failures
print something actionable. The same functions back both the ``verify``
CLI subcommand and the acceptance test suite:

* the global loss decomposes, sample by sample, into a squared-distance
  clustering term plus a log-sum-exp diversity term (identity check);
* analytic centroid gradients of the global/local/total losses match
  central finite differences of the same frozen-target objectives;
* in a constructed one-cluster collapse the sharpened reference
  distribution is uniform and the local loss still produces gradient
  (collapse is not stationary), and in a near-uniform state the sharpened
  reference is strictly spikier than the prediction, pointing along the
  perturbation.
"""

from __future__ import annotations

import time
from dataclasses import dataclass

import numpy as np

from . import uslt

GRAD_FD_STEP = 1e-5


@dataclass(frozen=True)
class CheckOutcome:
    name: str
    passed: bool
    worst: float
    threshold: float
    direction: str  # "<" worst must stay below threshold, ">" above
    elapsed: float
    detail: str = ""

    def describe(self) -> str:
        status = "PASS" if self.passed else "FAIL"
        return (
            f"[{status}] {self.name}: worst={self.worst:.3e} "
            f"(required {self.direction} {self.threshold:.0e}, {self.elapsed:.2f}s)"
            + (f" {self.detail}" if self.detail else "")
        )


def _random_state(rng, C, d, scale=1.0):
    centroids = scale * rng.standard_normal((C, d))
    mean = rng.dirichlet(np.ones(C))
    # dirichlet can produce zeros at float precision; nudge and renormalize
    mean = np.maximum(mean, 1e-9)
    mean = mean / mean.sum()
    return uslt.UsltState(centroids=centroids, running_mean=mean)


def check_global_local_identity(cases: int = 1000, seed: int = 0) -> CheckOutcome:
    """Per-sample global loss == main_term + reg_term (tau=0, squared
    Euclidean similarity)."""
    rng = np.random.default_rng(seed)
    t0 = time.perf_counter()
    worst = 0.0
    for _ in range(cases):
        C = int(rng.integers(2, 9))
        d = int(rng.integers(1, 17))
        state = _random_state(rng, C, d)
        x = rng.standard_normal(d)
        loss = uslt.global_loss(x[None, :], state, tau=0.0, metric="neg_sq_euclidean").loss
        main, reg = uslt.kmeans_equivalence_decomposition(x, state)
        worst = max(worst, abs(main + reg - loss))
    return CheckOutcome(
        name="observation1-identity",
        passed=worst < 1e-9,
        worst=worst,
        threshold=1e-9,
        direction="<",
        elapsed=time.perf_counter() - t0,
        detail=f"{cases} randomized cases",
    )


def _fd_gradient(f, centroids, h=GRAD_FD_STEP):
    g = np.zeros_like(centroids)
    for i in range(centroids.shape[0]):
        for j in range(centroids.shape[1]):
            up = centroids.copy()
            up[i, j] += h
            down = centroids.copy()
            down[i, j] -= h
            g[i, j] = (f(up) - f(down)) / (2.0 * h)
    return g


def _rel_err(analytic, numeric):
    denom = max(float(np.linalg.norm(numeric)), 1e-10)
    return float(np.linalg.norm(analytic - numeric)) / denom


def check_gradients(cases: int = 200, seed: int = 0) -> CheckOutcome:
    """Analytic vs central-difference centroid gradients for the global,
    local and total losses, with pseudo-labels, confidence masks and local
    targets frozen (they are constants of the optimized objectives)."""
    rng = np.random.default_rng(seed)
    t0 = time.perf_counter()
    worst = 0.0
    for case in range(cases):
        C = int(rng.integers(2, 7))
        d = int(rng.integers(2, 9))
        nb = int(rng.integers(2, 7))
        metric = "dot" if case % 2 == 0 else "neg_sq_euclidean"
        state = _random_state(rng, C, d)
        X = rng.standard_normal((nb, d))
        X /= np.linalg.norm(X, axis=1, keepdims=True)
        Xn = rng.standard_normal((nb, d))
        Xn /= np.linalg.norm(Xn, axis=1, keepdims=True)
        params = uslt.UsltParams(
            tau=float(rng.choice([0.0, 0.3])),
            adjust_alpha=float(rng.uniform(0.0, 3.0)),
            temperature=float(rng.uniform(0.2, 2.0)),
            loss_weight=float(rng.uniform(0.1, 3.0)),
        )

        g = uslt.global_loss(X, state, params.tau, metric)
        fd_g = _fd_gradient(
            lambda c: uslt.global_loss_value(X, c, g.hard_labels, g.confident_mask, metric),
            state.centroids,
        )
        worst = max(worst, _rel_err(g.grad, fd_g))

        targets = uslt.local_targets(Xn, state, params, metric)
        l = uslt.local_loss(X, Xn, state, params, metric, targets=targets)
        fd_l = _fd_gradient(
            lambda c: uslt.local_loss_value(X, c, targets, metric), state.centroids
        )
        worst = max(worst, _rel_err(l.grad, fd_l))

        t = uslt.total_loss(X, Xn, state, params, metric, local_targets_override=targets)
        fd_t = _fd_gradient(
            lambda c: (
                uslt.global_loss_value(X, c, g.hard_labels, g.confident_mask, metric)
                + params.loss_weight * uslt.local_loss_value(X, c, targets, metric)
            ),
            state.centroids,
        )
        worst = max(worst, _rel_err(t.grad, fd_t))
    return CheckOutcome(
        name="gradient-finite-difference",
        passed=worst < 1e-4,
        worst=worst,
        threshold=1e-4,
        direction="<",
        elapsed=time.perf_counter() - t0,
        detail=f"{cases} randomized cases, step {GRAD_FD_STEP:g}",
    )


def one_cluster_collapse_state(rng, C=None, d=None):
    """A confidently collapsed configuration with a converged EMA.

    All samples sit (up to 1e-6 noise) on one direction, one centroid
    aligns strongly with it, and the running mean equals the softmax of the
    shared logits, which is what the EMA converges to under collapse.
    """
    C = C or int(rng.integers(3, 9))
    d = d or int(rng.integers(4, 17))
    u = rng.standard_normal(d)
    u /= np.linalg.norm(u)
    X = u[None, :] + 1e-6 * rng.standard_normal((8, d))
    X /= np.linalg.norm(X, axis=1, keepdims=True)
    centroids = 0.1 * rng.standard_normal((C, d))
    centroids[0] = 6.0 * u
    z_bar_logits = (X @ centroids.T).mean(axis=0)
    running = uslt.softmax(z_bar_logits)
    state = uslt.UsltState(centroids=centroids, running_mean=running)
    return X, state


def check_one_cluster_collapse(seeds: int = 50, seed: int = 0):
    """Two outcomes: the sharpened target is uniform (within 1e-3 in the
    infinity norm) under adjustment intensity 1, and the local-loss
    centroid gradient norm exceeds 1e-3 (not a stationary point)."""
    rng = np.random.default_rng(seed)
    t0 = time.perf_counter()
    params = uslt.UsltParams(adjust_alpha=1.0, temperature=0.25)
    worst_dev = 0.0
    min_grad = np.inf
    for _ in range(seeds):
        X, state = one_cluster_collapse_state(rng)
        C = state.num_clusters
        targets = uslt.local_targets(X, state, params, metric="dot")
        worst_dev = max(worst_dev, float(np.abs(targets - 1.0 / C).max()))
        result = uslt.local_loss(X, X, state, params, metric="dot", targets=targets)
        min_grad = min(min_grad, float(np.linalg.norm(result.grad)))
    elapsed = time.perf_counter() - t0
    uniform = CheckOutcome(
        name="observation2-one-cluster-target-uniform",
        passed=worst_dev < 1e-3,
        worst=worst_dev,
        threshold=1e-3,
        direction="<",
        elapsed=elapsed,
        detail=f"{seeds} seeds, adjustment intensity 1",
    )
    gradient = CheckOutcome(
        name="observation2-one-cluster-gradient",
        passed=min_grad > 1e-3,
        worst=min_grad,
        threshold=1e-3,
        direction=">",
        elapsed=elapsed,
        detail=f"{seeds} seeds",
    )
    return uniform, gradient


def check_even_distribution(seeds: int = 50, seed: int = 0) -> CheckOutcome:
    """Near-uniform predictions with a converged (uniform) EMA: the
    sharpened target must follow the perturbation's argmax and be strictly
    spikier than the prediction itself."""
    rng = np.random.default_rng(seed)
    t0 = time.perf_counter()
    min_margin = np.inf
    ok = True
    for _ in range(seeds):
        C = int(rng.integers(3, 9))
        d = int(rng.integers(4, 17))
        x = rng.standard_normal(d)
        x /= np.linalg.norm(x)
        eps = 1e-2 * rng.standard_normal(C)
        base = float(rng.uniform(-0.5, 0.5))
        ortho = rng.standard_normal((C, d))
        ortho -= np.outer(ortho @ x, x)
        centroids = (base + eps)[:, None] * x[None, :] + 0.05 * ortho
        state = uslt.UsltState(centroids=centroids, running_mean=np.full(C, 1.0 / C))
        params = uslt.UsltParams(
            adjust_alpha=float(rng.uniform(0.5, 5.0)), temperature=0.25
        )
        targets = uslt.local_targets(x, state, params, metric="dot")[0]
        soft = uslt.softmax(x @ centroids.T)
        if int(targets.argmax()) != int(np.argmax(eps)):
            ok = False
        margin = float(targets.max() - soft.max())
        min_margin = min(min_margin, margin)
    return CheckOutcome(
        name="observation2-even-distribution",
        passed=ok and min_margin > 0.0,
        worst=min_margin,
        threshold=0.0,
        direction=">",
        elapsed=time.perf_counter() - t0,
        detail=f"{seeds} seeds, argmax follows perturbation: {ok}",
    )


def check_sharpen_shift_invariance(cases: int = 200, seed: int = 0) -> CheckOutcome:
    rng = np.random.default_rng(seed)
    t0 = time.perf_counter()
    worst = 0.0
    for _ in range(cases):
        C = int(rng.integers(2, 12))
        z = rng.standard_normal(C) * rng.uniform(0.5, 3.0)
        c = float(rng.uniform(-10.0, 10.0))
        t = float(rng.uniform(0.1, 4.0))
        worst = max(worst, float(np.abs(uslt.sharpen(z + c, t) - uslt.sharpen(z, t)).max()))
    return CheckOutcome(
        name="sharpen-shift-invariance",
        passed=worst <= 1e-12,
        worst=worst,
        threshold=1e-12,
        direction="<",
        elapsed=time.perf_counter() - t0,
        detail=f"{cases} randomized shifts in [-10, 10]",
    )


def run_all(seed: int = 0) -> list[CheckOutcome]:
    outcomes = [
        check_global_local_identity(seed=seed),
        check_gradients(seed=seed),
    ]
    outcomes.extend(check_one_cluster_collapse(seed=seed))
    outcomes.append(check_even_distribution(seed=seed))
    outcomes.append(check_sharpen_shift_invariance(seed=seed))
    return outcomes
