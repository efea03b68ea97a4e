"""Independent oracles shared by the unit and acceptance suites.

Everything here is deliberately naive: full sorts, double loops, exhaustive
enumeration, exact combinatorics. None of it shares code with the library
paths it verifies.
"""

import math

import numpy as np


def brute_force_graph(X, k):
    """O(n^2) kNN oracle: all pairwise distances from differences, then a
    full stable sort on (distance, index)."""
    n = X.shape[0]
    diff = X[:, None, :] - X[None, :, :]
    dist = np.sqrt((diff * diff).sum(axis=2))
    dist[np.arange(n), np.arange(n)] = np.inf
    idx = np.broadcast_to(np.arange(n), (n, n))
    order = np.lexsort((idx, dist), axis=1)[:, :k]
    rows = np.arange(n)[:, None]
    return idx[rows, order], dist[rows, order]


def alg1_transcription(X, utility, clustering, lam, alpha, m_reg, rounds):
    """Literal double-loop transcription of the iterative regularization
    pseudo-code, no horizon, no vectorization."""
    n = X.shape[0]
    m = clustering.num_clusters
    cluster = clustering.assignment

    def per_cluster_argmax(scores):
        picks = []
        for c in range(m):
            members = [i for i in range(n) if cluster[i] == c]
            best = members[0]
            for i in members[1:]:
                if scores[i] > scores[best]:
                    best = i
            picks.append(best)
        return picks

    reg_bar = [0.0] * n
    selected = per_cluster_argmax(utility)
    for _ in range(rounds):
        u_prime = [0.0] * n
        for i in range(n):
            reg = 0.0
            for j in range(m):
                if cluster[selected[j]] != cluster[i]:
                    d = float(np.linalg.norm(X[i] - X[selected[j]]))
                    reg += 1.0 / d**alpha
            reg_bar[i] = m_reg * reg_bar[i] + (1.0 - m_reg) * reg
            u_prime[i] = utility[i] - lam * reg_bar[i]
        selected = per_cluster_argmax(u_prime)
    return selected


def best_partition_objective(X, clusters):
    """Global K-Means optimum by exhaustive enumeration of set partitions
    (restricted growth strings with at most ``clusters`` blocks)."""
    n = X.shape[0]
    best = np.inf

    def rec(i, assignment, used):
        nonlocal best
        if i == n:
            if used == clusters:
                obj = 0.0
                a = np.array(assignment)
                for c in range(clusters):
                    pts = X[a == c]
                    obj += ((pts - pts.mean(axis=0)) ** 2).sum()
                best = min(best, obj)
            return
        for c in range(min(used + 1, clusters)):
            assignment.append(c)
            rec(i + 1, assignment, max(used, c + 1))
            assignment.pop()

    rec(0, [], 0)
    return best


def exact_expected_coverage(class_sizes, budget):
    """E[#classes hit] under uniform sampling without replacement, from the
    exact occupancy distribution."""
    n = sum(class_sizes)
    total = math.comb(n, budget)
    return sum(1.0 - math.comb(n - s, budget) / total for s in class_sizes)
