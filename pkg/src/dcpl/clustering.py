"""User clustering: reward-based features, K-means++, weighted-centroid updates
and partition-quality metrics."""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np
from scipy.sparse.csgraph import shortest_path

from .data import stage_counts


@dataclass(frozen=True, eq=False)
class ClusterModel:
    membership: np.ndarray  # (N, C) one-hot
    centroids: np.ndarray  # (C, d)
    eps1: float = 0.5
    eps2: float = 0.5

    def __post_init__(self):
        M = np.asarray(self.membership)
        if M.ndim != 2 or not np.array_equal(M.sum(axis=1), np.ones(M.shape[0])):
            raise ValueError("membership rows must be one-hot")
        if abs(self.eps1 + self.eps2 - 1.0) > 1e-12 or self.eps1 < 0 or self.eps2 < 0:
            raise ValueError("eps1 and eps2 must be nonnegative and sum to 1")

    @property
    def n_clusters(self):
        return self.membership.shape[1]

    @property
    def labels(self):
        return self.membership.argmax(axis=1)


def one_hot(labels, n_clusters):
    labels = np.asarray(labels, dtype=np.int64)
    M = np.zeros((len(labels), n_clusters), dtype=np.int64)
    M[np.arange(len(labels)), labels] = 1
    return M


def standardize(X):
    """Per-column z-score; constant columns are only centred."""
    X = np.asarray(X, dtype=float)
    sd = X.std(axis=0)
    return (X - X.mean(axis=0)) / np.where(sd > 0, sd, 1.0)


def _group_mean(M, A):
    M = np.asarray(M, dtype=float)
    sizes = M.sum(axis=0)
    sums = M.T @ np.asarray(A, dtype=float)
    return np.where(sizes[:, None] > 0, sums / np.where(sizes > 0, sizes, 1.0)[:, None], 0.0)


def cluster_state(M, s_U):
    """Mean member state per cluster (C x 5); empty clusters give zero rows."""
    return _group_mean(M, s_U)


def centroids(M, X):
    return _group_mean(M, X)


def _sq_dists(X, Y):
    return ((X[:, None, :] - Y[None, :, :]) ** 2).sum(axis=2)


def kmeans_pp_init(X, C, rng):
    n = X.shape[0]
    chosen = [int(rng.integers(n))]
    d2 = _sq_dists(X, X[chosen]).min(axis=1)
    for _ in range(1, C):
        total = d2.sum()
        if total > 0:
            idx = int(rng.choice(n, p=d2 / total))
        else:
            idx = int(rng.integers(n))
        chosen.append(idx)
        d2 = np.minimum(d2, _sq_dists(X, X[[idx]])[:, 0])
    return X[chosen].copy()


def lloyd(X, Y, tol=1e-8, max_iter=300):
    """Plain Lloyd iterations from centroids Y; empty clusters keep their centroid."""
    Y = np.array(Y, dtype=float)
    C = Y.shape[0]
    for _ in range(max_iter):
        labels = _sq_dists(X, Y).argmin(axis=1)
        M = one_hot(labels, C)
        sizes = M.sum(axis=0)
        new = np.where(sizes[:, None] > 0, centroids(M, X), Y)
        shift = np.linalg.norm(new - Y)
        Y = new
        if shift < tol:
            break
    labels = _sq_dists(X, Y).argmin(axis=1)
    return labels, Y


def wcssd(X, labels, Y):
    return float(((X - Y[labels]) ** 2).sum())


def kmeans(X, C, rng, n_init=1, init=None):
    """Best of ``n_init`` K-means++ runs (plus an optional warm start)."""
    X = np.asarray(X, dtype=float)
    if not 1 <= C <= X.shape[0]:
        raise ValueError(f"number of clusters {C} must lie in [1, {X.shape[0]}]")
    starts = [kmeans_pp_init(X, C, rng) for _ in range(n_init)]
    if init is not None:
        starts.append(np.asarray(init, dtype=float))
    best = None
    for Y0 in starts:
        labels, Y = lloyd(X, Y0)
        score = wcssd(X, labels, Y)
        if best is None or score < best[0] - 1e-12:
            best = (score, labels, Y)
    return best[1], best[2], best[0]


def empirical_reward_features(log, net, part):
    """Per-user empirical reward share under no intervention, summed over stages.

    For activity z: (1/N) n_i(T, z) (G^T G n(F, z))_i. Returned as (N, 4)
    with the two shares duplicated into payoff and contribution slots.
    """
    n = net.n_users
    share = np.zeros((n, 2))
    for k in range(1, part.n_stages + 1):
        a, b = part.stage_window(k)
        c = stage_counts(log, a, b).astype(float)
        for z, (ti, fi) in enumerate([(0, 1), (2, 3)]):
            share[:, z] += c[:, ti] * (net.gram @ c[:, fi]) / n
    return np.hstack([share, share])


def initial_clusters(training_log, net, part, C, rng, eps1=0.5, eps2=0.5, n_init=1):
    """K-means++ clusters on standardized empirical-reward features."""
    n = net.n_users
    if not 1 <= C <= n:
        raise ValueError(f"number of clusters {C} must lie in [1, {n}]")
    X = standardize(empirical_reward_features(training_log, net, part))
    labels, Y, _ = kmeans(X, C, rng, n_init=n_init)
    return ClusterModel(one_hot(labels, C), Y, eps1, eps2), X


def payoff_features(summands_prev, summands_prev2, k):
    """Change in a user's expected-reward share between stages k-1 and k-2 (zero for k <= 2)."""
    if k <= 2 or summands_prev2 is None:
        return np.zeros_like(np.asarray(summands_prev, dtype=float))
    return np.asarray(summands_prev, dtype=float) - np.asarray(summands_prev2, dtype=float)


def contribution_features(ctx, plan, z):
    """Drop in each user's expected-reward share when only that user's boost is removed.

    ``ctx`` is a policy.reward.StageContext for the stage the plan applies to.
    """
    from .policy.reward import contribution

    return contribution(ctx, plan, z)


def update_clusters(Y_k, M_k, X_next, delta=1e-6, eps1=0.5, eps2=0.5, max_iter=300):
    """Re-assign users around centroids anchored to the previous stage.

    Weighted centroids mix the current member means with the previous
    stage's centroids; each user moves to the nearest weighted centroid.
    """
    Y_k = np.asarray(Y_k, dtype=float)
    X = np.asarray(X_next, dtype=float)
    C = Y_k.shape[0]
    M = np.asarray(M_k)
    Y_w = Y_k.copy()
    for it in range(max_iter):
        y_prev = Y_w
        sizes = M.sum(axis=0)
        raw = centroids(M, X)
        Y_w = np.where(sizes[:, None] > 0, eps1 * raw + eps2 * Y_k, y_prev)
        M = one_hot(_sq_dists(X, Y_w).argmin(axis=1), C)
        # from the second pass on, a still centroid set implies a fixed membership
        if it >= 1 and np.linalg.norm(y_prev - Y_w) < delta:
            break
    return ClusterModel(M, Y_w, eps1, eps2)


def _bic(X, labels, C, score):
    n, d = X.shape
    sizes = np.bincount(labels, minlength=C)
    var = max(score / (n * d), 1e-12)
    nz = sizes[sizes > 0]
    ll = float((nz * np.log(nz / n)).sum()) - 0.5 * n * d * np.log(2 * np.pi * var) - 0.5 * n * d
    n_params = C * d + (C - 1) + 1
    return -2.0 * ll + n_params * np.log(n)


def select_num_clusters(X, candidates, rng, n_init=10):
    """Score each candidate count by WC-SSD and BIC; choose the WC-SSD elbow.

    Each run also warm-starts from the previous candidate's centroids plus
    farthest-point picks, so WC-SSD never increases along the list. The elbow
    is the largest positive second difference of log WC-SSD (ties to the
    smaller count), which compares relative rather than absolute drops;
    with fewer than three candidates no choice is made.
    """
    X = np.asarray(X, dtype=float)
    candidates = sorted(int(c) for c in candidates)
    rows, prev_Y = [], None
    for C in candidates:
        init = None
        if prev_Y is not None:
            extra = C - prev_Y.shape[0]
            d2 = _sq_dists(X, prev_Y).min(axis=1)
            picks = []
            for _ in range(extra):
                idx = int(d2.argmax())
                picks.append(idx)
                d2 = np.minimum(d2, ((X - X[idx]) ** 2).sum(axis=1))
            init = np.vstack([prev_Y, X[picks]])
        labels, Y, score = kmeans(X, C, rng, n_init=n_init, init=init)
        rows.append({"C": C, "wcssd": score, "bic": _bic(X, labels, C, score)})
        prev_Y = Y
    chosen = None
    if len(rows) >= 3:
        w = np.array([r["wcssd"] for r in rows])
        w = np.log(w + 1e-12 * max(w[0], 1.0))
        second = w[:-2] - 2 * w[1:-1] + w[2:]
        best = int(np.argmax(second))
        if second[best] > 0:
            chosen = rows[best + 1]["C"]
    return rows, chosen


def _contingency(a, b):
    a = np.asarray(a)
    b = np.asarray(b)
    if a.shape != b.shape:
        raise ValueError("labelings must have equal length")
    _, ai = np.unique(a, return_inverse=True)
    _, bi = np.unique(b, return_inverse=True)
    table = np.zeros((ai.max(initial=-1) + 1, bi.max(initial=-1) + 1), dtype=np.int64)
    np.add.at(table, (ai, bi), 1)
    return table


def _comb2(x):
    x = np.asarray(x, dtype=float)
    return x * (x - 1) / 2.0


def ari(a, b):
    """Adjusted Rand index."""
    table = _contingency(a, b)
    n = table.sum()
    if n < 2:
        return 1.0
    sum_ij = _comb2(table).sum()
    sum_a = _comb2(table.sum(axis=1)).sum()
    sum_b = _comb2(table.sum(axis=0)).sum()
    expected = sum_a * sum_b / _comb2(n)
    max_index = 0.5 * (sum_a + sum_b)
    if max_index == expected:
        return 1.0
    return float((sum_ij - expected) / (max_index - expected))


def nmi(a, b):
    """Normalized mutual information, arithmetic-mean normalisation."""
    table = _contingency(a, b).astype(float)
    n = table.sum()
    if n == 0:
        return 1.0
    p = table / n
    pa, pb = p.sum(axis=1), p.sum(axis=0)
    ha = -float((pa * np.log(pa)).sum())
    hb = -float((pb * np.log(pb)).sum())
    if ha == 0.0 and hb == 0.0:
        return 1.0
    nz = p > 0
    mi = float((p[nz] * np.log(p[nz] / np.outer(pa, pb)[nz])).sum())
    return max(0.0, min(1.0, mi / (0.5 * (ha + hb))))


def network_features(net):
    """Degree, harmonic closeness and local clustering on the undirected projection."""
    A = ((net.adjacency + net.adjacency.T) > 0).astype(float)
    n = A.shape[0]
    deg = A.sum(axis=1)
    if n > 1:
        dist = shortest_path(A, method="D", unweighted=True, directed=False)
        with np.errstate(divide="ignore"):
            inv = np.where(np.isfinite(dist) & (dist > 0), 1.0 / dist, 0.0)
        closeness = inv.sum(axis=1) / (n - 1)
    else:
        closeness = np.zeros(n)
    tri = np.diag(A @ A @ A)
    pairs = deg * (deg - 1)
    clust = np.where(pairs > 0, tri / np.where(pairs > 0, pairs, 1.0), 0.0)
    return np.column_stack([deg, closeness, clust])


def transition_stats(label_seq):
    """Per user: number of distinct clusters visited and number of switches."""
    L = np.asarray(label_seq)  # (stages, N)
    unique = np.array([len(np.unique(L[:, i])) for i in range(L.shape[1])])
    switches = (L[1:] != L[:-1]).sum(axis=0)
    return unique, switches
