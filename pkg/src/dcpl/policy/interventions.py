"""Cluster actions -> per-user intervention plan under an L1 budget."""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from ..hawkes.model import InterventionPlan


@dataclass(eq=False)
class InterventionCache:
    labels: np.ndarray
    dist: np.ndarray
    phi_r: np.ndarray
    raw_t: np.ndarray
    raw_r: np.ndarray
    budgets: tuple
    n_clusters: int
    tied: bool


def _normalize(raw, budget):
    s = raw.sum()
    # equal raw actions (all zero included) split the budget exactly evenly
    if s <= 0.0 or np.all(raw == raw[0]):
        return np.full(len(raw), budget / len(raw))
    return raw * (budget / s)


def _normalize_backward(raw, budget, g):
    s = raw.sum()
    if s <= 0.0:
        return np.zeros_like(raw)
    # the uniform shortcut agrees with the general formula, so its gradient does too
    return (budget / s) * (g - (g @ raw) / s)


def user_interventions(a_t, a_r, X, Y, M, phi_r, budgets, weighted=True, tied=False, stage=0):
    """Distance-weighted user actions, normalized so each activity spends its budget.

    Tweet: a_i = a_C[c(i)] d_i. Retweet: a_i = (1/N) sum_j a_C[c(i), c(j)] d_i d_j Phi[j, i].
    d_i is the distance of user i to its centroid (1 when ``weighted`` is off).
    With ``tied`` the retweet raw actions equal the tweet ones.
    """
    b_t, b_r = (float(b) for b in budgets)
    if b_t < 0 or b_r < 0:
        raise ValueError("budgets must be nonnegative")
    M = np.asarray(M)
    labels = M.argmax(axis=1)
    n = M.shape[0]
    if weighted:
        dist = np.linalg.norm(np.asarray(X, dtype=float) - np.asarray(Y, dtype=float)[labels], axis=1)
    else:
        dist = np.ones(n)
    phi_r = np.asarray(phi_r, dtype=float)
    raw_t = np.asarray(a_t, dtype=float)[labels] * dist
    if tied:
        raw_r = raw_t.copy()
    else:
        A = np.asarray(a_r, dtype=float)[np.ix_(labels, labels)]
        raw_r = dist * ((A * phi_r.T) @ dist) / n
    plan = InterventionPlan(_normalize(raw_t, b_t), _normalize(raw_r, b_r), stage, b_t, b_r)
    cache = InterventionCache(labels, dist, phi_r, raw_t, raw_r, (b_t, b_r), M.shape[1], tied)
    return plan, cache


def interventions_backward(cache, g_tweet, g_retweet):
    """Gradients of a scalar w.r.t. the cluster actions given its user-plan gradients."""
    C = cache.n_clusters
    n = len(cache.labels)
    g_raw_t = _normalize_backward(cache.raw_t, cache.budgets[0], np.asarray(g_tweet, dtype=float))
    g_raw_r = _normalize_backward(cache.raw_r, cache.budgets[1], np.asarray(g_retweet, dtype=float))
    d = cache.dist
    if cache.tied:
        g_raw_t = g_raw_t + g_raw_r
        g_ar = np.zeros((C, C))
    else:
        Z = (g_raw_r * d)[:, None] * cache.phi_r.T * d[None, :] / n
        M = np.zeros((n, C))
        M[np.arange(n), cache.labels] = 1.0
        g_ar = M.T @ Z @ M
    g_at = np.bincount(cache.labels, weights=g_raw_t * d, minlength=C)
    return g_at, g_ar
