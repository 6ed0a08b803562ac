"""Stage returns, the advantage actor-critic objective and its exact gradients.

The policy is deterministic; J_theta is differentiated through the
expected-reward model (affine in the plan) and the critic's value of the
expected next state. Clustering features and memberships are held fixed.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from ..clustering import centroids, cluster_state
from .interventions import interventions_backward, user_interventions
from .nets import add_grads
from .reward import expected_next_state, expected_reward, reward_gradient


def discounted_returns(r, gamma):
    """D_k = sum_{j >= k} gamma^(j-k) r_j."""
    r = np.asarray(r, dtype=float)
    D = np.zeros_like(r)
    acc = 0.0
    for k in range(len(r) - 1, -1, -1):
        acc = r[k] + gamma * acc
        D[k] = acc
    return D


def total_objective(r, v, gamma):
    """(J_theta, J_phi, trace) from stage returns r_k and values V(s_k)."""
    r = np.asarray(r, dtype=float)
    v = np.asarray(v, dtype=float)
    if len(r) < 1 or len(v) != len(r):
        raise ValueError("need K >= 1 returns and matching values")
    D = discounted_returns(r, gamma)
    B = D - v
    return float(B.sum()), -float(np.abs(v - D).sum()), {"r": r, "V": v, "D": D, "B": B}


def stage_return(ctx, plan, value, gamma):
    """r_k = E[R_tweet] + E[R_retweet] + gamma V(expected next state); also returns that state."""
    rt, rr, _ = expected_reward(ctx, plan)
    s_next = expected_next_state(ctx, plan)
    return rt + rr + gamma * value(state_input(s_next)), s_next


def state_input(s):
    """Network input transform for count states."""
    return np.log1p(np.asarray(s, dtype=float))


def policy_input(state, X, M, mode):
    if mode == "cluster":
        return state_input(cluster_state(M, state)).ravel()
    if mode == "state+features":
        return np.concatenate([state_input(state).ravel(), np.asarray(X, dtype=float).ravel()])
    raise ValueError(f"unknown policy input mode {mode!r}")


@dataclass
class Setup:
    gamma: float = 0.7
    weighted: bool = True
    input_mode: str = "cluster"


@dataclass
class StageRecord:
    k: int
    plan: object
    summands: np.ndarray
    reward: float
    r: float
    value: float
    X: np.ndarray
    M: np.ndarray


@dataclass
class Rollout:
    J_theta: float
    J_phi: float
    trace: dict
    stages: list = field(default_factory=list)
    grad_theta: list = None
    grad_phi: list = None


def rollout(policy, value, contexts, budgets, phi_r, setup, X1, M1, advance=None, need_grad=True):
    """Run the stage loop and return the objective with optional gradients.

    ``advance(k, record, history)`` returns (X_{k+1}, M_{k+1}); by default
    the first stage's features and memberships are reused throughout.
    ``budgets`` is (K, 2) for tweet and retweet.
    """
    gamma = setup.gamma
    K = len(contexts)
    X, M = np.asarray(X1, dtype=float), np.asarray(M1)
    stages, caches = [], []
    for k in range(K):
        ctx = contexts[k]
        x_in = policy_input(ctx.state, X, M, setup.input_mode)
        a_t, a_r, pcache = policy.forward(x_in)
        Y = centroids(M, X)
        plan, icache = user_interventions(
            a_t, a_r, X, Y, M, phi_r, budgets[k], setup.weighted, policy.tied, stage=k + 1
        )
        rt, rr, summ = expected_reward(ctx, plan)
        s_next = expected_next_state(ctx, plan)
        v_next, vcache_next = value.forward(state_input(s_next))
        v_k, vcache_k = value.forward(state_input(ctx.state))
        rec = StageRecord(k + 1, plan, summ, rt + rr, rt + rr + gamma * v_next, v_k, X, M)
        stages.append(rec)
        caches.append((pcache, icache, s_next, vcache_next, vcache_k))
        if k + 1 < K:
            if advance is not None:
                X, M = advance(k + 1, rec, stages)
                X = np.asarray(X, dtype=float)
    r = np.array([s.r for s in stages])
    v = np.array([s.value for s in stages])
    J_theta, J_phi, trace = total_objective(r, v, gamma)
    out = Rollout(J_theta, J_phi, trace, stages)
    if not need_grad:
        return out

    # d J_theta / d r_j = sum_{k <= j} gamma^(j-k)
    c = np.zeros(K)
    acc = 0.0
    for j in range(K):
        acc = 1.0 + gamma * acc
        c[j] = acc
    # d J_phi / d V(s_k) = -e_k and d J_phi / d V(s'_j) = gamma sum_{k <= j} gamma^(j-k) e_k
    e = np.sign(v - trace["D"])
    w_next = np.zeros(K)
    acc = 0.0
    for j in range(K):
        acc = e[j] + gamma * acc
        w_next[j] = gamma * acc

    g_theta = policy.mlp.zero_grads()
    g_phi = value.mlp.zero_grads()
    n = contexts[0].n_users
    for j in range(K):
        ctx = contexts[j]
        pcache, icache, s_next, vcache_next, vcache_k = caches[j]
        # value-net sensitivity to the expected next state
        _, g_in = value.backward(vcache_next, 1.0)
        g_s = g_in.reshape(n, 5) / (1.0 + s_next)
        g_a = []
        for z, col in ((0, 0), (1, 2)):
            g_a.append(reward_gradient(ctx, z) + gamma * ctx.jac[z].T @ g_s[:, col])
        g_at, g_ar = interventions_backward(icache, c[j] * g_a[0], c[j] * g_a[1])
        add_grads(g_theta, policy.backward(pcache, g_at, g_ar))
        gk, _ = value.backward(vcache_k, -e[j])
        add_grads(g_phi, gk)
        gn, _ = value.backward(vcache_next, w_next[j])
        add_grads(g_phi, gn)
    out.grad_theta = g_theta
    out.grad_phi = g_phi
    return out


def fixed_advance(Xs, Ms):
    """Advance function replaying recorded per-stage features and memberships."""

    def advance(k, rec, history):
        return Xs[k], Ms[k]

    return advance
