"""Expected stage counts, rewards and per-user reward shares under a plan."""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from ..data import stage_counts
from ..hawkes.model import PROCESS_NAMES
from ..hawkes.moments import expected_counts, propagator, residual_excitation

# activity index z: 0 = tweet, 1 = retweet
TRUE_PROCESS = ("tweet_T", "retweet_T")
FAKE_PROCESS = ("tweet_F", "retweet_F")


@dataclass(frozen=True, eq=False)
class StageContext:
    """Everything about one stage that does not depend on the plan.

    Expected true-news counts are affine in the plan: n_true0[z] + jac[z] @ a_z.
    """

    tau: float
    dt: float
    state: np.ndarray  # realized (N, 5) counts of the previous stage
    n_fake: np.ndarray  # (2, N)
    n_true0: np.ndarray  # (2, N)
    jac: np.ndarray  # (2, N, N)
    likes: np.ndarray  # (N,)
    gram: np.ndarray  # G^T G

    @property
    def n_users(self):
        return self.state.shape[0]


def stage_context(model, net, history, tau, dt, state=None):
    """Build the context for the stage [tau, tau + dt) from events before tau."""
    past = history.window(-np.inf, tau)
    means = {}
    for name in PROCESS_NAMES:
        exc = residual_excitation(model, name, past, tau)
        means[name] = expected_counts(model, name, exc, dt)
    jac = np.stack([propagator(model[name], float(dt)).jacobian for name in TRUE_PROCESS])
    if state is None:
        state = stage_counts(history, tau - dt, tau)
    return StageContext(
        float(tau),
        float(dt),
        np.asarray(state, dtype=float),
        np.stack([means[name] for name in FAKE_PROCESS]),
        np.stack([means[name] for name in TRUE_PROCESS]),
        jac,
        means["like"],
        net.gram,
    )


def _plan_vectors(plan):
    return (plan.a_tweet, plan.a_retweet)


def expected_true(ctx, plan):
    if plan is None:
        return ctx.n_true0.copy()
    a = _plan_vectors(plan)
    return np.stack([ctx.n_true0[z] + ctx.jac[z] @ a[z] for z in (0, 1)])


def reward_summands(n_true, n_fake, gram):
    """Per-user share (1/N) n_i(T) (G^T G n(F))_i; sums to the reward."""
    n = len(n_true)
    return np.asarray(n_true, dtype=float) * (gram @ np.asarray(n_fake, dtype=float)) / n


def reward(n_true, n_fake, gram):
    return float(reward_summands(n_true, n_fake, gram).sum())


def expected_reward(ctx, plan):
    """(E[R_tweet], E[R_retweet], per-user summands of shape (2, N))."""
    n_true = expected_true(ctx, plan)
    summ = np.stack([reward_summands(n_true[z], ctx.n_fake[z], ctx.gram) for z in (0, 1)])
    return float(summ[0].sum()), float(summ[1].sum()), summ


def expected_next_state(ctx, plan):
    """Expected (N, 5) state after the stage: true/fake tweets, true/fake retweets, likes."""
    n_true = expected_true(ctx, plan)
    return np.column_stack([n_true[0], ctx.n_fake[0], n_true[1], ctx.n_fake[1], ctx.likes])


def contribution(ctx, plan, z):
    """Drop in user i's reward share when a_i alone is zeroed, others fixed.

    Only n_i(T) changes in user i's own share, by J_ii a_i, so the drop is
    (1/N) J_ii a_i (G^T G n(F))_i, which is never negative.
    """
    a = _plan_vectors(plan)[z]
    return np.diag(ctx.jac[z]) * a * (ctx.gram @ ctx.n_fake[z]) / ctx.n_users


def reward_gradient(ctx, z):
    """d E[R_z] / d a_z (independent of the plan)."""
    return ctx.jac[z].T @ (ctx.gram @ ctx.n_fake[z]) / ctx.n_users
