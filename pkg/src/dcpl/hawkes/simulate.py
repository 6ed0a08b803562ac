"""Ogata thinning for the interleaved tweet / retweet / like processes."""

from __future__ import annotations

import numpy as np

from ..data import FAKE, LIKE, NO_LABEL, RETWEET, TRUE, TWEET, EventLog, partition_stages
from .model import PROCESS_KEYS, PROCESS_NAMES, InstabilityError, process_events
from .moments import excitation_from_times

DEFAULT_STAGE_CAP = 10**6


def stage_rng(seed, stage_key, stream):
    """Independent generator per (seed, absolute stage, process)."""
    ss = np.random.SeedSequence(entropy=int(seed), spawn_key=(int(stage_key), int(stream)))
    return np.random.Generator(np.random.PCG64(ss))


def thin(process, base, decayed, h, t0, t1, rng, cap=DEFAULT_STAGE_CAP):
    """Simulate one process on [t0, t1); ``decayed``/``h`` are updated in place.

    Returns event times and dimensions. The intensity only decays between
    events, so its value at the current time bounds it until the next event.
    """
    w = process.omega
    kernel = process.kernel
    base_sum = float(base.sum())
    times, dims = [], []
    t = t0
    while True:
        lam_bar = base_sum + float(h.sum())
        if lam_bar <= 0.0:
            t_next = t1
        else:
            t_next = t + rng.exponential(1.0 / lam_bar)
        t_next = min(t_next, t1)
        f = np.exp(-w * (t_next - t))
        h *= f
        decayed *= f
        t = t_next
        if t >= t1:
            break
        lam = base + h
        cum = np.cumsum(lam)
        u = rng.random() * lam_bar
        if u < cum[-1]:
            i = int(np.searchsorted(cum, u, side="right"))
            i = min(i, len(cum) - 1)
            times.append(t)
            dims.append(i)
            h += w * kernel.row(i)
            decayed[i] += w
            if len(times) > cap:
                raise InstabilityError(
                    f"more than {cap} events in [{t0}, {t1}); the process looks explosive"
                )
    return np.array(times, dtype=float), np.array(dims, dtype=np.int64)


class _PostBuffer:
    """Tweets and retweets of one label, for trailing-window target attribution."""

    def __init__(self, times, users):
        t = np.asarray(times, dtype=float)
        order = np.argsort(t, kind="stable")
        self.t = t[order]
        self.u = np.asarray(users, dtype=np.int64)[order]

    def add(self, times, users):
        t = np.concatenate([self.t, times])
        u = np.concatenate([self.u, users])
        order = np.argsort(t, kind="stable")
        self.t, self.u = t[order], u[order]

    def recent_counts(self, t, window, n):
        lo = np.searchsorted(self.t, t - window, side="left")
        hi = np.searchsorted(self.t, t, side="left")
        return np.bincount(self.u[lo:hi], minlength=n)

    def prune(self, before):
        keep = self.t >= before
        self.t, self.u = self.t[keep], self.u[keep]


def _retweet_targets(times, users, posts, stage_tweets, phi, dt, followers, rng):
    """Pick the retweeted author for each retweet of one label and stage.

    Candidates are same-label posts in [t - dt, t): earlier posts, this
    stage's tweets and the retweets already attributed. Retweet times are
    sorted, so both sources are scanned with sliding windows.
    """
    n = phi.shape[0]
    base = _PostBuffer(np.concatenate([posts.t, stage_tweets[0]]), np.concatenate([posts.u, stage_tweets[1]]))
    bt, bu = base.t, base.u
    counts = np.zeros(n, dtype=np.int64)
    b_lo = b_hi = r_lo = r_hi = 0
    by_followers = np.argsort(-followers, kind="stable")
    targets = np.empty(len(times), dtype=np.int64)
    for e, (t, i) in enumerate(zip(times, users)):
        while b_hi < len(bt) and bt[b_hi] < t:
            counts[bu[b_hi]] += 1
            b_hi += 1
        while b_lo < b_hi and bt[b_lo] < t - dt:
            counts[bu[b_lo]] -= 1
            b_lo += 1
        while r_hi < e and times[r_hi] < t:
            counts[users[r_hi]] += 1
            r_hi += 1
        while r_lo < r_hi and times[r_lo] < t - dt:
            counts[users[r_lo]] -= 1
            r_lo += 1
        c = counts.astype(float)
        c[i] = 0.0
        weights = phi[:, i] * c
        total = weights.sum()
        if total > 0:
            j = rng.choice(n, p=weights / total)
        elif c.any():
            cands = np.flatnonzero(c)
            j = cands[rng.integers(len(cands))]
        else:
            j = by_followers[0] if by_followers[0] != i else by_followers[1]
        targets[e] = j
    return targets


def _likers(dims, adjacency, rng):
    n = adjacency.shape[0]
    out = np.empty(len(dims), dtype=np.int64)
    for e, i in enumerate(dims):
        cands = np.flatnonzero(adjacency[i])
        if len(cands) == 0:
            cands = np.delete(np.arange(n), i)
        out[e] = cands[rng.integers(len(cands))]
    return out


def simulate(model, t0, t1, dt, net, history=None, plans=None, seed=0, stage_cap=DEFAULT_STAGE_CAP):
    """Generate events on [t0, t1) stage by stage.

    ``plans`` maps 1-based stage index (within this window) to an
    InterventionPlan. Each (stage, process) pair draws from its own seeded
    stream keyed by the absolute stage number, so splitting a window into
    several calls reproduces a single call, and processes that do not see
    the interventions are identical with and without them.
    """
    part = partition_stages(t0, t1, dt)
    n = model.n_users
    if history is None:
        history = EventLog.empty(n)
    history = history.window(-np.inf, t0)
    plans = plans or {}
    followers = net.adjacency.sum(axis=1)

    state = {}
    for name in PROCESS_NAMES:
        times, dims = process_events(history, name)
        exc = excitation_from_times(model[name], times, dims, t0, n)
        state[name] = (exc.decayed.copy(), exc.h.copy())

    posts = {}
    for label in (FAKE, TRUE):
        m = (history.kind != LIKE) & (history.label == label) & (history.t >= t0 - dt)
        posts[label] = _PostBuffer(history.t[m], history.user[m])

    out_t, out_u, out_k, out_l, out_g = [], [], [], [], []

    def emit(times, users, kind, label, targets):
        out_t.append(times)
        out_u.append(users)
        out_k.append(np.full(len(times), kind, dtype=np.int8))
        out_l.append(np.full(len(times), label, dtype=np.int8))
        out_g.append(targets)

    for k in range(1, part.n_stages + 1):
        a, b = part.stage_window(k)
        stage_key = int(round(a / dt))
        plan = plans.get(k)
        stage_tweets = {}
        for stream, name in enumerate(PROCESS_NAMES):
            process = model[name]
            base = process.mu
            if plan is not None:
                boost = plan.for_process(name)
                if boost is not None:
                    base = base + boost
            rng = stage_rng(seed, stage_key, stream)
            decayed, h = state[name]
            times, dims = thin(process, base, decayed, h, a, b, rng, stage_cap)
            kind, label = PROCESS_KEYS[name]
            if kind == TWEET:
                stage_tweets[label] = (times, dims)
                emit(times, dims, TWEET, label, np.full(len(times), -1, dtype=np.int64))
            elif kind == RETWEET:
                targets = _retweet_targets(
                    times, dims, posts[label], stage_tweets[label],
                    process.kernel.dense(), dt, followers, rng,
                )
                emit(times, dims, RETWEET, label, targets)
                posts[label].add(stage_tweets[label][0], stage_tweets[label][1])
                posts[label].add(times, dims)
                posts[label].prune(b - dt)
            else:
                likers = _likers(dims, net.adjacency, rng)
                emit(times, likers, LIKE, NO_LABEL, dims)

    if not out_t:
        return EventLog.empty(n)
    return EventLog.from_arrays(
        np.concatenate(out_t), np.concatenate(out_u), np.concatenate(out_k),
        np.concatenate(out_l), np.concatenate(out_g), n,
    )
