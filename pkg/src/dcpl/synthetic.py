"""Seeded synthetic networks, ground-truth models and event logs."""

from __future__ import annotations

import os

import numpy as np

from .data import Network, save_events, save_network
from .hawkes.model import LowRankKernel, branching_spectral_radius, make_model
from .hawkes.simulate import simulate

FIXTURE_DIR = os.path.join(os.path.dirname(__file__), "fixtures")

# user profiles: (true tweet rate, fake tweet rate) per hour
PROFILES = ((0.6, 0.6), (0.6, 0.05), (0.1, 0.6), (0.1, 0.05))


def two_block_network(n, p_in, p_out, rng):
    """Directed stochastic block model with two equal blocks."""
    block = (np.arange(n) >= n // 2).astype(int)
    same = block[:, None] == block[None, :]
    prob = np.where(same, p_in, p_out)
    G = (rng.random((n, n)) < prob).astype(np.int8)
    np.fill_diagonal(G, 0)
    return Network(G), block


def _scale_to(kernel, rho):
    r = branching_spectral_radius(kernel)
    return kernel * (rho / r) if r > 0 else kernel


def ground_truth_model(net, block, rng, rho_tweet=0.4, rho_retweet=0.5, rho_like=0.3, rate=1.0):
    """Model with four activity profiles crossed with the two blocks.

    Tweet and like kernels live on follower edges; the retweet kernel is a
    rank-2 nonnegative product that only links users of the same block.
    """
    n = net.n_users
    G = net.adjacency.astype(float)
    profile = np.arange(n) % len(PROFILES)
    jitter = rng.uniform(0.8, 1.2, size=(4, n))
    mu_true = np.array([PROFILES[p][0] for p in profile]) * rate
    mu_fake = np.array([PROFILES[p][1] for p in profile]) * rate
    mu = {
        "tweet_T": mu_true * jitter[0],
        "tweet_F": mu_fake * jitter[1],
        "retweet_T": 0.3 * mu_true * jitter[2],
        "retweet_F": 0.3 * mu_fake * jitter[3],
        "like": np.full(n, 0.2 * rate),
    }
    tweet = _scale_to(G * rng.uniform(0.5, 1.5, size=(n, n)), rho_tweet)
    like = _scale_to(G * rng.uniform(0.5, 1.5, size=(n, n)), rho_like)
    onehot = np.eye(2)[block]
    U = onehot * rng.uniform(0.5, 1.5, size=(n, 1))
    V = onehot * rng.uniform(0.5, 1.5, size=(n, 1))
    r = branching_spectral_radius(LowRankKernel(U, V))
    s = np.sqrt(rho_retweet / r) if r > 0 else 1.0
    retweet = LowRankKernel(U * s, V * s)
    return make_model(n, mu, 1.0, {"tweet": tweet, "retweet": retweet, "like": like})


def make_dataset(n_users=20, seed=0, horizon=40.0, p_in=0.3, p_out=0.05, dt=1.0, rate=1.0):
    """(network, ground-truth model, event log on [0, horizon))."""
    rng = np.random.default_rng(seed)
    net, block = two_block_network(n_users, p_in, p_out, rng)
    model = ground_truth_model(net, block, rng, rate=rate)
    log = simulate(model, 0.0, horizon, dt, net, seed=seed)
    return net, model, log


def write_fixture(out_dir=FIXTURE_DIR, n_users=20, seed=0):
    os.makedirs(out_dir, exist_ok=True)
    net, model, log = make_dataset(n_users, seed)
    save_network(net, os.path.join(out_dir, "network.csv"))
    save_events(log, os.path.join(out_dir, "events.jsonl"))
    model.save(os.path.join(out_dir, "model.json"))
    return net, model, log


def fixture_paths(fixture_dir=FIXTURE_DIR):
    return {
        "events": os.path.join(fixture_dir, "events.jsonl"),
        "network": os.path.join(fixture_dir, "network.csv"),
        "model": os.path.join(fixture_dir, "model.json"),
    }
