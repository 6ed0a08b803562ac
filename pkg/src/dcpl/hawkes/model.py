"""Multivariate exponential-kernel Hawkes model containers."""

from __future__ import annotations

import json
from dataclasses import dataclass

import numpy as np

from ..data import FAKE, LIKE, RETWEET, TRUE, TWEET

# simulation order within a stage: tweets (F, T), retweets (F, T), likes
PROCESS_NAMES = ("tweet_F", "tweet_T", "retweet_F", "retweet_T", "like")
PROCESS_KEYS = {
    "tweet_F": (TWEET, FAKE),
    "tweet_T": (TWEET, TRUE),
    "retweet_F": (RETWEET, FAKE),
    "retweet_T": (RETWEET, TRUE),
    "like": (LIKE, None),
}
KIND_OF = {"tweet_F": "tweet", "tweet_T": "tweet", "retweet_F": "retweet", "retweet_T": "retweet", "like": "like"}


class InstabilityError(RuntimeError):
    pass


def branching_spectral_radius(kernel, tol=1e-8, max_iter=10_000):
    """Perron root of a nonnegative branching matrix by power iteration.

    Accepts a dense square matrix, a ``(U, V)`` factor pair (radius of U V^T),
    or a kernel object.
    """
    if isinstance(kernel, (DenseKernel, LowRankKernel)):
        kernel = kernel.matrix if isinstance(kernel, DenseKernel) else (kernel.U, kernel.V)
    if isinstance(kernel, tuple):
        U, V = kernel
        # nonzero spectrum of U V^T equals that of V^T U
        A = np.asarray(V, dtype=float).T @ np.asarray(U, dtype=float)
    else:
        A = np.asarray(kernel, dtype=float)
    n = A.shape[0]
    if n == 0:
        return 0.0
    # a nonnegative matrix is nilpotent iff A^n 1 vanishes
    v = np.ones(n)
    for _ in range(n):
        v = A @ v
        if not v.any():
            return 0.0
        v /= np.abs(v).max()
    # the shift makes irreducible periodic matrices primitive
    B = A + np.eye(n)
    x = np.ones(n) / np.sqrt(n)
    est = 0.0
    for _ in range(max_iter):
        y = B @ x
        new = np.linalg.norm(y)
        x = y / new
        if abs(new - est) < tol * max(1.0, new):
            est = new
            break
        est = new
    return max(est - 1.0, 0.0)


@dataclass(frozen=True, eq=False)
class DenseKernel:
    matrix: np.ndarray

    def __post_init__(self):
        m = np.asarray(self.matrix, dtype=float)
        m.setflags(write=False)
        object.__setattr__(self, "matrix", m)

    def dense(self):
        return self.matrix

    def row(self, j):
        """Excitation that an event of user j adds to every user."""
        return self.matrix[j]

    def scaled(self, c):
        return DenseKernel(self.matrix * c)

    def to_json(self):
        return {"dense": self.matrix.tolist()}


@dataclass(frozen=True, eq=False)
class LowRankKernel:
    U: np.ndarray
    V: np.ndarray

    def __post_init__(self):
        for name in ("U", "V"):
            m = np.asarray(getattr(self, name), dtype=float)
            m.setflags(write=False)
            object.__setattr__(self, name, m)
        dense = self.U @ self.V.T
        dense.setflags(write=False)
        object.__setattr__(self, "_dense", dense)

    @property
    def rank(self):
        return self.U.shape[1]

    def dense(self):
        return self._dense

    def row(self, j):
        return self._dense[j]

    def scaled(self, c):
        s = np.sqrt(c)
        return LowRankKernel(self.U * s, self.V * s)

    def to_json(self):
        return {"rank": self.rank, "U": self.U.tolist(), "V": self.V.tolist()}


def kernel_from_json(obj):
    if "dense" in obj:
        return DenseKernel(np.array(obj["dense"], dtype=float))
    return LowRankKernel(np.array(obj["U"], dtype=float), np.array(obj["V"], dtype=float))


@dataclass(frozen=True, eq=False)
class Process:
    mu: np.ndarray
    omega: float
    kernel: DenseKernel | LowRankKernel

    def __post_init__(self):
        mu = np.asarray(self.mu, dtype=float)
        mu.setflags(write=False)
        object.__setattr__(self, "mu", mu)
        if self.omega <= 0:
            raise ValueError("omega must be positive")
        if (mu < 0).any() or (self.kernel.dense() < 0).any():
            raise ValueError("Hawkes parameters must be nonnegative")


@dataclass(frozen=True, eq=False)
class HawkesModel:
    """One N-dimensional process per name in PROCESS_NAMES.

    Tweet/retweet kernels are shared across the F and T labels; the
    constructor does not enforce the sharing, ``fit`` produces it.
    """

    processes: dict

    def __post_init__(self):
        missing = set(PROCESS_NAMES) - set(self.processes)
        if missing:
            raise ValueError(f"missing processes: {sorted(missing)}")

    def __getitem__(self, name):
        return self.processes[name]

    @property
    def n_users(self):
        return self.processes["tweet_T"].mu.shape[0]

    def spectral_radii(self):
        return {name: branching_spectral_radius(p.kernel) for name, p in self.processes.items()}

    def check_stable(self):
        for name, rho in self.spectral_radii().items():
            if rho >= 1.0:
                raise InstabilityError(f"process {name} has spectral radius {rho:.4f} >= 1")

    def to_json(self):
        return {
            "processes": {
                name: {
                    "mu": p.mu.tolist(),
                    "omega": p.omega,
                    "kernel": p.kernel.to_json(),
                }
                for name, p in self.processes.items()
            }
        }

    @classmethod
    def from_json(cls, obj):
        procs = {}
        for name, rec in obj["processes"].items():
            procs[name] = Process(
                mu=np.array(rec["mu"], dtype=float),
                omega=float(rec["omega"]),
                kernel=kernel_from_json(rec["kernel"]),
            )
        return cls(procs)

    def save(self, path):
        with open(path, "w", encoding="utf-8") as fh:
            json.dump(self.to_json(), fh)

    @classmethod
    def load(cls, path):
        with open(path, encoding="utf-8") as fh:
            return cls.from_json(json.load(fh))


def process_events(log, name):
    """(times, dimension index) of one process; likes are indexed by the liked user."""
    kind, label = PROCESS_KEYS[name]
    sub = log.select(kind, label)
    dims = sub.target if kind == LIKE else sub.user
    return np.asarray(sub.t), np.asarray(dims, dtype=np.int64)


def make_model(n, mu, omega=1.0, kernels=None):
    """Convenience constructor: scalar/array ``mu`` and ``omega`` per process."""
    kernels = kernels or {}
    procs = {}
    for name in PROCESS_NAMES:
        m = mu[name] if isinstance(mu, dict) else mu
        w = omega[name] if isinstance(omega, dict) else omega
        kind = KIND_OF[name]
        k = kernels.get(kind, DenseKernel(np.zeros((n, n))))
        if isinstance(k, np.ndarray):
            k = DenseKernel(k)
        procs[name] = Process(np.broadcast_to(np.asarray(m, dtype=float), (n,)).copy(), float(w), k)
    return HawkesModel(procs)


@dataclass(frozen=True, eq=False)
class InterventionPlan:
    """Per-user additive boosts to the true-news tweet/retweet base rates for one stage."""

    a_tweet: np.ndarray
    a_retweet: np.ndarray
    stage: int = 0
    budget_tweet: float = 0.0
    budget_retweet: float = 0.0

    def __post_init__(self):
        for name in ("a_tweet", "a_retweet"):
            a = np.asarray(getattr(self, name), dtype=float)
            if (a < 0).any():
                raise ValueError(f"{name} must be nonnegative")
            a.setflags(write=False)
            object.__setattr__(self, name, a)

    @classmethod
    def zero(cls, n, stage=0):
        return cls(np.zeros(n), np.zeros(n), stage)

    def for_process(self, name):
        """Boost applied to a process; only true-news tweet/retweet processes are boosted."""
        if name == "tweet_T":
            return self.a_tweet
        if name == "retweet_T":
            return self.a_retweet
        return None

    def to_json(self):
        return {
            "stage": self.stage,
            "a_tweet": self.a_tweet.tolist(),
            "a_retweet": self.a_retweet.tolist(),
            "budget_tweet": self.budget_tweet,
            "budget_retweet": self.budget_retweet,
        }

    @classmethod
    def from_json(cls, obj):
        return cls(
            np.array(obj["a_tweet"], dtype=float),
            np.array(obj["a_retweet"], dtype=float),
            int(obj.get("stage", 0)),
            float(obj.get("budget_tweet", 0.0)),
            float(obj.get("budget_retweet", 0.0)),
        )
