"""Training loop over stages and epochs, plus baseline configurations."""

from __future__ import annotations

import logging
from dataclasses import asdict, dataclass, field, replace

import numpy as np

from .clustering import (
    ari,
    centroids,
    empirical_reward_features,
    kmeans,
    network_features,
    one_hot,
    standardize,
    update_clusters,
)
from .hawkes.model import InstabilityError
from .policy.nets import PolicyNet, ValueNet, sgd_step
from .policy.objective import Setup, rollout
from .policy.reward import contribution

log = logging.getLogger(__name__)

METHODS = ("DCPL", "NC-1", "NC-N", "NC-TR", "NC-PF", "RND", "C-NET", "KM-R", "KM-S")

# cluster source, distance weighting, tied heads, policy input, dynamic re-clustering
_METHOD_TABLE = {
    "DCPL": ("reward", True, False, "cluster", True),
    "NC-1": ("single", False, False, "cluster", False),
    "NC-N": ("identity", False, True, "cluster", False),
    "NC-TR": ("identity", False, False, "cluster", False),
    "NC-PF": ("identity", False, False, "state+features", False),
    "RND": ("random", True, False, "cluster", False),
    "C-NET": ("network", True, False, "cluster", False),
    "KM-R": ("reward", True, False, "cluster", False),
    "KM-S": ("reward+state", True, False, "cluster", False),
}

DEFAULT_SCHEDULE = ((10, 1), (30, 2), (None, 5))


def normalize_method(name):
    key = str(name).upper()
    if key not in _METHOD_TABLE:
        raise ValueError(f"unknown method {name!r}; valid: {', '.join(METHODS)}")
    return key


@dataclass(frozen=True)
class TrainConfig:
    gamma: float = 0.7
    eta_theta: float = 1e-3
    eta_phi: float = 1e-3
    delta: float = 1e-4
    eps1: float = 0.5
    eps2: float = 0.5
    eta_e_schedule: tuple = DEFAULT_SCHEDULE
    max_epochs: int = 50
    seed: int = 0
    method: str = "DCPL"
    n_clusters: int = 8
    hidden: tuple = (64, 64)
    value_hidden: tuple = (64,)
    update_tol: float = 1e-6
    # derived from the method unless set explicitly
    cluster_source: str = "reward"
    weighted: bool = True
    tied: bool = False
    input_mode: str = "cluster"
    dynamic: bool = True

    def __post_init__(self):
        if not 0 < self.gamma <= 1:
            raise ValueError("gamma must lie in (0, 1]")
        if self.delta <= 0:
            raise ValueError("delta must be positive")
        if self.eta_theta <= 0 or self.eta_phi <= 0:
            raise ValueError("learning rates must be positive")
        if abs(self.eps1 + self.eps2 - 1) > 1e-12 or min(self.eps1, self.eps2) < 0:
            raise ValueError("eps1 and eps2 must be nonnegative and sum to 1")
        if self.max_epochs < 0:
            raise ValueError("max_epochs must be nonnegative")
        normalize_method(self.method)
        _check_schedule(self.eta_e_schedule)

    def to_json(self):
        d = asdict(self)
        d["eta_e_schedule"] = [list(s) for s in self.eta_e_schedule]
        d["hidden"] = list(self.hidden)
        d["value_hidden"] = list(self.value_hidden)
        return d

    @classmethod
    def from_json(cls, obj):
        obj = dict(obj)
        if "eta_e_schedule" in obj:
            obj["eta_e_schedule"] = tuple(tuple(s) for s in obj["eta_e_schedule"])
        for key in ("hidden", "value_hidden"):
            if key in obj:
                obj[key] = tuple(obj[key])
        return cls(**obj)


def _check_schedule(schedule):
    prev = 1
    for seg in schedule:
        until, eta = seg
        if eta is None:
            continue
        if int(eta) < 1 or int(eta) < prev:
            raise ValueError("eta_e values must be >= 1 and non-decreasing")
        prev = int(eta)


def recluster_epoch(epoch, schedule):
    """True when clusters are updated at this 1-based epoch."""
    for until, eta in schedule:
        if until is None or epoch <= until:
            return eta is not None and epoch % int(eta) == 0
    return False


def configure_baseline(name, base=None):
    """Config variant for a named method; C becomes N (resolved at train time) for NC-N/TR/PF."""
    key = normalize_method(name)
    base = base or TrainConfig()
    source, weighted, tied, mode, dynamic = _METHOD_TABLE[key]
    n_clusters = 1 if key == "NC-1" else base.n_clusters
    return replace(
        base, method=key, cluster_source=source, weighted=weighted, tied=tied,
        input_mode=mode, dynamic=dynamic, n_clusters=n_clusters,
    )


def sample_budgets(n_users, n_stages, rng):
    """B_{z,k} ~ N U(0, 1), shape (K, 2) for tweet and retweet."""
    return n_users * rng.uniform(0.0, 1.0, size=(n_stages, 2))


def baseline_clusters(cfg, training_log, net, part, std_states, rng):
    """Initial (static for baselines) membership and stage-1 features for a method."""
    n = net.n_users
    X1 = standardize(empirical_reward_features(training_log, net, part))
    source = cfg.cluster_source
    C = cfg.n_clusters
    if source == "single":
        labels, C = np.zeros(n, dtype=np.int64), 1
    elif source == "identity":
        labels, C = np.arange(n), n
    elif source == "random":
        labels = rng.integers(C, size=n)
    else:
        if source == "reward":
            F = X1
        elif source == "network":
            F = standardize(network_features(net))
        elif source == "reward+state":
            mean_state = np.mean(np.stack(std_states), axis=0)
            F = standardize(np.hstack([empirical_reward_features(training_log, net, part), mean_state]))
        else:
            raise ValueError(f"unknown cluster source {source!r}")
        labels, _, _ = kmeans(F, C, rng)
    return one_hot(labels, C), X1


@dataclass
class TrainResult:
    policy: PolicyNet
    value: ValueNet
    memberships: list
    features: list
    trace: list = field(default_factory=list)
    epochs_run: int = 0
    converged: bool = False
    plans: list = field(default_factory=list)
    cfg: TrainConfig = None

    @property
    def final_membership(self):
        return self.memberships[-1]

    @property
    def final_features(self):
        return self.features[-1]


def make_nets(cfg, n_users, n_clusters, rng):
    input_dim = 9 * n_users if cfg.input_mode == "state+features" else 5 * n_clusters
    policy = PolicyNet(n_clusters, input_dim, cfg.hidden, cfg.tied, rng)
    value = ValueNet(n_users, cfg.value_hidden, rng)
    return policy, value


def _check_budget(plan, budgets):
    worst = 0.0
    for a, b in ((plan.a_tweet, budgets[0]), (plan.a_retweet, budgets[1])):
        worst = max(worst, abs(a.sum() - b) / max(1.0, b))
    return worst


def train(cfg, contexts, phi_r, M1, X1, budgets, callback=None):
    """Alternate stage rollouts, cluster updates and ascent steps.

    ``contexts`` holds one StageContext per training stage; ``M1``/``X1`` are
    the stage-1 membership and features; ``budgets`` is (K, 2).
    """
    K = len(contexts)
    if K < 1:
        raise ValueError("need at least one training stage")
    budgets = np.asarray(budgets, dtype=float)
    if budgets.shape != (K, 2):
        raise ValueError(f"budgets must have shape ({K}, 2)")
    n = contexts[0].n_users
    M1 = np.asarray(M1)
    C = M1.shape[1]
    rng = np.random.default_rng(cfg.seed)
    policy, value = make_nets(cfg, n, C, rng)
    setup = Setup(cfg.gamma, cfg.weighted, cfg.input_mode)
    stage_Ms = [M1] * K
    result = TrainResult(policy, value, list(stage_Ms), [np.asarray(X1, dtype=float)] * K, cfg=cfg)

    for epoch in range(1, cfg.max_epochs + 1):
        recluster = cfg.dynamic and recluster_epoch(epoch, cfg.eta_e_schedule)
        new_Ms = [M1]
        min_q = [np.inf]

        def advance(k, rec, history):
            q = [contribution(contexts[k - 1], rec.plan, z) for z in (0, 1)]
            min_q[0] = min(min_q[0], float(min(q[0].min(), q[1].min())))
            if k >= 2:
                p = history[-1].summands - history[-2].summands
            else:
                p = np.zeros((2, n))
            X_next = standardize(np.column_stack([p[0], p[1], q[0], q[1]]))
            if recluster:
                Y = centroids(rec.M, rec.X)
                M_next = update_clusters(
                    Y, rec.M, X_next, cfg.update_tol, cfg.eps1, cfg.eps2
                ).membership
            else:
                M_next = stage_Ms[k]
            new_Ms.append(M_next)
            return X_next, M_next

        try:
            out = rollout(policy, value, contexts, budgets, phi_r, setup, X1, M1, advance)
        except InstabilityError as exc:
            raise InstabilityError(f"epoch {epoch}: {exc}") from exc
        if recluster:
            stage_Ms = new_Ms
        Ms = [s.M for s in out.stages]
        budget_err = max(_check_budget(s.plan, budgets[i]) for i, s in enumerate(out.stages))
        step = sgd_step(policy.mlp, out.grad_theta, cfg.eta_theta)
        sgd_step(value.mlp, out.grad_phi, cfg.eta_phi)
        dtheta = float(np.abs(step).max()) if step.size else 0.0
        aris = [ari(Ms[i].argmax(1), Ms[i + 1].argmax(1)) for i in range(K - 1)]
        row = {
            "epoch": epoch,
            "J_theta": out.J_theta,
            "J_phi": out.J_phi,
            "expected_reward": float(sum(s.reward for s in out.stages)),
            "stage_rewards": [s.reward for s in out.stages],
            "mean_ari": float(np.mean(aris)) if aris else 1.0,
            "min_q": min_q[0] if K > 1 else 0.0,
            "budget_error": budget_err,
            "reclustered": bool(recluster),
            "max_dtheta": dtheta,
        }
        result.trace.append(row)
        result.memberships = Ms
        result.features = [s.X for s in out.stages]
        result.plans = [s.plan for s in out.stages]
        result.epochs_run = epoch
        if callback is not None:
            callback(epoch, result)
        log.debug("epoch %d J_theta=%.4g reward=%.4g", epoch, out.J_theta, row["expected_reward"])
        if dtheta < cfg.delta:
            result.converged = True
            break
    return result


def stage_memberships_to_rows(memberships):
    """(user, stage, cluster) rows for CSV export."""
    rows = []
    for k, M in enumerate(memberships, start=1):
        for i, c in enumerate(np.asarray(M).argmax(axis=1)):
            rows.append((i, k, int(c)))
    return rows
