"""End-to-end runs: fit, simulate training data, train, simulate evaluation data, evaluate."""

from __future__ import annotations

import csv
import json
import logging
import os
from dataclasses import asdict, dataclass, field, replace

import numpy as np

from .clustering import one_hot, select_num_clusters
from .data import (
    EventLog,
    compute_state,
    load_events,
    load_network,
    partition_stages,
    save_events,
    save_network,
)
from .evaluation import emit_report, impact_analysis, performance, simulate_with_policy
from .hawkes.estimate import FitConfig, fit
from .hawkes.model import HawkesModel
from .hawkes.simulate import simulate
from .policy.nets import load_checkpoint, save_checkpoint
from .policy.reward import stage_context
from .trainer import (
    TrainConfig,
    baseline_clusters,
    configure_baseline,
    sample_budgets,
    stage_memberships_to_rows,
    train,
)

log = logging.getLogger(__name__)


class PipelineError(RuntimeError):
    def __init__(self, stage, exc):
        super().__init__(f"{stage} failed: {exc}")
        self.stage = stage


@dataclass(frozen=True)
class Windows:
    training: tuple = (0.0, 10.0)
    std: tuple = (10.0, 20.0)
    sed: tuple = (20.0, 30.0)
    heldout: tuple = (30.0, 40.0)
    dt: float = 1.0

    def __post_init__(self):
        seq = [self.training, self.std, self.sed, self.heldout]
        for (a0, a1), (b0, b1) in zip(seq, seq[1:]):
            if not (a0 < a1 <= b0 < b1):
                raise ValueError("windows must be ordered and non-overlapping")
        for w in seq:
            partition_stages(w[0], w[1], self.dt)


@dataclass(frozen=True)
class RunConfig:
    windows: Windows = field(default_factory=Windows)
    hawkes: FitConfig = field(default_factory=FitConfig)
    trainer: TrainConfig = field(default_factory=TrainConfig)
    candidates: tuple = tuple(range(2, 16))
    gaps: tuple = (0, 2, 5, 8)
    deltas: tuple = (1, 2, 3, 4, 5)
    seed: int = 0
    checkpoint_every: int = 10

    def to_json(self):
        return {
            "data": {"windows": {k: list(v) if isinstance(v, tuple) else v
                                 for k, v in asdict(self.windows).items()}},
            "hawkes": asdict(self.hawkes),
            "clustering": {"n_clusters": self.trainer.n_clusters, "candidates": list(self.candidates),
                           "eps1": self.trainer.eps1, "eps2": self.trainer.eps2},
            "policy": {"hidden": list(self.trainer.hidden), "value_hidden": list(self.trainer.value_hidden),
                       "eta_theta": self.trainer.eta_theta, "eta_phi": self.trainer.eta_phi,
                       "gamma": self.trainer.gamma},
            "trainer": self.trainer.to_json(),
            "eval": {"gaps": list(self.gaps), "deltas": list(self.deltas)},
            "seed": self.seed,
            "checkpoint_every": self.checkpoint_every,
        }

    @classmethod
    def from_json(cls, obj):
        """Build from a sectioned config document; missing keys keep defaults."""
        obj = obj or {}
        data = obj.get("data", {})
        win = data.get("windows", {})
        windows = Windows(**{k: (tuple(v) if isinstance(v, list) else v) for k, v in win.items()})
        hk = dict(obj.get("hawkes", {}))
        if hk.get("omega_grid") is not None:
            hk["omega_grid"] = tuple(hk["omega_grid"])
        hawkes = FitConfig(**hk)
        tr = dict(obj.get("trainer", {}))
        cl = obj.get("clustering", {})
        for key in ("n_clusters", "eps1", "eps2"):
            if key in cl:
                tr.setdefault(key, cl[key])
        pol = obj.get("policy", {})
        for key in ("hidden", "value_hidden", "eta_theta", "eta_phi", "gamma"):
            if key in pol:
                tr.setdefault(key, pol[key])
        trainer = TrainConfig.from_json(tr)
        ev = obj.get("eval", {})
        return cls(
            windows=windows,
            hawkes=hawkes,
            trainer=trainer,
            candidates=tuple(cl.get("candidates", range(2, 16))),
            gaps=tuple(ev.get("gaps", (0, 2, 5, 8))),
            deltas=tuple(ev.get("deltas", (1, 2, 3, 4, 5))),
            seed=int(obj.get("seed", 0)),
            checkpoint_every=int(obj.get("checkpoint_every", 10)),
        )


@dataclass
class Prepared:
    """Per-seed inputs shared by every method in a comparison."""

    cfg: RunConfig
    net: object
    raw_log: EventLog
    model: HawkesModel
    std_log: EventLog
    contexts: list
    budgets: np.ndarray
    seed: int

    @property
    def part_train(self):
        return partition_stages(*self.cfg.windows.training, self.cfg.windows.dt)

    @property
    def part_std(self):
        return partition_stages(*self.cfg.windows.std, self.cfg.windows.dt)

    @property
    def part_sed(self):
        return partition_stages(*self.cfg.windows.sed, self.cfg.windows.dt)

    @property
    def training_log(self):
        return self.raw_log.window(*self.cfg.windows.training)

    @property
    def history(self):
        """Training plus simulated training data; the SED history."""
        return self.training_log.concat(self.std_log)


def _stage(name, fn, *args, **kwargs):
    try:
        return fn(*args, **kwargs)
    except PipelineError:
        raise
    except Exception as exc:  # noqa: BLE001 - re-raised with the stage name
        raise PipelineError(name, exc) from exc


def prepare(cfg, raw_log, net, seed=None, model=None, budgets=None):
    seed = cfg.seed if seed is None else int(seed)
    w = cfg.windows
    training = raw_log.window(*w.training)
    if model is None:
        model = _stage("fit", fit, training, net, cfg.hawkes, t0=w.training[0], t1=w.training[1])
    std_log = _stage("simulate-std", simulate, model, w.std[0], w.std[1], w.dt, net, history=training, seed=seed)
    hist = training.concat(std_log)
    part = partition_stages(*w.std, w.dt)

    def contexts():
        return [
            stage_context(model, net, hist, tau, w.dt, state=compute_state(hist, part, k))
            for k, tau in enumerate(part.boundaries[:-1], start=1)
        ]

    ctx = _stage("expected-counts", contexts)
    if budgets is None:
        budgets = sample_budgets(net.n_users, part.n_stages, np.random.default_rng([seed, 1]))
    return Prepared(cfg, net, raw_log, model, std_log, ctx, np.asarray(budgets, dtype=float), seed)


@dataclass
class MethodRun:
    method: str
    seed: int
    result: object
    P: float
    P_none: float
    stages: list
    stages_none: list
    sed_log: EventLog
    sed_log_none: EventLog
    plans: list
    impact: list


def train_method(prep, method, tcfg=None, callback=None):
    tcfg = configure_baseline(method, tcfg or prep.cfg.trainer)
    tcfg = replace(tcfg, seed=prep.seed)
    std_states = [c.state for c in prep.contexts]
    rng = np.random.default_rng([prep.seed, 2])
    M1, X1 = _stage("init-clusters", baseline_clusters, tcfg, prep.training_log, prep.net,
                    prep.part_train, std_states, rng)
    phi_r = prep.model["retweet_T"].kernel.dense()
    return _stage("train", train, tcfg, prep.contexts, phi_r, M1, X1, prep.budgets, callback)


def evaluate_policy(prep, policy, M, X, cfg_trainer):
    part = prep.part_sed
    hist = prep.history
    none = _stage("simulate-sed", simulate, prep.model, part.start, part.horizon, part.dt, prep.net,
                  history=hist, seed=prep.seed)
    with_log, plans = _stage("simulate-sed", simulate_with_policy, prep.model, prep.net, policy, M, X,
                             prep.budgets, hist, part, prep.seed, cfg_trainer.weighted, cfg_trainer.input_mode)
    P, stages = performance(with_log, prep.net, part)
    P0, stages0 = performance(none, prep.net, part)
    heldout = prep.raw_log.window(*prep.cfg.windows.heldout)
    impact = impact_analysis(with_log, heldout, part, prep.cfg.windows.heldout[0],
                             prep.cfg.gaps, prep.cfg.deltas)
    return P, stages, P0, stages0, with_log, none, plans, impact


def run_method(prep, method, tcfg=None):
    res = train_method(prep, method, tcfg)
    out = evaluate_policy(prep, res.policy, res.final_membership, res.final_features, res.cfg)
    P, stages, P0, stages0, with_log, none, plans, impact = out
    return MethodRun(res.cfg.method, prep.seed, res, P, P0, stages, stages0, with_log, none, plans, impact)


# run directories


def _write_trace(path, trace):
    with open(path, "w", encoding="utf-8", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(["epoch", "J_theta", "J_phi", "expected_reward", "mean_ari", "min_q",
                    "budget_error", "reclustered", "max_dtheta"])
        for r in trace:
            w.writerow([r["epoch"], r["J_theta"], r["J_phi"], r["expected_reward"], r["mean_ari"],
                        r["min_q"], r["budget_error"], int(r["reclustered"]), r["max_dtheta"]])


def _write_clusters(path, memberships):
    with open(path, "w", encoding="utf-8", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(["user", "stage", "cluster"])
        w.writerows(stage_memberships_to_rows(memberships))


def train_run(cfg, raw_log, net, method, out_dir, model=None):
    """Fit, simulate training data and train; persist everything needed to evaluate."""
    os.makedirs(os.path.join(out_dir, "checkpoints"), exist_ok=True)
    prep = prepare(cfg, raw_log, net, model=model)
    ckpt_dir = os.path.join(out_dir, "checkpoints")
    for name in os.listdir(ckpt_dir):
        if name.startswith("epoch_") and name.endswith(".json"):
            os.remove(os.path.join(ckpt_dir, name))
    meta = {"N": net.n_users, "seed": prep.seed, "method": method}

    def callback(epoch, res):
        if cfg.checkpoint_every and epoch % cfg.checkpoint_every == 0:
            save_checkpoint(os.path.join(ckpt_dir, f"epoch_{epoch:04d}.json"), res.policy, res.value,
                            {**meta, "C": res.policy.n_clusters, "epoch": epoch})

    res = train_method(prep, method, callback=callback)
    tcfg = res.cfg
    save_checkpoint(os.path.join(ckpt_dir, f"epoch_{res.epochs_run:04d}.json"), res.policy, res.value,
                    {**meta, "C": res.policy.n_clusters, "epoch": res.epochs_run})
    cfg_out = replace(cfg, trainer=tcfg)
    with open(os.path.join(out_dir, "config.json"), "w", encoding="utf-8") as fh:
        json.dump(cfg_out.to_json(), fh, indent=2)
    prep.model.save(os.path.join(out_dir, "model.json"))
    save_events(prep.std_log, os.path.join(out_dir, "std_events.jsonl"))
    save_events(raw_log, os.path.join(out_dir, "events.jsonl"))
    save_network(net, os.path.join(out_dir, "network.csv"))
    _write_clusters(os.path.join(out_dir, "clusters.csv"), res.memberships)
    _write_trace(os.path.join(out_dir, "trace.csv"), res.trace)
    state = {
        "method": tcfg.method,
        "seed": prep.seed,
        "budgets": prep.budgets.tolist(),
        "final_features": np.asarray(res.final_features).tolist(),
        "memberships": [np.asarray(M).argmax(axis=1).tolist() for M in res.memberships],
        "n_clusters": int(np.asarray(res.final_membership).shape[1]),
        "epochs_run": res.epochs_run,
        "converged": res.converged,
        "checkpoint": f"checkpoints/epoch_{res.epochs_run:04d}.json",
    }
    with open(os.path.join(out_dir, "state.json"), "w", encoding="utf-8") as fh:
        json.dump(state, fh)
    return prep, res


def evaluate_run(run_dir):
    """Simulate the evaluation window from a run directory and write the reports."""
    with open(os.path.join(run_dir, "config.json"), encoding="utf-8") as fh:
        cfg = RunConfig.from_json(json.load(fh))
    with open(os.path.join(run_dir, "state.json"), encoding="utf-8") as fh:
        state = json.load(fh)
    net = load_network(os.path.join(run_dir, "network.csv"))
    raw = load_events(os.path.join(run_dir, "events.jsonl"), net.n_users)
    std_log = load_events(os.path.join(run_dir, "std_events.jsonl"), net.n_users)
    model = HawkesModel.load(os.path.join(run_dir, "model.json"))
    policy, _, _ = load_checkpoint(os.path.join(run_dir, state["checkpoint"]))
    C = state["n_clusters"]
    memberships = [one_hot(lab, C) for lab in state["memberships"]]
    prep = Prepared(cfg, net, raw, model, std_log, [], np.array(state["budgets"]), state["seed"])
    out = evaluate_policy(prep, policy, memberships[-1], np.array(state["final_features"]), cfg.trainer)
    P, stages, P0, stages0, with_log, none, plans, impact = out
    results = {state["method"]: [{"P": P, "P_none": P0, "stages": stages, "seed": state["seed"]}]}
    scree = None
    feats = np.array(state["final_features"])
    cands = [c for c in cfg.candidates if c <= net.n_users]
    if len(cands) >= 1:
        scree, chosen = select_num_clusters(feats, cands, np.random.default_rng([state["seed"], 3]))
    summary = emit_report(results, run_dir, memberships=memberships, scree=scree)
    with open(os.path.join(run_dir, "impact.csv"), "w", encoding="utf-8", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(["g", "S", "M", "S_true", "M_true"])
        for r in impact:
            w.writerow([r["g"], r["S"], r["M"], r["S_true"], r["M_true"]])
    with open(os.path.join(run_dir, "plans.json"), "w", encoding="utf-8") as fh:
        json.dump([p.to_json() for p in plans], fh)
    save_events(with_log, os.path.join(run_dir, "sed_events.jsonl"))
    save_events(none, os.path.join(run_dir, "sed_events_none.jsonl"))
    report_path = os.path.join(run_dir, "report.json")
    with open(report_path, encoding="utf-8") as fh:
        report = json.load(fh)
    report["stages"] = stages
    report["stages_none"] = stages0
    report["impact"] = impact
    with open(report_path, "w", encoding="utf-8") as fh:
        json.dump(report, fh, indent=2)
    return summary, P, P0
