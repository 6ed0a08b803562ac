"""Command-line interface.

Exit codes: 0 success, 1 validation error, 2 runtime failure.
"""

from __future__ import annotations

import argparse
import csv
import json
import logging
import os
import sys
from concurrent.futures import ProcessPoolExecutor
from dataclasses import replace

import numpy as np

from .data import DataError, Network, load_events, load_network, partition_stages, save_events
from .evaluation import emit_report, relative_performance
from .hawkes.estimate import FitConfig, fit
from .hawkes.model import HawkesModel, InstabilityError, InterventionPlan
from .hawkes.simulate import simulate
from .synthetic import fixture_paths, write_fixture
from .trainer import normalize_method

log = logging.getLogger("dcpl")


class ValidationError(Exception):
    pass


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        raise ValidationError(message)


def parse_range(text, flag):
    """'2..15' or '1,3,5' -> list of ints."""
    try:
        if ".." in text:
            lo, hi = text.split("..")
            out = list(range(int(lo), int(hi) + 1))
        else:
            out = [int(x) for x in text.split(",") if x.strip()]
    except ValueError:
        raise ValidationError(f"{flag}: cannot parse {text!r}") from None
    if not out:
        raise ValidationError(f"{flag}: empty range {text!r}")
    return out


def _require_file(path, flag):
    if path is None or not os.path.isfile(path):
        raise ValidationError(f"{flag}: file not found: {path}")
    return path


def _seed(args):
    if getattr(args, "seed", None) is not None:
        return int(args.seed)
    env = os.environ.get("DCPL_SEED")
    if env is not None:
        try:
            return int(env)
        except ValueError:
            raise ValidationError(f"DCPL_SEED must be an integer, got {env!r}") from None
    return 0


def _load_config(path):
    if path is None:
        return {}
    _require_file(path, "--config")
    with open(path, encoding="utf-8") as fh:
        try:
            return json.load(fh)
        except json.JSONDecodeError as exc:
            raise ValidationError(f"--config: invalid JSON: {exc}") from None


def _data_paths(cfg_obj, config_path):
    """Event and network paths from the config's data section, else the bundled fixture."""
    data = cfg_obj.get("data", {})
    base = os.path.dirname(os.path.abspath(config_path)) if config_path else os.getcwd()
    fx = fixture_paths()
    paths = {}
    for key in ("events", "network"):
        p = data.get(key)
        if p is None:
            paths[key] = fx[key]
        else:
            paths[key] = p if os.path.isabs(p) else os.path.join(base, p)
        _require_file(paths[key], f"--config data.{key}")
    return paths


def _run_config(cfg_obj, seed):
    from .pipeline import RunConfig

    try:
        cfg = RunConfig.from_json(cfg_obj)
    except (TypeError, ValueError) as exc:
        raise ValidationError(f"--config: {exc}") from None
    return replace(cfg, seed=seed)


# commands


def cmd_fit(args):
    events = _require_file(args.events, "--events")
    net = load_network(_require_file(args.network, "--network"))
    ev = load_events(events, net.n_users)
    grid = None
    if args.omega_grid:
        try:
            grid = tuple(float(x) for x in args.omega_grid.split(","))
        except ValueError:
            raise ValidationError(f"--omega-grid: cannot parse {args.omega_grid!r}") from None
    cfg = FitConfig(omega_grid=grid, rank=args.rank)
    t0 = 0.0 if len(ev) == 0 else float(np.floor(ev.t.min()))
    t1 = 1.0 if len(ev) == 0 else float(np.floor(ev.t.max()) + 1.0)
    model = fit(ev, net, cfg, t0=t0, t1=t1)
    obj = model.to_json()
    obj["network"] = {"n_users": net.n_users, "edges": [list(e) for e in net.edges()]}
    _ensure_parent(args.out)
    with open(args.out, "w", encoding="utf-8") as fh:
        json.dump(obj, fh)
    radii = model.spectral_radii()
    print(f"fit: {len(ev)} events, {net.n_users} users, max spectral radius {max(radii.values()):.3f} -> {args.out}")


def _ensure_parent(path):
    parent = os.path.dirname(os.path.abspath(path))
    os.makedirs(parent, exist_ok=True)


def cmd_simulate(args):
    path = _require_file(args.model, "--model")
    with open(path, encoding="utf-8") as fh:
        obj = json.load(fh)
    model = HawkesModel.from_json(obj)
    if args.network:
        net = load_network(_require_file(args.network, "--network"), model.n_users)
    elif "network" in obj:
        net = Network.from_edges(obj["network"]["edges"], obj["network"]["n_users"])
    else:
        raise ValidationError("--network: required when the model file carries no network")
    t0, t1 = args.window
    try:
        part = partition_stages(t0, t1, args.dt)
    except DataError as exc:
        raise ValidationError(f"--window: {exc}") from None
    plans = {}
    if args.interventions:
        with open(_require_file(args.interventions, "--interventions"), encoding="utf-8") as fh:
            for rec in json.load(fh):
                plan = InterventionPlan.from_json(rec)
                if not 1 <= plan.stage <= part.n_stages:
                    raise ValidationError(f"--interventions: stage {plan.stage} outside 1..{part.n_stages}")
                plans[plan.stage] = plan
    history = None
    if args.history:
        history = load_events(_require_file(args.history, "--history"), model.n_users)
    ev = simulate(model, t0, t1, args.dt, net, history=history, plans=plans, seed=_seed(args))
    _ensure_parent(args.out)
    save_events(ev, args.out)
    print(f"simulate: {len(ev)} events on [{t0}, {t1}) seed {_seed(args)} -> {args.out}")


def cmd_cluster(args):
    from .clustering import empirical_reward_features, select_num_clusters, standardize

    net = load_network(_require_file(args.network, "--network"))
    ev = load_events(_require_file(args.events, "--events"), net.n_users)
    cands = parse_range(args.candidates, "--candidates")
    if min(cands) < 1 or max(cands) > net.n_users:
        raise ValidationError(f"--candidates: values must lie in [1, {net.n_users}]")
    t1 = float(np.floor(ev.t.max()) + 1.0) if len(ev) else 1.0
    part = partition_stages(0.0, t1, 1.0)
    X = standardize(empirical_reward_features(ev, net, part))
    rows, chosen = select_num_clusters(X, cands, np.random.default_rng(_seed(args)))
    os.makedirs(args.out, exist_ok=True)
    with open(os.path.join(args.out, "scree.csv"), "w", encoding="utf-8", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(["C", "bic", "wcssd"])
        for r in rows:
            w.writerow([r["C"], r["bic"], r["wcssd"]])
    with open(os.path.join(args.out, "chosen.json"), "w", encoding="utf-8") as fh:
        json.dump({"chosen": chosen, "candidates": cands}, fh)
    print(f"cluster: chosen C = {chosen} from {cands[0]}..{cands[-1]} -> {args.out}")


def cmd_train(args):
    from .pipeline import train_run

    cfg_obj = _load_config(args.config)
    method = _method(args.method)
    paths = _data_paths(cfg_obj, args.config)
    cfg = _run_config(cfg_obj, _seed(args))
    net = load_network(paths["network"])
    raw = load_events(paths["events"], net.n_users)
    prep, res = train_run(cfg, raw, net, method, args.out)
    last = res.trace[-1]["expected_reward"] if res.trace else float("nan")
    print(f"train: {method} seed {cfg.seed} {res.epochs_run} epochs, expected reward {last:.4g} -> {args.out}")


def cmd_evaluate(args):
    from .pipeline import evaluate_run

    run = args.run
    if not os.path.isdir(run):
        raise ValidationError(f"--run: directory not found: {run}")
    for name in ("config.json", "state.json", "model.json"):
        _require_file(os.path.join(run, name), "--run")
    summary, P, P0 = evaluate_run(run)
    print(f"evaluate: P = {P:.4g} with interventions, {P0:.4g} without -> {run}")


def _method(name):
    try:
        return normalize_method(name)
    except ValueError as exc:
        raise ValidationError(f"--method: {exc}") from None


def _compare_seed(job):
    from .pipeline import prepare, run_method

    cfg, paths, methods, seed = job
    net = load_network(paths["network"])
    raw = load_events(paths["events"], net.n_users)
    prep = prepare(replace(cfg, seed=seed), raw, net, seed=seed)
    out = {}
    for m in methods:
        r = run_method(prep, m)
        out[m] = {"P": r.P, "P_none": r.P_none, "stages": r.stages, "seed": seed}
    return out


def cmd_compare(args):
    cfg_obj = _load_config(args.config)
    try:
        methods = [normalize_method(m) for m in args.methods.split(",") if m.strip()]
    except ValueError as exc:
        raise ValidationError(f"--methods: {exc}") from None
    seeds = parse_range(args.seeds, "--seeds")
    paths = _data_paths(cfg_obj, args.config)
    cfg = _run_config(cfg_obj, seeds[0])
    jobs = [(cfg, paths, methods, s) for s in seeds]
    n_jobs = args.jobs or os.cpu_count() or 1
    if n_jobs > 1 and len(jobs) > 1:
        with ProcessPoolExecutor(max_workers=min(n_jobs, len(jobs))) as pool:
            per_seed = list(pool.map(_compare_seed, jobs))
    else:
        per_seed = [_compare_seed(j) for j in jobs]
    results = {m: [ps[m] for ps in per_seed] for m in methods}
    summary = emit_report(results, args.out)
    rel = relative_performance({m: summary[m]["P"] for m in methods})
    with open(os.path.join(args.out, "comparison.csv"), "w", encoding="utf-8", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(["method", "P_mean", "P_se", "relative", "P_none_mean", "n_seeds"])
        for m in methods:
            s = summary[m]
            w.writerow([m, s["P"], s.get("P_se", ""), rel[m], s["P_none"], s["n_seeds"]])
    best = max(methods, key=lambda m: summary[m]["P"])
    print(f"compare: {len(methods)} methods x {len(seeds)} seeds, best {best} -> {args.out}")


def cmd_make_fixture(args):
    net, model, ev = write_fixture(args.out, args.n_users, _seed(args))
    print(f"make-fixture: {net.n_users} users, {len(ev)} events -> {args.out}")


def build_parser():
    p = _Parser(prog="dcpl", description="Cluster-based intervention policies on Hawkes activity models.")
    p.add_argument("-v", "--verbose", action="store_true")
    sub = p.add_subparsers(dest="command", parser_class=_Parser)

    s = sub.add_parser("fit", help="fit activity processes to an event log")
    s.add_argument("--events", required=True)
    s.add_argument("--network", required=True)
    s.add_argument("--out", required=True)
    s.add_argument("--rank", type=int, default=2)
    s.add_argument("--omega-grid", default=None, help="comma-separated decay values")
    s.set_defaults(func=cmd_fit)

    s = sub.add_parser("simulate", help="simulate events from a fitted model")
    s.add_argument("--model", required=True)
    s.add_argument("--window", nargs=2, type=float, required=True, metavar=("T0", "T1"))
    s.add_argument("--interventions", default=None)
    s.add_argument("--seed", type=int, default=None)
    s.add_argument("--out", required=True)
    s.add_argument("--network", default=None)
    s.add_argument("--history", default=None)
    s.add_argument("--dt", type=float, default=1.0)
    s.set_defaults(func=cmd_simulate)

    s = sub.add_parser("cluster", help="score candidate cluster counts")
    s.add_argument("--events", required=True)
    s.add_argument("--network", required=True)
    s.add_argument("--candidates", default="2..15")
    s.add_argument("--seed", type=int, default=None)
    s.add_argument("--out", required=True)
    s.set_defaults(func=cmd_cluster)

    s = sub.add_parser("train", help="fit, simulate training data and train one method")
    s.add_argument("--config", default=None)
    s.add_argument("--method", default="DCPL")
    s.add_argument("--seed", type=int, default=None)
    s.add_argument("--out", required=True)
    s.set_defaults(func=cmd_train)

    s = sub.add_parser("evaluate", help="evaluate a trained run directory")
    s.add_argument("--run", required=True)
    s.set_defaults(func=cmd_evaluate)

    s = sub.add_parser("compare", help="compare methods over seeds")
    s.add_argument("--config", default=None)
    s.add_argument("--methods", default="DCPL,KM-R,RND")
    s.add_argument("--seeds", default="1..10")
    s.add_argument("--jobs", type=int, default=None)
    s.add_argument("--out", required=True)
    s.set_defaults(func=cmd_compare)

    s = sub.add_parser("make-fixture", help="write a seeded synthetic dataset")
    s.add_argument("--out", required=True)
    s.add_argument("--n-users", type=int, default=20)
    s.add_argument("--seed", type=int, default=None)
    s.set_defaults(func=cmd_make_fixture)
    return p


def main(argv=None):
    try:
        args = build_parser().parse_args(argv)
        logging.basicConfig(level=logging.DEBUG if args.verbose else logging.WARNING,
                            format="%(levelname)s %(name)s: %(message)s")
        if args.command is None:
            raise ValidationError("a command is required")
        args.func(args)
    except (ValidationError, DataError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 1
    except (InstabilityError, RuntimeError, OSError, ValueError) as exc:
        print(f"failed: {exc}", file=sys.stderr)
        return 2
    return 0


if __name__ == "__main__":
    sys.exit(main())
