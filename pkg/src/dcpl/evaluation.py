"""Empirical reward, the performance metric, impact analysis and report files."""

from __future__ import annotations

import csv
import json
import os

import numpy as np

from .clustering import ari, centroids, nmi, transition_stats
from .data import RETWEET, TRUE, TWEET, EventLog, stage_counts
from .hawkes.simulate import simulate
from .policy.interventions import user_interventions
from .policy.objective import policy_input
from .policy.reward import reward


def empirical_reward(log, net, part):
    """Per-stage (R_tweet, R_retweet, R) from realized counts, shape (K, 3)."""
    out = np.zeros((part.n_stages, 3))
    for k in range(1, part.n_stages + 1):
        c = stage_counts(log, *part.stage_window(k)).astype(float)
        rt = reward(c[:, 0], c[:, 1], net.gram)
        rr = reward(c[:, 2], c[:, 3], net.gram)
        out[k - 1] = (rt, rr, rt + rr)
    return out


def performance(log, net, part):
    """Sum over stages of R_k times the share of fake-exposed users also exposed to true news.

    Exposure counts tweets and retweets together; a stage without fake
    exposure gets factor 1.
    """
    R = empirical_reward(log, net, part)
    rows = []
    total = 0.0
    for k in range(1, part.n_stages + 1):
        c = stage_counts(log, *part.stage_window(k)).astype(float)
        exp_true = net.adjacency.T @ (c[:, 0] + c[:, 2])
        exp_fake = net.adjacency.T @ (c[:, 1] + c[:, 3])
        L_T = exp_true > 0
        L_F = exp_fake > 0
        n_f = int(L_F.sum())
        frac = float((L_T & L_F).sum() / n_f) if n_f else 1.0
        total += R[k - 1, 2] * frac
        rows.append({
            "stage": k,
            "R_tweet": R[k - 1, 0],
            "R_retweet": R[k - 1, 1],
            "R": R[k - 1, 2],
            "L_T": int(L_T.sum()),
            "L_F": n_f,
            "fraction": frac,
        })
    return total, rows


def simulate_with_policy(model, net, policy, M, X, budgets, history, part, seed,
                         weighted=True, input_mode="cluster"):
    """Closed-loop simulation of a window: each stage's plan comes from the
    policy applied to the state realized in the previous stage."""
    n = net.n_users
    M = np.asarray(M)
    X = np.asarray(X, dtype=float)
    Y = centroids(M, X)
    phi_r = model["retweet_T"].kernel.dense()
    hist = history.window(-np.inf, part.start)
    generated = EventLog.empty(n)
    plans = []
    for k in range(1, part.n_stages + 1):
        a, b = part.stage_window(k)
        state = stage_counts(hist, a - part.dt, a)
        a_t, a_r, _ = policy.forward(policy_input(state, X, M, input_mode))
        plan, _ = user_interventions(a_t, a_r, X, Y, M, phi_r, budgets[k - 1], weighted, policy.tied, stage=k)
        plans.append(plan)
        ev = simulate(model, a, b, part.dt, net, history=hist, plans={1: plan}, seed=seed)
        hist = hist.concat(ev)
        generated = generated.concat(ev)
    return generated, plans


def impact_analysis(sed_log, heldout_log, sed_part, heldout_start, gaps=(0, 2, 5, 8), deltas=(1, 2, 3, 4, 5)):
    """Held-out retweets of users who did (S) or did not (M) post true news in the SED window.

    tau runs over SED stage ends; tau is mapped into the held-out window by
    its offset from the SED start. For each gap g, counts are summed over
    tau and averaged over deltas; both any-label and true-only retweets are
    reported.
    """
    if heldout_start < sed_part.horizon:
        raise ValueError("SED and held-out windows overlap")
    n = sed_log.n_users
    sed = sed_log.window(sed_part.start, sed_part.horizon)
    true_posts = sed.select(TWEET, TRUE).concat(sed.select(RETWEET, TRUE))
    rt = heldout_log.select(RETWEET)
    rows = []
    for g in gaps:
        acc = np.zeros(4)
        for delta in deltas:
            for tau in sed_part.boundaries[1:]:
                posted = np.bincount(true_posts.window(sed_part.start, tau).user, minlength=n) > 0
                t0 = heldout_start + (tau - sed_part.start) + g
                w = rt.window(t0, t0 + delta)
                sel = posted[w.target]
                tr = w.label == TRUE
                acc += (sel.sum(), (~sel).sum(), (sel & tr).sum(), (~sel & tr).sum())
        acc /= len(deltas)
        rows.append({"g": g, "S": acc[0], "M": acc[1], "S_true": acc[2], "M_true": acc[3]})
    return rows


def relative_performance(values):
    """Rescale so the best method scores 100."""
    best = max(values.values()) if values else 0.0
    return {k: (100.0 * v / best if best > 0 else 0.0) for k, v in values.items()}


def mean_se(xs):
    xs = np.asarray(xs, dtype=float)
    if len(xs) < 2:
        return float(xs.mean()) if len(xs) else float("nan"), None
    return float(xs.mean()), float(xs.std(ddof=1) / np.sqrt(len(xs)))


def _write_csv(path, header, rows):
    with open(path, "w", encoding="utf-8", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(header)
        w.writerows(rows)


def alignment_rows(memberships):
    labels = [np.asarray(M).argmax(axis=1) for M in memberships]
    return [
        (k + 2, ari(labels[k], labels[k + 1]), nmi(labels[k], labels[k + 1]))
        for k in range(len(labels) - 1)
    ]


def emit_report(results, out_dir, memberships=None, scree=None):
    """Write report.json plus per-stage, alignment, scree and transition CSVs.

    ``results`` maps method -> list of per-seed dicts holding at least
    ``P``, ``P_none`` and ``stages`` (performance rows).
    """
    os.makedirs(out_dir, exist_ok=True)
    summary = {}
    for method, runs in results.items():
        entry = {"n_seeds": len(runs)}
        for key in ("P", "P_none"):
            m, se = mean_se([r[key] for r in runs])
            entry[key] = m
            if se is not None:
                entry[f"{key}_se"] = se
        summary[method] = entry
        rows = []
        for r in runs:
            for s in r["stages"]:
                rows.append((r.get("seed", 0), s["stage"], s["R_tweet"], s["R_retweet"], s["R"],
                             s["L_T"], s["L_F"], s["fraction"]))
        _write_csv(os.path.join(out_dir, f"stages_{method}.csv"),
                   ["seed", "stage", "R_tweet", "R_retweet", "R", "L_T", "L_F", "fraction"], rows)
    rel = relative_performance({m: e["P"] for m, e in summary.items()})
    for m in summary:
        summary[m]["relative"] = rel[m]
    if memberships is not None:
        _write_csv(os.path.join(out_dir, "alignment.csv"), ["stage", "ari", "nmi"], alignment_rows(memberships))
        unique, switches = transition_stats([np.asarray(M).argmax(axis=1) for M in memberships])
        K = len(memberships)
        _write_csv(os.path.join(out_dir, "transitions_unique.csv"), ["unique_clusters", "users"],
                   [(u, int((unique == u).sum())) for u in range(1, K + 1)])
        _write_csv(os.path.join(out_dir, "transitions_switches.csv"), ["switches", "users"],
                   [(s, int((switches == s).sum())) for s in range(0, K)])
    if scree is not None:
        _write_csv(os.path.join(out_dir, "scree.csv"), ["C", "bic", "wcssd"],
                   [(r["C"], r["bic"], r["wcssd"]) for r in scree])
    with open(os.path.join(out_dir, "report.json"), "w", encoding="utf-8") as fh:
        json.dump({"methods": summary}, fh, indent=2)
    return summary
