"""Maximum-likelihood estimation of exponential-kernel Hawkes processes.

The log-likelihood is concave in (mu, Phi) and separates over the receiving
dimension, so each column (mu_i, Phi[:, i]) is optimised by its own
spectral projected-gradient iteration with Armijo backtracking.
"""

from __future__ import annotations

import logging
from dataclasses import dataclass

import numpy as np
from scipy import sparse

from .model import (
    DenseKernel,
    HawkesModel,
    LowRankKernel,
    Process,
    PROCESS_NAMES,
    branching_spectral_radius,
    process_events,
)

log = logging.getLogger(__name__)

KERNEL_GROUPS = {
    "tweet": ("tweet_F", "tweet_T"),
    "retweet": ("retweet_F", "retweet_T"),
    "like": ("like",),
}


@dataclass
class FitConfig:
    omega_grid: tuple | None = None  # None: use ``omega_default`` without selection
    omega_default: float = 1.0
    rank: int = 2
    max_iter: int = 500
    refine_iter: int = 200
    mu_floor: float = 1e-4
    holdout_frac: float = 0.2
    max_radius: float = 0.95
    tol: float = 1e-9


@dataclass
class _Stream:
    """Sufficient statistics of one label's events for a fixed omega."""

    R: np.ndarray  # (E, N) decayed source activity just before each scored event
    dims: np.ndarray  # (E,) receiving dimension of each scored event
    comp: np.ndarray  # (N,) kernel mass each source spends inside the scoring window
    length: float  # scoring window length
    onehot_t: sparse.csr_matrix  # (N, E)


def _stream(times, dims, omega, n, t0, a, b):
    """Statistics for scoring events in [a, b) with history from [t0, b).

    R[e, j] = omega * sum_{e' of j, t_e' < t_e} exp(-omega (t_e - t_e')).
    """
    keep = (times >= t0) & (times < b)
    times, dims = times[keep], dims[keep]
    E = len(times)
    R = np.zeros((E, n))
    r = np.zeros(n)
    prev = t0
    for e in range(E):
        r *= np.exp(-omega * (times[e] - prev))
        R[e] = r
        r[dims[e]] += omega
        prev = times[e]
    scored = times >= a
    start = np.exp(-omega * np.maximum(0.0, a - times))
    end = np.exp(-omega * (b - times))
    comp = np.bincount(dims, weights=start - end, minlength=n)
    R, sd = R[scored], dims[scored]
    onehot_t = sparse.csr_matrix(
        (np.ones(len(sd)), (sd, np.arange(len(sd)))), shape=(n, len(sd))
    )
    return _Stream(R, sd, comp, float(b - a), onehot_t)


def _column_objective(streams, mus, phi, need_grad=True):
    """Per-column log-likelihood (N,) and optional gradients."""
    n = phi.shape[0]
    f = np.zeros(n)
    g_mu = np.zeros_like(mus)
    g_phi = np.zeros_like(phi)
    for s, st in enumerate(streams):
        mu = mus[s]
        if len(st.dims):
            lam = mu[st.dims] + np.einsum("ej,je->e", st.R, phi[:, st.dims])
            with np.errstate(divide="ignore", invalid="ignore"):
                f += np.bincount(st.dims, weights=np.log(lam), minlength=n)
        f -= mu * st.length + st.comp @ phi
        if need_grad:
            if len(st.dims):
                inv = 1.0 / lam
                g_mu[s] = np.bincount(st.dims, weights=inv, minlength=n)
                g_phi += (st.onehot_t @ (st.R * inv[:, None])).T
            g_mu[s] -= st.length
            g_phi -= st.comp[:, None]
    f = np.where(np.isfinite(f), f, -np.inf)
    return f, g_mu, g_phi


def _spg_columns(streams, mus, phi, mask, active, mu_floor, max_iter, tol):
    """Column-separable projected ascent with Barzilai-Borwein steps."""
    n = phi.shape[0]
    S = len(streams)

    def pack(m, p):
        return np.vstack([m, p])

    def unpack(x):
        return x[:S], x[S:]

    lower = np.zeros((S + n, n))
    lower[:S] = mu_floor * 1e-6
    free = np.vstack([np.repeat(active[:, None], n, axis=1), mask]).astype(bool)

    def project(x):
        x = np.maximum(x, lower)
        return np.where(free, x, np.where(np.arange(S + n)[:, None] < S, x, 0.0))

    x = project(pack(mus, phi))
    f, gm, gp = _column_objective(streams, *unpack(x))
    g = np.where(free, pack(gm, gp), 0.0)
    alpha = 1.0 / np.maximum(np.abs(g).max(axis=0), 1e-12) * 1e-2
    for _ in range(max_iter):
        d = project(x + alpha * g) - x
        slope = (g * d).sum(axis=0)
        step = np.ones(n)
        for _ls in range(50):
            xn = x + step * d
            fn, _, _ = _column_objective(streams, *unpack(xn), need_grad=False)
            ok = fn >= f + 1e-4 * step * slope
            if ok.all():
                break
            step = np.where(ok, step, step * 0.5)
        else:
            xn = np.where(ok, xn, x)
            fn = np.where(ok, fn, f)
        _, gm, gp = _column_objective(streams, *unpack(xn))
        gn = np.where(free, pack(gm, gp), 0.0)
        s = xn - x
        y = gn - g
        sy = -(s * y).sum(axis=0)
        ss = (s * s).sum(axis=0)
        alpha = np.where(sy > 1e-300, ss / np.where(sy > 1e-300, sy, 1.0), alpha * 2.0)
        alpha = np.clip(alpha, 1e-12, 1e12)
        gain = np.abs(fn - f) / (np.abs(f) + 1.0)
        x, f, g = xn, fn, gn
        if gain.max() < tol:
            break
    return unpack(x)


def _spg_lowrank(streams, mus, U, V, active, mu_floor, max_iter, tol):
    """Joint projected ascent over (mu, U, V) for the factorised kernel."""
    S, n = mus.shape
    r = U.shape[1]

    def unpack(x):
        m = x[: S * n].reshape(S, n)
        u = x[S * n : S * n + n * r].reshape(n, r)
        v = x[S * n + n * r :].reshape(n, r)
        return m, u, v

    def fun(x):
        m, u, v = unpack(x)
        f, gm, gp = _column_objective(streams, m, u @ v.T)
        gm = np.where(active[:, None], gm, 0.0)
        # diagonal excluded from the kernel support
        gp = gp.copy()
        np.fill_diagonal(gp, 0.0)
        grad = np.concatenate([gm.ravel(), (gp @ v).ravel(), (gp.T @ u).ravel()])
        return f.sum(), grad

    lower = np.concatenate([np.full(S * n, mu_floor * 1e-6), np.zeros(2 * n * r)])

    def project(x):
        return np.maximum(x, lower)

    x = project(np.concatenate([mus.ravel(), U.ravel(), V.ravel()]))
    f, g = fun(x)
    alpha = 1e-2 / max(np.abs(g).max(), 1e-12)
    for _ in range(max_iter):
        d = project(x + alpha * g) - x
        slope = g @ d
        step = 1.0
        for _ls in range(50):
            xn = x + step * d
            fn, gn = fun(xn)
            if fn >= f + 1e-4 * step * slope:
                break
            step *= 0.5
        else:
            break
        s, y = xn - x, gn - g
        sy = -(s @ y)
        alpha = (s @ s) / sy if sy > 1e-300 else alpha * 2.0
        alpha = float(np.clip(alpha, 1e-12, 1e12))
        gain = abs(fn - f) / (abs(f) + 1.0)
        x, f, g = xn, fn, gn
        if gain < tol:
            break
    return unpack(x)


def nmf(A, rank, n_iter=500):
    """Nonnegative factorisation A ~ W H^T by multiplicative updates (NNDSVD start)."""
    u, s, vt = np.linalg.svd(A)
    W = np.abs(u[:, :rank]) * np.sqrt(s[:rank]) + 1e-6
    H = np.abs(vt[:rank].T) * np.sqrt(s[:rank]) + 1e-6
    for _ in range(n_iter):
        H *= (A.T @ W) / np.maximum(H @ (W.T @ W), 1e-300)
        W *= (A @ H) / np.maximum(W @ (H.T @ H), 1e-300)
    return W, H


def fit_group(data, n, omegas, support, cfg, rank=None, t0=0.0, t1=None):
    """Fit processes sharing one kernel.

    ``data`` is a list of (times, dims) per label; returns (mus, kernel).
    """
    streams = [_stream(t, d, w, n, t0, t0, t1) for (t, d), w in zip(data, omegas)]
    active = np.array([len(d) > 0 for _, d in data])
    mus = np.empty((len(data), n))
    for s, (_, d) in enumerate(data):
        counts = np.bincount(d, minlength=n)
        mus[s] = np.maximum(0.5 * counts / (t1 - t0), cfg.mu_floor)
        if not active[s]:
            mus[s] = cfg.mu_floor
    if not active.any():
        return mus, DenseKernel(np.zeros((n, n)))
    phi0 = np.where(support, 0.01, 0.0)
    mus, phi = _spg_columns(streams, mus, phi0, support, active, cfg.mu_floor, cfg.max_iter, cfg.tol)
    mus = np.where(active[:, None], mus, cfg.mu_floor)
    if rank is None:
        return mus, DenseKernel(phi)
    rank = min(rank, n)
    U, V = nmf(phi, rank) if phi.any() else (np.zeros((n, rank)), np.zeros((n, rank)))
    if cfg.refine_iter and phi.any():
        mus, U, V = _spg_lowrank(streams, mus, U, V, active, cfg.mu_floor, cfg.refine_iter, cfg.tol)
        mus = np.where(active[:, None], mus, cfg.mu_floor)
    return mus, LowRankKernel(U, V)


def heldout_loglik(times, dims, n, omega, mu, phi, t0, t1, frac):
    split = t1 - frac * (t1 - t0)
    st = _stream(times, dims, omega, n, t0, split, t1)
    f, _, _ = _column_objective([st], mu[None, :], phi, need_grad=False)
    return float(f.sum())


def select_omega(times, dims, n, grid, support, cfg, t0, t1):
    """Pick omega by log-likelihood on the last ``holdout_frac`` of the window."""
    if len(times) == 0:
        return float(cfg.omega_default)
    split = t1 - cfg.holdout_frac * (t1 - t0)
    train = times < split
    best, best_ll = None, -np.inf
    for w in grid:
        mus, kern = fit_group([(times[train], dims[train])], n, [w], support, cfg, None, t0, split)
        ll = heldout_loglik(times, dims, n, w, mus[0], kern.dense(), t0, t1, cfg.holdout_frac)
        if ll > best_ll:
            best, best_ll = float(w), ll
    return best


def fit(log_, net, cfg=None, t0=None, t1=None):
    """Fit all five processes on events in [t0, t1) of ``log_``.

    Tweet and like kernels are supported on follower edges (an event of j
    excites i only when i follows j); the retweet kernel is a nonnegative
    rank-``cfg.rank`` product with the diagonal excluded.
    """
    cfg = cfg or FitConfig()
    n = net.n_users
    if t0 is None:
        t0 = 0.0
    if t1 is None:
        t1 = float(np.ceil(log_.t.max() + 1e-12)) if len(log_) else 1.0
    win = log_.window(t0, t1)
    follow_support = net.adjacency.astype(bool)
    full_support = ~np.eye(n, dtype=bool)

    procs = {}
    for group, names in KERNEL_GROUPS.items():
        support = full_support if group == "retweet" else follow_support
        data = [process_events(win, name) for name in names]
        omegas = []
        for name, (t, d) in zip(names, data):
            if len(t) == 0:
                log.warning("process %s has no events; mu set to floor %g and kernel to zero", name, cfg.mu_floor)
            if cfg.omega_grid is None:
                omegas.append(float(cfg.omega_default))
            else:
                omegas.append(select_omega(t, d, n, cfg.omega_grid, support, cfg, t0, t1))
        rank = cfg.rank if group == "retweet" else None
        mus, kernel = fit_group(data, n, omegas, support, cfg, rank, t0, t1)
        rho = branching_spectral_radius(kernel)
        if rho > cfg.max_radius:
            kernel = kernel.scaled(cfg.max_radius / rho)
        for s, name in enumerate(names):
            procs[name] = Process(mus[s], omegas[s], kernel)
    return HawkesModel({name: procs[name] for name in PROCESS_NAMES})
