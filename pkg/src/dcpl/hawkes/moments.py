"""Excitation state, intensities and closed-form expected stage counts."""

from __future__ import annotations

from dataclasses import dataclass
from functools import lru_cache

import numpy as np
from scipy.linalg import expm

from .model import InstabilityError, branching_spectral_radius, process_events


@dataclass(frozen=True, eq=False)
class ExcitationState:
    """Kernel-weighted history of one process at time ``tau``.

    ``decayed[j] = omega * sum_e exp(-omega (tau - t_e))`` over events of j;
    ``h = Phi^T decayed`` is the excitation felt by each user.
    """

    tau: float
    decayed: np.ndarray
    h: np.ndarray

    def advance(self, tau, process):
        """Decay to a later time with no new events."""
        f = np.exp(-process.omega * (tau - self.tau))
        return ExcitationState(tau, self.decayed * f, self.h * f)


def residual_excitation(model, name, events, tau):
    process = model[name]
    times, dims = process_events(events, name)
    if len(times) and times.max() >= tau:
        raise ValueError(f"event at t={times.max()} is not before tau={tau}")
    return excitation_from_times(process, times, dims, tau, model.n_users)


def excitation_from_times(process, times, dims, tau, n):
    w = process.omega * np.exp(-process.omega * (tau - times))
    decayed = np.bincount(dims, weights=w, minlength=n).astype(float)
    return ExcitationState(float(tau), decayed, process.kernel.dense().T @ decayed)


def intensity_at(model, name, exc, plan=None):
    """lambda_i = mu_i + a_i [true-news process] + (Phi^T-weighted excitation)_i."""
    lam = model[name].mu + exc.h
    if plan is not None:
        boost = plan.for_process(name)
        if boost is not None:
            lam = lam + boost
    return lam


@dataclass(frozen=True, eq=False)
class MeanPropagator:
    """Affine map (h0, b) -> integrated mean intensity over a stage of length dt.

    With constant base rate b and initial excitation h0 the mean count is
    ``b*dt + P h0 + Q b``; ``jacobian = dt*I + Q`` is d(count)/d(b).
    """

    dt: float
    P: np.ndarray
    Q: np.ndarray

    def counts(self, h0, base):
        return base * self.dt + self.P @ h0 + self.Q @ base

    @property
    def jacobian(self):
        return self.dt * np.eye(self.Q.shape[0]) + self.Q


@lru_cache(maxsize=256)
def propagator(process, dt):
    """Solve g' = omega (Phi^T (b + g) - g) jointly with its integral via expm."""
    phi_t = process.kernel.dense().T
    n = phi_t.shape[0]
    w = process.omega
    M = np.zeros((3 * n, 3 * n))
    M[:n, :n] = w * (phi_t - np.eye(n))
    M[:n, n : 2 * n] = w * phi_t
    M[2 * n :, :n] = np.eye(n)
    E = expm(M * dt)
    P = E[2 * n :, :n].copy()
    Q = E[2 * n :, n : 2 * n].copy()
    # integrals of nonnegative flows; clip roundoff
    np.maximum(P, 0.0, out=P)
    np.maximum(Q, 0.0, out=Q)
    P.setflags(write=False)
    Q.setflags(write=False)
    return MeanPropagator(float(dt), P, Q)


@lru_cache(maxsize=256)
def _radius(process):
    return branching_spectral_radius(process.kernel)


def expected_counts(model, name, exc, dt, plan=None):
    """E[n] over [tau, tau + dt) given the excitation state at tau."""
    process = model[name]
    rho = _radius(process)
    if rho >= 1.0:
        raise InstabilityError(f"process {name} has spectral radius {rho:.4f} >= 1")
    base = process.mu
    if plan is not None:
        boost = plan.for_process(name)
        if boost is not None:
            base = base + boost
    return propagator(process, float(dt)).counts(exc.h, base)
