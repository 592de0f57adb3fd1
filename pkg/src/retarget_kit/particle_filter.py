"""Constant-velocity particle filter over planar object pose.

State per particle: ``[x, y, theta, vx, vy, omega]``. Only the planar centre
is ever measured; heading diffuses with its process noise.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, replace

import numpy as np

X, Y, TH, VX, VY, OM = range(6)


@dataclass(frozen=True)
class PfParams:
    n: int = 128
    sigma0_xy: float = 0.010
    sigma0_theta: float = 0.2
    sigma_v: float = 0.05
    sigma_omega: float = 0.5
    sigma_floor: float = 0.002

    @classmethod
    def from_config(cls, cfg) -> "PfParams":
        return cls(cfg.pf_particles, cfg.pf_sigma0_xy, cfg.pf_sigma0_theta,
                   cfg.pf_sigma_v, cfg.pf_sigma_omega, cfg.pf_sigma_floor)


@dataclass(frozen=True)
class ParticleSet:
    states: np.ndarray
    weights: np.ndarray
    params: PfParams
    degenerate: bool = False
    resampled: bool = False

    @property
    def n(self) -> int:
        return len(self.weights)

    @property
    def ess(self) -> float:
        return 1.0 / float(np.sum(self.weights * self.weights))


def pf_init(proxy, params: PfParams, rng: np.random.Generator, theta0: float = 0.0) -> ParticleSet:
    if not proxy.valid:
        raise ValueError("particle filter needs a valid proxy to initialise")
    n = params.n
    s = np.zeros((n, 6))
    s[:, X] = proxy.center[0] + params.sigma0_xy * rng.standard_normal(n)
    s[:, Y] = proxy.center[1] + params.sigma0_xy * rng.standard_normal(n)
    s[:, TH] = theta0 + params.sigma0_theta * rng.standard_normal(n)
    return ParticleSet(s, np.full(n, 1.0 / n), params)


def pf_predict(ps: ParticleSet, dt: float, rng: np.random.Generator) -> ParticleSet:
    if dt <= 0:
        raise ValueError("dt must be positive")
    s = ps.states.copy()
    n = ps.n
    p = ps.params
    if p.sigma_v > 0:
        s[:, VX] += p.sigma_v * rng.standard_normal(n) * dt
        s[:, VY] += p.sigma_v * rng.standard_normal(n) * dt
    if p.sigma_omega > 0:
        s[:, OM] += p.sigma_omega * rng.standard_normal(n) * dt
    # velocity first, then position with the updated velocity
    s[:, X:TH + 1] += s[:, VX:OM + 1] * dt
    return replace(ps, states=s, degenerate=False, resampled=False)


def likelihood(ps: ParticleSet, z, sigma: float) -> np.ndarray:
    d2 = (ps.states[:, X] - z[0]) ** 2 + (ps.states[:, Y] - z[1]) ** 2
    return np.exp(-0.5 * d2 / (sigma * sigma))


def pf_update(ps: ParticleSet, z, sigma_xy: float) -> ParticleSet:
    """Reweight by an isotropic Gaussian likelihood of the measured centre ``z``."""
    sigma = max(float(sigma_xy), ps.params.sigma_floor)
    w = ps.weights * likelihood(ps, z, sigma)
    total = float(w.sum())
    if not total > 0.0 or not math.isfinite(total):
        return replace(ps, weights=np.full(ps.n, 1.0 / ps.n), degenerate=True)
    return replace(ps, weights=w / total, degenerate=False)


def systematic_indices(weights: np.ndarray, u0: float) -> np.ndarray:
    """Low-variance resampling indices for a single offset ``u0`` in [0, 1)."""
    n = len(weights)
    positions = (u0 + np.arange(n)) / n
    cum = np.cumsum(weights)
    cum[-1] = 1.0
    # u0 just below 1 can round the last position up to 1.0
    return np.minimum(np.searchsorted(cum, positions, side="right"), n - 1)


def pf_resample_if_needed(ps: ParticleSet, rng: np.random.Generator) -> ParticleSet:
    if ps.ess >= 0.5 * ps.n:
        return replace(ps, resampled=False)
    idx = systematic_indices(ps.weights, float(rng.random()))
    return replace(ps, states=ps.states[idx].copy(), weights=np.full(ps.n, 1.0 / ps.n), resampled=True)


def pf_mean(ps: ParticleSet) -> tuple[np.ndarray, float]:
    """Weighted planar mean and the root of the top eigenvalue of the weighted xy covariance."""
    w = ps.weights
    xy = ps.states[:, :2]
    mu = w @ xy
    d = xy - mu
    sxx = float(w @ (d[:, 0] * d[:, 0]))
    syy = float(w @ (d[:, 1] * d[:, 1]))
    sxy = float(w @ (d[:, 0] * d[:, 1]))
    half = 0.5 * (sxx + syy)
    lam = half + math.sqrt(max(0.0, 0.25 * (sxx - syy) ** 2 + sxy * sxy))
    return mu, math.sqrt(max(0.0, lam))


class PoseTracker:
    """Runs the filter through a trial: predict every tick, update on new proxies.

    A measurement whose innovation against the filter mean exceeds
    ``reseed_gate`` measurement sigmas re-seeds the set about it; this is how
    a teleported object is reacquired.
    """

    def __init__(self, params: PfParams, rng: np.random.Generator, reseed_gate: float = 3.5):
        self.params = params
        self.rng = rng
        self.reseed_gate = reseed_gate
        self.ps: ParticleSet | None = None
        self.last_z: float | None = None
        self.updates = 0
        self.resamples = 0
        self.reseeds = 0

    @property
    def ready(self) -> bool:
        return self.ps is not None

    def predict(self, dt: float) -> None:
        if self.ps is not None:
            self.ps = pf_predict(self.ps, dt, self.rng)

    def observe(self, proxy) -> str:
        if not proxy.valid:
            return "skip"
        self.last_z = float(proxy.center[2])
        if self.ps is None:
            self.ps = pf_init(proxy, self.params, self.rng)
            kind = "init"
        else:
            sigma = max(proxy.sigma_xy, self.params.sigma_floor)
            mean, _ = pf_mean(self.ps)
            innovation = math.hypot(proxy.center[0] - mean[0], proxy.center[1] - mean[1])
            if innovation > self.reseed_gate * sigma:
                self.ps = pf_init(proxy, self.params, self.rng)
                self.reseeds += 1
                kind = "reseed"
            else:
                kind = "update"
        self.ps = pf_update(self.ps, proxy.center[:2], proxy.sigma_xy)
        self.updates += 1
        if self.ps.degenerate:
            kind = "degenerate"
        self.ps = pf_resample_if_needed(self.ps, self.rng)
        if self.ps.resampled:
            self.resamples += 1
        return kind

    def estimate(self) -> tuple[np.ndarray, float]:
        if self.ps is None:
            raise ValueError("tracker has no particles yet")
        return pf_mean(self.ps)
