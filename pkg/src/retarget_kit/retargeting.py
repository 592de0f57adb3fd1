"""Pluggable goal retargeters: map (stale cloud, fresh cloud, state) to new waypoints.

Modes: ``none`` keeps the stale waypoints, ``nearest`` rebuilds them from
the fresh proxy, ``icp`` transports the stale pre-contact target through the
registered stale->fresh motion, ``uar`` inflates push margins with cloud
dispersion, ``uar_pf`` seeds the inflated geometry with a particle-filter
mean.
"""

from __future__ import annotations

import time
from dataclasses import dataclass, field, replace

import numpy as np

from .goals import MarginSet, TaskGoal, WaypointTriple, task_waypoints
from .icp import icp
from .perception import PointCloud, PoseProxy
from .particle_filter import PoseTracker

MODES = ("none", "nearest", "icp", "uar", "uar_pf")


class Guarded(Exception):
    """The fresh observation cannot support this retargeter; the caller falls back."""


@dataclass(frozen=True)
class RetargetInput:
    stale_cloud: PointCloud | None
    fresh_cloud: PointCloud | None
    stale_proxy: PoseProxy
    fresh_proxy: PoseProxy
    stale_triple: WaypointTriple
    task_goal: TaskGoal
    ee: np.ndarray | None = None
    phase: str = ""

    def __post_init__(self):
        if self.stale_cloud is not None and self.fresh_cloud is not None:
            if self.stale_cloud.stamp > self.fresh_cloud.stamp:
                raise ValueError("stale cloud is newer than fresh cloud")


@dataclass(frozen=True)
class RetargetResult:
    triple: WaypointTriple
    mode: str
    compute_s: float = 0.0
    diagnostics: dict = field(default_factory=dict)


def uar_inflate(margins: MarginSet, sigma_xy: float, lam: float) -> MarginSet:
    """Grow standoff and contact by lam*sigma, overshoot by half that, then clip."""
    if lam < 0:
        raise ValueError("lambda must be non-negative")
    inc = lam * sigma_xy

    def clip(v, bounds):
        return min(max(v, bounds[0]), bounds[1])

    return replace(
        margins,
        delta_pre=clip(margins.delta_pre + inc, margins.pre_bounds),
        delta_contact=clip(margins.delta_contact + inc, margins.contact_bounds),
        delta_over=clip(margins.delta_over + 0.5 * inc, margins.over_bounds),
    )


def _require_fresh(inp: RetargetInput) -> PoseProxy:
    if not inp.fresh_proxy.valid:
        raise Guarded("fresh proxy invalid")
    return inp.fresh_proxy


def nearest_retarget(inp: RetargetInput, cfg, margins: MarginSet | None = None) -> WaypointTriple:
    proxy = _require_fresh(inp)
    m = margins or MarginSet.from_config(cfg)
    return task_waypoints(inp.task_goal.task, proxy.center, cfg, m, inp.task_goal)


def icp_retarget(inp: RetargetInput, cfg) -> tuple[WaypointTriple, dict]:
    proxy = _require_fresh(inp)
    if inp.stale_cloud is None or inp.fresh_cloud is None or inp.stale_cloud.empty or inp.fresh_cloud.empty:
        raise Guarded("empty cloud")
    res = icp(inp.stale_cloud.points, inp.fresh_cloud.points, cfg.icp_max_iters, cfg.icp_trim_fraction,
              cfg.icp_tol, cfg.icp_inlier_dist, cfg.icp_flag_rms, cfg.icp_min_overlap)
    rebuilt = task_waypoints(inp.task_goal.task, proxy.center, cfg, MarginSet.from_config(cfg), inp.task_goal)
    pre = res.transform.apply(inp.stale_triple.pre)
    if inp.task_goal.task == "push":
        pre[2] = proxy.center[2] + cfg.delta_z
    diag = {
        "icp_iters": res.iterations,
        "icp_rms": res.rms,
        "icp_overlap": res.overlap,
        "icp_converged": res.converged,
        "icp_flagged": res.flagged,
        "icp_t": [float(v) for v in res.transform.translation],
        "icp_angle": res.transform.rotation_angle(),
        "icp_R": [[float(v) for v in row] for row in res.transform.rotation],
    }
    return replace(rebuilt, pre=pre), diag


def uar_retarget(inp: RetargetInput, cfg) -> tuple[WaypointTriple, dict]:
    proxy = _require_fresh(inp)
    m = uar_inflate(MarginSet.from_config(cfg), proxy.sigma_xy, cfg.uar_lambda)
    triple = task_waypoints(inp.task_goal.task, proxy.center, cfg, m, inp.task_goal)
    return triple, {"inflation": cfg.uar_lambda * proxy.sigma_xy, "sigma_xy": proxy.sigma_xy}


def uar_pf_retarget(inp: RetargetInput, tracker: PoseTracker, cfg, observe: bool = True) -> tuple[WaypointTriple, dict]:
    """Waypoints from the filter mean, with the fresh proxy applied first when usable.

    ``observe=False`` means the caller already fed this proxy to the tracker.
    """
    diag = {}
    if observe and inp.fresh_proxy.valid:
        diag["pf_step"] = tracker.observe(inp.fresh_proxy)
    if not tracker.ready:
        raise Guarded("no valid measurement yet")
    mean, spread = tracker.estimate()
    if inp.fresh_proxy.valid:
        z, sigma = float(inp.fresh_proxy.center[2]), inp.fresh_proxy.sigma_xy
    else:
        z = tracker.last_z if tracker.last_z is not None else float(inp.stale_proxy.center[2])
        sigma = inp.stale_proxy.sigma_xy if inp.stale_proxy.valid else 0.0
    m = uar_inflate(MarginSet.from_config(cfg), sigma, cfg.uar_lambda)
    center = np.array([mean[0], mean[1], z])
    triple = task_waypoints(inp.task_goal.task, center, cfg, m, inp.task_goal)
    diag.update({"pf_mean": [float(mean[0]), float(mean[1])], "pf_spread": spread,
                 "ess": tracker.ps.ess, "inflation": cfg.uar_lambda * sigma})
    return triple, diag


def retarget(mode: str, inp: RetargetInput, cfg, tracker: PoseTracker | None = None,
             observe: bool = True) -> RetargetResult:
    """Run one retargeter. Raises :class:`Guarded` when it cannot act on the input."""
    t0 = time.perf_counter()
    diag: dict = {}
    if mode == "none":
        triple = inp.stale_triple
    elif mode == "nearest":
        triple = nearest_retarget(inp, cfg)
    elif mode == "icp":
        triple, diag = icp_retarget(inp, cfg)
    elif mode == "uar":
        triple, diag = uar_retarget(inp, cfg)
    elif mode == "uar_pf":
        if tracker is None:
            raise ValueError("uar_pf needs a PoseTracker")
        triple, diag = uar_pf_retarget(inp, tracker, cfg, observe)
    else:
        raise ValueError(f"unknown retarget mode: {mode}")
    return RetargetResult(triple, mode, time.perf_counter() - t0, diag)


def plan_triple(mode: str, proxy: PoseProxy, goal: TaskGoal, cfg, tracker: PoseTracker | None = None) -> WaypointTriple:
    """Initial waypoints from the first valid observation, using the mode's margin policy."""
    margins = MarginSet.from_config(cfg)
    center = proxy.center
    if mode in ("uar", "uar_pf"):
        margins = uar_inflate(margins, proxy.sigma_xy, cfg.uar_lambda)
    if mode == "uar_pf" and tracker is not None and tracker.ready:
        mean, _ = tracker.estimate()
        center = np.array([mean[0], mean[1], proxy.center[2]])
    return task_waypoints(goal.task, center, cfg, margins, goal)
