"""Shared safeguards around retargeting: vision guard, two-stage waypoints,
slip and stall monitors, and the replan budget."""

from __future__ import annotations

import math
from collections import deque
from dataclasses import dataclass, field

import numpy as np

ACCEPT, REJECT = "accept", "reject"
OK, TRIGGER_REPLAN, ABORT = "ok", "trigger_replan", "abort"


@dataclass(frozen=True)
class GuardConfig:
    tau_xy: float = 0.15
    tau_z: float = 0.15
    enabled: bool = True

    def __post_init__(self):
        if self.tau_xy <= 0 or self.tau_z <= 0:
            raise ValueError("guard thresholds must be positive")


def vision_guard(fresh, reference, cfg: GuardConfig) -> str:
    """Reject a fresh proxy that jumped too far from the trusted reference."""
    if not cfg.enabled:
        return ACCEPT
    dxy = math.hypot(fresh.center[0] - reference.center[0], fresh.center[1] - reference.center[1])
    dz = abs(fresh.center[2] - reference.center[2])
    if dxy > cfg.tau_xy or dz > cfg.tau_z:
        return REJECT
    return ACCEPT


def safe_height(ee_z: float, obj_z: float, edge: float, dz: float, clear: float) -> float:
    return max(ee_z + dz, obj_z + 0.5 * edge + clear)


def two_stage(ee, target, obj_z: float, edge: float, dz: float = 0.02, clear: float = 0.01) -> list[np.ndarray]:
    """UP -> XY -> DOWN decomposition of a move to ``target`` through z_safe.

    ``obj_z`` is the sensed object-centre height, so ``obj_z + edge/2`` is its top.
    """
    ee = np.asarray(ee, dtype=float)
    target = np.asarray(target, dtype=float)
    z_safe = safe_height(ee[2], obj_z, edge, dz, clear)
    return [
        np.array([ee[0], ee[1], z_safe]),
        np.array([target[0], target[1], z_safe]),
        target.copy(),
    ]


@dataclass
class MonitorState:
    replan_budget: int = 1
    replans_used: int = 0
    lost_ticks: int = 0
    stall_window: float = 0.4
    contact_seen: bool = False

    def __post_init__(self):
        if self.replan_budget < 0:
            raise ValueError("replan budget must be non-negative")

    @property
    def budget_left(self) -> int:
        return self.replan_budget - self.replans_used

    def spend(self) -> bool:
        if self.replans_used >= self.replan_budget:
            return False
        self.replans_used += 1
        return True


def slip_monitor(in_contact: bool, state: MonitorState, n_lost: int = 8) -> str | None:
    """Feed one tick of push contact; returns a verdict, or None before first contact.

    Fires once the consecutive lost-contact count exceeds ``n_lost`` and the
    budget still allows a replan.
    """
    if in_contact:
        state.contact_seen = True
        state.lost_ticks = 0
        return OK
    if not state.contact_seen:
        return None
    state.lost_ticks += 1
    if state.lost_ticks > n_lost and state.spend():
        state.lost_ticks = 0
        state.contact_seen = False
        return TRIGGER_REPLAN
    return OK


@dataclass
class StallMonitor:
    """Sliding-window jam detector: no EE motion, no goal progress, contact held."""

    window_ticks: int
    step_thresh: float = 0.001
    progress_thresh: float = 0.001
    _steps: deque = field(default_factory=deque, repr=False)
    _dists: deque = field(default_factory=deque, repr=False)
    _contact: deque = field(default_factory=deque, repr=False)

    @classmethod
    def from_seconds(cls, window_s: float, tick_dt: float, step_thresh=0.001, progress_thresh=0.001):
        return cls(int(round(window_s / tick_dt)), step_thresh, progress_thresh)

    def reset(self) -> None:
        self._steps.clear()
        self._dists.clear()
        self._contact.clear()

    def feed(self, ee_step: float, goal_dist: float, in_contact: bool, state: MonitorState) -> str:
        self._steps.append(ee_step)
        self._dists.append(goal_dist)
        self._contact.append(in_contact)
        # distance samples span window_ticks + 1 so progress covers a full window
        while len(self._steps) > self.window_ticks:
            self._steps.popleft()
            self._contact.popleft()
        while len(self._dists) > self.window_ticks + 1:
            self._dists.popleft()
        if len(self._dists) <= self.window_ticks:
            return OK
        return stall_monitor(list(self._steps), list(self._dists), all(self._contact), state,
                             self.step_thresh, self.progress_thresh, reset=self.reset)


def stall_monitor(ee_trace, goal_distance_trace, contact: bool, state: MonitorState,
                  step_thresh: float = 0.001, progress_thresh: float = 0.001, reset=None) -> str:
    """Classify one full window: ``ee_trace`` holds per-tick EE displacements,
    ``goal_distance_trace`` the goal distances at the window boundaries and in between."""
    if not contact or not ee_trace:
        return OK
    jammed = (max(ee_trace) < step_thresh
              and goal_distance_trace[0] - min(goal_distance_trace) < progress_thresh)
    if not jammed:
        return OK
    if reset is not None:
        reset()
    if state.spend():
        return TRIGGER_REPLAN
    return ABORT
