"""Closed-form waypoint construction for push, pick, stack and peg insertion.

Orientation is fixed top-down for every task, so waypoints are positions only.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, replace

import numpy as np

OPEN, CLOSE = "open", "close"


@dataclass(frozen=True)
class MarginSet:
    delta_pre: float = 0.020
    delta_contact: float = 0.004
    delta_over: float = 0.010
    delta_z: float = 0.0
    pre_bounds: tuple[float, float] = (0.010, 0.040)
    contact_bounds: tuple[float, float] = (0.002, 0.012)
    over_bounds: tuple[float, float] = (0.005, 0.030)

    @classmethod
    def from_config(cls, cfg) -> "MarginSet":
        return cls(
            cfg.delta_pre,
            cfg.delta_contact,
            cfg.delta_over,
            cfg.delta_z,
            (cfg.delta_pre_lo, cfg.delta_pre_hi),
            (cfg.delta_contact_lo, cfg.delta_contact_hi),
            (cfg.delta_over_lo, cfg.delta_over_hi),
        )


@dataclass(frozen=True)
class WaypointTriple:
    pre: np.ndarray
    contact: np.ndarray
    post: np.ndarray
    # gripper command issued on arrival at (pre, contact, post); None = leave as is
    grip_plan: tuple = (None, None, None)

    def as_array(self) -> np.ndarray:
        return np.vstack([self.pre, self.contact, self.post])

    def translated(self, v) -> "WaypointTriple":
        v = np.asarray(v, dtype=float)
        return replace(self, pre=self.pre + v, contact=self.contact + v, post=self.post + v)

    def max_deviation(self, other: "WaypointTriple") -> float:
        return float(np.max(np.linalg.norm(self.as_array() - other.as_array(), axis=1)))


@dataclass(frozen=True)
class TaskGoal:
    """What a trial is trying to achieve.

    ``g_obj`` is the push table-plane goal; stacking and peg goals are
    derived from the sensed base cube / socket at run time.
    """

    task: str
    g_obj: np.ndarray | None = None
    tol_xy: float = 0.015
    tol_z: float = 0.010

    def __post_init__(self):
        if self.task == "push" and self.g_obj is None:
            raise ValueError("push goal requires g_obj")


def push_waypoints(center, g_obj, edge: float, margins: MarginSet, eps: float = 1e-15) -> WaypointTriple:
    c = np.asarray(center, dtype=float)
    g = np.asarray(g_obj, dtype=float)[:2]
    to_goal = g - c[:2]
    dist = math.hypot(to_goal[0], to_goal[1])
    if dist == 0.0:
        raise ValueError("degenerate push direction")
    d = to_goal / (dist + eps)
    z = c[2] + margins.delta_z
    pre = c[:2] - d * (0.5 * edge + margins.delta_pre)
    contact = c[:2] - d * (0.5 * edge + margins.delta_contact)
    post = contact + d * (dist + margins.delta_over)
    return WaypointTriple(
        np.array([pre[0], pre[1], z]),
        np.array([contact[0], contact[1], z]),
        np.array([post[0], post[1], z]),
        (OPEN, OPEN, OPEN),
    )


def pick_waypoints(
    center, edge: float, clearance: float, hover: float = 0.06, lift: float = 0.08
) -> WaypointTriple:
    c = np.asarray(center, dtype=float)
    grasp = np.array([c[0], c[1], c[2] + 0.5 * edge + clearance])
    return WaypointTriple(
        grasp + (0.0, 0.0, hover),
        grasp,
        grasp + (0.0, 0.0, lift),
        (OPEN, CLOSE, OPEN),
    )


def stack_target(base_top_center, z_top: float, edge: float) -> np.ndarray:
    xy = np.asarray(base_top_center, dtype=float)[:2]
    return np.array([xy[0], xy[1], z_top + 0.5 * edge])


def peg_targets(
    socket_center, rim_z: float, table_z: float, h_peg: float, h_over: float, extra: float = 0.004
) -> tuple[np.ndarray, np.ndarray]:
    if h_peg <= 0:
        raise ValueError("peg height must be positive")
    xy = np.asarray(socket_center, dtype=float)[:2]
    pre_insert = np.array([xy[0], xy[1], rim_z + h_over])
    insert = np.array([xy[0], xy[1], table_z + 0.5 * h_peg + extra])
    return pre_insert, insert


def peg_waypoints(socket_center, rim_z: float, cfg) -> WaypointTriple:
    pre_insert, insert = peg_targets(
        socket_center, rim_z, cfg.table_z, cfg.peg_height, cfg.peg_h_over, cfg.peg_insert_extra
    )
    # post repeats the insert target so the final hold clamps xy to the socket
    return WaypointTriple(pre_insert, insert, insert.copy(), (None, None, OPEN))


def task_waypoints(task: str, center, cfg, margins: MarginSet, goal: TaskGoal | None = None) -> WaypointTriple:
    """Dispatch to the per-task construction from a sensed object/socket centre."""
    if task == "push":
        return push_waypoints(center, goal.g_obj, cfg.cube_edge, margins, cfg.push_eps)
    if task in ("pick", "stack"):
        return pick_waypoints(center, cfg.cube_edge, cfg.vertical_clearance, cfg.pick_hover, cfg.pick_lift)
    if task == "peg":
        return peg_waypoints(center, float(center[2]), cfg)
    raise ValueError(f"unknown task: {task}")
