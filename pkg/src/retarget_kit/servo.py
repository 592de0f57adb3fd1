"""First-order Cartesian position servo and waypoint-queue execution."""

from __future__ import annotations

import math
from collections import deque
from dataclasses import dataclass, field

import numpy as np

from .goals import CLOSE, OPEN


@dataclass(frozen=True)
class ServoConfig:
    delta_max: float = 0.003
    tick_dt: float = 0.01

    def __post_init__(self):
        if self.delta_max <= 0:
            raise ValueError("delta_max must be positive")


def servo_step(ee, target, delta_max: float) -> np.ndarray:
    """Per-tick delta toward ``target``, norm-capped at ``delta_max``.

    Works row-wise on stacked ``(..., 3)`` inputs.
    """
    err = np.asarray(target, dtype=float) - np.asarray(ee, dtype=float)
    if err.ndim == 1:
        n = math.sqrt(float(err @ err))
        if n <= delta_max:
            return err
        return err * (delta_max / n)
    n = np.sqrt(np.einsum("...i,...i->...", err, err))
    scale = np.where(n > delta_max, delta_max / np.where(n > 0, n, 1.0), 1.0)
    return err * scale[..., None]


def ticks_to_arrive(distance: float, delta_max: float) -> int:
    return int(math.ceil(distance / delta_max)) if distance > 0 else 0


@dataclass
class Waypoint:
    pos: np.ndarray
    grip: str | None = None
    tag: str = ""
    # tight waypoints (where contact or a gripper action happens) must be
    # reached within ``tight_tol`` on every axis instead of the pass-through box
    tight: bool = False


@dataclass
class ExecState:
    """Waypoint queue, the active target and cumulative travel."""

    queue: deque = field(default_factory=deque)
    final_goal: np.ndarray | None = None
    travel: float = 0.0
    phase: str = "idle"
    ticks: int = 0

    def load(self, waypoints, phase: str = "") -> None:
        self.queue = deque(waypoints)
        if self.queue:
            self.final_goal = np.array(self.queue[-1].pos, dtype=float)
        if phase:
            self.phase = phase

    @property
    def target(self) -> np.ndarray | None:
        if self.queue:
            return self.queue[0].pos
        return self.final_goal

    @property
    def head(self) -> Waypoint | None:
        return self.queue[0] if self.queue else None

    def command(self, ee, delta_max: float) -> np.ndarray:
        tgt = self.target
        if tgt is None:
            return np.zeros(3)
        return servo_step(ee, tgt, delta_max)

    def account(self, delta) -> None:
        self.travel += math.sqrt(float(np.dot(delta, delta)))
        self.ticks += 1

    def advance(self, ee, eps_xy: float, eps_z: float, tight_tol: float = 0.001) -> Waypoint | None:
        """Pop the head waypoint if ``ee`` is within its arrival tolerances."""
        if not self.queue:
            return None
        head = self.queue[0]
        if head.tight:
            eps_xy = eps_z = tight_tol
        if arrived(ee, head.pos, eps_xy, eps_z):
            return self.queue.popleft()
        return None

    def settled(self, ee, tol: float) -> bool:
        if self.queue or self.final_goal is None:
            return False
        return float(np.linalg.norm(np.asarray(ee) - self.final_goal)) <= tol


def arrived(ee, target, eps_xy: float, eps_z: float) -> bool:
    dx = ee[0] - target[0]
    dy = ee[1] - target[1]
    return math.hypot(dx, dy) <= eps_xy and abs(ee[2] - target[2]) <= eps_z


def advance_queue(exec_state: ExecState, ee, tol: tuple[float, float]) -> ExecState:
    exec_state.advance(ee, *tol)
    return exec_state


def gripper_fsm(phase: str, event: str | None) -> str:
    """Gripper command for an arrival ``event`` ("pre", "contact", "post").

    Push keeps the jaws open throughout; pick-style tasks open at the
    pre-grasp, close at the grasp and open again at the post-lift/place.
    """
    if phase == "push":
        return OPEN
    return {"pre": OPEN, "contact": CLOSE, "post": OPEN}.get(event, "hold")
