"""Run configuration.

Every tunable of the kit lives on :class:`Config`. On disk it is a flat
``key = value`` text file (``#`` starts a comment); unknown keys are an
error so typos do not silently fall back to defaults.
"""

from __future__ import annotations

import dataclasses
from dataclasses import dataclass, fields
from pathlib import Path

MODES = ("none", "nearest", "icp", "uar", "uar_pf")
TASKS = ("pick", "push", "stack", "peg")

FULL_SHIFTS_M = (0.0, 0.02, 0.04, 0.06, 0.08, 0.10)
FULL_LAGS_MS = (0, 100, 200, 300, 400)


@dataclass(frozen=True)
class Config:
    # world
    tick_dt: float = 0.01
    table_z: float = 0.0
    workspace_lo_x: float = 0.0
    workspace_hi_x: float = 1.0
    workspace_lo_y: float = -0.5
    workspace_hi_y: float = 0.5
    workspace_hi_z: float = 0.5
    cube_edge: float = 0.04
    ee_radius: float = 0.01
    grasp_tol_xy: float = 0.015
    contact_eps: float = 0.001
    friction_threshold: float = 0.0002
    ee_home_x: float = 0.30
    ee_home_y: float = 0.0
    ee_home_z: float = 0.10
    object_x: float = 0.45
    object_y: float = 0.0
    push_goal_dx: float = 0.10
    push_goal_dy: float = 0.0
    stack_base_dx: float = 0.15
    stack_base_dy: float = 0.10
    peg_half_width: float = 0.01
    peg_height: float = 0.04
    socket_clearance: float = 0.003
    socket_wall: float = 0.01
    socket_height: float = 0.03
    shift_retries: int = 20

    # camera
    points_per_scan: int = 300
    noise_std: float = 0.001
    dropout_prob: float = 0.0
    camera_x: float = 0.45
    camera_y: float = -0.60
    camera_z: float = 0.60
    rim_points: int = 240
    interior_points: int = 60

    # perception
    min_inliers: int = 30
    trim_lo: float = 0.01
    trim_hi: float = 0.99

    # push margins and UAR clamps (metres)
    delta_pre: float = 0.020
    delta_contact: float = 0.004
    delta_over: float = 0.010
    delta_z: float = 0.0
    delta_pre_lo: float = 0.010
    delta_pre_hi: float = 0.040
    delta_contact_lo: float = 0.002
    delta_contact_hi: float = 0.012
    delta_over_lo: float = 0.005
    delta_over_hi: float = 0.030
    uar_lambda: float = 1.0
    push_eps: float = 1e-15

    # pick / stack / peg geometry
    vertical_clearance: float = 0.01
    pick_hover: float = 0.06
    pick_lift: float = 0.08
    peg_h_over: float = 0.03
    peg_insert_extra: float = 0.004
    stack_tol_xy: float = 0.015
    stack_tol_z: float = 0.010

    # ICP
    icp_max_iters: int = 30
    icp_trim_fraction: float = 0.10
    icp_tol: float = 1e-6
    icp_inlier_dist: float = 0.005
    icp_flag_rms: float = 0.005
    icp_min_overlap: float = 0.20

    # particle filter
    pf_particles: int = 128
    pf_sigma0_xy: float = 0.010
    pf_sigma0_theta: float = 0.2
    pf_sigma_v: float = 0.05
    pf_sigma_omega: float = 0.5
    pf_sigma_floor: float = 0.002
    pf_reseed_gate: float = 3.5
    pf_update_at_trigger_only: bool = False

    # reliability
    guard_enabled: bool = True
    guard_tau_xy: float = 0.15
    guard_tau_z: float = 0.15
    guard_fallback: str = "prior"
    safe_dz: float = 0.02
    safe_clear: float = 0.01
    eps_xy: float = 0.015
    eps_z: float = 0.010
    n_lost: int = 8
    stall_window_s: float = 0.4
    stall_step_thresh: float = 0.001
    stall_progress_thresh: float = 0.001
    replan_budget: int = 1

    # servo
    delta_max: float = 0.003
    arrive_tol: float = 0.001

    # protocol
    trigger_radius: float = 0.06
    peek_lift: bool = False
    peek_lift_height: float = 0.02
    timeout_s: float = 30.0
    push_success_tol: float = 0.02
    pick_success_lift: float = 0.05
    peg_success_dz: float = 0.002

    def replace(self, **changes) -> "Config":
        return dataclasses.replace(self, **changes)

    def budget_for(self, mode: str) -> int:
        return 0 if mode == "none" else self.replan_budget

    def max_lag_s(self) -> float:
        return max(FULL_LAGS_MS) / 1000.0

    def to_text(self) -> str:
        lines = [f"{f.name} = {_format(getattr(self, f.name))}" for f in fields(self)]
        return "\n".join(lines) + "\n"

    @classmethod
    def from_text(cls, text: str, base: "Config | None" = None) -> "Config":
        pairs = {}
        for lineno, raw in enumerate(text.splitlines(), 1):
            line = raw.split("#", 1)[0].strip()
            if not line:
                continue
            if "=" not in line:
                raise ValueError(f"line {lineno}: expected 'key = value', got {raw!r}")
            key, value = (part.strip() for part in line.split("=", 1))
            pairs[key] = value
        return (base or cls()).with_strings(pairs)

    @classmethod
    def from_file(cls, path, base: "Config | None" = None) -> "Config":
        return cls.from_text(Path(path).read_text(), base)

    def with_strings(self, pairs: dict) -> "Config":
        types = {f.name: f.type for f in fields(self)}
        changes = {}
        for key, value in pairs.items():
            if key not in types:
                raise KeyError(f"unknown config key: {key}")
            changes[key] = _parse(value, getattr(self, key))
        return self.replace(**changes)


def _format(value) -> str:
    if isinstance(value, bool):
        return "true" if value else "false"
    return repr(value) if isinstance(value, float) else str(value)


def _parse(text: str, like):
    if isinstance(like, bool):
        low = text.lower()
        if low in ("1", "true", "yes", "on"):
            return True
        if low in ("0", "false", "no", "off"):
            return False
        raise ValueError(f"not a boolean: {text!r}")
    if isinstance(like, int):
        return int(text)
    if isinstance(like, float):
        return float(text)
    return text
