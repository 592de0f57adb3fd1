"""One Shift×Lag trial: plan, approach, teleport at the trigger, act on stale
goals for the injected lag, retarget once, then execute to completion."""

from __future__ import annotations

import json
import math
from dataclasses import asdict, dataclass, field

import numpy as np

from ..config import MODES, TASKS, Config
from ..goals import OPEN, TaskGoal, WaypointTriple, stack_target
from ..particle_filter import PfParams, PoseTracker
from ..perception import LatencyBuffer, PointCloud, PoseProxy, pose_proxy, rim_proxy
from ..reliability import (
    ABORT,
    REJECT,
    TRIGGER_REPLAN,
    GuardConfig,
    MonitorState,
    StallMonitor,
    slip_monitor,
    two_stage,
    vision_guard,
)
from ..retargeting import Guarded, RetargetInput, plan_triple, retarget
from ..servo import ExecState, Waypoint, arrived, gripper_fsm
from ..world import World

TARGET = {"push": "obj", "pick": "obj", "stack": "obj", "peg": "socket"}


@dataclass(frozen=True)
class TrialSpec:
    task: str
    mode: str
    shift: float
    lag_ms: int
    seed: int
    # position of the trial in its sweep; only used for ordering and bookkeeping
    seed_index: int = 0

    def __post_init__(self):
        if self.task not in TASKS:
            raise ValueError(f"unknown task: {self.task}")
        if self.mode not in MODES:
            raise ValueError(f"unknown mode: {self.mode}")
        if self.shift < 0 or self.lag_ms < 0:
            raise ValueError("shift and lag must be non-negative")

    def key(self) -> tuple:
        return (self.task, self.mode, self.shift, self.lag_ms, self.seed_index, self.seed)


@dataclass
class TrialRecord:
    spec: TrialSpec
    success: bool = False
    abort: bool = False
    abort_reason: str = ""
    replans: int = 0
    ee_travel: float = 0.0
    retarget_latency: float = 0.0
    final_goal_dist: float = math.nan
    min_goal_dist: float = math.nan
    picked: bool = False
    xy_error: float = math.nan
    ticks: int = 0
    error: str = ""
    events: list = field(default_factory=list)

    def to_dict(self) -> dict:
        """Plain JSON-ready dict; NaN metrics become None."""
        d = asdict(self)
        d["spec"] = asdict(self.spec)
        for k in _FLOAT_FIELDS:
            if isinstance(d[k], float) and math.isnan(d[k]):
                d[k] = None
        return d

    @classmethod
    def from_dict(cls, d: dict) -> "TrialRecord":
        d = dict(d)
        d["spec"] = TrialSpec(**d["spec"])
        for k in _FLOAT_FIELDS:
            if d.get(k) is None:
                d[k] = math.nan
        return cls(**d)

    def to_json(self) -> str:
        return json.dumps(self.to_dict(), sort_keys=True, allow_nan=False)


_FLOAT_FIELDS = ("ee_travel", "retarget_latency", "final_goal_dist", "min_goal_dist", "xy_error")


@dataclass
class _Obs:
    """A buffered observation: a cube cloud, or rim + interior clouds for the socket."""

    stamp: float
    cloud: PointCloud
    interior: PointCloud | None = None


def _r(v) -> list:
    return [round(float(x), 6) for x in v]


class TrialRunner:
    def __init__(self, spec: TrialSpec, cfg: Config | None = None, trace: bool = False):
        self.spec = spec
        self.cfg = cfg or Config()
        self.trace_enabled = trace
        self.trace: list[dict] = []
        c = self.cfg
        world_ss, cam_ss, pf_ss = np.random.SeedSequence(spec.seed).spawn(3)
        self.world = World(c, np.random.default_rng(world_ss), np.random.default_rng(cam_ss))
        self.pf_rng = np.random.default_rng(pf_ss)
        self.exec = ExecState()
        self.record = TrialRecord(spec)
        self.monitor = MonitorState(c.budget_for(spec.mode), stall_window=c.stall_window_s)
        self.stall = StallMonitor.from_seconds(c.stall_window_s, c.tick_dt, c.stall_step_thresh,
                                               c.stall_progress_thresh)
        self.guard = GuardConfig(c.guard_tau_xy, c.guard_tau_z, c.guard_enabled)
        self.buffer = LatencyBuffer.sized_for(spec.lag_ms, c.max_lag_s(), c.tick_dt)
        self.lag_ticks = int(round(spec.lag_ms / 1000.0 / c.tick_dt))
        self.tracker = (PoseTracker(PfParams.from_config(c), self.pf_rng, c.pf_reseed_gate)
                        if spec.mode == "uar_pf" else None)
        self.target = TARGET[spec.task]
        self._setup_scene()

    # -- scene --------------------------------------------------------
    def _setup_scene(self) -> None:
        c, w = self.cfg, self.world
        task = self.spec.task
        obj_xy = (c.object_x, c.object_y)
        if task == "peg":
            w.add_held_peg("peg")
            w.add_socket("socket", obj_xy)
            goal = TaskGoal("peg")
        else:
            w.add_cube("obj", obj_xy)
            goal = TaskGoal(task, g_obj=np.array([c.object_x + c.push_goal_dx, c.object_y + c.push_goal_dy])
                            if task == "push" else None, tol_xy=c.stack_tol_xy, tol_z=c.stack_tol_z)
            if task == "stack":
                w.add_cube("base", (c.object_x + c.stack_base_dx, c.object_y + c.stack_base_dy), kind="base_cube")
        self.goal = goal
        self.rest_z = float(w.objects[self.target].center[2])

    # -- perception ---------------------------------------------------
    def _capture(self) -> _Obs:
        w = self.world
        if self.spec.task == "peg":
            rim, interior = w.rim_scan(self.target)
            return _Obs(w.time, rim, interior)
        return _Obs(w.time, w.scan(self.target))

    def _proxy(self, obs: _Obs) -> PoseProxy:
        c = self.cfg
        if self.spec.task == "peg":
            return rim_proxy(obs.cloud, obs.interior, c.table_z + c.socket_height)
        return pose_proxy(obs.cloud, c.cube_edge, c.min_inliers, (c.trim_lo, c.trim_hi))

    def _event(self, kind: str, **info) -> None:
        self.record.events.append([self.world.tick, kind, info] if info else [self.world.tick, kind])

    # -- planning -----------------------------------------------------
    def _queue_for(self, triple: WaypointTriple, obj_z: float) -> list[Waypoint]:
        """Two-stage move to the pre-contact pose, then contact and post (plus placing for stack)."""
        c = self.cfg
        edge = c.peg_height if self.spec.task == "peg" else c.cube_edge
        up, xy, down = two_stage(self.world.ee, triple.pre, obj_z, edge, c.safe_dz, c.safe_clear)
        grips = triple.grip_plan
        q = [Waypoint(up, None, "up"), Waypoint(xy, None, "xy"), Waypoint(down, grips[0], "pre", True),
             Waypoint(triple.contact, grips[1], "contact", True), Waypoint(triple.post, grips[2], "post", True)]
        if self.spec.task == "stack":
            q[-1].grip = None
            q.extend(self._place_waypoints())
        return q

    def _place_waypoints(self) -> list[Waypoint]:
        c = self.cfg
        g = stack_target(self.base_proxy.center, self.base_proxy.center[2] + 0.5 * c.cube_edge, c.cube_edge)
        hold = 0.5 * c.cube_edge + c.vertical_clearance
        place = g + (0.0, 0.0, hold)
        return [Waypoint(place + (0.0, 0.0, c.pick_hover), None, "place_hover"),
                Waypoint(place, OPEN, "place", True),
                Waypoint(place + (0.0, 0.0, c.pick_lift), None, "retreat")]

    def _install(self, triple: WaypointTriple, obj_z: float, why: str) -> None:
        if self.spec.task in ("pick", "stack") and self.world.held == self.target:
            return
        self.plan = triple
        self.exec.load(self._queue_for(triple, obj_z), phase=why)
        self.stall.reset()

    # -- metrics ------------------------------------------------------
    def _true_grasp_point(self) -> np.ndarray:
        c = self.cfg
        o = self.world.objects[self.target].center
        return o + (0.0, 0.0, 0.5 * c.cube_edge + c.vertical_clearance)

    def _true_stack_goal(self) -> np.ndarray:
        base = self.world.objects["base"]
        return stack_target(base.center, base.top_z, self.cfg.cube_edge)

    def _true_insert(self) -> np.ndarray:
        c = self.cfg
        s = self.world.objects["socket"].center
        return np.array([s[0], s[1], c.table_z + 0.5 * c.peg_height + c.peg_insert_extra])

    def goal_distance(self) -> float:
        w, task = self.world, self.spec.task
        if task == "push":
            o = w.objects["obj"].center
            return math.hypot(o[0] - self.goal.g_obj[0], o[1] - self.goal.g_obj[1])
        if task == "peg":
            return float(np.linalg.norm(w.objects["peg"].center - self._true_insert()))
        if w.held == self.target:
            if task == "pick":
                return max(0.0, self.cfg.pick_success_lift - (w.objects["obj"].center[2] - self.rest_z))
            return float(np.linalg.norm(w.objects["obj"].center - self._true_stack_goal()))
        if task == "stack" and self.record.picked:
            return float(np.linalg.norm(w.objects["obj"].center - self._true_stack_goal()))
        return float(np.linalg.norm(w.ee - self._true_grasp_point()))

    def _in_contact(self) -> bool:
        """Contact for the stall monitor: task contact, or a move the world clipped."""
        if self.spec.task == "push":
            return self.world.contact_query("obj")[1] or self.world.jammed
        return self.world.peg_blocked or self.world.jammed

    def _evaluate(self) -> None:
        c, w, rec = self.cfg, self.world, self.record
        task = self.spec.task
        if task == "push":
            rec.success = self.goal_distance() <= c.push_success_tol
        elif task == "pick":
            rec.success = self.max_lift >= c.pick_success_lift
        elif task == "stack":
            o = w.objects["obj"].center
            g = self._true_stack_goal()
            rec.success = (w.held != "obj" and rec.picked
                           and math.hypot(o[0] - g[0], o[1] - g[1]) <= c.stack_tol_xy
                           and abs(o[2] - g[2]) <= c.stack_tol_z)
        else:
            peg = w.objects["peg"].center
            ins = self._true_insert()
            rec.xy_error = math.hypot(peg[0] - ins[0], peg[1] - ins[1])
            rec.success = rec.xy_error <= c.socket_clearance + 1e-9 and peg[2] <= ins[2] + c.peg_success_dz

    # -- retarget -----------------------------------------------------
    def _fresh_input(self, obs: _Obs | None) -> tuple[RetargetInput, PoseProxy]:
        fresh = self._proxy(obs) if obs is not None else PoseProxy.invalid(self.world.time)
        inp = RetargetInput(self.stale_obs.cloud, obs.cloud if obs is not None else None,
                            self.stale_proxy, fresh, self.plan, self.goal, self.world.ee.copy(), self.exec.phase)
        return inp, fresh

    def _guarded_input(self, inp: RetargetInput, fresh: PoseProxy) -> RetargetInput:
        """Apply the vision guard; on reject substitute the configured trusted pose."""
        if not fresh.valid or not self.stale_proxy.valid:
            return inp
        if vision_guard(fresh, self.stale_proxy, self.guard) != REJECT:
            return inp
        self._event("guard_reject", jump=round(float(np.linalg.norm(fresh.xy - self.stale_proxy.xy)), 6))
        if self.cfg.guard_fallback == "ground_truth":
            true = self.world.objects[self.target].center
            trusted = PoseProxy(true.copy(), True, fresh.inlier_count, fresh.sigma_xy, fresh.sigma_z, fresh.stamp)
            return RetargetInput(inp.stale_cloud, inp.fresh_cloud, self.stale_proxy, trusted, self.plan, self.goal,
                                 inp.ee, inp.phase)
        if self.spec.mode == "uar_pf":
            return RetargetInput(inp.stale_cloud, inp.fresh_cloud, self.stale_proxy,
                                 PoseProxy.invalid(fresh.stamp), self.plan, self.goal, inp.ee, inp.phase)
        # prior fallback without a filter: the trusted pose is the stale proxy
        return RetargetInput(inp.stale_cloud, inp.stale_cloud, self.stale_proxy, self.stale_proxy, self.plan,
                             self.goal, inp.ee, inp.phase)

    def _do_retarget(self, obs: _Obs | None, why: str, observed: bool = False) -> None:
        inp, fresh = self._fresh_input(obs)
        inp = self._guarded_input(inp, fresh)
        try:
            res = retarget(self.spec.mode, inp, self.cfg, self.tracker, observe=not observed)
        except Guarded as exc:
            self._event("guarded", reason=str(exc))
            return
        if self.trace_enabled:
            self.trace.append({"tick": self.world.tick, "retarget": why, "compute_s": res.compute_s,
                               "diagnostics": res.diagnostics})
        diag = {k: v for k, v in res.diagnostics.items()
                if k in ("icp_flagged", "icp_iters", "pf_step", "inflation")}
        self._event("retarget", why=why, **{k: (round(v, 6) if isinstance(v, float) else v) for k, v in diag.items()})
        if self.spec.mode == "none":
            return
        obj_z = float(inp.fresh_proxy.center[2]) if inp.fresh_proxy.valid else float(self.stale_proxy.center[2])
        self._install(res.triple, obj_z, why)
        if inp.fresh_proxy.valid and obs is not None:
            self.stale_obs, self.stale_proxy = obs, inp.fresh_proxy

    def _replan(self, why: str) -> None:
        self.record.replans += 1
        self._event("replan", why=why)
        obs = self._capture()
        self.buffer.push(obs)
        if self.tracker is not None:
            fresh = self._proxy(obs)
            if fresh.valid:
                self.tracker.observe(fresh)
                self._do_retarget(obs, why, observed=True)
                return
        self._do_retarget(obs, why)

    # -- main loop ----------------------------------------------------
    def run(self) -> TrialRecord:
        c, w, rec, spec = self.cfg, self.world, self.record, self.spec
        first = self._capture()
        self.buffer.push(first)
        self.stale_obs = first
        self.stale_proxy = self._proxy(first)
        if spec.task == "stack":
            self.base_proxy = pose_proxy(w.scan("base"), c.cube_edge, c.min_inliers, (c.trim_lo, c.trim_hi))
        if not self.stale_proxy.valid:
            rec.abort, rec.abort_reason = True, "no_valid_initial_proxy"
            self._finish()
            return rec
        if self.tracker is not None:
            self.tracker.observe(self.stale_proxy)
        self.plan = plan_triple(spec.mode, self.stale_proxy, self.goal, c, self.tracker)
        self.exec.load(self._queue_for(self.plan, float(self.stale_proxy.center[2])), phase="approach")
        pf_stream = self.tracker is not None and not c.pf_update_at_trigger_only and spec.task != "peg"
        last_stamp = first.stamp

        onset = None
        retargeted = False
        peeking = False
        max_ticks = int(round(c.timeout_s / c.tick_dt))
        self.max_lift = 0.0
        rec.min_goal_dist = self.goal_distance()
        grip_cmd = "hold"
        while True:
            if w.tick >= max_ticks:
                rec.abort, rec.abort_reason = True, "timeout"
                self._event("abort", reason="timeout")
                break
            prev_ee = w.ee.copy()
            delta = self.exec.command(w.ee, c.delta_max)
            w.step(delta, grip_cmd)
            self.exec.account(delta)
            grip_cmd = "hold"
            popped = self.exec.advance(w.ee, c.eps_xy, c.eps_z, c.arrive_tol)
            if popped is not None and popped.grip is not None:
                grip_cmd = popped.grip if spec.task != "push" else gripper_fsm("push", popped.tag)
            if w.held == self.target:
                rec.picked = True
                self.max_lift = max(self.max_lift, float(w.objects[self.target].center[2]) - self.rest_z)

            if onset is None and math.hypot(w.ee[0] - self.plan.pre[0], w.ee[1] - self.plan.pre[1]) <= c.trigger_radius:
                onset = w.tick
                if spec.shift > 0:
                    w.apply_shift(self.target, spec.shift, float(w.rng.uniform(0.0, 2.0 * math.pi)))
                self._event("trigger", shift=spec.shift)
                obs = self._capture()
                self.buffer.push(obs)
                last_stamp = obs.stamp
            elif pf_stream:
                self.buffer.push(self._capture())

            if self.tracker is not None:
                self.tracker.predict(c.tick_dt)
                if pf_stream:
                    obs = self.buffer.fetch(w.time)
                    if obs is not None and obs.stamp > last_stamp and not (onset is not None and not retargeted
                                                                             and w.tick >= onset + self.lag_ticks):
                        last_stamp = obs.stamp
                        p = self._proxy(obs)
                        if p.valid and vision_guard(p, self.stale_proxy, self.guard) != REJECT:
                            self.tracker.observe(p)

            if onset is not None and not retargeted and w.tick >= onset + self.lag_ticks:
                if c.peek_lift and not peeking:
                    peeking = True
                    lift = w.ee + (0.0, 0.0, c.peek_lift_height)
                    self.exec.queue.appendleft(Waypoint(lift, None, "peek"))
                if not peeking or (popped is not None and popped.tag == "peek"):
                    retargeted = True
                    obs = self.buffer.fetch(w.time) if not peeking else self._capture()
                    rec.retarget_latency = round((w.tick - onset + 1) * c.tick_dt, 9)
                    self._do_retarget(obs, "trigger")
                    if obs is not None:
                        last_stamp = max(last_stamp, obs.stamp)

            in_contact = self._in_contact()
            dist = self.goal_distance()
            rec.min_goal_dist = min(rec.min_goal_dist, dist)
            if self.trace_enabled:
                self.trace.append({"tick": w.tick, "ee": _r(w.ee), "target": _r(self.exec.target),
                                   "delta": _r(delta), "travel": round(self.exec.travel, 9),
                                   "objects": {k: _r(o.center) for k, o in sorted(w.objects.items())}})

            if retargeted:
                if spec.task == "push" and self.exec.head is not None and self.exec.head.tag == "post":
                    verdict = slip_monitor(w.contact_query("obj")[1], self.monitor, c.n_lost)
                    if verdict == TRIGGER_REPLAN:
                        self._event("slip", lost_ticks=c.n_lost + 1)
                        self._replan("slip")
                        continue
                step_len = float(np.linalg.norm(w.ee - prev_ee))
                sv = self.stall.feed(step_len, dist, in_contact, self.monitor)
                if sv == TRIGGER_REPLAN:
                    self._event("stall", budget_left=self.monitor.budget_left)
                    self._replan("stall")
                    continue
                if sv == ABORT:
                    self._event("stall", budget_left=self.monitor.budget_left)
                    self._event("abort", reason="stall")
                    rec.abort, rec.abort_reason = True, "stall"
                    break

            if retargeted and self.exec.settled(w.ee, c.arrive_tol):
                break
            if onset is None and self.exec.settled(w.ee, c.arrive_tol):
                # reached the plan without passing the trigger region: treat as triggered there
                onset = w.tick
        self._finish()
        return rec

    def _finish(self) -> None:
        rec, w = self.record, self.world
        rec.ee_travel = self.exec.travel
        rec.ticks = w.tick
        rec.final_goal_dist = self.goal_distance()
        if not rec.abort:
            self._evaluate()
            # numpy comparisons yield numpy bools, which the JSON encoder rejects
            rec.success = bool(rec.success)
        else:
            if self.spec.task == "peg":
                peg = w.objects["peg"].center
                ins = self._true_insert()
                rec.xy_error = math.hypot(peg[0] - ins[0], peg[1] - ins[1])
            rec.success = False
        for tick, kind, info in w.events:
            rec.events.append([tick, kind] + ([{k: v for k, v in info.items() if k in ("object", "dx", "dy")}]
                                              if kind in ("shift", "grasp") else []))
        rec.events.sort(key=lambda e: (e[0], e[1]))
        for e in rec.events:
            if len(e) > 2:
                e[2] = {k: (round(v, 6) if isinstance(v, float) else v) for k, v in e[2].items()}


def run_trial(spec: TrialSpec, cfg: Config | None = None, trace: bool = False) -> TrialRecord:
    return TrialRunner(spec, cfg, trace).run()
