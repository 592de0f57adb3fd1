"""Deterministic kinematic tabletop world.

A point end-effector with a fingertip disc of radius ``ee_radius`` moves under
capped Cartesian deltas. Cubes are pushed quasi-statically (disc-vs-square
penetration is removed along the pusher's planar motion), grasped rigidly when
the jaws close near their centre, and dropped onto their support on release.
The camera samples the visible faces of an object directly and adds isotropic
Gaussian noise; lag is applied downstream by the latency buffer.
"""

from __future__ import annotations

import json
import math
from dataclasses import dataclass, field

import numpy as np

from .perception import PointCloud

CUBE, BASE_CUBE, PEG, SOCKET = "cube", "base_cube", "peg", "socket"
OPEN, CLOSED = "open", "closed"


@dataclass
class RigidObject:
    kind: str
    center: np.ndarray
    edge: float = 0.04
    height: float = 0.04
    yaw: float = 0.0
    # socket only
    inner_half: float = 0.0
    wall: float = 0.0

    @property
    def half(self) -> float:
        return 0.5 * self.edge

    @property
    def top_z(self) -> float:
        return float(self.center[2]) + 0.5 * self.height

    @property
    def bottom_z(self) -> float:
        return float(self.center[2]) - 0.5 * self.height

    @property
    def outer_half(self) -> float:
        return self.inner_half + self.wall

    def to_local(self, xy) -> np.ndarray:
        c, s = math.cos(self.yaw), math.sin(self.yaw)
        dx, dy = xy[0] - self.center[0], xy[1] - self.center[1]
        return np.array([c * dx + s * dy, -s * dx + c * dy])

    def to_world_dir(self, v) -> np.ndarray:
        c, s = math.cos(self.yaw), math.sin(self.yaw)
        return np.array([c * v[0] - s * v[1], s * v[0] + c * v[1]])


@dataclass(frozen=True)
class CameraModel:
    points_per_scan: int = 300
    noise_std: float = 0.001
    dropout_prob: float = 0.0
    position: tuple = (0.45, -0.60, 0.60)


def square_signed_distance(p_local, half: float) -> tuple[float, np.ndarray]:
    """Signed distance from a point to an axis-aligned square and the outward normal
    at the closest boundary point (pointing from the square toward the point)."""
    px, py = float(p_local[0]), float(p_local[1])
    ax, ay = abs(px), abs(py)
    # boundary points take the face normal; the outside branch would divide by zero
    if ax <= half and ay <= half:
        if half - ax <= half - ay:
            return -(half - ax), np.array([math.copysign(1.0, px), 0.0])
        return -(half - ay), np.array([0.0, math.copysign(1.0, py)])
    qx = min(max(px, -half), half)
    qy = min(max(py, -half), half)
    dx, dy = px - qx, py - qy
    d = math.hypot(dx, dy)
    return d, np.array([dx / d, dy / d])


def disc_square_clearance(ee_xy, obj: RigidObject, radius: float) -> float:
    sd, _ = square_signed_distance(obj.to_local(ee_xy), obj.half)
    return sd - radius


def push_resolve(ee, obj: RigidObject, ee_delta, radius: float = 0.01, friction: float = 0.0002) -> np.ndarray:
    """New centre of a table cube after the fingertip disc moves by ``ee_delta``.

    The cube moves only when the moved disc penetrates its footprint by at
    least ``friction`` and the disc is advancing into it (positive component
    along the inward contact normal). It then translates along the disc's
    planar motion direction by the smallest distance that brings the
    penetration back down to ``friction``, capped at the disc's own planar
    displacement. For a face contact along the normal this is exactly the
    penetration minus ``friction``.
    """
    ee = np.asarray(ee, dtype=float)
    u = np.asarray(ee_delta, dtype=float)[:2]
    step_len = math.hypot(u[0], u[1])
    if step_len == 0.0:
        return obj.center.copy()
    p1 = ee[:2] + u
    sd, n_local = square_signed_distance(obj.to_local(p1), obj.half)
    pen = radius - sd
    if pen < friction:
        return obj.center.copy()
    push_dir = -obj.to_world_dir(n_local)
    u_hat = u / step_len
    if float(u_hat @ push_dir) <= 0.0:
        return obj.center.copy()
    target = radius - friction
    k = 0.0
    for _ in range(4):
        # moving the cube by k*u_hat is the disc moving by -k*u_hat in the cube frame
        sd_k, n_k = square_signed_distance(obj.to_local(p1 - k * u_hat), obj.half)
        gain = float(u_hat @ -obj.to_world_dir(n_k))
        if abs(sd_k - target) <= 1e-12 or gain <= 1e-9:
            break
        k += (target - sd_k) / gain
    k = min(max(k, 0.0), step_len)
    out = obj.center.copy()
    out[:2] += k * u_hat
    return out


class World:
    """Mutable simulator state for one trial."""

    def __init__(self, cfg, rng: np.random.Generator | None = None, cam_rng: np.random.Generator | None = None):
        self.cfg = cfg
        self.dt = cfg.tick_dt
        self.tick = 0
        self.ee = np.array([cfg.ee_home_x, cfg.ee_home_y, cfg.ee_home_z], dtype=float)
        self.gripper = OPEN
        self.objects: dict[str, RigidObject] = {}
        self.held: str | None = None
        self.held_offset = np.zeros(3)
        self.rng = rng if rng is not None else np.random.default_rng(0)
        self.cam_rng = cam_rng if cam_rng is not None else np.random.default_rng(1)
        self.camera = CameraModel(cfg.points_per_scan, cfg.noise_std, cfg.dropout_prob,
                                  (cfg.camera_x, cfg.camera_y, cfg.camera_z))
        self.events: list[tuple[int, str, dict]] = []
        self.peg_blocked = False
        self.jammed = False
        self.out_of_workspace = False

    # -- construction -------------------------------------------------
    @property
    def time(self) -> float:
        return round(self.tick * self.dt, 9)

    def add_cube(self, name: str, xy, kind: str = CUBE) -> RigidObject:
        a = self.cfg.cube_edge
        obj = RigidObject(kind, np.array([xy[0], xy[1], self.cfg.table_z + 0.5 * a]), a, a)
        self.objects[name] = obj
        return obj

    def add_socket(self, name: str, xy) -> RigidObject:
        c = self.cfg
        inner = c.peg_half_width + c.socket_clearance
        obj = RigidObject(SOCKET, np.array([xy[0], xy[1], c.table_z + 0.5 * c.socket_height]),
                          2 * (inner + c.socket_wall), c.socket_height, inner_half=inner, wall=c.socket_wall)
        self.objects[name] = obj
        return obj

    def add_held_peg(self, name: str) -> RigidObject:
        c = self.cfg
        obj = RigidObject(PEG, self.ee.copy(), 2 * c.peg_half_width, c.peg_height)
        self.objects[name] = obj
        self.held = name
        self.held_offset = np.zeros(3)
        self.gripper = CLOSED
        return obj

    def log(self, kind: str, **info) -> None:
        self.events.append((self.tick, kind, info))

    # -- dynamics -----------------------------------------------------
    def _clamp_workspace(self, p: np.ndarray) -> np.ndarray:
        c = self.cfg
        lo = np.array([c.workspace_lo_x, c.workspace_lo_y, c.table_z])
        hi = np.array([c.workspace_hi_x, c.workspace_hi_y, c.workspace_hi_z])
        q = np.minimum(np.maximum(p, lo), hi)
        if not np.array_equal(q, p):
            self.out_of_workspace = True
        return q

    def step(self, ee_delta, gripper_cmd: str = "hold") -> None:
        if gripper_cmd == "close":
            self._close()
        elif gripper_cmd == "open":
            self._open()
        delta = np.asarray(ee_delta, dtype=float)
        target = self._clamp_workspace(self.ee + delta)
        if self.held is not None and self.objects[self.held].kind == PEG:
            target = self._peg_constrain(target)
        actual = target - self.ee
        # a commanded move the world clipped (table, workspace, socket rim) counts as a jam
        self.jammed = float(np.max(np.abs(actual - delta))) > 1e-9
        for name, obj in self.objects.items():
            if name == self.held or obj.kind not in (CUBE, BASE_CUBE):
                continue
            if not self._vertical_overlap(target[2], obj):
                continue
            obj.center = push_resolve(self.ee, obj, actual, self.cfg.ee_radius, self.cfg.friction_threshold)
        self.ee = target
        if self.held is not None:
            self.objects[self.held].center = self.ee + self.held_offset
        self.tick += 1

    def _vertical_overlap(self, ee_z: float, obj: RigidObject) -> bool:
        return obj.bottom_z <= ee_z < obj.top_z

    def _graspable(self) -> str | None:
        c = self.cfg
        best, best_d = None, math.inf
        for name, obj in self.objects.items():
            if obj.kind not in (CUBE, BASE_CUBE) or name == self.held:
                continue
            d = math.hypot(self.ee[0] - obj.center[0], self.ee[1] - obj.center[1])
            z_ok = obj.center[2] <= self.ee[2] <= obj.top_z + c.vertical_clearance + c.eps_z + 1e-9
            if d <= c.grasp_tol_xy and z_ok and d < best_d:
                best, best_d = name, d
        return best

    def _close(self) -> None:
        if self.gripper == CLOSED:
            return
        self.gripper = CLOSED
        if self.held is not None:
            return
        name = self._graspable()
        if name is None:
            self.log("no_grasp", ee=self.ee.tolist())
            return
        self.held = name
        self.held_offset = self.objects[name].center - self.ee
        self.log("grasp", object=name)

    def _open(self) -> None:
        if self.gripper == OPEN:
            return
        self.gripper = OPEN
        if self.held is None:
            return
        name, self.held = self.held, None
        obj = self.objects[name]
        obj.center = obj.center.copy()
        obj.center[2] = self._support_z(name, obj) + 0.5 * obj.height
        self.log("release", object=name, center=obj.center.tolist())

    def _support_z(self, name: str, obj: RigidObject) -> float:
        top = self.cfg.table_z
        for other_name, other in self.objects.items():
            if other_name == name or other.kind not in (CUBE, BASE_CUBE):
                continue
            loc = other.to_local(obj.center[:2])
            if abs(loc[0]) <= other.half and abs(loc[1]) <= other.half and other.top_z <= obj.center[2] + 1e-9:
                top = max(top, other.top_z)
        return top

    def _peg_constrain(self, p: np.ndarray) -> np.ndarray:
        self.peg_blocked = False
        sockets = [o for o in self.objects.values() if o.kind == SOCKET]
        if not sockets:
            return p
        sock = sockets[0]
        peg = self.objects[self.held]
        hw, hh = peg.half, 0.5 * peg.height
        rim = sock.top_z
        clear = sock.inner_half - hw
        outer = sock.outer_half + hw

        def lateral(q):
            loc = sock.to_local(q[:2])
            return max(abs(loc[0]), abs(loc[1]))

        q = p.copy()
        q[2] = max(q[2], self.cfg.table_z + hh)
        if q[2] - hh >= rim:
            return q
        m_new = lateral(q)
        if m_new <= clear + 1e-12 or m_new >= outer:
            return q
        prev = self.ee
        prev_bottom = prev[2] - hh
        if prev_bottom >= rim - 1e-12:
            q[2] = rim + hh
            self.peg_blocked = True
            return q
        if lateral(prev) <= clear + 1e-12:
            loc = sock.to_local(q[:2])
            loc = np.clip(loc, -clear, clear)
            q[:2] = sock.center[:2] + sock.to_world_dir(loc)
            self.peg_blocked = True
            return q
        q[:2] = prev[:2]
        self.peg_blocked = True
        return q

    # -- stressor -----------------------------------------------------
    def _in_workspace_xy(self, xy, margin: float) -> bool:
        c = self.cfg
        return (c.workspace_lo_x + margin <= xy[0] <= c.workspace_hi_x - margin
                and c.workspace_lo_y + margin <= xy[1] <= c.workspace_hi_y - margin)

    def apply_shift(self, name: str, magnitude: float, direction: float) -> np.ndarray:
        """Teleport ``name`` in-plane by ``magnitude`` metres; returns the displacement used."""
        obj = self.objects[name]
        margin = obj.outer_half if obj.kind == SOCKET else obj.half
        theta = direction
        for _ in range(self.cfg.shift_retries + 1):
            v = magnitude * np.array([math.cos(theta), math.sin(theta)])
            if self._in_workspace_xy(obj.center[:2] + v, margin):
                break
            theta = float(self.rng.uniform(0.0, 2.0 * math.pi))
        else:
            c = self.cfg
            target = np.clip(obj.center[:2] + v,
                             [c.workspace_lo_x + margin, c.workspace_lo_y + margin],
                             [c.workspace_hi_x - margin, c.workspace_hi_y - margin])
            v = target - obj.center[:2]
        obj.center = obj.center.copy()
        obj.center[:2] += v
        self.log("shift", object=name, dx=float(v[0]), dy=float(v[1]))
        return v

    # -- queries ------------------------------------------------------
    def contact_query(self, name: str) -> tuple[float, bool]:
        obj = self.objects[name]
        clearance = disc_square_clearance(self.ee[:2], obj, self.cfg.ee_radius)
        touching = clearance <= self.cfg.contact_eps and self._vertical_overlap(self.ee[2], obj)
        return clearance, touching

    # -- sensing ------------------------------------------------------
    def _finish_cloud(self, pts: np.ndarray, rng) -> PointCloud:
        cam = self.camera
        if cam.noise_std > 0 and len(pts):
            pts = pts + rng.normal(0.0, cam.noise_std, pts.shape)
        if cam.dropout_prob > 0 and len(pts):
            pts = pts[rng.random(len(pts)) >= cam.dropout_prob]
        return PointCloud(pts, self.time)

    def visible_faces(self, obj: RigidObject) -> list[tuple[np.ndarray, np.ndarray, np.ndarray]]:
        """(origin, u-edge, v-edge) of the top face and the camera-facing side faces."""
        h = obj.half
        cz, hz = float(obj.center[2]), 0.5 * obj.height
        cam = np.asarray(self.camera.position)
        faces = []
        ex = np.append(obj.to_world_dir((1.0, 0.0)), 0.0)
        ey = np.append(obj.to_world_dir((0.0, 1.0)), 0.0)
        ez = np.array([0.0, 0.0, 1.0])
        c = obj.center
        faces.append((c + hz * ez - h * ex - h * ey, 2 * h * ex, 2 * h * ey))
        for n, t in ((ex, ey), (-ex, ey), (ey, ex), (-ey, ex)):
            mid = c + h * n
            if float(n @ (cam - mid)) > 0.0:
                faces.append((mid - h * t - hz * ez, 2 * h * t, 2 * hz * ez))
        return faces

    def scan(self, name: str) -> PointCloud:
        obj = self.objects[name]
        rng = self.cam_rng
        n = self.camera.points_per_scan
        faces = self.visible_faces(obj)
        areas = np.array([np.linalg.norm(np.cross(u, v)) for _, u, v in faces])
        idx = rng.choice(len(faces), size=n, p=areas / areas.sum())
        uv = rng.random((n, 2))
        origins = np.array([f[0] for f in faces])[idx]
        us = np.array([f[1] for f in faces])[idx]
        vs = np.array([f[2] for f in faces])[idx]
        pts = origins + uv[:, :1] * us + uv[:, 1:] * vs
        return self._finish_cloud(pts, rng)

    def rim_scan(self, name: str, rim_points: int | None = None, interior_points: int | None = None):
        sock = self.objects[name]
        rng = self.cam_rng
        n_rim = self.cfg.rim_points if rim_points is None else rim_points
        n_int = self.cfg.interior_points if interior_points is None else interior_points
        si, so, w = sock.inner_half, sock.outer_half, sock.wall
        # ring as four strips: two full-width (y-bands) and two inner-height (x-bands)
        strips = [(-so, so, si, so), (-so, so, -so, -si), (si, so, -si, si), (-so, -si, -si, si)]
        areas = np.array([(x1 - x0) * (y1 - y0) for x0, x1, y0, y1 in strips])
        k = rng.choice(4, size=n_rim, p=areas / areas.sum())
        uv = rng.random((n_rim, 2))
        s = np.array(strips)[k]
        loc = np.column_stack([s[:, 0] + uv[:, 0] * (s[:, 1] - s[:, 0]),
                               s[:, 2] + uv[:, 1] * (s[:, 3] - s[:, 2])])
        rim = self._local_to_world(sock, loc, sock.top_z)
        iuv = rng.uniform(-si, si, (n_int, 2))
        interior = self._local_to_world(sock, iuv, self.cfg.table_z)
        return self._finish_cloud(rim, rng), self._finish_cloud(interior, rng)

    def _local_to_world(self, obj: RigidObject, loc: np.ndarray, z: float) -> np.ndarray:
        c, s = math.cos(obj.yaw), math.sin(obj.yaw)
        x = obj.center[0] + c * loc[:, 0] - s * loc[:, 1]
        y = obj.center[1] + s * loc[:, 0] + c * loc[:, 1]
        return np.column_stack([x, y, np.full(len(loc), z)])

    # -- serialization ------------------------------------------------
    def snapshot(self) -> dict:
        return {
            "tick": self.tick,
            "time": self.time,
            "ee": [float(v) for v in self.ee],
            "gripper": self.gripper,
            "held": self.held,
            "objects": {
                name: {"kind": o.kind, "center": [float(v) for v in o.center], "yaw": float(o.yaw)}
                for name, o in sorted(self.objects.items())
            },
        }

    def serialize(self) -> str:
        return json.dumps(self.snapshot(), sort_keys=True)
