"""Point-set statistics and rigid transforms used across the kit.

Points are ``(n, 3)`` float arrays in the world frame; single vectors are
``(3,)`` arrays.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np


class DegenerateError(ValueError):
    """Raised when a point configuration cannot determine the requested quantity."""


@dataclass(frozen=True)
class RigidTransform3:
    rotation: np.ndarray
    translation: np.ndarray

    @classmethod
    def identity(cls) -> "RigidTransform3":
        return cls(np.eye(3), np.zeros(3))

    def apply(self, points: np.ndarray) -> np.ndarray:
        points = np.asarray(points, dtype=float)
        return points @ self.rotation.T + self.translation

    def compose(self, other: "RigidTransform3") -> "RigidTransform3":
        """Return ``self`` applied after ``other``."""
        return RigidTransform3(
            self.rotation @ other.rotation,
            self.rotation @ other.translation + self.translation,
        )

    def rotation_angle(self) -> float:
        """Geodesic angle of the rotation part, radians."""
        c = (np.trace(self.rotation) - 1.0) / 2.0
        return math.acos(min(1.0, max(-1.0, c)))


@dataclass(frozen=True)
class Aabb3:
    lo: np.ndarray
    hi: np.ndarray

    @property
    def center(self) -> np.ndarray:
        return 0.5 * (self.lo + self.hi)

    @property
    def extent(self) -> np.ndarray:
        return self.hi - self.lo


def as_points(points) -> np.ndarray:
    arr = np.asarray(points, dtype=float)
    if arr.size == 0:
        return arr.reshape(0, 3)
    return arr.reshape(-1, 3)


def percentile(values, q: float) -> float:
    """Linearly interpolated ``q``-quantile, ``q`` a fraction in [0, 1]."""
    vals = np.asarray(values, dtype=float).ravel()
    if vals.size == 0:
        raise ValueError("empty sample")
    if not 0.0 <= q <= 1.0:
        raise ValueError(f"quantile fraction out of range: {q}")
    return float(np.quantile(vals, q, method="linear"))


def median(values) -> float:
    # even counts average the two central order statistics
    return percentile(values, 0.5)


def aabb_of(points) -> Aabb3:
    pts = as_points(points)
    if len(pts) == 0:
        raise ValueError("empty sample")
    return Aabb3(pts.min(axis=0), pts.max(axis=0))


def eig2_max(sxx: float, sxy: float, syy: float) -> float:
    """Largest eigenvalue of the symmetric 2x2 matrix [[sxx, sxy], [sxy, syy]]."""
    half_tr = 0.5 * (sxx + syy)
    disc = math.sqrt(max(0.0, 0.25 * (sxx - syy) ** 2 + sxy * sxy))
    return half_tr + disc


def planar_dispersion(points) -> float:
    """Square root of the top eigenvalue of the xy sample covariance (ddof=1)."""
    pts = as_points(points)
    n = len(pts)
    if n < 2:
        raise ValueError("insufficient points")
    # shift by a sample point first: exact zeros for coincident xy, better conditioning
    xy = pts[:, :2] - pts[0, :2]
    xy = xy - xy.mean(axis=0)
    sxx = float(xy[:, 0] @ xy[:, 0]) / (n - 1)
    syy = float(xy[:, 1] @ xy[:, 1]) / (n - 1)
    sxy = float(xy[:, 0] @ xy[:, 1]) / (n - 1)
    return math.sqrt(max(0.0, eig2_max(sxx, sxy, syy)))


def kabsch(source, target) -> RigidTransform3:
    """Least-squares rigid transform taking paired ``source`` points onto ``target``."""
    src = as_points(source)
    dst = as_points(target)
    if src.shape != dst.shape:
        raise ValueError(f"mismatched correspondence sets: {src.shape} vs {dst.shape}")
    if len(src) < 3:
        raise DegenerateError("degenerate correspondence set")
    mu_s = src.mean(axis=0)
    mu_d = dst.mean(axis=0)
    h = (src - mu_s).T @ (dst - mu_d)
    u, s, vt = np.linalg.svd(h)
    # rank < 2 leaves the rotation about the common line undetermined
    if s[0] <= 0.0 or s[1] <= 1e-12 * s[0]:
        raise DegenerateError("degenerate correspondence set")
    d = np.sign(np.linalg.det(vt.T @ u.T))
    if d == 0.0:
        d = 1.0
    rot = vt.T @ np.diag([1.0, 1.0, d]) @ u.T
    return RigidTransform3(rot, mu_d - rot @ mu_s)


def rms_residual(transform: RigidTransform3, source, target) -> float:
    diff = transform.apply(as_points(source)) - as_points(target)
    return float(np.sqrt(np.mean(np.sum(diff * diff, axis=1))))


def rotation_about(axis, angle: float) -> np.ndarray:
    """Rodrigues rotation matrix."""
    k = np.asarray(axis, dtype=float)
    k = k / np.linalg.norm(k)
    kx = np.array([[0.0, -k[2], k[1]], [k[2], 0.0, -k[0]], [-k[1], k[0], 0.0]])
    return np.eye(3) + math.sin(angle) * kx + (1.0 - math.cos(angle)) * (kx @ kx)


def yaw_matrix(theta: float) -> np.ndarray:
    return rotation_about((0.0, 0.0, 1.0), theta)
