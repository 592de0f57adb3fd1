"""Trimmed point-to-point ICP."""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np
from scipy.spatial import cKDTree

from .geometry import DegenerateError, RigidTransform3, as_points, kabsch


@dataclass(frozen=True)
class IcpResult:
    transform: RigidTransform3
    iterations: int
    rms: float
    overlap: float
    converged: bool
    flagged: bool


def icp(
    source,
    target,
    max_iters: int = 30,
    trim_fraction: float = 0.10,
    tol: float = 1e-6,
    inlier_dist: float = 0.005,
    flag_rms: float = 0.005,
    min_overlap: float = 0.20,
) -> IcpResult:
    """Align ``source`` onto ``target``; each iteration drops the worst
    ``trim_fraction`` of nearest-neighbour pairs before the Kabsch solve.

    Stops when the trimmed mean residual improves by less than ``tol``.
    ``overlap`` is the fraction of source points whose final nearest
    neighbour lies within ``inlier_dist``; a result is flagged when that
    falls below ``min_overlap`` or the trimmed RMS exceeds ``flag_rms``.
    """
    src = as_points(source)
    dst = as_points(target)
    if len(src) == 0 or len(dst) == 0:
        raise ValueError("empty cloud")
    tree = cKDTree(dst)
    keep_n = max(3, int(math.ceil((1.0 - trim_fraction) * len(src))))
    T = RigidTransform3.identity()
    prev = math.inf
    converged = False
    it = 0
    for it in range(1, max_iters + 1):
        dist, idx = tree.query(T.apply(src))
        keep = np.argsort(dist, kind="stable")[:keep_n]
        mean_res = float(dist[keep].mean())
        if prev - mean_res < tol:
            converged = True
            break
        prev = mean_res
        try:
            T = kabsch(src[keep], dst[idx[keep]])
        except DegenerateError:
            break
    dist, _ = tree.query(T.apply(src))
    trimmed = np.sort(dist)[:keep_n]
    rms = float(np.sqrt(np.mean(trimmed * trimmed)))
    overlap = float(np.mean(dist <= inlier_dist))
    flagged = (not converged) or rms > flag_rms or overlap < min_overlap
    return IcpResult(T, it, rms, overlap, converged, flagged)
