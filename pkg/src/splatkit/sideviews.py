"""Synthesized "side view" camera poses between pairs of training cameras.

Side views are never supervised by ground-truth pixels; they exist so the
semantic and local depth regularizers can look at the scene from unseen
directions. A pose is drawn by interpolating two parent cameras: linear on
centers, spherical-linear on rotations, plus a small seeded jitter of the
center perpendicular to nothing in particular (random unit direction).
"""

from __future__ import annotations

import warnings
from dataclasses import dataclass

import numpy as np

from .scene import Camera, quat_to_rotmat, rotmat_to_quat


@dataclass(frozen=True)
class SideViewSpec:
    parent_a: int
    parent_b: int
    t: float
    jitter: float = 0.05     # fraction of the parent baseline
    seed: int = 0

    def __post_init__(self):
        if self.parent_a == self.parent_b:
            raise ValueError("parent views must be distinct")
        if not 0.0 <= self.t <= 1.0:
            raise ValueError("interpolation parameter must be in [0, 1]")
        if self.jitter < 0:
            raise ValueError("jitter scale must be >= 0")


def slerp(q0, q1, t):
    """Spherical linear interpolation of unit quaternions (shortest arc)."""
    q0 = np.asarray(q0, dtype=np.float64)
    q1 = np.asarray(q1, dtype=np.float64)
    q0 = q0 / np.linalg.norm(q0)
    q1 = q1 / np.linalg.norm(q1)
    dot = float(q0 @ q1)
    if dot < 0.0:
        q1 = -q1
        dot = -dot
    dot = min(dot, 1.0)
    if dot > 1.0 - 1e-12:
        out = (1.0 - t) * q0 + t * q1       # arcs this short are linear
        return out / np.linalg.norm(out)
    theta = np.arccos(dot)
    s = np.sin(theta)
    return (np.sin((1.0 - t) * theta) / s) * q0 + (np.sin(t * theta) / s) * q1


def sample_side_pose(cam_a: Camera, cam_b: Camera, spec: SideViewSpec) -> Camera:
    """Interpolated camera between cam_a and cam_b (intrinsics from cam_a)."""
    ca, cb = cam_a.center, cam_b.center
    baseline = float(np.linalg.norm(cb - ca))
    if baseline < 1e-12 and spec.jitter == 0.0:
        warnings.warn("degenerate camera pair (zero baseline); returning the first pose")
        return Camera(cam_a.fx, cam_a.fy, cam_a.cx, cam_a.cy,
                      cam_a.width, cam_a.height,
                      cam_a.rotation.copy(), cam_a.translation.copy(),
                      cam_a.near, cam_a.far)

    center = (1.0 - spec.t) * ca + spec.t * cb
    if spec.jitter > 0.0:
        rng = np.random.default_rng(spec.seed)
        direction = rng.standard_normal(3)
        direction /= np.linalg.norm(direction)
        center = center + spec.jitter * baseline * direction

    qa = rotmat_to_quat(cam_a.rotation)
    qb = rotmat_to_quat(cam_b.rotation)
    rot = quat_to_rotmat(slerp(qa, qb, spec.t))
    translation = -rot @ center
    return Camera(cam_a.fx, cam_a.fy, cam_a.cx, cam_a.cy,
                  cam_a.width, cam_a.height, rot, translation,
                  cam_a.near, cam_a.far)


def nearest_training_pair(cameras, train_indices):
    """The two training cameras whose centers are closest to each other."""
    idxs = list(train_indices)
    if len(idxs) < 2:
        raise ValueError("need at least two training views to form a pair")
    centers = {i: cameras[i].center for i in idxs}
    best = None
    for a in range(len(idxs)):
        for b in range(a + 1, len(idxs)):
            d = float(np.linalg.norm(centers[idxs[a]] - centers[idxs[b]]))
            if best is None or d < best[0]:
                best = (d, idxs[a], idxs[b])
    return best[1], best[2]


def nearest_training_view(cameras, train_indices, camera: Camera) -> int:
    """Training view whose center is closest to the given camera's."""
    c = camera.center
    idxs = list(train_indices)
    dists = [float(np.linalg.norm(cameras[i].center - c)) for i in idxs]
    return idxs[int(np.argmin(dists))]
