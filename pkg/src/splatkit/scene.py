"""Optimizable Gaussian scene representation: splats, cameras, activations.

The cloud is stored structure-of-arrays (float64) with unconstrained raw
parameters; activations (exp scale, sigmoid opacity, clipped color,
quaternion normalization) are applied at render time so the optimizer works
in a smooth, unconstrained space.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .errors import DegenerateRotationError

# Activated per-axis standard deviations are clamped below this to keep the
# covariance nonsingular.
SCALE_FLOOR = 1e-7

QUAT_NORM_EPS = 1e-12


def sigmoid(x):
    x = np.asarray(x, dtype=np.float64)
    out = np.empty_like(x)
    pos = x >= 0
    out[pos] = 1.0 / (1.0 + np.exp(-x[pos]))
    ex = np.exp(x[~pos])
    out[~pos] = ex / (1.0 + ex)
    return out


def logit(p):
    p = np.asarray(p, dtype=np.float64)
    return np.log(p) - np.log1p(-p)


def quat_normalize(q):
    """Normalize quaternions (..., 4); raises if the norm is ~0."""
    q = np.asarray(q, dtype=np.float64)
    norm = np.linalg.norm(q, axis=-1, keepdims=True)
    if np.any(norm <= QUAT_NORM_EPS):
        raise DegenerateRotationError("quaternion norm below 1e-12")
    return q / norm


def quat_to_rotmat(q):
    """Unit quaternions (..., 4), (w, x, y, z) order, to rotation matrices."""
    q = np.asarray(q, dtype=np.float64)
    w, x, y, z = q[..., 0], q[..., 1], q[..., 2], q[..., 3]
    R = np.empty(q.shape[:-1] + (3, 3), dtype=np.float64)
    R[..., 0, 0] = 1 - 2 * (y * y + z * z)
    R[..., 0, 1] = 2 * (x * y - w * z)
    R[..., 0, 2] = 2 * (x * z + w * y)
    R[..., 1, 0] = 2 * (x * y + w * z)
    R[..., 1, 1] = 1 - 2 * (x * x + z * z)
    R[..., 1, 2] = 2 * (y * z - w * x)
    R[..., 2, 0] = 2 * (x * z - w * y)
    R[..., 2, 1] = 2 * (y * z + w * x)
    R[..., 2, 2] = 1 - 2 * (x * x + y * y)
    return R


def rotmat_to_quat(R):
    """Rotation matrix (3, 3) to quaternion (w, x, y, z), w >= 0."""
    R = np.asarray(R, dtype=np.float64)
    t = np.trace(R)
    if t > 0:
        s = np.sqrt(t + 1.0) * 2
        q = np.array([0.25 * s, (R[2, 1] - R[1, 2]) / s,
                      (R[0, 2] - R[2, 0]) / s, (R[1, 0] - R[0, 1]) / s])
    else:
        i = int(np.argmax(np.diag(R)))
        j, k = (i + 1) % 3, (i + 2) % 3
        s = np.sqrt(max(R[i, i] - R[j, j] - R[k, k] + 1.0, 0.0)) * 2
        q = np.empty(4)
        q[0] = (R[k, j] - R[j, k]) / s
        q[1 + i] = 0.25 * s
        q[1 + j] = (R[j, i] + R[i, j]) / s
        q[1 + k] = (R[k, i] + R[i, k]) / s
    if q[0] < 0:
        q = -q
    return q / np.linalg.norm(q)


def activated_scales(log_scales):
    """exp(log_scale) with the degeneracy floor applied."""
    return np.maximum(np.exp(np.asarray(log_scales, dtype=np.float64)), SCALE_FLOOR)


def activated_colors(raw_colors):
    """Raw colors clipped to [0, 1]."""
    return np.clip(np.asarray(raw_colors, dtype=np.float64), 0.0, 1.0)


def covariance_from_params(log_scale, rotation):
    """3x3 covariance R diag(s^2) R^T from a log-scale triple and quaternion.

    The quaternion may be unnormalized; normalization happens here (its
    Jacobian is part of the rasterizer backward pass). Raises
    DegenerateRotationError for a ~zero-norm quaternion.
    """
    q = quat_normalize(rotation)
    R = quat_to_rotmat(q)
    s = activated_scales(log_scale)
    return (R * (s * s)[..., None, :]) @ np.swapaxes(R, -1, -2)


@dataclass(frozen=True)
class Gaussian3D:
    """A single splat's raw parameters (activations applied at render time)."""

    position: np.ndarray       # (3,) world units
    log_scale: np.ndarray      # (3,) log of per-axis std dev
    rotation: np.ndarray       # (4,) quaternion, (w, x, y, z), not necessarily unit
    opacity_logit: float
    color: np.ndarray          # (3,) raw RGB, clipped to [0, 1] on activation

    def covariance(self):
        return covariance_from_params(self.log_scale, self.rotation)


class GaussianCloud:
    """Ordered, optimizable set of 3D Gaussians (structure of arrays).

    Indices are stable within an optimization step; densify/prune bumps
    `generation` and may reorder/resize.
    """

    def __init__(self, positions, log_scales, rotations, opacity_logits, colors,
                 generation=0):
        self.positions = np.ascontiguousarray(positions, dtype=np.float64).reshape(-1, 3)
        n = self.positions.shape[0]
        self.log_scales = np.ascontiguousarray(log_scales, dtype=np.float64).reshape(n, 3)
        self.rotations = np.ascontiguousarray(rotations, dtype=np.float64).reshape(n, 4)
        self.opacity_logits = np.ascontiguousarray(opacity_logits, dtype=np.float64).reshape(n)
        self.colors = np.ascontiguousarray(colors, dtype=np.float64).reshape(n, 3)
        self.generation = generation

    def __len__(self):
        return self.positions.shape[0]

    def gaussian(self, i) -> Gaussian3D:
        return Gaussian3D(self.positions[i].copy(), self.log_scales[i].copy(),
                          self.rotations[i].copy(), float(self.opacity_logits[i]),
                          self.colors[i].copy())

    def copy(self) -> "GaussianCloud":
        return GaussianCloud(self.positions.copy(), self.log_scales.copy(),
                             self.rotations.copy(), self.opacity_logits.copy(),
                             self.colors.copy(), self.generation)

    @classmethod
    def from_gaussians(cls, gaussians) -> "GaussianCloud":
        gaussians = list(gaussians)
        return cls(
            np.stack([g.position for g in gaussians]),
            np.stack([g.log_scale for g in gaussians]),
            np.stack([g.rotation for g in gaussians]),
            np.array([g.opacity_logit for g in gaussians]),
            np.stack([g.color for g in gaussians]),
        )

    # Render-time activations.
    def scales(self):
        return activated_scales(self.log_scales)

    def opacities(self):
        return sigmoid(self.opacity_logits)

    def rgb(self):
        return activated_colors(self.colors)

    def covariances(self):
        return covariance_from_params(self.log_scales, self.rotations)


@dataclass
class Camera:
    """Pinhole camera with a world-to-camera rigid pose (camera looks down +z)."""

    fx: float
    fy: float
    cx: float
    cy: float
    width: int
    height: int
    rotation: np.ndarray      # (3, 3) world-to-camera
    translation: np.ndarray   # (3,)  world-to-camera
    near: float = 0.01
    far: float = 100.0

    def __post_init__(self):
        self.rotation = np.asarray(self.rotation, dtype=np.float64).reshape(3, 3)
        self.translation = np.asarray(self.translation, dtype=np.float64).reshape(3)
        if not (self.fx > 0 and self.fy > 0):
            raise ValueError("focal lengths must be positive")
        if not (0 < self.near < self.far):
            raise ValueError("require 0 < near < far")
        if not np.allclose(self.rotation.T @ self.rotation, np.eye(3), atol=1e-6):
            raise ValueError("rotation part is not orthonormal")

    @property
    def center(self):
        """Camera center in world coordinates."""
        return -self.rotation.T @ self.translation

    def to_camera(self, points):
        """World points (..., 3) into the camera frame."""
        points = np.asarray(points, dtype=np.float64)
        return points @ self.rotation.T + self.translation

    def same_intrinsics(self, other: "Camera") -> bool:
        return (self.width == other.width and self.height == other.height
                and np.isclose(self.fx, other.fx) and np.isclose(self.fy, other.fy)
                and np.isclose(self.cx, other.cx) and np.isclose(self.cy, other.cy))


@dataclass
class Scene:
    """Cameras, ground-truth images, optional per-view priors, and the split."""

    cameras: list            # list[Camera]
    images: list             # list[(H, W, 3) float arrays in [0, 1]]
    train_indices: list
    test_indices: list
    depth_priors: list = field(default_factory=list)     # list[DepthMap | None]
    feature_priors: dict = field(default_factory=dict)   # (view, crop_id) -> embedding

    def __post_init__(self):
        if not self.depth_priors:
            self.depth_priors = [None] * len(self.cameras)


@dataclass(frozen=True)
class SceneViolation:
    view_index: int          # -1 for scene-level problems
    field: str
    message: str

    def __str__(self):
        return f"view {self.view_index}: {self.field}: {self.message}"


def validate_scene(scene: Scene):
    """Check Scene invariants; returns a list of violations (empty iff valid)."""
    violations = []
    if len(scene.images) != len(scene.cameras):
        violations.append(SceneViolation(-1, "images", "image count differs from camera count"))
    for i, (cam, img) in enumerate(zip(scene.cameras, scene.images)):
        img = np.asarray(img)
        if img.ndim != 3 or img.shape[2] != 3:
            violations.append(SceneViolation(i, "images", f"expected HxWx3, got {img.shape}"))
            continue
        if img.shape[0] != cam.height or img.shape[1] != cam.width:
            violations.append(SceneViolation(
                i, "images",
                f"image {img.shape[1]}x{img.shape[0]} does not match camera "
                f"{cam.width}x{cam.height}"))
    overlap = sorted(set(scene.train_indices) & set(scene.test_indices))
    if overlap:
        violations.append(SceneViolation(
            overlap[0], "train_indices/test_indices",
            f"train and test sets overlap: {overlap}"))
    n = len(scene.cameras)
    for name, idxs in (("train_indices", scene.train_indices),
                       ("test_indices", scene.test_indices)):
        bad = [i for i in idxs if not (0 <= i < n)]
        if bad:
            violations.append(SceneViolation(bad[0], name, f"index out of range: {bad}"))
    if scene.depth_priors and len(scene.depth_priors) != len(scene.cameras):
        violations.append(SceneViolation(-1, "depth_priors",
                                         "prior count differs from camera count"))
    return violations
