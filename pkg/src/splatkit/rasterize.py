"""Differentiable forward splatting renderer and its analytic backward pass.

Forward: each Gaussian is pushed through the pinhole camera (EWA-style local
linearization of the projection at the mean), low-pass regularized, sorted by
view depth, and alpha-composited front to back for color, depth, and
accumulated weight. Depth is weight-normalized where enough opacity
accumulated and falls back to the far plane elsewhere.

Backward: a reverse sweep over the same sorted splats replays compositing with
suffix accumulators and chains the per-pixel alpha gradients through the
Gaussian falloff, the 2D covariance, the projection Jacobian (which itself
depends on the mean), and the scale/quaternion/opacity/color activations,
producing gradients with respect to every raw cloud parameter.

Pixel (row i, col j) has continuous image coordinates (j + 0.5, i + 0.5).
Everything here is deterministic: splats are processed in (depth, index)
order with sequential accumulation, so results are bit-reproducible.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .errors import DimensionMismatchError, InvalidInputError
from .scene import (Camera, GaussianCloud, SCALE_FLOOR, activated_scales,
                    quat_normalize, quat_to_rotmat, sigmoid)

# Isotropic low-pass floor added to every projected 2D covariance (px^2).
COV2_FLOOR = 0.3

# Per-pixel alpha handling: clip keeps transmittance alive, skip saves work.
ALPHA_CLIP = 0.99
ALPHA_SKIP = 1.0 / 255.0

# Footprint half-extent in marginal standard deviations. At 3.5σ the Gaussian
# value is exp(-6.125) < 1/255, so box truncation never removes a pixel the
# alpha skip would have kept; an empty box is exactly the cull condition.
FOOTPRINT_SIGMA = 3.5

# Depth is weight-normalized only where this much opacity accumulated.
DEPTH_ACC_MIN = 1e-6


@dataclass(frozen=True)
class Projected2D:
    """A splat after projection: 2D mean/covariance plus its camera depth."""

    mean2: np.ndarray       # (2,) pixels, (x, y)
    cov2: np.ndarray        # (2, 2) pixels^2, low-pass floor included
    view_depth: float       # camera-frame z, world units
    gaussian_index: int


@dataclass
class _SplatRecord:
    """Per retained splat: everything the backward sweep needs."""

    index: int              # index into the cloud
    r0: int                 # bbox top row
    c0: int                 # bbox left col
    alpha: np.ndarray       # (h, w) effective alpha (clipped, skipped -> 0)
    gval: np.ndarray        # (h, w) raw Gaussian falloff exp(-q/2)
    t_before: np.ndarray    # (h, w) transmittance before this splat
    mean2: np.ndarray       # (2,)
    inv_cov2: np.ndarray    # (2, 2)
    M: np.ndarray           # (2, 3) projection Jacobian times camera rotation
    J: np.ndarray           # (2, 3) projection Jacobian at the mean
    t_cam: np.ndarray       # (3,) camera-frame position
    cov3: np.ndarray        # (3, 3)
    rot_mat: np.ndarray     # (3, 3) from the normalized quaternion
    quat_unit: np.ndarray   # (4,)
    quat_norm: float
    s_act: np.ndarray       # (3,) activated (floored) scales
    opacity: float          # activated opacity
    color: np.ndarray       # (3,) activated color


@dataclass
class RenderContext:
    cloud: GaussianCloud
    camera: Camera
    background: np.ndarray
    records: list
    t_final: np.ndarray     # (H, W)
    raw_depth: np.ndarray   # (H, W) unnormalized weighted depth sum
    alpha_acc: np.ndarray   # (H, W) additive weight sum, as the forward used it


@dataclass
class RenderOutput:
    """Rendered color/depth/weight maps plus the saved backward context."""

    color: np.ndarray       # (H, W, 3) in [0, 1]
    depth: np.ndarray       # (H, W) world units
    alpha_acc: np.ndarray   # (H, W) in [0, 1]
    ctx: RenderContext = field(repr=False, default=None)


@dataclass
class ParamGrads:
    """Per-Gaussian gradients mirroring the raw cloud parameters."""

    position: np.ndarray        # (N, 3)
    log_scale: np.ndarray       # (N, 3)
    rotation: np.ndarray        # (N, 4)
    opacity_logit: np.ndarray   # (N,)
    color: np.ndarray           # (N, 3)

    @classmethod
    def zeros(cls, n):
        return cls(np.zeros((n, 3)), np.zeros((n, 3)), np.zeros((n, 4)),
                   np.zeros(n), np.zeros((n, 3)))

    def add(self, other: "ParamGrads"):
        self.position += other.position
        self.log_scale += other.log_scale
        self.rotation += other.rotation
        self.opacity_logit += other.opacity_logit
        self.color += other.color
        return self

    def scale(self, a: float):
        self.position *= a
        self.log_scale *= a
        self.rotation *= a
        self.opacity_logit *= a
        self.color *= a
        return self

    def all_finite(self) -> bool:
        return all(np.all(np.isfinite(v)) for v in
                   (self.position, self.log_scale, self.rotation,
                    self.opacity_logit, self.color))


def _projection_jacobian(fx, fy, t):
    """Jacobian of (fx x/z + cx, fy y/z + cy) at the camera-frame point t."""
    x, y, z = t
    return np.array([[fx / z, 0.0, -fx * x / (z * z)],
                     [0.0, fy / z, -fy * y / (z * z)]])


def project(camera: Camera, position, cov3):
    """Project one Gaussian; returns a Projected2D or None when culled.

    Culled means: camera-frame depth <= near, or the 3.5σ footprint misses
    the image entirely (see module notes; this subsumes the 3σ test).
    """
    position = np.asarray(position, dtype=np.float64).reshape(3)
    cov3 = np.asarray(cov3, dtype=np.float64).reshape(3, 3)
    if not (np.all(np.isfinite(position)) and np.all(np.isfinite(cov3))):
        raise InvalidInputError("non-finite projection input")
    t = camera.to_camera(position)
    if t[2] <= camera.near:
        return None
    J = _projection_jacobian(camera.fx, camera.fy, t)
    M = J @ camera.rotation
    cov2 = M @ cov3 @ M.T + COV2_FLOOR * np.eye(2)
    mean2 = np.array([camera.fx * t[0] / t[2] + camera.cx,
                      camera.fy * t[1] / t[2] + camera.cy])
    if _bbox(mean2, cov2, camera.width, camera.height) is None:
        return None
    return Projected2D(mean2, cov2, float(t[2]), -1)


def _bbox(mean2, cov2, width, height):
    """Integer pixel box covering the footprint, or None if empty."""
    rx = FOOTPRINT_SIGMA * np.sqrt(max(cov2[0, 0], 0.0))
    ry = FOOTPRINT_SIGMA * np.sqrt(max(cov2[1, 1], 0.0))
    c0 = max(0, int(np.ceil(mean2[0] - rx - 0.5)))
    c1 = min(width - 1, int(np.floor(mean2[0] + rx - 0.5)))
    r0 = max(0, int(np.ceil(mean2[1] - ry - 0.5)))
    r1 = min(height - 1, int(np.floor(mean2[1] + ry - 0.5)))
    if c0 > c1 or r0 > r1:
        return None
    return r0, r1, c0, c1


def render(cloud: GaussianCloud, camera: Camera, background=(0.0, 0.0, 0.0)) -> RenderOutput:
    """Forward render: front-to-back alpha compositing of the whole cloud."""
    if len(cloud) == 0:
        raise InvalidInputError("cannot render an empty cloud")
    background = np.asarray(background, dtype=np.float64).reshape(3)
    H, W = camera.height, camera.width
    n = len(cloud)

    s_act = cloud.scales()
    opacity = cloud.opacities()
    color = cloud.rgb()
    quat_unit = quat_normalize(cloud.rotations)
    quat_norms = np.linalg.norm(cloud.rotations, axis=-1)
    rot = quat_to_rotmat(quat_unit)
    cov3 = (rot * (s_act * s_act)[:, None, :]) @ np.swapaxes(rot, -1, -2)

    t_cam = cloud.positions @ camera.rotation.T + camera.translation
    if not np.all(np.isfinite(t_cam)):
        raise InvalidInputError("non-finite positions in cloud")

    in_front = t_cam[:, 2] > camera.near
    order = np.lexsort((np.arange(n), t_cam[:, 2]))
    order = order[in_front[order]]

    color_img = np.zeros((H, W, 3))
    raw_depth = np.zeros((H, W))
    alpha_acc = np.zeros((H, W))
    trans = np.ones((H, W))
    records = []

    eye2 = COV2_FLOOR * np.eye(2)
    for i in order:
        t = t_cam[i]
        J = _projection_jacobian(camera.fx, camera.fy, t)
        M = J @ camera.rotation
        cov2 = M @ cov3[i] @ M.T + eye2
        mean2 = np.array([camera.fx * t[0] / t[2] + camera.cx,
                          camera.fy * t[1] / t[2] + camera.cy])
        box = _bbox(mean2, cov2, W, H)
        if box is None:
            continue
        r0, r1, c0, c1 = box
        det = cov2[0, 0] * cov2[1, 1] - cov2[0, 1] * cov2[1, 0]
        if not det > 0.0:
            raise RuntimeError(
                f"internal error: projected covariance singular (det {det}) "
                f"despite the {COV2_FLOOR} floor")
        inv_cov2 = np.array([[cov2[1, 1], -cov2[0, 1]],
                             [-cov2[1, 0], cov2[0, 0]]]) / det

        dx = np.arange(c0, c1 + 1) + 0.5 - mean2[0]
        dy = np.arange(r0, r1 + 1) + 0.5 - mean2[1]
        q = (inv_cov2[0, 0] * dx * dx)[None, :] \
            + (inv_cov2[1, 1] * dy * dy)[:, None] \
            + (2.0 * inv_cov2[0, 1]) * np.outer(dy, dx)
        gval = np.exp(-0.5 * q)
        alpha = np.minimum(opacity[i] * gval, ALPHA_CLIP)
        alpha[alpha < ALPHA_SKIP] = 0.0

        sl = (slice(r0, r1 + 1), slice(c0, c1 + 1))
        t_before = trans[sl].copy()
        w = t_before * alpha
        color_img[sl] += w[:, :, None] * color[i]
        raw_depth[sl] += w * t[2]
        alpha_acc[sl] += w
        trans[sl] = t_before * (1.0 - alpha)

        records.append(_SplatRecord(
            index=int(i), r0=r0, c0=c0, alpha=alpha, gval=gval,
            t_before=t_before, mean2=mean2, inv_cov2=inv_cov2, M=M, J=J,
            t_cam=t.copy(), cov3=cov3[i], rot_mat=rot[i],
            quat_unit=quat_unit[i], quat_norm=float(quat_norms[i]),
            s_act=s_act[i], opacity=float(opacity[i]), color=color[i]))

    color_img += trans[:, :, None] * background
    covered = alpha_acc > DEPTH_ACC_MIN
    depth = np.full((H, W), camera.far, dtype=np.float64)
    np.divide(raw_depth, alpha_acc, out=depth, where=covered)

    ctx = RenderContext(cloud=cloud, camera=camera, background=background,
                        records=records, t_final=trans, raw_depth=raw_depth,
                        alpha_acc=alpha_acc)
    return RenderOutput(color=color_img, depth=depth, alpha_acc=alpha_acc, ctx=ctx)


# Partial derivatives of the rotation matrix w.r.t. the unit quaternion
# components, as functions of (w, x, y, z).
def _rotmat_quat_partials(qu):
    w, x, y, z = qu
    dw = np.array([[0, -2 * z, 2 * y], [2 * z, 0, -2 * x], [-2 * y, 2 * x, 0]], dtype=np.float64)
    dx = np.array([[0, 2 * y, 2 * z], [2 * y, -4 * x, -2 * w], [2 * z, 2 * w, -4 * x]], dtype=np.float64)
    dy = np.array([[-4 * y, 2 * x, 2 * w], [2 * x, 0, 2 * z], [-2 * w, 2 * z, -4 * y]], dtype=np.float64)
    dz = np.array([[-4 * z, -2 * w, 2 * x], [2 * w, -4 * z, 2 * y], [2 * x, 2 * y, 0]], dtype=np.float64)
    return dw, dx, dy, dz


def render_backward(out_or_ctx, dL_dcolor, dL_ddepth) -> ParamGrads:
    """Pull per-pixel color/depth loss gradients back to cloud parameters.

    `out_or_ctx` is the RenderOutput (or its ctx) produced by render() on the
    same cloud and camera. Splats culled in the forward pass get zero
    gradient; alpha clipping and the 1/255 skip act as hard gates.
    """
    ctx = out_or_ctx.ctx if isinstance(out_or_ctx, RenderOutput) else out_or_ctx
    cloud, camera = ctx.cloud, ctx.camera
    H, W = camera.height, camera.width
    dL_dcolor = np.asarray(dL_dcolor, dtype=np.float64)
    dL_ddepth = np.asarray(dL_ddepth, dtype=np.float64)
    if dL_dcolor.shape != (H, W, 3) or dL_ddepth.shape != (H, W):
        raise DimensionMismatchError(
            f"gradient maps must be {(H, W, 3)} and {(H, W)}, "
            f"got {dL_dcolor.shape} and {dL_ddepth.shape}")
    if not (np.all(np.isfinite(dL_dcolor)) and np.all(np.isfinite(dL_ddepth))):
        raise InvalidInputError("non-finite gradient maps")

    n = len(cloud)
    grads = ParamGrads.zeros(n)

    alpha_acc = ctx.alpha_acc
    covered = alpha_acc > DEPTH_ACC_MIN
    inv_acc = np.zeros((H, W))
    np.divide(1.0, alpha_acc, out=inv_acc, where=covered)
    d_raw = dL_ddepth * inv_acc                          # dL / d(raw depth sum)
    d_acc = -dL_ddepth * ctx.raw_depth * inv_acc ** 2    # dL / d(alpha_acc)
    d_raw[~covered] = 0.0
    d_acc[~covered] = 0.0

    # Background reaches the color through the final transmittance.
    bg_term = (dL_dcolor @ ctx.background) * ctx.t_final

    # Suffix accumulator: sum over deeper splats k of phi_k * w_k, where
    # phi_k = dL_dcolor . c_k + d_acc + d_raw * depth_k.
    suffix = np.zeros((H, W))

    w2c = camera.rotation
    fx, fy = camera.fx, camera.fy

    for rec in reversed(ctx.records):
        h, w_ = rec.alpha.shape
        sl = (slice(rec.r0, rec.r0 + h), slice(rec.c0, rec.c0 + w_))
        gc = dL_dcolor[sl]
        phi = gc @ rec.color + d_acc[sl] + d_raw[sl] * rec.t_cam[2]
        wgt = rec.t_before * rec.alpha

        d_alpha = phi * rec.t_before - (suffix[sl] + bg_term[sl]) / (1.0 - rec.alpha)
        live = rec.alpha > 0.0
        gate = live & (rec.alpha < ALPHA_CLIP)
        d_alpha = np.where(gate, d_alpha, 0.0)
        suffix[sl] += phi * wgt

        i = rec.index
        grads.color[i] += np.einsum("hwc,hw->c", gc, wgt)
        d_depth_i = float(np.sum(d_raw[sl] * wgt))

        d_op = float(np.sum(d_alpha * rec.gval))
        d_g = d_alpha * rec.opacity
        d_q = -0.5 * d_g * rec.gval

        dx = np.arange(rec.c0, rec.c0 + w_) + 0.5 - rec.mean2[0]
        dy = np.arange(rec.r0, rec.r0 + h) + 0.5 - rec.mean2[1]
        sxx = float(np.sum(d_q * (dx * dx)[None, :]))
        syy = float(np.sum(d_q * (dy * dy)[:, None]))
        sxy = float(np.sum(d_q * np.outer(dy, dx)))
        g_sinv = np.array([[sxx, sxy], [sxy, syy]])

        # d q / d mean2 = -2 * inv_cov2 @ delta, summed with d_q weights.
        s_dqdx = float(np.sum(d_q.sum(axis=0) * dx))
        s_dqdy = float(np.sum(d_q.sum(axis=1) * dy))
        a, b, c = rec.inv_cov2[0, 0], rec.inv_cov2[0, 1], rec.inv_cov2[1, 1]
        d_mean2 = -2.0 * np.array([a * s_dqdx + b * s_dqdy,
                                   b * s_dqdx + c * s_dqdy])

        d_cov2 = -rec.inv_cov2 @ g_sinv @ rec.inv_cov2

        # cov2 = M cov3 M^T + floor; both cov3 and M (via J) carry gradient.
        d_cov3 = rec.M.T @ d_cov2 @ rec.M
        d_M = 2.0 * d_cov2 @ rec.M @ rec.cov3
        d_J = d_M @ w2c.T

        # J entries as functions of the camera-frame point t.
        tx, ty, tz = rec.t_cam
        inv_z = 1.0 / tz
        inv_z2 = inv_z * inv_z
        d_t = np.zeros(3)
        d_t[0] += d_J[0, 2] * (-fx * inv_z2)
        d_t[1] += d_J[1, 2] * (-fy * inv_z2)
        d_t[2] += (d_J[0, 0] * (-fx * inv_z2) + d_J[1, 1] * (-fy * inv_z2)
                   + d_J[0, 2] * (2.0 * fx * tx * inv_z2 * inv_z)
                   + d_J[1, 2] * (2.0 * fy * ty * inv_z2 * inv_z))
        # mean2 shares the Jacobian J with the covariance linearization.
        d_t += rec.J.T @ d_mean2
        d_t[2] += d_depth_i

        grads.position[i] += w2c.T @ d_t

        # cov3 = R V R^T with V = diag(s_act^2).
        V = np.diag(rec.s_act ** 2)
        d_R = 2.0 * d_cov3 @ rec.rot_mat @ V
        rtgr = rec.rot_mat.T @ d_cov3 @ rec.rot_mat
        d_s_act = 2.0 * rec.s_act * np.diag(rtgr)
        exp_ls = np.exp(cloud.log_scales[i])
        floor_gate = exp_ls > SCALE_FLOOR
        grads.log_scale[i] += np.where(floor_gate, d_s_act * exp_ls, 0.0)

        partials = _rotmat_quat_partials(rec.quat_unit)
        d_qu = np.array([np.sum(d_R * P) for P in partials])
        qu = rec.quat_unit
        grads.rotation[i] += (d_qu - qu * float(qu @ d_qu)) / rec.quat_norm

        op = rec.opacity
        grads.opacity_logit[i] += d_op * op * (1.0 - op)

    # Color clip: pass-through on [0, 1] inclusive, zero outside.
    inside = (cloud.colors >= 0.0) & (cloud.colors <= 1.0)
    grads.color = np.where(inside, grads.color, 0.0)
    return grads
