"""Synthetic desk-scale scenes: a random cloud in the unit box, cameras on a
circular arc facing the origin, ground-truth renders written in the same
COLMAP-style layout the loader ingests (plus the exact cloud and depth maps,
which enable the oracle prior backend)."""

from __future__ import annotations

import json
from pathlib import Path

import numpy as np

from .colmap import derive_clip_planes
from .io import save_cloud, save_image, write_pfm
from .rasterize import render
from .scene import Camera, GaussianCloud, logit, rotmat_to_quat


def random_cloud(n, rng) -> GaussianCloud:
    positions = rng.uniform(-0.5, 0.5, (n, 3))
    log_scales = rng.uniform(np.log(0.02), np.log(0.09), (n, 3))
    rotations = rng.normal(size=(n, 4))
    rotations /= np.linalg.norm(rotations, axis=1, keepdims=True)
    opacity = logit(rng.uniform(0.5, 0.95, n))
    colors = rng.uniform(0.05, 0.95, (n, 3))
    return GaussianCloud(positions, log_scales, rotations, opacity, colors)


def look_at_rotation(eye, target=(0.0, 0.0, 0.0), up=(0.0, 1.0, 0.0)):
    """World-to-camera rotation for a camera at eye looking at target."""
    eye = np.asarray(eye, dtype=np.float64)
    forward = np.asarray(target, dtype=np.float64) - eye
    forward /= np.linalg.norm(forward)
    up = np.asarray(up, dtype=np.float64)
    right = np.cross(up, forward)
    right /= np.linalg.norm(right)
    down = np.cross(forward, right)
    return np.stack([right, down, forward])


def arc_poses(n_views, radius=2.2, span_deg=100.0):
    """(rotation, center) pairs on an arc around the origin, mild elevation."""
    poses = []
    angles = np.linspace(-span_deg / 2, span_deg / 2, n_views) * np.pi / 180.0
    for theta in angles:
        eye = np.array([radius * np.sin(theta),
                        0.3 * np.sin(2.0 * theta),
                        -radius * np.cos(theta)])
        poses.append((look_at_rotation(eye), eye))
    return poses


def synth_scene(out_dir, n_gaussians, n_views, width, height, seed,
                sfm_fraction=1.0, sfm_noise=0.0, arc_span_deg=100.0,
                background=(0.0, 0.0, 0.0)):
    """Write a fully self-consistent synthetic scene directory.

    Layout: cameras.txt / images.txt / points3D.txt (COLMAP text), images/
    (8-bit PNG ground truth), depths/ (PFM ground-truth depth, usable as a
    file prior dir), gt_cloud.sidg, meta.json. The SfM point list is a seeded
    subset of the cloud (sfm_fraction), optionally position-jittered
    (sfm_noise, world units), so training starts from sparse noisy
    initialization rather than the answer.
    """
    if n_gaussians < 1 or n_views < 1:
        raise ValueError("counts must be >= 1")
    out = Path(out_dir)
    (out / "images").mkdir(parents=True, exist_ok=True)
    (out / "depths").mkdir(exist_ok=True)

    rng = np.random.default_rng(seed)
    cloud = random_cloud(n_gaussians, rng)

    n_sfm = max(1, int(round(sfm_fraction * n_gaussians)))
    sfm_idx = np.sort(rng.choice(n_gaussians, size=n_sfm, replace=False))
    sfm_points = cloud.positions[sfm_idx]
    if sfm_noise > 0:
        sfm_points = sfm_points + sfm_noise * rng.standard_normal(sfm_points.shape)
    sfm_rgb = np.rint(np.clip(cloud.colors[sfm_idx], 0, 1) * 255).astype(int)

    fx = fy = 1.1 * max(width, height)
    cx, cy = width / 2.0, height / 2.0

    # Poses go through the same quaternion round trip the loader performs so
    # the written directory reloads bit-exactly.
    from .scene import quat_to_rotmat
    cameras, qvecs = [], []
    for rot, eye in arc_poses(n_views, span_deg=arc_span_deg):
        q = rotmat_to_quat(rot)
        rot_rt = quat_to_rotmat(q / np.linalg.norm(q))
        tvec = -rot_rt @ eye
        near, far = derive_clip_planes(sfm_points, rot_rt, tvec)
        cameras.append(Camera(fx, fy, cx, cy, width, height, rot_rt, tvec, near, far))
        qvecs.append(q)

    with open(out / "cameras.txt", "w") as f:
        f.write("# CAMERA_ID MODEL WIDTH HEIGHT PARAMS\n")
        f.write(f"1 PINHOLE {width} {height} {fx:.17g} {fy:.17g} {cx:.17g} {cy:.17g}\n")

    with open(out / "images.txt", "w") as f:
        f.write("# IMAGE_ID QW QX QY QZ TX TY TZ CAMERA_ID NAME\n")
        for i, cam in enumerate(cameras):
            q = qvecs[i]
            t = cam.translation
            name = f"view_{i:03d}.png"
            f.write(f"{i + 1} {q[0]:.17g} {q[1]:.17g} {q[2]:.17g} {q[3]:.17g} "
                    f"{t[0]:.17g} {t[1]:.17g} {t[2]:.17g} 1 {name}\n")
            f.write("\n")

    with open(out / "points3D.txt", "w") as f:
        f.write("# POINT3D_ID X Y Z R G B ERROR TRACK\n")
        for j, (p, rgb) in enumerate(zip(sfm_points, sfm_rgb)):
            f.write(f"{j + 1} {p[0]:.17g} {p[1]:.17g} {p[2]:.17g} "
                    f"{rgb[0]} {rgb[1]} {rgb[2]} 0\n")

    for i, cam in enumerate(cameras):
        out_render = render(cloud, cam, background)
        save_image(out / "images" / f"view_{i:03d}.png", out_render.color)
        write_pfm(out / "depths" / f"view_{i:03d}.pfm", out_render.depth)

    save_cloud(out / "gt_cloud.sidg", cloud)
    meta = {"seed": int(seed), "gaussians": int(n_gaussians),
            "views": int(n_views), "width": int(width), "height": int(height),
            "sfm_fraction": float(sfm_fraction), "sfm_noise": float(sfm_noise),
            "arc_span_deg": float(arc_span_deg)}
    (out / "meta.json").write_text(json.dumps(meta, sort_keys=True, indent=1) + "\n")
    return out
