"""COLMAP text-format ingestion and Gaussian initialization from SfM points."""

from __future__ import annotations

from dataclasses import dataclass
from pathlib import Path

import numpy as np
from scipy.spatial import cKDTree

from .errors import FormatError
from .scene import Camera, GaussianCloud, Scene, logit, quat_to_rotmat

INIT_OPACITY = 0.1
NEIGHBORS_FOR_SCALE = 3
MIN_NEIGHBOR_DIST = 1e-6


@dataclass
class SfMBundle:
    """Parsed COLMAP text output: intrinsics, poses, sparse points."""

    cameras: dict        # camera_id -> dict(model, width, height, params)
    images: list         # dicts: name, camera_id, qvec, tvec (sorted by name)
    points: np.ndarray   # (N, 3)
    colors: np.ndarray   # (N, 3) in [0, 1]


def _data_lines(path):
    for lineno, raw in enumerate(Path(path).read_text().splitlines(), start=1):
        line = raw.strip()
        if line and not line.startswith("#"):
            yield lineno, line


def _parse_cameras(path):
    cameras = {}
    for lineno, line in _data_lines(path):
        parts = line.split()
        try:
            cam_id = int(parts[0])
            model = parts[1]
            width, height = int(parts[2]), int(parts[3])
            params = [float(p) for p in parts[4:]]
        except (IndexError, ValueError) as exc:
            raise FormatError(f"{path}:{lineno}: malformed camera line") from exc
        if model == "PINHOLE":
            if len(params) != 4:
                raise FormatError(f"{path}:{lineno}: PINHOLE needs 4 params")
            fx, fy, cx, cy = params
        elif model == "SIMPLE_PINHOLE":
            if len(params) != 3:
                raise FormatError(f"{path}:{lineno}: SIMPLE_PINHOLE needs 3 params")
            f, cx, cy = params
            fx = fy = f
        else:
            raise FormatError(f"{path}:{lineno}: unsupported camera model {model!r} "
                              "(PINHOLE and SIMPLE_PINHOLE only)")
        cameras[cam_id] = {"width": width, "height": height,
                           "fx": fx, "fy": fy, "cx": cx, "cy": cy}
    if not cameras:
        raise FormatError(f"{path}: no cameras")
    return cameras


def _parse_images(path):
    # Two physical lines per image: the pose record, then its (possibly
    # empty) 2D-point line, which we skip.
    images = []
    lines = Path(path).read_text().splitlines()
    i = 0
    while i < len(lines):
        line = lines[i].strip()
        lineno = i + 1
        i += 1
        if not line or line.startswith("#"):
            continue
        parts = line.split()
        try:
            qvec = np.array([float(v) for v in parts[1:5]])
            tvec = np.array([float(v) for v in parts[5:8]])
            camera_id = int(parts[8])
            name = parts[9]
        except (IndexError, ValueError) as exc:
            raise FormatError(f"{path}:{lineno}: malformed image line") from exc
        if qvec.size != 4 or tvec.size != 3:
            raise FormatError(f"{path}:{lineno}: malformed image line")
        images.append({"name": name, "camera_id": camera_id,
                       "qvec": qvec, "tvec": tvec})
        i += 1  # consume the 2D-point line
    if not images:
        raise FormatError(f"{path}: no images")
    return sorted(images, key=lambda rec: rec["name"])


def _parse_points(path):
    points, colors = [], []
    for lineno, line in _data_lines(path):
        parts = line.split()
        try:
            xyz = [float(v) for v in parts[1:4]]
            rgb = [int(v) for v in parts[4:7]]
        except (IndexError, ValueError) as exc:
            raise FormatError(f"{path}:{lineno}: malformed point line") from exc
        if not all(np.isfinite(xyz)):
            raise FormatError(f"{path}:{lineno}: non-finite point position")
        points.append(xyz)
        colors.append(rgb)
    if not points:
        raise FormatError(f"{path}: empty point set")
    return np.asarray(points, dtype=np.float64), np.asarray(colors, dtype=np.float64) / 255.0


def read_sfm_bundle(directory) -> SfMBundle:
    directory = Path(directory)
    base = directory
    if not (base / "cameras.txt").exists() and (directory / "sparse" / "0" / "cameras.txt").exists():
        base = directory / "sparse" / "0"
    cameras = _parse_cameras(base / "cameras.txt")
    images = _parse_images(base / "images.txt")
    points, colors = _parse_points(base / "points3D.txt")
    for rec in images:
        if rec["camera_id"] not in cameras:
            raise FormatError(f"image {rec['name']} references unknown camera "
                              f"{rec['camera_id']}")
    return SfMBundle(cameras, images, points, colors)


def derive_clip_planes(points, rotation, translation):
    """Near/far planes from the point depths seen by a pose (deterministic)."""
    z = (points @ rotation.T + translation)[:, 2]
    z = z[z > 0]
    if z.size == 0:
        return 0.01, 100.0
    near = max(1e-4, 0.05 * float(z.min()))
    far = 5.0 * float(z.max())
    return near, max(far, near * 10.0)


def init_cloud_from_points(points, colors) -> GaussianCloud:
    """One isotropic Gaussian per SfM point.

    Scale is the log of the mean distance to the 3 nearest other points,
    opacity starts at 0.1, rotation at identity.
    """
    n = points.shape[0]
    k = min(NEIGHBORS_FOR_SCALE, n - 1)
    if k >= 1:
        tree = cKDTree(points)
        dists, _ = tree.query(points, k=k + 1)
        mean_dist = np.maximum(dists[:, 1:].mean(axis=1), MIN_NEIGHBOR_DIST)
    else:
        mean_dist = np.full(n, 0.1)
    log_scales = np.repeat(np.log(mean_dist)[:, None], 3, axis=1)
    rotations = np.zeros((n, 4))
    rotations[:, 0] = 1.0
    opacity = np.full(n, float(logit(INIT_OPACITY)))
    return GaussianCloud(points.copy(), log_scales, rotations, opacity,
                         np.clip(colors, 0.0, 1.0))


def load_colmap_scene(directory, train_views=None):
    """Scene + initial cloud from a COLMAP-style text directory.

    Views are ordered by image name. When train_views is given, the
    every-eighth test split is applied; otherwise all views are training.
    """
    from .evaluate import make_llff_split
    from .io import load_image

    directory = Path(directory)
    bundle = read_sfm_bundle(directory)
    image_dir = directory / "images"

    cameras, images, stems = [], [], []
    for rec in bundle.images:
        intr = bundle.cameras[rec["camera_id"]]
        rot = quat_to_rotmat(rec["qvec"] / np.linalg.norm(rec["qvec"]))
        near, far = derive_clip_planes(bundle.points, rot, rec["tvec"])
        cameras.append(Camera(intr["fx"], intr["fy"], intr["cx"], intr["cy"],
                              intr["width"], intr["height"], rot, rec["tvec"],
                              near, far))
        path = image_dir / rec["name"]
        if not path.exists():
            raise FormatError(f"missing image file: {path}")
        images.append(load_image(path))
        stems.append(Path(rec["name"]).stem)

    if train_views is not None:
        train, test = make_llff_split(len(cameras), train_views)
    else:
        train, test = list(range(len(cameras))), []

    scene = Scene(cameras=cameras, images=images,
                  train_indices=train, test_indices=test)
    scene.image_stems = stems
    cloud = init_cloud_from_points(bundle.points, bundle.colors)
    return scene, cloud
