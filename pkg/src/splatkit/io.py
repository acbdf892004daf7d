"""File formats and run configuration.

PFM depth maps (grayscale "Pf", bottom-up rows, scale sign = endianness),
FEMB embedding files, the SIDG1 cloud checkpoint, 8-bit PNG images, and the
flat key-value run configuration with strict unknown-key rejection.
"""

from __future__ import annotations

import json
import struct
from pathlib import Path

import numpy as np
from PIL import Image

from .errors import ConfigurationError, FormatError
from .scene import GaussianCloud

CLOUD_MAGIC = b"SIDG1"
FEMB_MAGIC = b"FEMB"
FLOATS_PER_GAUSSIAN = 14  # position 3 + log_scale 3 + rotation 4 + opacity 1 + color 3


# ---------------------------------------------------------------------------
# PFM
# ---------------------------------------------------------------------------

def write_pfm(path, values):
    """Grayscale PFM, little-endian (scale -1.0), rows bottom to top."""
    values = np.asarray(values, dtype=np.float32)
    if values.ndim != 2:
        raise FormatError("PFM writer takes a 2-D map")
    if not np.all(np.isfinite(values)):
        raise FormatError("PFM writer requires finite values")
    h, w = values.shape
    with open(path, "wb") as f:
        f.write(b"Pf\n")
        f.write(f"{w} {h}\n".encode("ascii"))
        f.write(b"-1.0\n")
        f.write(values[::-1].astype("<f4").tobytes())


def _read_pfm_token(f):
    token = b""
    while True:
        c = f.read(1)
        if not c:
            raise FormatError("unexpected end of PFM header")
        if c.isspace():
            if token:
                return token
            continue
        token += c


def read_pfm(path):
    """Reads a grayscale PFM; big-endian payloads are byte-swapped."""
    with open(path, "rb") as f:
        magic = _read_pfm_token(f)
        if magic != b"Pf":
            raise FormatError(f"not a grayscale PFM (header {magic!r})")
        w = int(_read_pfm_token(f))
        h = int(_read_pfm_token(f))
        scale = float(_read_pfm_token(f))
        payload = f.read()
    expected = 4 * w * h
    if len(payload) != expected:
        raise FormatError(f"PFM payload is {len(payload)} bytes, expected {expected}")
    dtype = "<f4" if scale < 0 else ">f4"
    values = np.frombuffer(payload, dtype=dtype).reshape(h, w)
    return values[::-1].astype(np.float64)


# ---------------------------------------------------------------------------
# FEMB
# ---------------------------------------------------------------------------

def write_femb(path, values):
    values = np.asarray(values, dtype=np.float32).reshape(-1)
    with open(path, "wb") as f:
        f.write(FEMB_MAGIC)
        f.write(struct.pack("<I", values.size))
        f.write(values.astype("<f4").tobytes())


def read_femb(path):
    with open(path, "rb") as f:
        magic = f.read(4)
        if magic != FEMB_MAGIC:
            raise FormatError(f"not an embedding file (magic {magic!r})")
        (dim,) = struct.unpack("<I", f.read(4))
        payload = f.read()
    if len(payload) != 4 * dim:
        raise FormatError(f"embedding payload is {len(payload)} bytes, expected {4 * dim}")
    return np.frombuffer(payload, dtype="<f4").astype(np.float64)


# ---------------------------------------------------------------------------
# Cloud checkpoints
# ---------------------------------------------------------------------------

def save_cloud(path, cloud: GaussianCloud):
    n = len(cloud)
    data = np.empty((n, FLOATS_PER_GAUSSIAN), dtype="<f4")
    data[:, 0:3] = cloud.positions
    data[:, 3:6] = cloud.log_scales
    data[:, 6:10] = cloud.rotations
    data[:, 10] = cloud.opacity_logits
    data[:, 11:14] = cloud.colors
    with open(path, "wb") as f:
        f.write(CLOUD_MAGIC)
        f.write(struct.pack("<I", n))
        f.write(data.tobytes())


def load_cloud(path) -> GaussianCloud:
    with open(path, "rb") as f:
        magic = f.read(5)
        if magic != CLOUD_MAGIC:
            raise FormatError(f"not a cloud checkpoint (magic {magic!r})")
        (n,) = struct.unpack("<I", f.read(4))
        payload = f.read()
    expected = 4 * n * FLOATS_PER_GAUSSIAN
    if len(payload) != expected:
        raise FormatError(f"checkpoint payload is {len(payload)} bytes, expected {expected}")
    data = np.frombuffer(payload, dtype="<f4").reshape(n, FLOATS_PER_GAUSSIAN).astype(np.float64)
    return GaussianCloud(data[:, 0:3], data[:, 3:6], data[:, 6:10],
                         data[:, 10], data[:, 11:14])


# ---------------------------------------------------------------------------
# Images (8-bit PNG, normalized to [0, 1] in memory)
# ---------------------------------------------------------------------------

def save_image(path, image):
    image = np.asarray(image, dtype=np.float64)
    quant = np.rint(np.clip(image, 0.0, 1.0) * 255.0).astype(np.uint8)
    Image.fromarray(quant, mode="RGB").save(path)


def load_image(path):
    with Image.open(path) as img:
        arr = np.asarray(img.convert("RGB"), dtype=np.float64)
    return arr / 255.0


def quantize_image(image):
    """The exact 8-bit round trip an image goes through on save + load."""
    return np.rint(np.clip(np.asarray(image, dtype=np.float64), 0.0, 1.0) * 255.0) / 255.0


# ---------------------------------------------------------------------------
# Run configuration
# ---------------------------------------------------------------------------

_WEIGHT_KEYS = {"lambda_l1", "gamma_dssim", "beta_gdepth",
                "omega_0", "omega_sem", "omega_depth"}

CONFIG_DEFAULTS = {
    # loss weights
    "lambda_l1": 0.8, "gamma_dssim": 0.2, "beta_gdepth": 0.05,
    "omega_0": 1.0, "omega_sem": 0.6, "omega_depth": 0.5,
    "epsilon": 1e-8, "patch_size": 126, "ssim_window": 11,
    "literal_abs_corr": False,
    # training
    "iterations": 12000,
    "lr_position": 1.6e-4, "lr_position_final": 1.6e-6,
    "lr_log_scale": 5e-3, "lr_rotation": 1e-3,
    "lr_opacity": 5e-2, "lr_color": 2.5e-3,
    "adam_beta1": 0.9, "adam_beta2": 0.999, "adam_eps": 1e-8,
    "warmup_iteration": 500,
    "densify_interval": 500, "densify_grad_threshold": 0.05,
    "densify_split_scale": 0.05, "prune_opacity": 0.005,
    "side_views_per_iter": 1, "side_t_min": 0.2, "side_t_max": 0.8,
    "side_jitter": 0.05, "semantic_crop_size": 32,
    "seed": 0, "deterministic": True,
    "eval_interval": 0, "checkpoint_interval": 0,
    # paths / backends
    "scene_dir": "", "prior_dir": "", "prior_endpoint": "",
    "prior_backend": "oracle", "out_dir": "",
    "background": [0.0, 0.0, 0.0],
}


def load_run_config(path=None, overrides=None):
    """Flat config document: defaults <- file <- overrides, strictly checked."""
    config = dict(CONFIG_DEFAULTS)
    sources = []
    if path is not None:
        raw = json.loads(Path(path).read_text())
        if not isinstance(raw, dict):
            raise ConfigurationError("config file must hold a flat JSON object")
        sources.append(raw)
    if overrides:
        sources.append(dict(overrides))
    for src in sources:
        for key, value in src.items():
            if key not in CONFIG_DEFAULTS:
                raise ConfigurationError(f"unknown config key: {key!r}")
            default = CONFIG_DEFAULTS[key]
            if isinstance(default, bool):
                if isinstance(value, str):
                    value = value.lower() in ("1", "true", "yes", "on")
                value = bool(value)
            elif isinstance(default, int) and not isinstance(default, bool):
                value = int(value)
            elif isinstance(default, float):
                value = float(value)
            elif isinstance(default, list):
                if isinstance(value, str):
                    value = [float(v) for v in value.split(",")]
                value = [float(v) for v in value]
            config[key] = value
    validate_run_config(config)
    return config


def validate_run_config(config):
    for key in _WEIGHT_KEYS:
        if config[key] < 0:
            raise ConfigurationError(f"{key} must be >= 0, got {config[key]}")
    if config["epsilon"] <= 0:
        raise ConfigurationError("epsilon must be > 0")
    if config["patch_size"] < 2:
        raise ConfigurationError("patch_size must be >= 2")
    if config["iterations"] <= 0:
        raise ConfigurationError("iterations must be > 0")
    for key in ("lr_position", "lr_position_final", "lr_log_scale",
                "lr_rotation", "lr_opacity", "lr_color"):
        if config[key] < 0:
            raise ConfigurationError(f"{key} must be >= 0")
    for key in ("adam_beta1", "adam_beta2"):
        if not 0.0 <= config[key] < 1.0:
            raise ConfigurationError(f"{key} must be in [0, 1)")
    if config["prior_backend"] not in ("file", "oracle", "service"):
        raise ConfigurationError(f"unknown prior backend {config['prior_backend']!r}")
    if len(config["background"]) != 3:
        raise ConfigurationError("background must have 3 components")
    if config["scene_dir"] and not Path(config["scene_dir"]).is_dir():
        raise ConfigurationError(f"scene_dir does not exist: {config['scene_dir']}")
    if config["prior_dir"] and not Path(config["prior_dir"]).is_dir():
        raise ConfigurationError(f"prior_dir does not exist: {config['prior_dir']}")
    return config
