"""Depth and feature priors behind one interface, three backends.

file    -- precomputed maps/embeddings on disk (PFM / FEMB, one per view).
oracle  -- synthetic ground truth: depth rendered from a reference cloud and
           a deterministic toy feature extractor. Lets the whole training and
           test pipeline run with no pretrained model anywhere.
service -- a live prior server speaking the SIDP1 stream protocol.

Depth priors are relative (affine-ambiguous); nothing here attempts scale
alignment, the correlation losses absorb it.
"""

from __future__ import annotations

import socket
import struct
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from .errors import (DimensionMismatchError, InvalidInputError,
                     PriorServiceError)
from .scene import Camera, GaussianCloud

PROTOCOL_MAGIC = b"SIDP1"
MSG_DEPTH = 1
MSG_FEATURES = 2
ERROR_TAG = 0xFF

TOY_POOL_LEVELS = (1, 2, 4)
TOY_FEATURE_DIM = 3 * sum(g * g for g in TOY_POOL_LEVELS)


@dataclass
class DepthMap:
    """Relative depth values plus a validity mask."""

    values: np.ndarray           # (H, W) float
    valid: np.ndarray = None     # (H, W) bool

    def __post_init__(self):
        self.values = np.asarray(self.values, dtype=np.float64)
        if self.values.ndim != 2:
            raise InvalidInputError("depth map must be 2-D")
        if self.valid is None:
            self.valid = np.ones(self.values.shape, dtype=bool)
        else:
            self.valid = np.asarray(self.valid, dtype=bool)
            if self.valid.shape != self.values.shape:
                raise DimensionMismatchError("validity mask shape mismatch")
        if not np.all(np.isfinite(self.values[self.valid])):
            raise InvalidInputError("depth map has non-finite valid entries")


@dataclass
class FeatureEmbedding:
    values: np.ndarray           # (dim,) float

    def __post_init__(self):
        self.values = np.asarray(self.values, dtype=np.float64).reshape(-1)
        if not np.all(np.isfinite(self.values)):
            raise InvalidInputError("embedding has non-finite entries")

    @property
    def dim(self):
        return self.values.size


# ---------------------------------------------------------------------------
# Toy feature extractor (the oracle backend's DINO stand-in).
# Linear in the patch: adaptive average-pool pyramid, channel-mean centered.
# ---------------------------------------------------------------------------

def _pool_cells(extent, gridsize):
    bounds = [extent * i // gridsize for i in range(gridsize + 1)]
    return [(bounds[i], bounds[i + 1]) for i in range(gridsize)]


def toy_features(patch) -> np.ndarray:
    """Deterministic pyramid-pooled embedding of an RGB patch (dim 63).

    For each channel, average pools on 1x1 / 2x2 / 4x4 grids are concatenated
    and the channel's patch mean is subtracted, so a constant patch maps to
    the zero vector and the whole map is linear.
    """
    patch = np.asarray(patch, dtype=np.float64)
    if patch.ndim != 3 or patch.shape[2] != 3:
        raise InvalidInputError("patch must be HxWx3")
    h, w = patch.shape[:2]
    if h < 8 or w < 8:
        raise InvalidInputError("patch must be at least 8x8")
    out = []
    for ch in range(3):
        plane = patch[:, :, ch]
        mean = plane.mean()
        for g in TOY_POOL_LEVELS:
            for r0, r1 in _pool_cells(h, g):
                for c0, c1 in _pool_cells(w, g):
                    out.append(plane[r0:r1, c0:c1].mean() - mean)
    return np.array(out)


def toy_features_vjp(patch_shape, upstream) -> np.ndarray:
    """Adjoint of toy_features: embedding gradient back to patch pixels."""
    h, w, _ = patch_shape
    upstream = np.asarray(upstream, dtype=np.float64).reshape(-1)
    if upstream.size != TOY_FEATURE_DIM:
        raise DimensionMismatchError(
            f"expected upstream of dim {TOY_FEATURE_DIM}, got {upstream.size}")
    grad = np.zeros((h, w, 3))
    k = 0
    per_ch = TOY_FEATURE_DIM // 3
    for ch in range(3):
        u_ch = upstream[k:k + per_ch]
        k += per_ch
        j = 0
        for g in TOY_POOL_LEVELS:
            rows = _pool_cells(h, g)
            cols = _pool_cells(w, g)
            for r0, r1 in rows:
                for c0, c1 in cols:
                    cell = (r1 - r0) * (c1 - c0)
                    grad[r0:r1, c0:c1, ch] += u_ch[j] / cell
                    j += 1
        grad[:, :, ch] -= u_ch.sum() / (h * w)
    return grad


# ---------------------------------------------------------------------------
# Backends
# ---------------------------------------------------------------------------

class PriorSource:
    """Common interface: depth for a view, features for an image patch."""

    differentiable_features = False

    def get_depth(self, view: Camera = None, rendered_image=None, stem=None) -> DepthMap:
        raise NotImplementedError

    def get_features(self, patch, view_stem=None, crop_id=None) -> FeatureEmbedding:
        raise NotImplementedError


class FilePriorSource(PriorSource):
    """Reads <stem>.pfm depth maps and <stem>.<crop-id>.femb embeddings."""

    def __init__(self, directory):
        self.directory = Path(directory)

    def depth_path(self, stem):
        return self.directory / f"{stem}.pfm"

    def get_depth(self, view: Camera = None, rendered_image=None, stem=None) -> DepthMap:
        from .io import read_pfm
        if stem is None:
            raise InvalidInputError("file backend requires a view stem")
        path = self.depth_path(stem)
        if not path.exists():
            raise FileNotFoundError(f"no stored depth map: {path}")
        return DepthMap(read_pfm(path))

    def get_features(self, patch=None, view_stem=None, crop_id=None) -> FeatureEmbedding:
        from .io import read_femb
        if view_stem is None or crop_id is None:
            raise InvalidInputError("file backend requires view stem and crop id")
        path = self.directory / f"{view_stem}.{crop_id}.femb"
        if not path.exists():
            raise FileNotFoundError(f"no stored embedding: {path}")
        return FeatureEmbedding(read_femb(path))


class OraclePriorSource(PriorSource):
    """Synthetic ground truth from a reference cloud + the toy extractor."""

    differentiable_features = True

    def __init__(self, reference_cloud: GaussianCloud, background=(0.0, 0.0, 0.0)):
        if reference_cloud is None or len(reference_cloud) == 0:
            raise InvalidInputError("oracle backend requires a ground-truth cloud")
        self.cloud = reference_cloud
        self.background = background

    def get_depth(self, view: Camera = None, rendered_image=None, stem=None) -> DepthMap:
        from .rasterize import render
        if view is None:
            raise InvalidInputError("oracle backend needs a camera to render depth for")
        out = render(self.cloud, view, self.background)
        return DepthMap(out.depth)

    def get_features(self, patch, view_stem=None, crop_id=None) -> FeatureEmbedding:
        return FeatureEmbedding(toy_features(patch))

    def features_vjp(self, patch_shape, upstream):
        return toy_features_vjp(patch_shape, upstream)


# ---------------------------------------------------------------------------
# Wire protocol (little-endian throughout)
# ---------------------------------------------------------------------------

def encode_request(msg_type: int, image) -> bytes:
    """[msg_type u8][height u32][width u32][f32 x HxWx3 row-major RGB]."""
    image = np.asarray(image, dtype=np.float32)
    if image.ndim != 3 or image.shape[2] != 3:
        raise InvalidInputError("request image must be HxWx3")
    h, w = image.shape[:2]
    return struct.pack("<BII", msg_type, h, w) + image.astype("<f4").tobytes()


def encode_depth_response(values) -> bytes:
    values = np.asarray(values, dtype=np.float32)
    h, w = values.shape
    return struct.pack("<II", h, w) + values.astype("<f4").tobytes()


def encode_features_response(values) -> bytes:
    values = np.asarray(values, dtype=np.float32).reshape(-1)
    return struct.pack("<I", values.size) + values.astype("<f4").tobytes()


def encode_error(tag: int, message: str) -> bytes:
    payload = message.encode("utf-8")
    return struct.pack("<BI", tag, len(payload)) + payload


def _recv_exact(sock, n) -> bytes:
    chunks = []
    remaining = n
    while remaining > 0:
        chunk = sock.recv(min(remaining, 1 << 16))
        if not chunk:
            raise PriorServiceError(
                f"connection closed mid-frame ({n - remaining}/{n} bytes read)")
        chunks.append(chunk)
        remaining -= len(chunk)
    return b"".join(chunks)


class ServicePriorSource(PriorSource):
    """Blocking client for the SIDP1 prior service, one request in flight.

    The protocol's success frames carry no tag byte, so the client
    disambiguates error frames by their first byte (the echoed request type
    or 0xFF) and, for depth, by checking the echoed dimensions against the
    request. Heights/dims congruent to a tag byte mod 256 are pathological;
    stick to ordinary image sizes.
    """

    def __init__(self, endpoint, timeout=30.0):
        host, _, port = str(endpoint).rpartition(":")
        if not host:
            raise InvalidInputError(f"endpoint must be host:port, got {endpoint!r}")
        self.address = (host, int(port))
        self.timeout = timeout
        self._sock = None

    def _connect(self):
        if self._sock is not None:
            return
        try:
            sock = socket.create_connection(self.address, timeout=self.timeout)
        except OSError as exc:
            raise PriorServiceError(f"cannot reach prior service at "
                                    f"{self.address[0]}:{self.address[1]}: {exc}") from exc
        try:
            sock.sendall(PROTOCOL_MAGIC)
            echo = _recv_exact(sock, len(PROTOCOL_MAGIC))
        except OSError as exc:
            sock.close()
            raise PriorServiceError(f"handshake failed: {exc}") from exc
        if echo != PROTOCOL_MAGIC:
            sock.close()
            raise PriorServiceError(f"bad handshake echo: {echo!r}")
        self._sock = sock

    def close(self):
        if self._sock is not None:
            self._sock.close()
            self._sock = None

    def _raise_error_frame(self, first_byte: int):
        length = struct.unpack("<I", _recv_exact(self._sock, 4))[0]
        message = _recv_exact(self._sock, length).decode("utf-8", "replace")
        self.close()
        raise PriorServiceError(message)

    def _roundtrip(self, msg_type, image):
        self._connect()
        try:
            self._sock.sendall(encode_request(msg_type, image))
        except OSError as exc:
            self.close()
            raise PriorServiceError(f"send failed: {exc}") from exc

    def get_depth(self, view: Camera = None, rendered_image=None, stem=None) -> DepthMap:
        if rendered_image is None:
            raise InvalidInputError("service backend requires an image to estimate depth from")
        image = np.asarray(rendered_image, dtype=np.float64)
        h_req, w_req = image.shape[:2]
        self._roundtrip(MSG_DEPTH, image)
        try:
            head = _recv_exact(self._sock, 8)
            h, w = struct.unpack("<II", head)
            if (h, w) != (h_req, w_req):
                if head[0] in (MSG_DEPTH, ERROR_TAG):
                    # Reinterpret as an error frame: tag + length already read.
                    length = struct.unpack("<I", head[1:5])[0]
                    rest = _recv_exact(self._sock, max(0, length - 3))
                    message = (head[5:] + rest)[:length].decode("utf-8", "replace")
                    self.close()
                    raise PriorServiceError(message)
                self.close()
                raise PriorServiceError(
                    f"depth response {w}x{h} does not match request {w_req}x{h_req}")
            payload = _recv_exact(self._sock, 4 * h * w)
        except OSError as exc:
            self.close()
            raise PriorServiceError(f"receive failed: {exc}") from exc
        values = np.frombuffer(payload, dtype="<f4").reshape(h, w).astype(np.float64)
        return DepthMap(values)

    def get_features(self, patch, view_stem=None, crop_id=None) -> FeatureEmbedding:
        image = np.asarray(patch, dtype=np.float64)
        self._roundtrip(MSG_FEATURES, image)
        try:
            first = _recv_exact(self._sock, 1)
            if first[0] in (MSG_FEATURES, ERROR_TAG):
                self._raise_error_frame(first[0])
            rest = _recv_exact(self._sock, 3)
            dim = struct.unpack("<I", first + rest)[0]
            if dim == 0 or dim > (1 << 24):
                self.close()
                raise PriorServiceError(f"implausible embedding dimension {dim}")
            payload = _recv_exact(self._sock, 4 * dim)
        except OSError as exc:
            self.close()
            raise PriorServiceError(f"receive failed: {exc}") from exc
        return FeatureEmbedding(np.frombuffer(payload, dtype="<f4").astype(np.float64))
