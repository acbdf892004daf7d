"""Loss terms for sparse-view training, each with an analytic gradient.

The photometric base objective combines mean absolute color error, structural
dissimilarity, and a global depth-correlation term. On top of that sit the
two regularizers: a squared feature-embedding distance between side-view and
training-view patches, and a tile-normalized Pearson depth correlation loss.

All depth similarity here is deliberately affine-invariant (Pearson on
locally normalized values), which is what makes relative monocular depth
priors usable without scale alignment.
"""

from __future__ import annotations

from dataclasses import dataclass, field, replace

import numpy as np
from scipy.signal import convolve2d, correlate2d

from .errors import (ConfigurationError, DimensionMismatchError,
                     InvalidInputError, NoSignalError)

SSIM_C1 = 0.01 ** 2
SSIM_C2 = 0.03 ** 2
SSIM_SIGMA = 1.5

# Tiles whose values vary less than this are treated as constant and skipped.
CONST_TILE_STD = 1e-6


@dataclass
class LossWeights:
    """Scalar hyperparameters of the combined training objective.

    lambda_l1/gamma_dssim/beta_gdepth weight the photometric base loss;
    omega_0/omega_sem/omega_depth weight the three top-level terms.
    """

    lambda_l1: float = 0.8
    gamma_dssim: float = 0.2
    beta_gdepth: float = 0.05
    omega_0: float = 1.0
    omega_sem: float = 0.6
    omega_depth: float = 0.5
    epsilon: float = 1e-8
    patch_size: int = 126
    ssim_window: int = 11
    # Study switch: per-tile |corr| (minimized at zero correlation) instead of
    # the default 1 - corr (maximized correlation).
    literal_abs_corr: bool = False

    def validate(self):
        for name in ("lambda_l1", "gamma_dssim", "beta_gdepth",
                     "omega_0", "omega_sem", "omega_depth"):
            if getattr(self, name) < 0:
                raise ConfigurationError(f"{name} must be >= 0")
        if self.epsilon <= 0:
            raise ConfigurationError("epsilon must be > 0")
        if self.patch_size < 2:
            raise ConfigurationError("patch_size must be >= 2")
        if self.ssim_window < 3 or self.ssim_window % 2 == 0:
            raise ConfigurationError("ssim_window must be odd and >= 3")
        return self


@dataclass
class SideTerm:
    """Per-side-view loss inputs (prior depth may be absent)."""

    side_embedding: np.ndarray
    train_embedding: np.ndarray
    side_rendered_depth: np.ndarray | None = None
    side_prior_depth: np.ndarray | None = None


@dataclass
class SideGrads:
    embedding: np.ndarray | None
    depth: np.ndarray | None


@dataclass
class LossBreakdown:
    total: float
    l1: float
    dssim: float
    global_depth: float
    semantic: float
    local_depth: float
    grad_color: np.ndarray          # (H, W, 3) w.r.t. the training-view render
    grad_depth: np.ndarray          # (H, W)    w.r.t. the training-view depth
    side_grads: list = field(default_factory=list)
    skipped_tiles: int = 0

    def terms(self):
        return {"l1": self.l1, "dssim": self.dssim,
                "global_depth": self.global_depth,
                "semantic": self.semantic, "local_depth": self.local_depth}


def _check_same_shape(a, b, what):
    if a.shape != b.shape:
        raise DimensionMismatchError(f"{what}: {a.shape} vs {b.shape}")


def l1_color(rendered, reference):
    """Mean absolute difference over all pixels and channels, with gradient."""
    rendered = np.asarray(rendered, dtype=np.float64)
    reference = np.asarray(reference, dtype=np.float64)
    _check_same_shape(rendered, reference, "l1_color")
    diff = rendered - reference
    value = float(np.mean(np.abs(diff)))
    grad = np.sign(diff) / diff.size
    return value, grad


def _gaussian_kernel(window, sigma):
    x = np.arange(window, dtype=np.float64) - window // 2
    g = np.exp(-(x * x) / (2.0 * sigma * sigma))
    g /= g.sum()
    return np.outer(g, g)


def d_ssim(rendered, reference, window=11, sigma=SSIM_SIGMA):
    """Structural dissimilarity 1 - mean SSIM, with gradient w.r.t. rendered.

    SSIM uses a Gaussian window, valid positions only (no padding), constants
    C1 = 0.01^2 and C2 = 0.03^2 on unit dynamic range. Inputs are HxW or
    HxWxC; channels are averaged.
    """
    x = np.asarray(rendered, dtype=np.float64)
    y = np.asarray(reference, dtype=np.float64)
    _check_same_shape(x, y, "d_ssim")
    squeeze = x.ndim == 2
    if squeeze:
        x = x[:, :, None]
        y = y[:, :, None]
    if x.shape[0] < window or x.shape[1] < window:
        raise DimensionMismatchError(
            f"image {x.shape[1]}x{x.shape[0]} smaller than {window}x{window} window")
    K = _gaussian_kernel(window, sigma)
    n_ch = x.shape[2]
    grad = np.zeros_like(x)
    ssim_sum = 0.0
    count = 0
    for ch in range(n_ch):
        xc, yc = x[:, :, ch], y[:, :, ch]
        mu_x = correlate2d(xc, K, mode="valid")
        mu_y = correlate2d(yc, K, mode="valid")
        fxx = correlate2d(xc * xc, K, mode="valid")
        fyy = correlate2d(yc * yc, K, mode="valid")
        fxy = correlate2d(xc * yc, K, mode="valid")
        a1 = 2.0 * mu_x * mu_y + SSIM_C1
        b1 = mu_x * mu_x + mu_y * mu_y + SSIM_C1
        a2 = 2.0 * (fxy - mu_x * mu_y) + SSIM_C2
        b2 = (fxx - mu_x * mu_x) + (fyy - mu_y * mu_y) + SSIM_C2
        s = (a1 * a2) / (b1 * b2)
        ssim_sum += s.sum()
        count += s.size

        # d(1 - mean S)/d(fields); the -1/P factor is applied at the end.
        g_mu = 2.0 * mu_y * s * (1.0 / a1 - 1.0 / a2) + 2.0 * mu_x * s * (1.0 / b2 - 1.0 / b1)
        g_fxx = -s / b2
        g_fxy = 2.0 * s / a2
        scat = (convolve2d(g_mu, K, mode="full")
                + 2.0 * xc * convolve2d(g_fxx, K, mode="full")
                + yc * convolve2d(g_fxy, K, mode="full"))
        grad[:, :, ch] = scat
    value = 1.0 - ssim_sum / count
    grad *= -1.0 / count
    if squeeze:
        grad = grad[:, :, 0]
    return float(value), grad


def pearson(a, b, epsilon=1e-8):
    """Population Pearson correlation with an epsilon^2 variance floor."""
    value, _ = _pearson_value_grad(a, b, epsilon, need_grad=False)
    return value


def _pearson_value_grad(a, b, epsilon, need_grad=True):
    a = np.asarray(a, dtype=np.float64).reshape(-1)
    b = np.asarray(b, dtype=np.float64).reshape(-1)
    if a.shape != b.shape:
        raise DimensionMismatchError(f"pearson: {a.shape} vs {b.shape}")
    if a.size < 2:
        raise InvalidInputError("pearson needs at least 2 samples")
    n = a.size
    ac = a - a.mean()
    bc = b - b.mean()
    cov = float(ac @ bc) / n
    var_a = float(ac @ ac) / n
    var_b = float(bc @ bc) / n
    floor = epsilon * epsilon
    fa = max(var_a, floor)
    fb = max(var_b, floor)
    denom = float(np.sqrt(fa * fb))
    rho = cov / denom
    if not need_grad:
        return rho, None
    # d rho / d b; the variance term vanishes when the floor is active.
    grad = (ac / n) / denom
    if var_b > floor:
        grad = grad - rho * (bc / n) / fb
    return rho, grad


def local_normalize(patch, epsilon=1e-8):
    """Zero-mean unit-ish scale normalization of a depth patch."""
    patch = np.asarray(patch, dtype=np.float64)
    if patch.size == 0:
        raise InvalidInputError("empty patch")
    mu = patch.mean()
    sigma = patch.std()
    return (patch - mu) / (sigma + epsilon)


def _local_normalize_vjp(patch, epsilon, upstream):
    """Gradient of sum(upstream * local_normalize(patch)) w.r.t. patch."""
    patch = np.asarray(patch, dtype=np.float64)
    u = np.asarray(upstream, dtype=np.float64)
    mu = patch.mean()
    sigma = patch.std()
    inv = 1.0 / (sigma + epsilon)
    g = (u - u.mean()) * inv
    if sigma > 0:
        centered = patch - mu
        c = float(np.sum(u * centered))
        g = g - centered * (c / (patch.size * sigma)) * inv * inv
    return g


def _tiles(h, w, patch_size):
    """Non-overlapping tile slices; remainder tiles below 2x2 are dropped."""
    def edges(extent):
        cuts = list(range(0, extent, patch_size)) + [extent]
        return [(cuts[i], cuts[i + 1]) for i in range(len(cuts) - 1)]
    out = []
    for r0, r1 in edges(h):
        if r1 - r0 < 2:
            continue
        for c0, c1 in edges(w):
            if c1 - c0 < 2:
                continue
            out.append((slice(r0, r1), slice(c0, c1)))
    return out


def _tile_corr_loss(prior_tile, rendered_tile, epsilon, literal):
    """(loss, grad w.r.t. rendered tile) for one tile pair."""
    na = local_normalize(prior_tile, epsilon)
    nb = local_normalize(rendered_tile, epsilon)
    rho, g_nb = _pearson_value_grad(na.reshape(-1), nb.reshape(-1), epsilon)
    if literal:
        value = abs(rho)
        sign = 1.0 if rho >= 0 else -1.0
        g_nb = sign * g_nb
    else:
        value = 1.0 - rho
        g_nb = -g_nb
    grad = _local_normalize_vjp(rendered_tile, epsilon,
                                g_nb.reshape(rendered_tile.shape))
    return float(value), grad


def local_depth_loss(rendered_depth, prior_depth, patch_size, epsilon=1e-8,
                     literal_abs_corr=False):
    """Mean per-tile depth-correlation loss over non-constant tiles.

    Both maps are split into patch_size x patch_size tiles (edge remainders
    kept down to 2x2), each tile is locally normalized, and the Pearson
    correlation of the pair is turned into a loss. Tiles where either map is
    constant carry no signal and are skipped; the skipped count is returned.

    Returns (value, grad w.r.t. rendered_depth, skipped_tile_count).
    """
    rd = np.asarray(rendered_depth, dtype=np.float64)
    pd = np.asarray(prior_depth, dtype=np.float64)
    _check_same_shape(rd, pd, "local_depth_loss")
    if not (np.all(np.isfinite(rd)) and np.all(np.isfinite(pd))):
        raise InvalidInputError("depth maps must be finite")
    if patch_size < 2:
        raise InvalidInputError("patch_size must be >= 2")
    tiles = _tiles(rd.shape[0], rd.shape[1], patch_size)
    grad = np.zeros_like(rd)
    values = []
    tile_grads = []
    skipped = 0
    for sl in tiles:
        pt, rt = pd[sl], rd[sl]
        if pt.std() < CONST_TILE_STD or rt.std() < CONST_TILE_STD:
            skipped += 1
            continue
        v, g = _tile_corr_loss(pt, rt, epsilon, literal_abs_corr)
        values.append(v)
        tile_grads.append((sl, g))
    if not values:
        raise NoSignalError("all depth tiles are degenerate")
    k = len(values)
    for sl, g in tile_grads:
        grad[sl] += g / k
    return float(np.mean(values)), grad, skipped


def global_depth_loss(rendered_depth, prior_depth, epsilon=1e-8):
    """Whole-map depth-correlation distance: 1 - corr of normalized maps."""
    rd = np.asarray(rendered_depth, dtype=np.float64)
    pd = np.asarray(prior_depth, dtype=np.float64)
    _check_same_shape(rd, pd, "global_depth_loss")
    if pd.std() < CONST_TILE_STD or rd.std() < CONST_TILE_STD:
        raise NoSignalError("constant depth map carries no correlation signal")
    value, grad = _tile_corr_loss(pd, rd, epsilon, literal=False)
    return value, grad


def semantic_loss(side_embedding, train_embedding):
    """Squared Euclidean embedding distance; gradient w.r.t. the side one."""
    e1 = np.asarray(side_embedding, dtype=np.float64).reshape(-1)
    e2 = np.asarray(train_embedding, dtype=np.float64).reshape(-1)
    if e1.shape != e2.shape:
        raise DimensionMismatchError(f"semantic_loss: {e1.shape} vs {e2.shape}")
    diff = e1 - e2
    return float(diff @ diff), 2.0 * diff


def total_loss(render_train, gt_image, prior_depth_train, side_terms,
               weights: LossWeights) -> LossBreakdown:
    """Assemble the full training objective and route its gradients.

    The photometric base term is evaluated on the training view; the semantic
    term averages over side_terms; the depth term averages the tile loss over
    the training view plus every side view that carries a prior. Zero-weight
    terms are skipped and reported as 0. Gradients come back as maps for the
    training render plus per-side embedding/depth gradients.
    """
    weights.validate()
    gt = np.asarray(gt_image, dtype=np.float64)
    color = render_train.color
    depth = render_train.depth
    _check_same_shape(color, gt, "total_loss color")

    grad_color = np.zeros_like(color)
    grad_depth = np.zeros_like(depth)
    skipped = 0

    l1_v = dssim_v = gdepth_v = 0.0
    if weights.omega_0 > 0:
        if weights.lambda_l1 > 0:
            l1_v, g = l1_color(color, gt)
            grad_color += weights.omega_0 * weights.lambda_l1 * g
        if weights.gamma_dssim > 0:
            dssim_v, g = d_ssim(color, gt, window=weights.ssim_window)
            grad_color += weights.omega_0 * weights.gamma_dssim * g
        if weights.beta_gdepth > 0:
            if prior_depth_train is None:
                raise ConfigurationError(
                    "global depth term has nonzero weight but no training-view depth prior")
            gdepth_v, g = global_depth_loss(depth, prior_depth_train, weights.epsilon)
            grad_depth += weights.omega_0 * weights.beta_gdepth * g

    side_grads = [SideGrads(None, None) for _ in side_terms]

    sem_v = 0.0
    if weights.omega_sem > 0:
        if not side_terms:
            raise ConfigurationError(
                "semantic term has nonzero weight but no side views were provided")
        vals = []
        for term, sg in zip(side_terms, side_grads):
            v, g = semantic_loss(term.side_embedding, term.train_embedding)
            vals.append(v)
            sg.embedding = weights.omega_sem * g / len(side_terms)
        sem_v = float(np.mean(vals))

    ldepth_v = 0.0
    if weights.omega_depth > 0:
        if prior_depth_train is None:
            raise ConfigurationError(
                "local depth term has nonzero weight but no training-view depth prior")
        entries = [("train", depth, prior_depth_train, None)]
        for term, sg in zip(side_terms, side_grads):
            if term.side_prior_depth is not None:
                if term.side_rendered_depth is None:
                    raise ConfigurationError("side term has a prior but no rendered depth")
                entries.append(("side", term.side_rendered_depth,
                                term.side_prior_depth, sg))
        vals = []
        k = len(entries)
        for kind, rdepth, pdepth, sg in entries:
            v, g, sk = local_depth_loss(rdepth, pdepth, weights.patch_size,
                                        weights.epsilon, weights.literal_abs_corr)
            skipped += sk
            vals.append(v)
            if kind == "train":
                grad_depth += weights.omega_depth * g / k
            else:
                sg.depth = weights.omega_depth * g / k
        ldepth_v = float(np.mean(vals))

    base = (weights.lambda_l1 * l1_v + weights.gamma_dssim * dssim_v
            + weights.beta_gdepth * gdepth_v)
    total = (weights.omega_0 * base + weights.omega_sem * sem_v
             + weights.omega_depth * ldepth_v)
    return LossBreakdown(total=float(total), l1=l1_v, dssim=dssim_v,
                         global_depth=gdepth_v, semantic=sem_v,
                         local_depth=ldepth_v, grad_color=grad_color,
                         grad_depth=grad_depth, side_grads=side_grads,
                         skipped_tiles=skipped)


def warmup_weights(weights: LossWeights, iteration: int, warmup_iteration: int):
    """Regularizer weights held at zero before the warmup iteration."""
    if iteration < warmup_iteration:
        return replace(weights, omega_sem=0.0, omega_depth=0.0)
    return weights
