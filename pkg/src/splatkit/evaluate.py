"""Quantitative evaluation: PSNR/SSIM on held-out views, the every-eighth
test split, and weight-sweep experiments."""

from __future__ import annotations

import hashlib
import math
from dataclasses import dataclass, field

import numpy as np

from .errors import DimensionMismatchError
from .losses import d_ssim

PSNR_CAP = 99.0


def psnr(rendered, reference) -> float:
    """10 log10(1 / MSE) in dB; identical images report the 99 dB cap."""
    a = np.asarray(rendered, dtype=np.float64)
    b = np.asarray(reference, dtype=np.float64)
    if a.shape != b.shape:
        raise DimensionMismatchError(f"psnr: {a.shape} vs {b.shape}")
    mse = float(np.mean((a - b) ** 2))
    if mse == 0.0:
        return PSNR_CAP
    return min(10.0 * math.log10(1.0 / mse), PSNR_CAP)


def ssim(rendered, reference, window=11) -> float:
    """Mean SSIM; by construction exactly 1 - d_ssim of the same pair."""
    value, _ = d_ssim(rendered, reference, window=window)
    return 1.0 - value


@dataclass
class EvalReport:
    view_indices: list
    psnr_values: list
    ssim_values: list
    config_hash: str = ""
    seed: int = 0
    iteration: int = 0

    @property
    def mean_psnr(self) -> float:
        return float(np.mean(self.psnr_values))

    @property
    def mean_ssim(self) -> float:
        return float(np.mean(self.ssim_values))

    def to_table(self) -> str:
        lines = [f"{'view':>6} {'psnr_db':>10} {'ssim':>8}"]
        for v, p, s in zip(self.view_indices, self.psnr_values, self.ssim_values):
            lines.append(f"{v:>6d} {p:>10.3f} {s:>8.4f}")
        lines.append(f"{'mean':>6} {self.mean_psnr:>10.3f} {self.mean_ssim:>8.4f}")
        return "\n".join(lines)

    def kv_lines(self):
        out = []
        for v, p, s in zip(self.view_indices, self.psnr_values, self.ssim_values):
            out.append(f"view_{v}.psnr={p:.9g}")
            out.append(f"view_{v}.ssim={s:.9g}")
        out.append(f"mean.psnr={self.mean_psnr:.9g}")
        out.append(f"mean.ssim={self.mean_ssim:.9g}")
        out.append(f"meta.config_hash={self.config_hash}")
        out.append(f"meta.seed={self.seed}")
        out.append(f"meta.iteration={self.iteration}")
        return out

    def save(self, path):
        from pathlib import Path
        path = Path(path)
        path.write_text("\n".join(self.kv_lines()) + "\n")


def evaluate_cloud(cloud, scene, view_indices, background=(0.0, 0.0, 0.0),
                   window=11, **meta) -> EvalReport:
    from .rasterize import render
    ps, ss = [], []
    for v in view_indices:
        out = render(cloud, scene.cameras[v], background)
        ps.append(psnr(out.color, scene.images[v]))
        ss.append(ssim(out.color, scene.images[v], window=window))
    return EvalReport(list(view_indices), ps, ss, **meta)


def _round_half_down(x: float) -> int:
    return math.ceil(x - 0.5)


def make_llff_split(view_count: int, train_views: int):
    """Every eighth view for testing; evenly spaced training views from the rest.

    Training positions within the remaining-view list follow
    round_half_down(k * (M - 1) / (n - 1)); a single training view takes the
    middle remaining position.
    """
    if view_count < 2:
        raise ValueError("need at least 2 views")
    if train_views < 1:
        raise ValueError("need at least 1 training view")
    test = list(range(0, view_count, 8))
    remaining = [i for i in range(view_count) if i not in set(test)]
    m = len(remaining)
    if train_views > m:
        raise ValueError(f"{train_views} training views requested but only "
                         f"{m} non-test views exist")
    if train_views == 1:
        positions = [_round_half_down((m - 1) / 2)]
    else:
        positions = [_round_half_down(k * (m - 1) / (train_views - 1))
                     for k in range(train_views)]
    train = [remaining[p] for p in positions]
    return train, test


def config_hash(config: dict) -> str:
    text = repr(sorted(config.items()))
    return hashlib.sha256(text.encode()).hexdigest()[:12]


@dataclass
class SweepResult:
    axis: str
    rows: list = field(default_factory=list)   # (value, mean_psnr)

    def data_lines(self):
        return [f"{v:.9g}\t{p:.9g}" for v, p in self.rows]

    def save(self, path):
        from pathlib import Path
        Path(path).write_text(f"# {self.axis}\tmean_psnr_db\n"
                              + "\n".join(self.data_lines()) + "\n")


def sweep(axis: str, values, scene, priors, weights, config,
          initial_cloud) -> SweepResult:
    """Train + evaluate once per weight value, shared seed across rows."""
    from dataclasses import replace
    from .train import train
    if axis not in ("omega_sem", "omega_depth"):
        raise ValueError(f"sweep axis must be omega_sem or omega_depth, got {axis!r}")
    values = list(values)
    if not values:
        raise ValueError("sweep needs at least one value")
    result = SweepResult(axis=axis)
    for value in values:
        w = replace(weights, **{axis: float(value)})
        cloud, _ = train(scene, priors, w, config, initial_cloud)
        report = evaluate_cloud(cloud, scene,
                                scene.test_indices or scene.train_indices,
                                background=config.background)
        result.rows.append((float(value), report.mean_psnr))
    return result
