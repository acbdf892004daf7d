"""Per-scene optimization: Adam over all Gaussian parameters, loss
scheduling with a regularizer warmup, and simple clone/split/prune
densification.

One step renders the current training view (round-robin), draws the
configured number of side views, assembles the full objective, pulls its
gradients through the rasterizer, and applies one Adam update per parameter
group. All randomness flows from a single seeded generator owned by the
train state, so a fixed seed reproduces runs bit for bit.
"""

from __future__ import annotations

import json
import math
from dataclasses import dataclass, field as dc_field
from pathlib import Path

import numpy as np

from .errors import ConfigurationError
from .losses import LossBreakdown, LossWeights, SideTerm, total_loss, warmup_weights
from .priors import PriorSource
from .rasterize import ParamGrads, render, render_backward
from .scene import GaussianCloud, Scene
from .sideviews import SideViewSpec, nearest_training_view, sample_side_pose

PARAM_GROUPS = ("position", "log_scale", "rotation", "opacity_logit", "color")

SPLIT_SCALE_SHRINK = 1.6


@dataclass
class TrainConfig:
    iterations: int = 12000
    lr_position: float = 1.6e-4
    lr_position_final: float = 1.6e-6
    lr_log_scale: float = 5e-3
    lr_rotation: float = 1e-3
    lr_opacity: float = 5e-2
    lr_color: float = 2.5e-3
    adam_beta1: float = 0.9
    adam_beta2: float = 0.999
    adam_eps: float = 1e-8
    warmup_iteration: int = 500
    densify_interval: int = 500
    densify_grad_threshold: float = 0.05
    densify_split_scale: float = 0.05
    prune_opacity: float = 0.005
    side_views_per_iter: int = 1
    side_t_min: float = 0.2
    side_t_max: float = 0.8
    side_jitter: float = 0.05
    semantic_crop_size: int = 32
    seed: int = 0
    deterministic: bool = True
    eval_interval: int = 0
    checkpoint_interval: int = 0
    background: tuple = (0.0, 0.0, 0.0)

    def __post_init__(self):
        if self.iterations <= 0:
            raise ConfigurationError("iterations must be > 0")
        for name in ("lr_position", "lr_position_final", "lr_log_scale",
                     "lr_rotation", "lr_opacity", "lr_color"):
            if getattr(self, name) < 0:
                raise ConfigurationError(f"{name} must be >= 0")
        for name in ("adam_beta1", "adam_beta2"):
            if not 0.0 <= getattr(self, name) < 1.0:
                raise ConfigurationError(f"{name} must be in [0, 1)")

    @classmethod
    def from_run_config(cls, config: dict) -> "TrainConfig":
        keys = {f for f in cls.__dataclass_fields__}
        kwargs = {k: v for k, v in config.items() if k in keys}
        if "background" in config:
            kwargs["background"] = tuple(config["background"])
        return cls(**kwargs)


def weights_from_run_config(config: dict) -> LossWeights:
    keys = set(LossWeights.__dataclass_fields__)
    return LossWeights(**{k: v for k, v in config.items() if k in keys}).validate()


@dataclass
class TrainState:
    cloud: GaussianCloud
    moments: dict
    iteration: int = 0
    adam_step: int = 0
    loss_history: list = dc_field(default_factory=list)
    grad_accum: np.ndarray = None       # (N,) accumulated position-grad norms
    grad_steps: int = 0
    rng: np.random.Generator = None

    @classmethod
    def initialize(cls, cloud: GaussianCloud, config: TrainConfig) -> "TrainState":
        n = len(cloud)
        moments = {
            "position": (np.zeros((n, 3)), np.zeros((n, 3))),
            "log_scale": (np.zeros((n, 3)), np.zeros((n, 3))),
            "rotation": (np.zeros((n, 4)), np.zeros((n, 4))),
            "opacity_logit": (np.zeros(n), np.zeros(n)),
            "color": (np.zeros((n, 3)), np.zeros((n, 3))),
        }
        return cls(cloud=cloud, moments=moments, grad_accum=np.zeros(n),
                   rng=np.random.default_rng(config.seed))

    def check_consistent(self):
        n = len(self.cloud)
        for name, (m, v) in self.moments.items():
            assert m.shape[0] == n and v.shape[0] == n, f"moment buffer {name} misaligned"
        assert self.grad_accum.shape[0] == n


@dataclass
class StepPlan:
    """The frozen per-step random draws, so the loss is a pure function."""

    train_view: int
    side_cams: list                 # list[Camera]
    side_nearest_train: list        # list[int]
    crop_rects: list                # list[(r0, c0, size)]


def _crop_rect(rng, height, width, size):
    size = int(min(size, height, width))
    if size < 8:
        raise ConfigurationError("semantic crop smaller than 8x8; enlarge images or crop size")
    r0 = int(rng.integers(0, height - size + 1))
    c0 = int(rng.integers(0, width - size + 1))
    return (r0, c0, size)


def plan_step(state: TrainState, scene: Scene, weights: LossWeights,
              config: TrainConfig) -> StepPlan:
    """Draw this step's training view, side poses, and crop locations."""
    train_idx = list(scene.train_indices)
    view = train_idx[state.iteration % len(train_idx)]
    w_eff = warmup_weights(weights, state.iteration, config.warmup_iteration)
    need_sides = ((w_eff.omega_sem > 0 or w_eff.omega_depth > 0)
                  and config.side_views_per_iter > 0)
    side_cams, nearest, crops = [], [], []
    if need_sides:
        if len(train_idx) < 2:
            raise ConfigurationError(
                "side-view regularizers need at least two training views")
        cam0 = scene.cameras[train_idx[0]]
        for _ in range(config.side_views_per_iter):
            anchor = train_idx[int(state.rng.integers(len(train_idx)))]
            others = [i for i in train_idx if i != anchor]
            dists = [np.linalg.norm(scene.cameras[i].center - scene.cameras[anchor].center)
                     for i in others]
            partner = others[int(np.argmin(dists))]
            spec = SideViewSpec(anchor, partner,
                                t=float(state.rng.uniform(config.side_t_min, config.side_t_max)),
                                jitter=config.side_jitter,
                                seed=int(state.rng.integers(2 ** 31)))
            cam = sample_side_pose(scene.cameras[anchor], scene.cameras[partner], spec)
            side_cams.append(cam)
            nearest.append(nearest_training_view(scene.cameras, train_idx, cam))
            crops.append(_crop_rect(state.rng, cam0.height, cam0.width,
                                    config.semantic_crop_size))
    return StepPlan(view, side_cams, nearest, crops)


def _training_depth_prior(scene, priors, view_index, cache):
    if view_index in cache:
        return cache[view_index]
    prior = None
    if scene.depth_priors and scene.depth_priors[view_index] is not None:
        prior = scene.depth_priors[view_index].values
    elif priors is not None:
        stem = _view_stem(scene, view_index)
        dm = priors.get_depth(view=scene.cameras[view_index],
                              rendered_image=scene.images[view_index], stem=stem)
        prior = dm.values
    cache[view_index] = prior
    return prior


def _view_stem(scene, view_index):
    stems = getattr(scene, "image_stems", None)
    if stems:
        return stems[view_index]
    return f"view_{view_index:03d}"


def _side_depth_prior(priors, cam, rendered_image):
    """A side view's depth prior, or None when the backend cannot provide one.

    The file backend has no stored maps for synthesized poses (no stem), so
    side-view depth regularization quietly degrades to training views there;
    transport errors from the service backend still surface.
    """
    from .errors import InvalidInputError
    if priors is None:
        return None
    try:
        dm = priors.get_depth(view=cam, rendered_image=rendered_image, stem=None)
    except (FileNotFoundError, InvalidInputError):
        return None
    return dm.values


def step_losses(cloud: GaussianCloud, scene: Scene, priors: PriorSource,
                weights: LossWeights, config: TrainConfig, plan: StepPlan,
                iteration: int, prior_cache=None):
    """Evaluate the full objective for one frozen step plan.

    Pure in (cloud, plan): no RNG, no state mutation. Returns the breakdown
    plus the render outputs needed for the backward pass.
    """
    if prior_cache is None:
        prior_cache = {}
    w_eff = warmup_weights(weights, iteration, config.warmup_iteration)
    background = np.asarray(config.background, dtype=np.float64)

    v = plan.train_view
    out_train = render(cloud, scene.cameras[v], background)

    prior_train = None
    if w_eff.omega_depth > 0 or (w_eff.omega_0 > 0 and w_eff.beta_gdepth > 0):
        prior_train = _training_depth_prior(scene, priors, v, prior_cache)
        if prior_train is None:
            raise ConfigurationError(
                "depth-weighted loss is active but no depth prior is available "
                f"for training view {v}")

    side_terms, side_outs = [], []
    if plan.side_cams and (w_eff.omega_sem > 0 or w_eff.omega_depth > 0):
        if w_eff.omega_sem > 0 and not getattr(priors, "differentiable_features", False):
            raise ConfigurationError(
                "semantic regularization needs a differentiable feature backend "
                "(the built-in toy extractor); file/service embeddings carry no "
                "gradient back to pixels")
        for cam, near_v, rect in zip(plan.side_cams, plan.side_nearest_train,
                                     plan.crop_rects):
            out_side = render(cloud, cam, background)
            emb_side = emb_train = None
            if w_eff.omega_sem > 0:
                r0, c0, sz = rect
                crop_side = out_side.color[r0:r0 + sz, c0:c0 + sz]
                crop_train = scene.images[near_v][r0:r0 + sz, c0:c0 + sz]
                emb_side = priors.get_features(crop_side).values
                emb_train = priors.get_features(crop_train).values
            side_prior = None
            if w_eff.omega_depth > 0:
                side_prior = _side_depth_prior(priors, cam, out_side.color)
            side_terms.append(SideTerm(emb_side, emb_train,
                                       side_rendered_depth=out_side.depth,
                                       side_prior_depth=side_prior))
            side_outs.append(out_side)

    breakdown = total_loss(out_train, scene.images[v], prior_train,
                           side_terms, w_eff)
    return breakdown, out_train, side_outs


def step_gradients(breakdown: LossBreakdown, out_train, side_outs, plan: StepPlan,
                   priors: PriorSource) -> ParamGrads:
    """Backward pass for one step: loss gradient maps down to cloud params."""
    grads = render_backward(out_train, breakdown.grad_color, breakdown.grad_depth)
    for out_side, sg, rect in zip(side_outs, breakdown.side_grads, plan.crop_rects):
        H, W = out_side.depth.shape
        g_color = np.zeros((H, W, 3))
        g_depth = np.zeros((H, W))
        if sg.embedding is not None:
            r0, c0, sz = rect
            g_color[r0:r0 + sz, c0:c0 + sz] = priors.features_vjp(
                (sz, sz, 3), sg.embedding)
        if sg.depth is not None:
            g_depth = sg.depth
        grads.add(render_backward(out_side, g_color, g_depth))
    return grads


def _position_lr(config: TrainConfig, iteration: int) -> float:
    if config.lr_position <= 0:
        return 0.0
    if config.lr_position_final <= 0 or config.lr_position_final >= config.lr_position:
        return config.lr_position
    frac = min(iteration / max(config.iterations, 1), 1.0)
    return float(config.lr_position * (config.lr_position_final / config.lr_position) ** frac)


def _adam_update(param, grad, m, v, lr, b1, b2, eps, t):
    m *= b1
    m += (1 - b1) * grad
    v *= b2
    v += (1 - b2) * grad * grad
    m_hat = m / (1 - b1 ** t)
    v_hat = v / (1 - b2 ** t)
    param -= lr * m_hat / (np.sqrt(v_hat) + eps)


def train_step(state: TrainState, scene: Scene, priors: PriorSource,
               weights: LossWeights, config: TrainConfig,
               prior_cache=None) -> LossBreakdown:
    """One optimization step; mutates state in place and returns the losses."""
    plan = plan_step(state, scene, weights, config)
    breakdown, out_train, side_outs = step_losses(
        state.cloud, scene, priors, weights, config, plan,
        state.iteration, prior_cache)

    for name, value in [*breakdown.terms().items(), ("total", breakdown.total)]:
        if not math.isfinite(value):
            raise RuntimeError(f"non-finite loss: term {name!r} = {value} "
                               f"at iteration {state.iteration}")

    grads = step_gradients(breakdown, out_train, side_outs, plan, priors)
    if not grads.all_finite():
        raise RuntimeError(f"non-finite parameter gradients at iteration {state.iteration}")

    state.adam_step += 1
    t = state.adam_step
    cloud = state.cloud
    updates = [
        ("position", cloud.positions, grads.position, _position_lr(config, state.iteration)),
        ("log_scale", cloud.log_scales, grads.log_scale, config.lr_log_scale),
        ("rotation", cloud.rotations, grads.rotation, config.lr_rotation),
        ("opacity_logit", cloud.opacity_logits, grads.opacity_logit, config.lr_opacity),
        ("color", cloud.colors, grads.color, config.lr_color),
    ]
    for name, param, grad, lr in updates:
        m, v = state.moments[name]
        _adam_update(param, grad, m, v, lr, config.adam_beta1,
                     config.adam_beta2, config.adam_eps, t)
    # Keep raw colors inside the clip box so their gradient never freezes.
    np.clip(cloud.colors, 0.0, 1.0, out=cloud.colors)

    state.grad_accum += np.linalg.norm(grads.position, axis=1)
    state.grad_steps += 1
    state.loss_history.append({"iteration": state.iteration,
                               "total": breakdown.total, **breakdown.terms()})
    state.iteration += 1
    return breakdown


def densify_prune(state: TrainState, config: TrainConfig) -> dict:
    """Clone/split high-gradient Gaussians, prune nearly transparent ones.

    Split children shrink their scales by the standard 1.6 factor and move
    +-0.5 sigma along the principal axis; clones are exact copies. Adam
    moments of new Gaussians start at zero; pruning drops moment rows.
    """
    cloud = state.cloud
    n = len(cloud)
    report = {"cloned": 0, "split": 0, "pruned": 0}

    accum = state.grad_accum.copy()
    dense = accum >= config.densify_grad_threshold
    scales = cloud.scales()
    big = scales.max(axis=1) > config.densify_split_scale
    split_mask = dense & big
    clone_mask = dense & ~big

    new_rows = {name: [] for name in PARAM_GROUPS}

    def append_gaussian(pos, ls, rot, op, col):
        new_rows["position"].append(pos)
        new_rows["log_scale"].append(ls)
        new_rows["rotation"].append(rot)
        new_rows["opacity_logit"].append(op)
        new_rows["color"].append(col)

    for i in np.flatnonzero(clone_mask):
        append_gaussian(cloud.positions[i].copy(), cloud.log_scales[i].copy(),
                        cloud.rotations[i].copy(), cloud.opacity_logits[i],
                        cloud.colors[i].copy())
        report["cloned"] += 1

    from .scene import quat_normalize, quat_to_rotmat
    drop = np.zeros(n, dtype=bool)
    for i in np.flatnonzero(split_mask):
        rot = quat_to_rotmat(quat_normalize(cloud.rotations[i]))
        k = int(np.argmax(scales[i]))
        offset = 0.5 * scales[i][k] * rot[:, k]
        child_ls = cloud.log_scales[i] - np.log(SPLIT_SCALE_SHRINK)
        for sign in (+1.0, -1.0):
            append_gaussian(cloud.positions[i] + sign * offset, child_ls.copy(),
                            cloud.rotations[i].copy(), cloud.opacity_logits[i],
                            cloud.colors[i].copy())
        drop[i] = True
        report["split"] += 1

    low_opacity = cloud.opacities() < config.prune_opacity
    report["pruned"] = int(np.sum(low_opacity & ~drop))
    drop |= low_opacity
    keep = ~drop

    def stack_new(name, old):
        rows = new_rows[name]
        if not rows:
            return old[keep]
        return np.concatenate([old[keep], np.stack(rows) if old.ndim > 1
                               else np.asarray(rows)], axis=0)

    positions = stack_new("position", cloud.positions)
    if positions.shape[0] == 0:
        raise RuntimeError("densify/prune would empty the cloud; aborting")

    state.cloud = GaussianCloud(
        positions,
        stack_new("log_scale", cloud.log_scales),
        stack_new("rotation", cloud.rotations),
        stack_new("opacity_logit", cloud.opacity_logits),
        stack_new("color", cloud.colors),
        generation=cloud.generation + 1,
    )
    n_new = len(state.cloud)
    n_kept = int(np.sum(keep))
    for name, (m, v) in state.moments.items():
        m2 = np.zeros((n_new,) + m.shape[1:])
        v2 = np.zeros((n_new,) + v.shape[1:])
        m2[:n_kept] = m[keep]
        v2[:n_kept] = v[keep]
        state.moments[name] = (m2, v2)
    state.grad_accum = np.zeros(n_new)
    state.grad_steps = 0
    state.check_consistent()
    return report


def train(scene: Scene, priors: PriorSource, weights: LossWeights,
          config: TrainConfig, initial_cloud: GaussianCloud,
          out_dir=None):
    """Full optimization run; returns (final cloud, metrics trace)."""
    if not scene.train_indices:
        raise ConfigurationError("scene has no training views")
    weights.validate()
    state = TrainState.initialize(initial_cloud.copy(), config)
    trace = []
    prior_cache = {}
    out_path = Path(out_dir) if out_dir is not None else None
    if out_path is not None:
        out_path.mkdir(parents=True, exist_ok=True)

    trace_file = open(out_path / "trace.jsonl", "w") if out_path else None
    try:
        for _ in range(config.iterations):
            breakdown = train_step(state, scene, priors, weights, config, prior_cache)
            record = dict(state.loss_history[-1])

            if (config.eval_interval > 0 and scene.test_indices
                    and state.iteration % config.eval_interval == 0):
                from .evaluate import evaluate_cloud
                report = evaluate_cloud(state.cloud, scene, scene.test_indices,
                                        background=config.background)
                record["test_psnr"] = report.mean_psnr
                record["test_ssim"] = report.mean_ssim

            if (config.densify_interval > 0
                    and state.iteration % config.densify_interval == 0
                    and state.iteration < config.iterations):
                record["densify"] = densify_prune(state, config)

            if (out_path and config.checkpoint_interval > 0
                    and state.iteration % config.checkpoint_interval == 0):
                from .io import save_cloud
                save_cloud(out_path / f"cloud_{state.iteration:06d}.sidg", state.cloud)

            trace.append(record)
            if trace_file:
                trace_file.write(json.dumps(record) + "\n")
        if out_path:
            from .io import save_cloud
            save_cloud(out_path / "cloud_final.sidg", state.cloud)
    finally:
        if trace_file:
            trace_file.close()
    return state.cloud, trace
