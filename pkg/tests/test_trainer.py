import numpy as np
import pytest

from splatkit.colmap import load_colmap_scene
from splatkit.errors import ConfigurationError
from splatkit.io import load_cloud
from splatkit.losses import LossWeights
from splatkit.priors import FilePriorSource, OraclePriorSource
from splatkit.scene import GaussianCloud, Scene, logit, sigmoid
from splatkit.train import (TrainConfig, TrainState, densify_prune, train,
                            train_step)

from conftest import make_camera


def oracle_setup(scene_dir, train_indices, test_indices):
    scene, init_cloud = load_colmap_scene(scene_dir)
    scene.train_indices = list(train_indices)
    scene.test_indices = list(test_indices)
    gt = load_cloud(scene_dir / "gt_cloud.sidg")
    return scene, init_cloud, OraclePriorSource(gt)


def small_weights(**kw):
    defaults = dict(patch_size=8, ssim_window=11)
    defaults.update(kw)
    return LossWeights(**defaults)


def small_config(**kw):
    defaults = dict(iterations=40, warmup_iteration=10, densify_interval=0,
                    side_views_per_iter=1, semantic_crop_size=16, seed=5)
    defaults.update(kw)
    return TrainConfig(**defaults)


class TestTrainStep:
    def test_zero_learning_rates_leave_parameters_bit_unchanged(self, synth_scene_dir):
        scene, cloud, priors = oracle_setup(synth_scene_dir, [0, 2, 4], [1])
        config = small_config(lr_position=0, lr_position_final=0, lr_log_scale=0,
                              lr_rotation=0, lr_opacity=0, lr_color=0)
        state = TrainState.initialize(cloud.copy(), config)
        before = {k: v.copy() for k, v in
                  [("p", state.cloud.positions), ("s", state.cloud.log_scales),
                   ("r", state.cloud.rotations), ("o", state.cloud.opacity_logits),
                   ("c", state.cloud.colors)]}
        bd = train_step(state, scene, priors, small_weights(), config)
        assert np.isfinite(bd.total) and bd.total > 0
        np.testing.assert_array_equal(state.cloud.positions, before["p"])
        np.testing.assert_array_equal(state.cloud.log_scales, before["s"])
        np.testing.assert_array_equal(state.cloud.rotations, before["r"])
        np.testing.assert_array_equal(state.cloud.opacity_logits, before["o"])
        np.testing.assert_array_equal(state.cloud.colors, before["c"])

    def test_fixed_seed_reproduces_loss_history(self, synth_scene_dir):
        scene, cloud, priors = oracle_setup(synth_scene_dir, [0, 2, 4], [1])
        config = small_config(iterations=15, warmup_iteration=5)
        histories = []
        for _ in range(2):
            state = TrainState.initialize(cloud.copy(), config)
            for _ in range(config.iterations):
                train_step(state, scene, priors, small_weights(), config)
            histories.append(state.loss_history)
        assert histories[0] == histories[1]

    def test_warmup_zeroes_regularizer_contributions(self, synth_scene_dir):
        scene, cloud, priors = oracle_setup(synth_scene_dir, [0, 2, 4], [1])
        config = small_config(iterations=12, warmup_iteration=8)
        state = TrainState.initialize(cloud.copy(), config)
        weights = small_weights(omega_sem=0.7, omega_depth=0.4)
        for _ in range(config.iterations):
            bd = train_step(state, scene, priors, weights, config)
            if state.iteration <= config.warmup_iteration:
                assert bd.semantic == 0.0 and bd.local_depth == 0.0
        after = [rec for rec in state.loss_history if rec["iteration"] >= 8]
        assert any(rec["semantic"] > 0 for rec in after)
        assert any(rec["local_depth"] > 0 for rec in after)

    def test_history_length_tracks_iteration_counter(self, synth_scene_dir):
        scene, cloud, priors = oracle_setup(synth_scene_dir, [0, 2], [1])
        config = small_config(iterations=7)
        state = TrainState.initialize(cloud.copy(), config)
        for _ in range(7):
            train_step(state, scene, priors, small_weights(), config)
        assert len(state.loss_history) == state.iteration == 7

    def test_parameters_stay_finite(self, synth_scene_dir):
        scene, cloud, priors = oracle_setup(synth_scene_dir, [0, 2, 4], [1])
        config = small_config(iterations=25, warmup_iteration=5)
        state = TrainState.initialize(cloud.copy(), config)
        for _ in range(config.iterations):
            train_step(state, scene, priors, small_weights(), config)
            for arr in (state.cloud.positions, state.cloud.log_scales,
                        state.cloud.rotations, state.cloud.opacity_logits,
                        state.cloud.colors):
                assert np.all(np.isfinite(arr))
            for m, v in state.moments.values():
                assert np.all(np.isfinite(m)) and np.all(np.isfinite(v))

    def test_semantic_with_file_backend_rejected(self, synth_scene_dir):
        scene, cloud, _ = oracle_setup(synth_scene_dir, [0, 2, 4], [1])
        priors = FilePriorSource(synth_scene_dir / "depths")
        config = small_config(warmup_iteration=0)
        state = TrainState.initialize(cloud.copy(), config)
        with pytest.raises(ConfigurationError, match="differentiable"):
            train_step(state, scene, priors, small_weights(), config)

    def test_file_backend_depth_only_trains(self, synth_scene_dir):
        # No semantic term; local depth restricted to training views.
        scene, cloud, _ = oracle_setup(synth_scene_dir, [0, 2, 4], [1])
        priors = FilePriorSource(synth_scene_dir / "depths")
        config = small_config(warmup_iteration=0)
        state = TrainState.initialize(cloud.copy(), config)
        bd = train_step(state, scene, priors, small_weights(omega_sem=0.0), config)
        assert bd.local_depth > 0.0

    def test_non_finite_loss_aborts_naming_the_term(self, synth_scene_dir):
        scene, cloud, priors = oracle_setup(synth_scene_dir, [0, 2], [1])
        scene.images[0] = scene.images[0].copy()
        scene.images[0][3, 3, 0] = np.nan
        config = small_config()
        state = TrainState.initialize(cloud.copy(), config)
        with pytest.raises(RuntimeError, match="'l1'"):
            train_step(state, scene, priors, small_weights(), config)

    def test_single_training_view_with_side_views_rejected(self, synth_scene_dir):
        scene, cloud, priors = oracle_setup(synth_scene_dir, [0], [1])
        config = small_config(warmup_iteration=0)
        state = TrainState.initialize(cloud.copy(), config)
        with pytest.raises(ConfigurationError, match="two training views"):
            train_step(state, scene, priors, small_weights(), config)

    def test_single_gaussian_l1_descends_over_windows(self):
        # Convex-ish toy problem: one splat fit to its own render from a
        # slightly perturbed start, photometric L1 only.
        cam = make_camera(12, 12, fx=14, fy=14)
        target = GaussianCloud([[0.0, 0.0, 2.0]], [np.log([0.25] * 3)],
                               [[1.0, 0, 0, 0]], [logit(0.8)], [[0.9, 0.2, 0.1]])
        from splatkit.rasterize import render
        gt_img = render(target, cam).color
        scene = Scene(cameras=[cam], images=[gt_img], train_indices=[0],
                      test_indices=[])
        start = GaussianCloud([[0.06, -0.04, 2.2]], [np.log([0.2] * 3)],
                              [[1.0, 0, 0, 0]], [logit(0.6)], [[0.6, 0.4, 0.3]])
        weights = LossWeights(lambda_l1=1.0, gamma_dssim=0.0, beta_gdepth=0.0,
                              omega_sem=0.0, omega_depth=0.0)
        config = TrainConfig(iterations=200, warmup_iteration=10 ** 9,
                             side_views_per_iter=0, densify_interval=0,
                             lr_position=1e-3, lr_position_final=0.0,
                             lr_log_scale=2e-3, lr_rotation=1e-3,
                             lr_opacity=2e-2, lr_color=1.5e-3, seed=1)
        state = TrainState.initialize(start, config)
        l1s = []
        for _ in range(200):
            bd = train_step(state, scene, None, weights, config)
            l1s.append(bd.l1)
        for i in range(len(l1s) - 50):
            assert l1s[i + 50] < l1s[i], f"no descent between steps {i} and {i + 50}"


class TestDensifyPrune:
    def _state(self, rng, n=6):
        cloud = GaussianCloud(rng.uniform(-0.3, 0.3, (n, 3)),
                              np.full((n, 3), np.log(0.02)),
                              np.tile([1.0, 0, 0, 0], (n, 1)),
                              np.full(n, logit(0.6)),
                              rng.uniform(0.2, 0.8, (n, 3)))
        config = TrainConfig(densify_grad_threshold=1.0, densify_split_scale=0.05,
                             prune_opacity=0.005)
        state = TrainState.initialize(cloud, config)
        return state, config

    def test_noop_below_thresholds(self, rng):
        state, config = self._state(rng)
        state.grad_accum[:] = 0.0
        report = densify_prune(state, config)
        assert report == {"cloned": 0, "split": 0, "pruned": 0}
        assert len(state.cloud) == 6

    def test_prune_below_opacity_floor(self, rng):
        state, config = self._state(rng)
        state.cloud.opacity_logits[2] = logit(0.001)
        report = densify_prune(state, config)
        assert report["pruned"] == 1
        assert len(state.cloud) == 5
        assert np.all(sigmoid(state.cloud.opacity_logits) >= config.prune_opacity)

    def test_clone_small_high_gradient(self, rng):
        state, config = self._state(rng)
        state.grad_accum[1] = 2.0
        report = densify_prune(state, config)
        assert report["cloned"] == 1 and report["split"] == 0
        assert len(state.cloud) == 7

    def test_split_large_high_gradient_shrinks_by_1_6(self, rng):
        state, config = self._state(rng)
        state.cloud.log_scales[3] = np.log(0.2)
        old_ls = state.cloud.log_scales[3].copy()
        state.grad_accum[3] = 2.0
        report = densify_prune(state, config)
        assert report["split"] == 1
        assert len(state.cloud) == 7    # one removed, two children added
        children = state.cloud.log_scales[-2:]
        np.testing.assert_allclose(children, np.tile(old_ls - np.log(1.6), (2, 1)),
                                   atol=1e-12)

    def test_moment_buffers_follow_cloud(self, rng):
        state, config = self._state(rng)
        state.moments["position"][0][:] = 7.0
        state.grad_accum[0] = 2.0
        state.cloud.opacity_logits[4] = logit(0.0001)
        densify_prune(state, config)
        state.check_consistent()
        # New rows start from zero moments.
        assert np.all(state.moments["position"][0][-1] == 0.0)

    def test_pruning_everything_aborts(self, rng):
        state, config = self._state(rng)
        state.cloud.opacity_logits[:] = logit(0.0001)
        with pytest.raises(RuntimeError, match="empty"):
            densify_prune(state, config)


class TestTrainLoop:
    def test_full_run_writes_trace_and_checkpoint(self, synth_scene_dir, tmp_path):
        scene, cloud, priors = oracle_setup(synth_scene_dir, [0, 2, 4], [1, 3])
        config = small_config(iterations=20, warmup_iteration=5,
                              checkpoint_interval=10, eval_interval=10)
        out = tmp_path / "run"
        final, trace = train(scene, priors, small_weights(), config, cloud,
                             out_dir=out)
        assert (out / "cloud_final.sidg").exists()
        assert (out / "cloud_000010.sidg").exists()
        assert (out / "trace.jsonl").exists()
        assert len(trace) == 20
        assert "test_psnr" in trace[9]

    def test_deterministic_mode_bit_identical_checkpoints(self, synth_scene_dir, tmp_path):
        scene, cloud, priors = oracle_setup(synth_scene_dir, [0, 2, 4], [1])
        config = small_config(iterations=12, warmup_iteration=4,
                              densify_interval=6, deterministic=True)
        paths = []
        for name in ("a", "b"):
            out = tmp_path / name
            train(scene, priors, small_weights(), config, cloud, out_dir=out)
            paths.append(out / "cloud_final.sidg")
        assert paths[0].read_bytes() == paths[1].read_bytes()

    def test_densification_grows_cloud_during_training(self, synth_scene_dir):
        scene, cloud, priors = oracle_setup(synth_scene_dir, [0, 2, 4], [1])
        config = small_config(iterations=30, warmup_iteration=5,
                              densify_interval=10,
                              densify_grad_threshold=1e-6)
        final, trace = train(scene, priors, small_weights(), config, cloud)
        assert len(final) > len(cloud)
        assert any("densify" in rec for rec in trace)
