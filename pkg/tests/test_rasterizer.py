import numpy as np
import pytest

from splatkit.errors import DimensionMismatchError, InvalidInputError
from splatkit.rasterize import (ALPHA_CLIP, COV2_FLOOR, ParamGrads, project,
                                render, render_backward)
from splatkit.scene import Camera, GaussianCloud, logit

from conftest import make_camera, make_cloud, rel_err


def single_splat_cloud(cam, pixel_rc, depth, opacity_act, color,
                       scale=0.05):
    """One Gaussian whose projection lands exactly on a pixel center."""
    r, c = pixel_rc
    x = (c + 0.5 - cam.cx) / cam.fx * depth
    y = (r + 0.5 - cam.cy) / cam.fy * depth
    return GaussianCloud([[x, y, depth]], [np.log([scale] * 3)],
                         [[1.0, 0, 0, 0]], [logit(opacity_act)], [color])


class TestProject:
    def test_principal_point(self):
        cam = make_camera()
        out = project(cam, [0.0, 0.0, 2.5], 0.01 * np.eye(3))
        np.testing.assert_allclose(out.mean2, [cam.cx, cam.cy], atol=1e-12)
        assert out.view_depth == 2.5

    def test_point_behind_camera_culled(self):
        cam = make_camera()
        assert project(cam, [0.0, 0.0, -1.0], 0.01 * np.eye(3)) is None

    def test_far_off_axis_culled(self):
        cam = make_camera()
        assert project(cam, [100.0, 100.0, 2.0], 1e-6 * np.eye(3)) is None

    def test_isotropic_covariance_maps_through_jacobian(self):
        cam = make_camera()
        sigma, d = 0.07, 2.0
        out = project(cam, [0.0, 0.0, d], sigma ** 2 * np.eye(3))
        expected = np.diag([(cam.fx * sigma / d) ** 2,
                            (cam.fy * sigma / d) ** 2]) + COV2_FLOOR * np.eye(2)
        np.testing.assert_allclose(out.cov2, expected, rtol=1e-12)

    def test_non_finite_rejected(self):
        cam = make_camera()
        with pytest.raises(InvalidInputError):
            project(cam, [np.nan, 0, 2], np.eye(3))


class TestRenderExamples:
    def test_single_splat_on_pixel(self):
        cam = make_camera(4, 4, fx=10, fy=10)
        cloud = single_splat_cloud(cam, (1, 1), 2.0, 0.8, [1.0, 0.0, 0.0])
        out = render(cloud, cam, (0, 0, 0))
        np.testing.assert_allclose(out.color[1, 1], [0.8, 0.0, 0.0], atol=1e-12)
        assert out.alpha_acc[1, 1] == pytest.approx(0.8, abs=1e-12)
        assert out.depth[1, 1] == pytest.approx(2.0, abs=1e-12)

    def test_two_coincident_splats_compose_front_to_back(self):
        cam = make_camera(4, 4, fx=10, fy=10)
        front = single_splat_cloud(cam, (1, 1), 2.0, 0.5, [1.0, 0.0, 0.0])
        rear = single_splat_cloud(cam, (1, 1), 2.0 + 1e-9, 0.5, [0.0, 1.0, 0.0])
        cloud = GaussianCloud(
            np.vstack([front.positions, rear.positions]),
            np.vstack([front.log_scales, rear.log_scales]),
            np.vstack([front.rotations, rear.rotations]),
            np.concatenate([front.opacity_logits, rear.opacity_logits]),
            np.vstack([front.colors, rear.colors]))
        out = render(cloud, cam, (0, 0, 0))
        np.testing.assert_allclose(out.color[1, 1], [0.5, 0.25, 0.0], atol=1e-9)

    def test_empty_pixel_shows_background_and_far_plane(self):
        cam = make_camera(6, 6)
        cloud = single_splat_cloud(cam, (0, 0), 2.0, 0.9, [1, 1, 1], scale=0.001)
        bg = np.array([0.2, 0.4, 0.6])
        out = render(cloud, cam, bg)
        np.testing.assert_allclose(out.color[5, 5], bg, atol=1e-12)
        assert out.alpha_acc[5, 5] == 0.0
        assert out.depth[5, 5] == cam.far

    def test_color_stays_in_unit_range(self, rng):
        cam = make_camera()
        cloud = make_cloud(rng, n=20, opacity_range=(0.5, 0.99))
        out = render(cloud, cam, (1.0, 1.0, 1.0))
        assert out.color.min() >= 0.0 and out.color.max() <= 1.0 + 1e-12


class TestRenderProperties:
    def test_conservation_and_transmittance(self, rng):
        for _ in range(50):
            cam = make_camera(6, 6)
            cloud = make_cloud(rng, n=6)
            out = render(cloud, cam)
            assert out.alpha_acc.min() >= 0.0
            assert out.alpha_acc.max() <= 1.0 + 1e-12
            # Sum of per-splat weights reproduces alpha_acc exactly.
            acc = np.zeros_like(out.alpha_acc)
            trans = np.ones_like(out.alpha_acc)
            for rec in out.ctx.records:
                h, w = rec.alpha.shape
                sl = (slice(rec.r0, rec.r0 + h), slice(rec.c0, rec.c0 + w))
                np.testing.assert_array_equal(rec.t_before, trans[sl])
                acc[sl] += rec.t_before * rec.alpha
                new_t = trans[sl] * (1.0 - rec.alpha)
                assert np.all(new_t <= trans[sl] + 1e-15)
                trans[sl] = new_t
            np.testing.assert_array_equal(acc, out.alpha_acc)

    def test_permutation_bit_identical(self, rng):
        cam = make_camera()
        cloud = make_cloud(rng, n=12)
        out1 = render(cloud, cam)
        perm = rng.permutation(12)
        shuffled = GaussianCloud(cloud.positions[perm], cloud.log_scales[perm],
                                 cloud.rotations[perm], cloud.opacity_logits[perm],
                                 cloud.colors[perm])
        out2 = render(shuffled, cam)
        np.testing.assert_array_equal(out1.color, out2.color)
        np.testing.assert_array_equal(out1.depth, out2.depth)
        np.testing.assert_array_equal(out1.alpha_acc, out2.alpha_acc)

    def test_opaque_front_occludes_rear(self):
        cam = make_camera(4, 4, fx=10, fy=10)
        front = single_splat_cloud(cam, (1, 1), 1.5, 0.9999, [1, 0, 0], scale=0.3)
        rear = single_splat_cloud(cam, (1, 1), 3.0, 0.95, [0, 1, 0], scale=0.3)
        cloud = GaussianCloud(
            np.vstack([front.positions, rear.positions]),
            np.vstack([front.log_scales, rear.log_scales]),
            np.vstack([front.rotations, rear.rotations]),
            np.concatenate([front.opacity_logits, rear.opacity_logits]),
            np.vstack([front.colors, rear.colors]))
        out = render(cloud, cam)
        rear_rec = [r for r in out.ctx.records if r.index == 1][0]
        r, c = 1 - rear_rec.r0, 1 - rear_rec.c0
        weight = rear_rec.t_before[r, c] * rear_rec.alpha[r, c]
        assert rear_rec.alpha.max() <= ALPHA_CLIP
        assert weight <= 1.0 - ALPHA_CLIP + 1e-12

    def test_culled_gaussian_removal_leaves_image_unchanged(self, rng):
        cam = make_camera()
        cloud = make_cloud(rng, n=8)
        cloud.positions[3] = [0.0, 0.0, -2.0]     # behind the camera
        cloud.positions[5] = [50.0, 0.0, 2.0]     # far outside the frustum
        out_full = render(cloud, cam)
        keep = [i for i in range(8) if i not in (3, 5)]
        trimmed = GaussianCloud(cloud.positions[keep], cloud.log_scales[keep],
                                cloud.rotations[keep], cloud.opacity_logits[keep],
                                cloud.colors[keep])
        out_trim = render(trimmed, cam)
        np.testing.assert_array_equal(out_full.color, out_trim.color)
        np.testing.assert_array_equal(out_full.depth, out_trim.depth)

    def test_empty_cloud_rejected(self):
        cam = make_camera()
        empty = GaussianCloud(np.zeros((0, 3)), np.zeros((0, 3)),
                              np.zeros((0, 4)), np.zeros(0), np.zeros((0, 3)))
        with pytest.raises(InvalidInputError):
            render(empty, cam)


class TestRenderBackward:
    def test_zero_gradients_in_zero_out(self, rng):
        cam = make_camera()
        cloud = make_cloud(rng, n=5)
        out = render(cloud, cam)
        g = render_backward(out, np.zeros((8, 8, 3)), np.zeros((8, 8)))
        for arr in (g.position, g.log_scale, g.rotation, g.opacity_logit, g.color):
            np.testing.assert_array_equal(arr, np.zeros_like(arr))

    def test_single_splat_color_gradient_equals_alpha(self):
        cam = make_camera(4, 4, fx=10, fy=10)
        cloud = single_splat_cloud(cam, (1, 1), 2.0, 0.8, [1.0, 0.0, 0.0])
        out = render(cloud, cam)
        d_color = np.zeros((4, 4, 3))
        d_color[1, 1, 0] = 1.0
        g = render_backward(out, d_color, np.zeros((4, 4)))
        assert g.color[0, 0] == pytest.approx(out.alpha_acc[1, 1], abs=1e-12)

    def test_mismatched_gradient_maps_rejected(self, rng):
        cam = make_camera()
        out = render(make_cloud(rng, n=3), cam)
        with pytest.raises(DimensionMismatchError):
            render_backward(out, np.zeros((4, 4, 3)), np.zeros((8, 8)))

    def test_culled_gaussians_get_zero_gradient(self, rng):
        cam = make_camera()
        cloud = make_cloud(rng, n=6)
        cloud.positions[2] = [0.0, 0.0, -3.0]
        out = render(cloud, cam)
        g = render_backward(out, np.ones((8, 8, 3)), np.ones((8, 8)))
        assert np.all(g.position[2] == 0) and np.all(g.color[2] == 0)

    @pytest.mark.parametrize("seed", [7, 21])
    def test_matches_finite_differences(self, seed):
        rng = np.random.default_rng(seed)
        cam = make_camera()
        cloud = make_cloud(rng, n=10)
        bg = np.array([0.1, 0.25, 0.4])
        w_color = rng.normal(size=(8, 8, 3))
        w_depth = rng.normal(size=(8, 8)) * 0.1

        def loss():
            out = render(cloud, cam, bg)
            return float(np.sum(out.color * w_color) + np.sum(out.depth * w_depth))

        out = render(cloud, cam, bg)
        g = render_backward(out, w_color, w_depth)
        h = 1e-4
        for arr, ga in [(cloud.positions, g.position),
                        (cloud.log_scales, g.log_scale),
                        (cloud.rotations, g.rotation),
                        (cloud.opacity_logits, g.opacity_logit),
                        (cloud.colors, g.color)]:
            flat = arr.reshape(-1)
            gf = np.asarray(ga).reshape(-1)
            for k in range(flat.size):
                old = flat[k]
                flat[k] = old + h
                lp = loss()
                flat[k] = old - h
                lm = loss()
                flat[k] = old
                fd = (lp - lm) / (2 * h)
                assert rel_err(gf[k], fd) < 1e-3


def test_param_grads_accumulate():
    a = ParamGrads.zeros(2)
    b = ParamGrads.zeros(2)
    b.position += 1.0
    a.add(b)
    np.testing.assert_array_equal(a.position, np.ones((2, 3)))
    a.scale(0.5)
    np.testing.assert_array_equal(a.position, 0.5 * np.ones((2, 3)))
