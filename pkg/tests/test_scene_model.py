import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from splatkit.errors import DegenerateRotationError
from splatkit.scene import (Camera, GaussianCloud, Scene, covariance_from_params,
                            sigmoid, validate_scene)

from conftest import make_camera


def rot_z(deg):
    a = np.deg2rad(deg)
    return np.array([np.cos(a / 2), 0.0, 0.0, np.sin(a / 2)])


class TestCovarianceFromParams:
    def test_identity_case(self):
        cov = covariance_from_params(np.zeros(3), np.array([1.0, 0, 0, 0]))
        np.testing.assert_allclose(cov, np.eye(3), atol=1e-12)

    def test_diagonal_scales(self):
        cov = covariance_from_params(np.log([2.0, 3.0, 4.0]), np.array([1.0, 0, 0, 0]))
        np.testing.assert_allclose(cov, np.diag([4.0, 9.0, 16.0]), rtol=1e-12)

    def test_rotated_by_90_about_z(self):
        # x-elongated ellipsoid rotated 90 degrees maps variance onto y.
        cov = covariance_from_params(np.log([2.0, 1.0, 1.0]), rot_z(90))
        np.testing.assert_allclose(cov, np.diag([1.0, 4.0, 1.0]), atol=1e-12)

    def test_zero_norm_quaternion_rejected(self):
        with pytest.raises(DegenerateRotationError):
            covariance_from_params(np.zeros(3), np.zeros(4))

    def test_unnormalized_quaternion_ok(self):
        q = 3.7 * rot_z(90)
        cov = covariance_from_params(np.log([2.0, 1.0, 1.0]), q)
        np.testing.assert_allclose(cov, np.diag([1.0, 4.0, 1.0]), atol=1e-12)


scale_st = st.floats(min_value=-5.0, max_value=2.0)
quat_st = st.floats(min_value=-1.0, max_value=1.0)


class TestCovarianceProperties:
    @given(st.tuples(scale_st, scale_st, scale_st),
           st.tuples(quat_st, quat_st, quat_st, quat_st))
    @settings(max_examples=200, deadline=None)
    def test_symmetric_positive_definite(self, log_scale, quat):
        q = np.asarray(quat)
        if np.linalg.norm(q) < 1e-6:
            q = np.array([1.0, 0, 0, 0])
        cov = covariance_from_params(np.asarray(log_scale), q)
        assert np.abs(cov - cov.T).max() < 1e-12
        assert np.linalg.eigvalsh(cov).min() > 0

    @given(st.tuples(scale_st, scale_st, scale_st),
           st.tuples(quat_st, quat_st, quat_st, quat_st))
    @settings(max_examples=200, deadline=None)
    def test_determinant_rotation_invariant(self, log_scale, quat):
        q = np.asarray(quat)
        if np.linalg.norm(q) < 1e-6:
            q = np.array([1.0, 0, 0, 0])
        ls = np.asarray(log_scale)
        cov = covariance_from_params(ls, q)
        expected = np.exp(2.0 * ls.sum())
        assert abs(np.linalg.det(cov) - expected) <= 1e-9 * expected

    def test_scale_floor_keeps_covariance_nonsingular(self):
        cov = covariance_from_params(np.array([-60.0, -60.0, -60.0]),
                                     np.array([1.0, 0, 0, 0]))
        assert np.linalg.eigvalsh(cov).min() > 0


def test_opacity_activation_strictly_monotone():
    logits = np.linspace(-20, 20, 201)
    acts = sigmoid(logits)
    assert np.all(np.diff(acts) > 0)
    assert np.all((acts > 0) & (acts < 1))


class TestCamera:
    def test_rejects_bad_focal(self):
        with pytest.raises(ValueError):
            make_camera(fx=-1.0)

    def test_rejects_bad_clip_planes(self):
        with pytest.raises(ValueError):
            Camera(fx=10, fy=10, cx=4, cy=4, width=8, height=8,
                   rotation=np.eye(3), translation=np.zeros(3), near=2.0, far=1.0)

    def test_rejects_non_orthonormal_rotation(self):
        with pytest.raises(ValueError):
            Camera(fx=10, fy=10, cx=4, cy=4, width=8, height=8,
                   rotation=np.eye(3) * 1.5, translation=np.zeros(3))

    def test_center_inverts_pose(self, rng):
        from splatkit.scene import quat_to_rotmat, quat_normalize
        rot = quat_to_rotmat(quat_normalize(rng.normal(size=4)))
        t = rng.normal(size=3)
        cam = Camera(fx=10, fy=10, cx=4, cy=4, width=8, height=8,
                     rotation=rot, translation=t)
        np.testing.assert_allclose(cam.to_camera(cam.center), np.zeros(3), atol=1e-12)


def _tiny_scene(image_hw=(8, 8), n_views=3):
    cams = [make_camera(width=image_hw[1], height=image_hw[0]) for _ in range(n_views)]
    images = [np.zeros((image_hw[0], image_hw[1], 3)) for _ in range(n_views)]
    return Scene(cameras=cams, images=images, train_indices=[0, 1], test_indices=[2])


class TestValidateScene:
    def test_consistent_scene_passes(self):
        assert validate_scene(_tiny_scene()) == []

    def test_size_mismatch_reported_with_view_and_field(self):
        scene = _tiny_scene()
        scene.images[1] = np.zeros((64, 64, 3))
        violations = validate_scene(scene)
        assert len(violations) == 1
        assert violations[0].view_index == 1
        assert violations[0].field == "images"

    def test_overlapping_split_reported(self):
        scene = _tiny_scene()
        scene.test_indices = [0]
        violations = validate_scene(scene)
        assert any("train_indices" in v.field for v in violations)


def test_cloud_roundtrip_single_gaussian(rng):
    cloud = GaussianCloud(rng.normal(size=(4, 3)), rng.normal(size=(4, 3)),
                          rng.normal(size=(4, 4)), rng.normal(size=4),
                          rng.uniform(0, 1, (4, 3)))
    g = cloud.gaussian(2)
    np.testing.assert_array_equal(g.position, cloud.positions[2])
    rebuilt = GaussianCloud.from_gaussians([cloud.gaussian(i) for i in range(4)])
    np.testing.assert_array_equal(rebuilt.rotations, cloud.rotations)
