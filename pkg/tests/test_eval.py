import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from splatkit.errors import DimensionMismatchError
from splatkit.evaluate import (EvalReport, make_llff_split, psnr, ssim)
from splatkit.losses import d_ssim

from test_losses import brute_force_ssim


class TestPsnr:
    def test_identical_images_hit_the_cap(self, rng):
        img = rng.uniform(0, 1, (8, 8, 3))
        assert psnr(img, img) == 99.0

    def test_mse_hundredth_is_20db(self):
        a = np.zeros((4, 4, 3))
        b = np.full((4, 4, 3), 0.1)
        assert psnr(a, b) == pytest.approx(20.0, abs=1e-9)

    def test_black_vs_white_is_0db(self):
        assert psnr(np.zeros((3, 3, 3)), np.ones((3, 3, 3))) == 0.0

    def test_dimension_mismatch(self):
        with pytest.raises(DimensionMismatchError):
            psnr(np.zeros((2, 2, 3)), np.zeros((4, 4, 3)))

    @given(st.integers(0, 10_000))
    @settings(max_examples=30, deadline=None)
    def test_monotone_in_noise_level(self, seed):
        rng = np.random.default_rng(seed)
        ref = rng.uniform(0.2, 0.8, (12, 12, 3))
        values = []
        noise = rng.normal(size=ref.shape)
        for sigma in (0.01, 0.03, 0.1, 0.3):
            values.append(psnr(ref + sigma * noise, ref))
        assert all(a > b for a, b in zip(values, values[1:]))


class TestSsim:
    def test_self_similarity_is_one(self, rng):
        img = rng.uniform(0, 1, (16, 16, 3))
        assert ssim(img, img) == pytest.approx(1.0, abs=1e-12)

    def test_definitional_tie_to_dssim(self, rng):
        x = rng.uniform(0, 1, (16, 16, 3))
        y = rng.uniform(0, 1, (16, 16, 3))
        assert abs(ssim(x, y) - (1.0 - d_ssim(x, y)[0])) < 1e-12

    def test_symmetric(self, rng):
        x = rng.uniform(0, 1, (16, 16))
        y = rng.uniform(0, 1, (16, 16))
        assert ssim(x, y) == pytest.approx(ssim(y, x), abs=1e-9)

    def test_matches_window_by_window_oracle(self, rng):
        x = rng.uniform(0, 1, (16, 16))
        y = rng.uniform(0, 1, (16, 16))
        assert ssim(x, y) == pytest.approx(brute_force_ssim(x, y), abs=1e-6)


class TestMakeLlffSplit:
    def test_canonical_20_view_protocol(self):
        train, test = make_llff_split(20, 3)
        assert test == [0, 8, 16]
        assert train == [1, 10, 19]

    def test_minimal_nine_views_single_train(self):
        train, test = make_llff_split(9, 1)
        assert test == [0, 8]
        assert train == [4]

    def test_24_views_reproducible(self):
        assert make_llff_split(24, 3) == make_llff_split(24, 3)
        train, test = make_llff_split(24, 3)
        assert test == [0, 8, 16]
        assert train == [1, 12, 23]

    def test_too_many_train_views_rejected(self):
        with pytest.raises(ValueError):
            make_llff_split(9, 8)

    @given(st.integers(2, 80), st.integers(1, 10))
    @settings(max_examples=200, deadline=None)
    def test_disjoint_and_in_range(self, views, n_train):
        try:
            train, test = make_llff_split(views, n_train)
        except ValueError:
            return
        assert not (set(train) & set(test))
        assert len(set(train)) == n_train
        assert all(0 <= i < views for i in train + test)


class TestEvalReport:
    def test_means_are_arithmetic_means(self):
        report = EvalReport([0, 8], [20.0, 24.0], [0.5, 0.7])
        assert report.mean_psnr == pytest.approx(22.0, abs=1e-9)
        assert report.mean_ssim == pytest.approx(0.6, abs=1e-9)

    def test_kv_serialization(self, tmp_path):
        report = EvalReport([0], [21.5], [0.66], config_hash="abc", seed=3)
        path = tmp_path / "report.kv"
        report.save(path)
        text = path.read_text()
        assert "view_0.psnr=21.5" in text
        assert "mean.ssim=0.66" in text
        assert "meta.seed=3" in text

    def test_table_renders(self):
        table = EvalReport([0, 8], [20.0, 24.0], [0.5, 0.7]).to_table()
        assert "mean" in table and "20.000" in table
