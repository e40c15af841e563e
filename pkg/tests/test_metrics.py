import numpy as np
import pytest

import focusfuse as ff
from focusfuse.errors import InputError
from focusfuse.metrics import GAMMA_A, GAMMA_G, KAPPA_A, KAPPA_G, SIGMA_A, SIGMA_G
from helpers import textured_image


def plateau():
    """Preservation score at perfect strength ratio and zero angle error."""
    qg = GAMMA_G / (1.0 + np.exp(KAPPA_G * (1.0 - SIGMA_G)))
    qa = GAMMA_A / (1.0 + np.exp(KAPPA_A * (1.0 - SIGMA_A)))
    return qg * qa


class TestQg:
    def test_self_fusion_hits_plateau(self):
        img = textured_image(0, 64, 64)
        value = ff.q_g(img, img, img)
        assert abs(value - plateau()) < 0.01

    def test_constant_fusion_scores_near_zero(self):
        i1 = textured_image(1, 64, 64)
        i2 = textured_image(2, 64, 64)
        assert ff.q_g(i1, i2, np.full((64, 64), 128.0)) < 0.05

    def test_symmetric_in_sources(self):
        rng = np.random.default_rng(3)
        i1, i2, f = (rng.uniform(0, 255, size=(32, 32)) for _ in range(3))
        assert ff.q_g(i1, i2, f) == ff.q_g(i2, i1, f)

    def test_bounded_unit_interval_fuzz(self):
        rng = np.random.default_rng(4)
        for _ in range(20):
            imgs = [rng.uniform(0, 255, size=(16, 16)) for _ in range(3)]
            v = ff.q_g(*imgs)
            assert 0.0 <= v <= 1.0

    def test_all_flat_images_return_zero(self):
        flat = np.full((8, 8), 9.0)
        assert ff.q_g(flat, flat, flat) == 0.0

    def test_flip_invariance(self):
        rng = np.random.default_rng(5)
        i1, i2, f = (rng.uniform(0, 255, size=(24, 24)) for _ in range(3))
        a = ff.q_g(i1, i2, f)
        b = ff.q_g(i1[:, ::-1], i2[:, ::-1], f[:, ::-1])
        assert a == pytest.approx(b, abs=1e-12)


class TestQnmi:
    def test_identity_is_exactly_two(self):
        img = textured_image(6, 64, 64)
        assert ff.q_nmi(img, img, img) == 2.0

    def test_independent_noise_fusion_scores_low(self):
        rng = np.random.default_rng(7)
        i1 = textured_image(7, 512, 512)
        i2 = textured_image(8, 512, 512)
        noise = rng.integers(0, 256, size=(512, 512)).astype(np.float64)
        assert ff.q_nmi(i1, i2, noise) < 0.1

    def test_per_term_oracle_when_fused_equals_first(self):
        i1 = textured_image(9, 64, 64)
        i2 = textured_image(10, 64, 64)
        total = ff.q_nmi(i1, i2, i1)
        # first term is exactly 1; second recomputed from histograms
        a = np.rint(i2).astype(np.int64)
        b = np.rint(i1).astype(np.int64)
        joint = np.bincount((a * 256 + b).ravel(), minlength=65536).reshape(256, 256)
        p = joint / joint.sum()

        def ent(q):
            nz = q[q > 0]
            return float(-(nz * np.log2(nz)).sum())

        h2, hf, h2f = ent(p.sum(axis=1)), ent(p.sum(axis=0)), ent(p)
        expect = 1.0 + 2.0 * (h2 + hf - h2f) / (h2 + hf)
        assert total == pytest.approx(expect, abs=1e-12)

    def test_flip_invariance(self):
        i1 = textured_image(11, 32, 32)
        i2 = textured_image(12, 32, 32)
        f = (i1 + i2) / 2
        assert ff.q_nmi(i1, i2, f) == pytest.approx(
            ff.q_nmi(i1[:, ::-1], i2[:, ::-1], f[:, ::-1]), abs=1e-12
        )


class TestNcie:
    def test_identical_images_give_one(self):
        img = textured_image(13, 128, 128)  # pixel count divisible by 256
        assert ff.ncie([img, img], img) == pytest.approx(1.0, abs=1e-9)

    def test_identity_correlation_closed_form(self):
        expect = 1.0 - np.log(3.0) / np.log(256.0)
        assert ff.ncie_from_correlation(np.eye(3)) == pytest.approx(expect, abs=1e-12)
        assert expect == pytest.approx(0.8019, abs=1e-4)

    def test_all_ones_correlation_gives_one(self):
        assert ff.ncie_from_correlation(np.ones((3, 3))) == pytest.approx(1.0, abs=1e-12)

    def test_independent_noise_near_identity_value(self):
        rng = np.random.default_rng(14)
        imgs = [rng.integers(0, 256, size=(256, 256)).astype(np.float64) for _ in range(3)]
        value = ff.ncie(imgs[:2], imgs[2])
        assert abs(value - (1.0 - np.log(3.0) / np.log(256.0))) < 0.02

    def test_pixel_order_invariance(self):
        i1 = textured_image(15, 32, 32)
        i2 = textured_image(16, 32, 32)
        f = np.rint((i1 + i2) / 2)
        a = ff.ncie([i1, i2], f)
        b = ff.ncie([i1[:, ::-1], i2[:, ::-1]], f[:, ::-1])
        assert a == pytest.approx(b, abs=1e-12)

    def test_nonlinear_correlation_self_is_one(self):
        img = textured_image(17, 64, 64)  # 4096 pixels, divisible by 256
        assert ff.nonlinear_correlation(img, img) == pytest.approx(1.0, abs=1e-12)

    def test_correlated_beats_independent(self):
        rng = np.random.default_rng(18)
        x = rng.integers(0, 256, size=(64, 64)).astype(np.float64)
        noisy = np.clip(x + rng.normal(0, 8, size=x.shape), 0, 255)
        indep = rng.integers(0, 256, size=(64, 64)).astype(np.float64)
        assert ff.nonlinear_correlation(x, noisy) > ff.nonlinear_correlation(x, indep)

    def test_non_square_matrix_rejected(self):
        with pytest.raises(InputError):
            ff.ncie_from_correlation(np.ones((2, 3)))


class TestPsnr:
    def test_identical_images_capped(self):
        img = textured_image(19, 16, 16)
        assert ff.psnr(img, img) == 99.0

    def test_unit_offset_closed_form(self):
        img = textured_image(20, 16, 16)
        expect = 10.0 * np.log10(255.0**2)
        assert ff.psnr(img, img + 1.0) == pytest.approx(expect, abs=1e-12)
        assert expect == pytest.approx(48.13, abs=0.01)

    def test_symmetric(self):
        rng = np.random.default_rng(21)
        a = rng.uniform(0, 255, size=(12, 12))
        b = rng.uniform(0, 255, size=(12, 12))
        assert ff.psnr(a, b) == ff.psnr(b, a)


class TestReport:
    def test_evaluate_and_csv(self):
        i1 = textured_image(22, 64, 64)
        i2 = textured_image(23, 64, 64)
        f = np.rint((i1 + i2) / 2)
        report = ff.evaluate_fusion(i1, i2, f)
        assert report.psnr_vs_gt is None
        row = report.csv_row("pair")
        assert row.startswith("pair,") and row.count(",") == 3
        with_gt = ff.evaluate_fusion(i1, i2, f, ground_truth=i1)
        assert with_gt.psnr_vs_gt == ff.psnr(f, i1)
        assert with_gt.csv_row("pair").count(",") == 4

    def test_shape_mismatch_rejected(self):
        with pytest.raises(InputError):
            ff.q_nmi(np.zeros((4, 4)), np.zeros((4, 5)), np.zeros((4, 4)))
