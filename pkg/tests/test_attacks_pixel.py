"""Pixel-space baseline attacks: budget respect, structure, and efficacy."""

import numpy as np
import pytest

from gat.attacks.pixel import (KINDS, LEVEL, MAX_DEVIATION, PixelAttackConfig,
                               ifgsm, pgd, recolor_attack, run_pixel_attack,
                               spatial_attack)
from gat.errors import ConfigError


@pytest.fixture()
def batch(tiny_test):
    return tiny_test.images[:16], tiny_test.labels[:16]


class TestConfig:
    def test_kind_validated(self):
        with pytest.raises(ConfigError):
            PixelAttackConfig(kind="blur")

    def test_recolor_deviation_capped(self):
        with pytest.raises(ConfigError, match="monotonicity"):
            PixelAttackConfig(kind="recolor", deviation=MAX_DEVIATION + 0.01)

    def test_negative_bounds_rejected(self):
        with pytest.raises(ConfigError):
            PixelAttackConfig(epsilon=-1.0)


class TestNormBounded:
    def test_pgd_respects_ball_and_range(self, batch, quick_clf):
        x, y = batch
        cfg = PixelAttackConfig(kind="pgd", epsilon=8.0, alpha=2.0, iterations=5)
        adv = pgd(x, y, quick_clf, cfg)
        assert adv.dtype == x.dtype
        assert float(np.abs(adv - x).max()) <= 8.0 * LEVEL + 1e-6
        assert float(np.abs(adv).max()) <= 1.0

    def test_ifgsm_zero_start_deterministic(self, batch, quick_clf):
        x, y = batch
        cfg = PixelAttackConfig(kind="ifgsm", epsilon=4.0, alpha=1.0, iterations=3)
        a = ifgsm(x, y, quick_clf, cfg)
        b = ifgsm(x, y, quick_clf, cfg)
        np.testing.assert_array_equal(a, b)
        assert float(np.abs(a - x).max()) <= 4.0 * LEVEL + 1e-6

    def test_pgd_start_depends_on_seed(self, batch, quick_clf):
        x, y = batch
        a = pgd(x, y, quick_clf, PixelAttackConfig(iterations=1, seed=1))
        b = pgd(x, y, quick_clf, PixelAttackConfig(iterations=1, seed=2))
        assert not np.array_equal(a, b)

    def test_zero_epsilon_is_identity(self, batch, quick_clf):
        x, y = batch
        adv = pgd(x, y, quick_clf, PixelAttackConfig(epsilon=0.0))
        np.testing.assert_array_equal(adv, x)

    def test_attack_reduces_accuracy(self, batch, quick_clf):
        from gat.evaluation import clean_accuracy
        x, y = batch
        base = clean_accuracy(quick_clf, x, y)
        adv = pgd(x, y, quick_clf,
                  PixelAttackConfig(kind="pgd", epsilon=8.0, alpha=2.0,
                                    iterations=7))
        assert clean_accuracy(quick_clf, adv, y) < base


class TestSpatial:
    def test_output_shape_and_bounded_displacement(self, batch, quick_clf):
        x, y = batch
        cfg = PixelAttackConfig(kind="spatial", flow_budget=2.0, iterations=3)
        adv = spatial_attack(x, y, quick_clf, cfg)
        assert adv.shape == x.shape
        # border-clamped bilinear warp cannot leave the input value range
        assert adv.min() >= x.min() - 1e-6 and adv.max() <= x.max() + 1e-6

    def test_zero_budget_is_identity(self, batch, quick_clf):
        x, y = batch
        adv = spatial_attack(x, y, quick_clf,
                             PixelAttackConfig(kind="spatial", flow_budget=0.0))
        np.testing.assert_array_equal(adv, x)

    def test_moves_mass_not_values(self, quick_clf):
        # a pure warp of a binary-ish image keeps values near the original set
        x = -np.ones((1, 3, 32, 32), dtype=np.float32)
        x[:, :, 10:22, 10:22] = 1.0
        y = np.array([0])
        adv = spatial_attack(x, y, quick_clf,
                             PixelAttackConfig(kind="spatial", flow_budget=3.0,
                                               iterations=5))
        assert adv.min() >= -1.0 - 1e-6 and adv.max() <= 1.0 + 1e-6


class TestRecolor:
    def test_monotone_intensity_map(self, batch, quick_clf):
        x, y = batch
        cfg = PixelAttackConfig(kind="recolor", deviation=0.05, iterations=5)
        adv = recolor_attack(x, y, quick_clf, cfg)
        # ordering of intensities must survive the remap per image and channel
        for c in range(3):
            xi = x[0, c].ravel()
            oi = adv[0, c].ravel()
            order = np.argsort(xi, kind="stable")
            diffs = np.diff(oi[order])
            xdiffs = np.diff(xi[order])
            assert float(diffs[xdiffs > 1e-7].min(initial=0.0)) >= -1e-6

    def test_zero_deviation_is_identity(self, batch, quick_clf):
        x, y = batch
        adv = recolor_attack(x, y, quick_clf,
                             PixelAttackConfig(kind="recolor", deviation=0.0))
        np.testing.assert_array_equal(adv, x)

    def test_curve_offsets_bounded(self, batch, quick_clf):
        x, y = batch
        cfg = PixelAttackConfig(kind="recolor", deviation=0.05, iterations=5)
        adv = recolor_attack(x, y, quick_clf, cfg)
        # per-pixel change is at most the knot deviation (x2 for [-1,1] scale)
        assert float(np.abs(adv - x).max()) <= 2 * 0.05 + 1e-5


class TestDispatch:
    def test_all_kinds_run(self, batch, quick_clf):
        x, y = batch
        for kind in KINDS:
            cfg = PixelAttackConfig(kind=kind, iterations=2)
            adv = run_pixel_attack(x[:4], y[:4], quick_clf, cfg)
            assert adv.shape == (4, 3, 32, 32)
            assert np.all(np.isfinite(adv))

    def test_runs_are_deterministic(self, batch, quick_clf):
        x, y = batch
        for kind in KINDS:
            cfg = PixelAttackConfig(kind=kind, iterations=2, seed=5)
            a = run_pixel_attack(x[:4], y[:4], quick_clf, cfg)
            b = run_pixel_attack(x[:4], y[:4], quick_clf, cfg)
            np.testing.assert_array_equal(a, b)
