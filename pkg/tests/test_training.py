"""Training-loop mechanics: config, schedule, batch generation, abort.

Full hardening runs live in the acceptance suite; everything here uses a
handful of epochs on small slices.
"""

import numpy as np
import pytest

from gat import training
from gat.attacks import latent
from gat.errors import ConfigError, GateError
from gat.models.classifier import Classifier
from gat.models.segmenter import Segmenter
from gat.models.spade import SpadeGenerator
from gat.rng import stream
from gat.tensor import as_tensor
from gat.training import (NOISE_GROUP_CYCLE, STYLE_GROUP_CYCLE, TrainConfig,
                          TrainRun, adversarial_train, baseline_adv_train,
                          generate_gat_batch, generate_gat_batch_unfiltered,
                          seg_adversarial_train)


class TestConfig:
    @pytest.mark.parametrize("kwargs", [
        {"threshold": 0},
        {"attack": "fgsm"},
        {"ratio": "one:one"},
        {"ratio": "0:1"},
        {"ratio": "1:-1"},
    ])
    def test_rejects(self, kwargs):
        with pytest.raises(ConfigError):
            TrainConfig(**kwargs)

    def test_parts(self):
        assert TrainConfig(ratio="3:1").parts() == (3, 1)
        assert TrainConfig(ratio="1:0").parts() == (1, 0)

    def test_hash_tracks_fields(self):
        assert TrainConfig().hash() == TrainConfig().hash()
        assert TrainConfig().hash() != TrainConfig(epochs=3).hash()


class TestSchedule:
    def test_alternates_variables(self):
        assert training._schedule(0)[0] == "style"
        assert training._schedule(1)[0] == "noise"
        assert training._schedule(2)[0] == "style"

    def test_style_cycle(self):
        groups = [training._schedule(2 * k)[1]
                  for k in range(len(STYLE_GROUP_CYCLE))]
        assert tuple(groups) == STYLE_GROUP_CYCLE

    def test_noise_cycle(self):
        groups = [training._schedule(2 * k + 1)[1]
                  for k in range(len(NOISE_GROUP_CYCLE))]
        assert tuple(groups) == NOISE_GROUP_CYCLE
        assert NOISE_GROUP_CYCLE[-1] == latent.ALL_LAYERS


class TestBatchGeneration:
    def test_unfiltered_returns_all(self, quick_clf, gens):
        cfg = TrainConfig(threshold=2)
        rng = stream(0, "t")
        images, labels, rate = generate_gat_batch_unfiltered(
            quick_clf, gens, cfg, 12, rng, batch_index=0)
        assert images.shape == (12, 3, 32, 32)
        assert labels.shape == (12,)
        assert rate == 1.0
        assert images.dtype == np.float32

    def test_filtered_keeps_fooling_samples(self, quick_clf, gens):
        cfg = TrainConfig(threshold=4, retry_factor=3)
        rng = stream(1, "t")
        images, labels, rate = generate_gat_batch(
            quick_clf, gens, cfg, 8, rng, batch_index=0)
        assert images.shape[0] == labels.shape[0] <= 8
        assert 0.0 <= rate <= 1.0
        if images.shape[0]:
            # every kept sample fooled the model at generation time, and the
            # model has not been updated since
            preds = quick_clf.predict(as_tensor(images))
            assert (preds != labels).all()

    def test_short_batch_when_model_resists(self, quick_clf, gens):
        # zero step sizes make fooling possible only at iteration zero,
        # so the filter keeps almost nothing and the batch comes back short
        cfg = TrainConfig(threshold=1, epsilon=0.0, delta=0.0, retry_factor=1)
        rng = stream(2, "t")
        images, labels, rate = generate_gat_batch(
            quick_clf, gens, cfg, 16, rng, batch_index=0)
        assert images.shape[0] < 16
        assert rate < 0.5


class TestAdversarialTrain:
    def test_gat_needs_generators(self, tiny_train):
        model = Classifier(seed=9)
        with pytest.raises(ConfigError, match="generators"):
            adversarial_train(model, tiny_train, TrainConfig(epochs=1))

    def test_plain_supervised_when_ratio_has_no_adv(self, tiny_train):
        model = Classifier(seed=9)
        sub = tiny_train.subset(np.arange(64))
        cfg = TrainConfig(epochs=2, ratio="1:0", batch_size=16, seed=3)
        run = adversarial_train(model, sub, cfg)
        assert len(run.clean_accuracy) == 2
        assert run.adv_accuracy == [None, None]
        assert run.acceptance_rate == [None, None]
        assert run.final_clean_accuracy == run.clean_accuracy[-1]

    def test_supervised_learns(self, tiny_train, tiny_test):
        model = Classifier(seed=9)
        sub = tiny_train.subset(np.arange(128))
        cfg = TrainConfig(epochs=2, ratio="1:0", batch_size=16, seed=3)
        run = adversarial_train(model, sub, cfg, test_dataset=tiny_test)
        assert run.final_clean_accuracy > 0.5

    def test_acceptance_collapse_aborts(self, quick_clf, gens, tiny_train):
        sub = tiny_train.subset(np.arange(32))
        cfg = TrainConfig(epochs=1, batch_size=8, threshold=1, epsilon=0.0,
                          delta=0.0, retry_factor=1, min_acceptance=0.5,
                          acceptance_window=2, seed=4)
        with pytest.raises(GateError, match="acceptance collapsed"):
            adversarial_train(quick_clf, sub, cfg, generators=gens)

    def test_gat_epoch_smoke(self, gens, tiny_train, tiny_test):
        model = Classifier(seed=9)
        sub = tiny_train.subset(np.arange(48))
        cfg = TrainConfig(epochs=1, batch_size=8, threshold=2,
                          retry_factor=2, seed=5)
        run = adversarial_train(model, sub, cfg, generators=gens,
                                test_dataset=tiny_test)
        assert len(run.clean_accuracy) == 1
        assert run.acceptance_rate[0] is not None
        assert run.adv_accuracy[0] is None or 0.0 <= run.adv_accuracy[0] <= 1.0

    def test_run_summary_shape(self, tiny_train):
        model = Classifier(seed=9)
        sub = tiny_train.subset(np.arange(32))
        cfg = TrainConfig(epochs=1, ratio="1:0", batch_size=16)
        run = adversarial_train(model, sub, cfg)
        s = run.summary()
        assert s["config"]["ratio"] == "1:0"
        assert s["config_hash"] == cfg.hash()
        assert s["checkpoint_path"] is None
        assert len(s["clean_accuracy"]) == 1


class TestBaselines:
    def test_unknown_kind(self, tiny_train):
        with pytest.raises(ConfigError):
            baseline_adv_train(Classifier(seed=9), tiny_train, "fgsm",
                               TrainConfig(epochs=1))

    def test_pixel_baseline_smoke(self, tiny_train, tiny_test):
        model = Classifier(seed=9)
        sub = tiny_train.subset(np.arange(32))
        cfg = TrainConfig(epochs=1, batch_size=8, pixel_iterations=2, seed=6)
        run = baseline_adv_train(model, sub, "pgd", cfg,
                                 test_dataset=tiny_test)
        assert run.config.attack == "pgd"
        assert run.acceptance_rate == [1.0]
        assert run.adv_accuracy == [None]

    def test_ifgsm_capped_uses_iters_cap(self, tiny_train):
        model = Classifier(seed=9)
        sub = tiny_train.subset(np.arange(16))
        cfg = TrainConfig(epochs=1, batch_size=8, iters_cap=2, seed=6)
        run = baseline_adv_train(model, sub, "ifgsm-capped", cfg)
        assert run.config.attack == "ifgsm-capped"


class TestSegTrain:
    def test_smoke(self, tiny_train):
        sub = tiny_train.subset(np.arange(8))
        seg_model = Segmenter(num_seg_classes=sub.num_seg_classes, seed=7)
        spade = SpadeGenerator(num_seg_classes=sub.num_seg_classes, seed=7)
        cfg = TrainConfig(epochs=1, batch_size=4, threshold=2, seed=7)
        run = seg_adversarial_train(seg_model, sub, cfg, spade)
        assert len(run.clean_accuracy) == 1
        assert 0.0 <= run.clean_accuracy[0] <= 1.0
        assert run.final_adv_accuracy is None

    def test_clean_only_never_attacks(self, tiny_train):
        sub = tiny_train.subset(np.arange(8))
        seg_model = Segmenter(num_seg_classes=sub.num_seg_classes, seed=7)
        cfg = TrainConfig(epochs=1, ratio="1:0", batch_size=4, seed=7)
        run = seg_adversarial_train(seg_model, sub, cfg, spade_gen=None)
        assert len(run.clean_accuracy) == 1
