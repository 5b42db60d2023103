"""Dataset synthesis and the on-disk container."""

import numpy as np
import pytest

from gat.data.io import load_dataset, save_dataset, sidecar_path
from gat.data.synth import (OOD_HUE_CENTER, SynthSpec, label_hue_mutual_information,
                            nearest_centroid_accuracy, ood_spec,
                            synth_dataset, synth_ood_dataset)
from gat.errors import ConfigError


class TestSynthesis:
    def test_determinism(self):
        a = synth_dataset(SynthSpec(seed=5), 64)
        b = synth_dataset(SynthSpec(seed=5), 64)
        np.testing.assert_array_equal(a.images, b.images)
        np.testing.assert_array_equal(a.labels, b.labels)
        np.testing.assert_array_equal(a.params, b.params)

    def test_seed_changes_content(self):
        a = synth_dataset(SynthSpec(seed=5), 64)
        b = synth_dataset(SynthSpec(seed=6), 64)
        assert not np.array_equal(a.images, b.images)

    def test_class_balance_within_one(self):
        ds = synth_dataset(SynthSpec(seed=0), 66)
        counts = np.bincount(ds.labels, minlength=4)
        assert counts.max() - counts.min() <= 1

    def test_shapes_ranges_and_maps(self, tiny_train):
        ds = tiny_train
        assert ds.images.shape == (256, 3, 32, 32)
        assert ds.images.dtype == np.float32
        assert float(np.abs(ds.images).max()) <= 1.0
        assert ds.label_maps.shape == (256, 32, 32)
        # map values: 0 background, shape pixels carry class+1
        assert set(np.unique(ds.label_maps)) <= set(range(5))
        for c in range(4):
            rows = ds.labels == c
            assert set(np.unique(ds.label_maps[rows])) <= {0, c + 1}

    def test_every_image_has_some_shape_pixels(self, tiny_train):
        frac = (tiny_train.label_maps > 0).mean(axis=(1, 2))
        assert float(frac.min()) > 0.005

    def test_rejects_empty(self):
        with pytest.raises(ConfigError):
            synth_dataset(SynthSpec(seed=0), 0)

    def test_subset_keeps_alignment(self, tiny_train):
        sub = tiny_train.subset(np.array([3, 7, 11]))
        np.testing.assert_array_equal(sub.labels, tiny_train.labels[[3, 7, 11]])
        np.testing.assert_array_equal(sub.params, tiny_train.params[[3, 7, 11]])


class TestOod:
    def test_hue_band_disjoint_and_texture_swapped(self):
        spec = SynthSpec(seed=0)
        ospec = ood_spec(spec)
        assert ospec.texture == "blobs"
        assert abs(ospec.hue_center - spec.hue_center) > 2 * spec.hue_half
        ood = synth_ood_dataset(spec, 32)
        hue = ood.params[:, 5]
        assert hue.min() >= OOD_HUE_CENTER - spec.hue_half - 1e-6
        assert hue.max() <= OOD_HUE_CENTER + spec.hue_half + 1e-6

    def test_ood_images_differ_from_in_domain(self):
        a = synth_dataset(SynthSpec(seed=3), 16)
        b = synth_ood_dataset(SynthSpec(seed=3), 16)
        assert float(np.abs(a.images - b.images).mean()) > 0.05


class TestInvariants:
    def test_nearest_centroid_between_chance_and_model_grade(self, tiny_train, tiny_test):
        acc = nearest_centroid_accuracy(tiny_train, tiny_test)
        assert acc > 0.25    # better than chance: images do carry class signal
        assert acc < 0.95    # but raw pixels alone must not solve the task

    def test_label_hue_independence_at_scale(self):
        # plug-in MI carries (K-1)(B-1)/(2n) nats of positive bias, so the
        # threshold only means "independent" once n is large
        ds = synth_dataset(SynthSpec(seed=11), 10000)
        assert label_hue_mutual_information(ds, bins=8) < 0.01

    def test_mi_detects_actual_dependence(self, tiny_train):
        # relabel by hue rank: class becomes a function of hue
        rigged = tiny_train.subset(np.arange(tiny_train.n))
        hue_rank = np.argsort(np.argsort(rigged.params[:, 5]))
        rigged.labels = np.sort(rigged.labels)[hue_rank]
        assert label_hue_mutual_information(rigged, bins=8) > 0.2


class TestContainer:
    def test_roundtrip_bit_exact(self, tmp_path, tiny_test):
        p = tmp_path / "d.gatd"
        save_dataset(p, tiny_test)
        back = load_dataset(p)
        np.testing.assert_array_equal(back.images, tiny_test.images)
        np.testing.assert_array_equal(back.labels, tiny_test.labels)
        np.testing.assert_array_equal(back.label_maps, tiny_test.label_maps)
        np.testing.assert_array_equal(back.params, tiny_test.params)
        assert back.spec == tiny_test.spec

    def test_sidecar_required(self, tmp_path, tiny_test):
        p = tmp_path / "d.gatd"
        save_dataset(p, tiny_test)
        sidecar_path(p).unlink()
        with pytest.raises(ConfigError, match="sidecar"):
            load_dataset(p)

    def test_bad_magic_rejected(self, tmp_path, tiny_test):
        p = tmp_path / "d.gatd"
        save_dataset(p, tiny_test)
        raw = bytearray(p.read_bytes())
        raw[:4] = b"NOPE"
        p.write_bytes(bytes(raw))
        with pytest.raises(ConfigError, match="magic"):
            load_dataset(p)

    def test_saves_are_byte_identical(self, tmp_path):
        ds = synth_dataset(SynthSpec(seed=9), 24)
        a, b = tmp_path / "a.gatd", tmp_path / "b.gatd"
        save_dataset(a, ds)
        save_dataset(b, ds)
        assert a.read_bytes() == b.read_bytes()
        assert sidecar_path(a).read_bytes() == sidecar_path(b).read_bytes()

    def test_sidecar_header_names_parameters(self, tmp_path, tiny_test):
        import json
        p = tmp_path / "d.gatd"
        save_dataset(p, tiny_test)
        head = json.loads(sidecar_path(p).read_text().splitlines()[0])
        assert head["kind"] == "dataset"
        assert "hue_shape" in head["param_names"]
        assert head["spec"]["seed"] == tiny_test.spec.seed
