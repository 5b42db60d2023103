"""Latent attack mechanics: the exact update rule, stop conditions, stats."""

import dataclasses
import json

import numpy as np
import pytest

from gat.attacks import latent
from gat.attacks.latent import (ALL_LAYERS, AttackConfig, AttackOutcome,
                                LatentState, LayerGroup, attack_states,
                                attack_stats, batch_attack, export_outcomes,
                                least_likely, nontargeted_step, run_attack,
                                targeted_step)
from gat.errors import ConfigError
from gat.tensor import as_tensor, no_grad


def fresh_state(gen, seed, n=1):
    return LatentState.sample(gen, seed, n)


def synth_logits(gen, clf, state):
    with no_grad():
        img = gen.synthesize([as_tensor(s) for s in state.styles],
                             [as_tensor(m) for m in state.noises])
        return img.data, clf.logits(as_tensor(img.data)).data


def in_candidate_set(before, after, step):
    """True where after is bitwise fl(before - step), before, or fl(before + step)."""
    step = np.float32(step)
    cand = np.stack([before - step, before, before + step])
    return (after[None] == cand).any(axis=0)


class TestConfig:
    def test_validation(self):
        with pytest.raises(ConfigError):
            AttackConfig(mode="sideways")
        with pytest.raises(ConfigError):
            AttackConfig(variables="texture")
        with pytest.raises(ConfigError):
            AttackConfig(mode="targeted")        # no target class
        with pytest.raises(ConfigError):
            AttackConfig(epsilon=-0.1)
        with pytest.raises(ConfigError):
            AttackConfig(max_iters=0)

    def test_layer_group(self):
        g = LayerGroup.parse("2:5")
        assert 2 in g and 5 in g and 6 not in g
        with pytest.raises(ConfigError):
            LayerGroup(3, 1)
        with pytest.raises(ConfigError):
            LayerGroup.parse("7")
        with pytest.raises(ConfigError):
            LayerGroup(0, 99)

    def test_hash_stable_and_sensitive(self):
        a = AttackConfig()
        assert a.hash() == AttackConfig().hash()
        assert a.hash() != dataclasses.replace(a, epsilon=0.01).hash()


class TestLeastLikely:
    def test_picks_minimum(self):
        assert least_likely([0.5, 0.1, 0.4]) == 1

    def test_ties_to_lowest_index(self):
        assert least_likely([0.3, 0.2, 0.2, 0.3]) == 1

    def test_rejects_matrix(self):
        with pytest.raises(ConfigError):
            least_likely(np.ones((2, 2)))


class TestStepContract:
    """Every updated coordinate is bitwise fl(y - eps), y, or fl(y + eps);
    out-of-group layers and the unselected variable set are untouched."""

    def test_style_step_values_and_group_mask(self, quick_clf, gens):
        gen = gens[0]
        cfg = AttackConfig(variables="style", epsilon=0.004,
                           style_layers=LayerGroup(2, 3))
        state = fresh_state(gen, seed=100, n=4)
        new = nontargeted_step(state, cfg, quick_clf, gen)
        moved = 0
        for l in range(8):
            if l in (2, 3):
                assert in_candidate_set(state.styles[l], new.styles[l],
                                        cfg.epsilon).all()
                moved += int((new.styles[l] != state.styles[l]).sum())
            else:
                np.testing.assert_array_equal(new.styles[l], state.styles[l])
            np.testing.assert_array_equal(new.noises[l], state.noises[l])
        assert moved > 0

    def test_noise_step_in_group_only(self, quick_clf, gens):
        gen = gens[1]
        cfg = AttackConfig(variables="noise", delta=0.2,
                           noise_layers=LayerGroup(0, 1))
        state = fresh_state(gen, seed=101, n=3)
        new = nontargeted_step(state, cfg, quick_clf, gen)
        for l in range(8):
            np.testing.assert_array_equal(new.styles[l], state.styles[l])
            if l in (0, 1):
                assert in_candidate_set(state.noises[l], new.noises[l],
                                        cfg.delta).all()
            else:
                np.testing.assert_array_equal(new.noises[l], state.noises[l])

    def test_both_mode_uses_separate_step_sizes(self, quick_clf, gens):
        gen = gens[2]
        cfg = AttackConfig(variables="both", epsilon=0.004, delta=0.2)
        state = fresh_state(gen, seed=102, n=2)
        new = nontargeted_step(state, cfg, quick_clf, gen)
        for l in range(8):
            assert in_candidate_set(state.styles[l], new.styles[l],
                                    cfg.epsilon).all()
            assert in_candidate_set(state.noises[l], new.noises[l],
                                    cfg.delta).all()


class TestAttackLoop:
    def test_outcome_fields_consistent(self, quick_clf, gens):
        cfg = AttackConfig(variables="both", max_iters=8)
        outs = batch_attack([1, 2, 3, 4], cfg, quick_clf, gens[0])
        for o in outs:
            assert o.label == 0
            assert 0 <= o.iterations_used <= 8
            assert len(o.trajectory) == o.iterations_used + 1
            if o.fooled:
                assert o.final_prediction != o.label
            else:
                assert o.iterations_used == 8

    def test_initially_misclassified_counts_at_zero(self, gens):
        # a constant-logit stub misclassifies labels > 0 immediately
        class Stub:
            def logits(self, x):
                n = x.shape[0]
                from gat.tensor import as_tensor
                fixed = np.tile(np.array([[9.0, 1.0, 2.0, 3.0]], np.float32),
                                (n, 1))
                return as_tensor(fixed)

            def predict(self, x):
                return self.logits(x).data.argmax(axis=1)

        out = run_attack(fresh_state(gens[1], 7), 1, AttackConfig(),
                         Stub(), gens[1])
        assert out.fooled and out.iterations_used == 0
        assert out.original_prediction == 0

    def test_nontargeted_target_is_initial_least_likely(self, quick_clf, gens):
        gen = gens[2]
        cfg = AttackConfig(variables="both", max_iters=6)
        for seed in (11, 12, 13):
            state = fresh_state(gen, seed)
            _, logits = synth_logits(gen, quick_clf, state)
            out = run_attack(state, gen.shape_class, cfg, quick_clf, gen)
            assert out.target == int(logits.argmin(axis=1)[0])

    def test_stop_at_first_success_image_matches_state(self, quick_clf, gens):
        cfg = AttackConfig(variables="both", max_iters=25)
        fooled, gen = [], None
        for gen in gens:
            outs = batch_attack(list(range(20, 36)), cfg, quick_clf, gen)
            fooled = [o for o in outs if o.fooled and o.iterations_used > 0]
            if fooled:
                break
        assert fooled, "expected at least one multi-iteration success"
        o = fooled[0]
        img, logits = synth_logits(gen, quick_clf, o.state)
        np.testing.assert_allclose(img[0], o.image, atol=1e-6)
        assert int(logits.argmax(axis=1)[0]) == o.final_prediction

    def test_batch_equals_single_sample_runs(self, quick_clf, gens):
        cfg = AttackConfig(variables="both", max_iters=5)
        gen = gens[0]
        state = fresh_state(gen, seed=200, n=3)
        merged = attack_states(state, [0, 0, 0], cfg, quick_clf, gen)
        for i in range(3):
            single = attack_states(state.row(i), [0], cfg, quick_clf, gen)[0]
            assert single.fooled == merged[i].fooled
            assert single.iterations_used == merged[i].iterations_used
            np.testing.assert_array_equal(single.image, merged[i].image)

    def test_targeted_mode_success_predicate(self, quick_clf, gens):
        cfg = AttackConfig(mode="targeted", target=2, variables="both",
                           max_iters=15)
        outs = batch_attack([31, 32, 33, 34], cfg, quick_clf, gens[0])
        for o in outs:
            assert o.target == 2
            if o.fooled:
                assert o.final_prediction == 2

    def test_targeted_at_own_label_rejected(self, quick_clf, gens):
        cfg = AttackConfig(mode="targeted", target=1, variables="both")
        with pytest.raises(ConfigError):
            attack_states(fresh_state(gens[1], 1), [1], cfg, quick_clf, gens[1])

    def test_label_batch_size_mismatch(self, quick_clf, gens):
        with pytest.raises(ConfigError):
            attack_states(fresh_state(gens[0], 1, n=2), [0], AttackConfig(),
                          quick_clf, gens[0])


class TestStats:
    def test_stats_match_brute_force(self, quick_clf, gens):
        cfg = AttackConfig(variables="both", max_iters=6)
        outs = batch_attack(list(range(40, 52)), cfg, quick_clf, gens[1])
        stats = attack_stats(outs)
        fooled = [o for o in outs if o.fooled]
        assert stats["total"] == 12
        assert stats["fooled"] == len(fooled)
        assert stats["fooling_rate"] == pytest.approx(len(fooled) / 12)
        if fooled:
            its = np.array([o.iterations_used for o in fooled], np.float64)
            assert stats["mean_iterations"] == pytest.approx(its.mean())
            assert stats["std_iterations"] == pytest.approx(its.std())

    def test_empty_outcomes(self):
        s = attack_stats([])
        assert s["total"] == 0 and s["fooling_rate"] == 0.0
        assert s["mean_iterations"] is None

    def test_export_jsonl_deterministic(self, tmp_path, quick_clf, gens):
        cfg = AttackConfig(variables="both", max_iters=4)
        outs = batch_attack([61, 62], cfg, quick_clf, gens[2])
        a, b = tmp_path / "a.jsonl", tmp_path / "b.jsonl"
        export_outcomes(a, outs, cfg)
        export_outcomes(b, outs, cfg)
        assert a.read_bytes() == b.read_bytes()
        recs = [json.loads(line) for line in a.read_text().splitlines()]
        assert len(recs) == 2
        for rec, o in zip(recs, outs):
            assert rec["fooled"] == o.fooled
            assert rec["iterations"] == o.iterations_used
            assert rec["config_hash"] == cfg.hash()
            assert len(rec["predictions"]) == len(o.trajectory)


class TestStepHelpers:
    def test_targeted_step_requires_target(self, quick_clf, gens):
        with pytest.raises(ConfigError):
            targeted_step(fresh_state(gens[0], 1),
                          AttackConfig(variables="style"), quick_clf, gens[0])

    def test_steps_return_new_state(self, quick_clf, gens):
        state = fresh_state(gens[0], 70, n=2)
        cfg = AttackConfig(mode="targeted", target=3, variables="noise")
        new = targeted_step(state, cfg, quick_clf, gens[0])
        assert new is not state
        # originals untouched
        st2 = fresh_state(gens[0], 70, n=2)
        for l in range(8):
            np.testing.assert_array_equal(state.styles[l], st2.styles[l])
