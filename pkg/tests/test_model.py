import math
from dataclasses import replace

import numpy as np
import pytest

import oracles
from gatcap.config import (ABLATION_VARIANTS, STRATEGY_VARIANTS, ConfigError, ModelConfig, TrainConfig,
                           apply_overrides, format_kv, parse_kv, variant)
from gatcap.model import collate_tokens, forward_xent, prepare_tokens, sequence_log_prob
from gatcap.params import expected_shapes, init_params, n_parameters, zero_params
from gatcap.scenes import BOS, EOS, PAD
from gatcap.training import TrainingDiverged, train

CFG = ModelConfig(d=6, d_m=8, d_h=8, d_w=6, h=2, L_enc=1, L_dec=1, d_ff=12, V=10, T_max=6)


def toy_examples(n, cfg, seed=0, max_len=4):
    rng = np.random.default_rng(seed)
    out = []
    for _ in range(n):
        regions = oracles.random_regions(rng, int(rng.integers(1, 4)), cfg.d)
        words = list(rng.integers(4, cfg.V, size=int(rng.integers(1, max_len + 1))))
        out.append((regions, words))
    return out


class TestConfig:
    @pytest.mark.parametrize("bad", [dict(h=3), dict(d_m=0), dict(T_max=1), dict(mode_geometry="mul"),
                                     dict(mode_position="rope"), dict(glu_placement="dec")])
    def test_invalid(self, bad):
        with pytest.raises(ConfigError):
            replace(CFG, **bad)

    def test_lr_schedule(self):
        t = TrainConfig()
        assert t.lr_at(1) == t.lr_at(3) == 5e-4
        np.testing.assert_allclose(t.lr_at(4), 4e-4, rtol=1e-15)
        np.testing.assert_allclose(t.lr_at(7), 3.2e-4, rtol=1e-15)

    def test_kv_roundtrip(self):
        cfg = replace(CFG, mode_geometry="add", dec_self_attn=True)
        assert apply_overrides(ModelConfig(), parse_kv(format_kv(cfg))) == cfg

    def test_unknown_key_rejected(self):
        with pytest.raises(ConfigError):
            apply_overrides(CFG, {"width": "3"})

    def test_variants(self):
        full = variant(CFG, "Full: GAT")
        assert (full.mode_geometry, full.mode_position, full.glu_placement) == ("concat", "lstm", "enc")
        base = variant(CFG, "Base")
        assert (base.mode_geometry, base.mode_position, base.glu_placement) == ("off", "sinusoidal", "none")
        assert base.use_dec_self_attn and not full.use_dec_self_attn
        assert len(ABLATION_VARIANTS) == 4 and len(STRATEGY_VARIANTS) == 5
        with pytest.raises(ConfigError):
            variant(CFG, "Full")


class TestParams:
    def test_shapes_match_param_table(self):
        for name in ABLATION_VARIANTS:
            cfg = variant(CFG, name)
            p = init_params(cfg, 0)
            assert {k: v.shape for k, v in p.items()} == expected_shapes(cfg)

    def test_geometry_parameters_only_when_used(self):
        off = init_params(variant(CFG, "Base"), 0)
        on = init_params(variant(CFG, "Base+GSR"), 0)
        assert not any("W_QG" in k or k.startswith("enc.geo") for k in off)
        assert on["enc.layer0.head0.W_QG"].shape == (CFG.d_m, CFG.d_head)
        assert on["enc.layer0.glu.W_g"].shape == (2 * CFG.d_m, CFG.d_m)
        assert n_parameters(on) > n_parameters(off)

    def test_init_deterministic(self):
        a, b = init_params(CFG, 5), init_params(CFG, 5)
        assert all(np.array_equal(a[k].data, b[k].data) for k in a)
        c = init_params(CFG, 6)
        assert not np.array_equal(a["dec.embed"].data, c["dec.embed"].data)


class TestTokens:
    def test_collate(self):
        tb = collate_tokens([[5, 6, 7], [8]], T_max=16)
        np.testing.assert_array_equal(tb.inputs, [[BOS, 5, 6, 7], [BOS, 8, PAD, PAD]])
        np.testing.assert_array_equal(tb.targets, [[5, 6, 7, EOS], [8, EOS, PAD, PAD]])
        np.testing.assert_array_equal(tb.weights, [[1, 1, 1, 1], [1, 1, 0, 0]])

    def test_truncation(self):
        assert prepare_tokens([BOS, 4, 5, 6, 7, EOS], T_max=2) == [4, 5]


class TestForwardXent:
    @pytest.mark.parametrize("name", list(ABLATION_VARIANTS))
    def test_uniform_model_loss_is_log_v(self, name):
        cfg = variant(CFG, name)
        loss = forward_xent(toy_examples(5, cfg), zero_params(cfg), cfg)
        np.testing.assert_allclose(loss.item(), math.log(cfg.V), rtol=1e-14)

    def test_batch_order_invariant(self):
        ex = toy_examples(7, CFG, seed=1)
        p = init_params(CFG, 1)
        perm = np.random.default_rng(1).permutation(7)
        a = forward_xent(ex, p, CFG).item()
        b = forward_xent([ex[i] for i in perm], p, CFG).item()
        assert abs(a - b) <= 1e-12

    def test_matches_summed_log_prob(self):
        ex = toy_examples(4, CFG, seed=2)
        p = init_params(CFG, 2)
        total = sum(sequence_log_prob(r, w, p, CFG) for r, w in ex)
        n_tokens = sum(len(w) + 1 for _, w in ex)
        np.testing.assert_allclose(forward_xent(ex, p, CFG).item(), -total / n_tokens, rtol=1e-12)

    def test_unk_only_reference(self):
        loss = forward_xent([(oracles.random_regions(np.random.default_rng(3), 2, CFG.d), [3])],
                            init_params(CFG, 3), CFG)
        assert np.isfinite(loss.item())

    def test_empty_batch(self):
        with pytest.raises(ValueError):
            forward_xent([], init_params(CFG, 0), CFG)


class TestTrain:
    def test_memorization(self):
        ex = toy_examples(10, CFG, seed=4)
        _, report = train(ex, CFG, TrainConfig(lr=1e-2, epochs=50, batch_size=2, decay_every=100))
        losses = [e.loss for e in report.epochs]
        assert losses[-1] < 0.1 < losses[0]
        assert report.final_accuracy >= 0.99

    def test_deterministic(self):
        ex = toy_examples(12, CFG, seed=5)
        tcfg = TrainConfig(lr=1e-3, epochs=2, batch_size=4, seed=3)
        a, ra = train(ex, CFG, tcfg)
        b, rb = train(ex, CFG, tcfg)
        assert all(np.array_equal(a[k].data, b[k].data) for k in a)
        assert [e.loss for e in ra.epochs] == [e.loss for e in rb.epochs]

    def test_nan_abort_names_parameter(self):
        ex = toy_examples(4, CFG, seed=6)
        p = init_params(CFG, 0)
        p["dec.lstm.W_h"].data[0, 0] = np.nan  # corrupt in place, as a bad update would
        with pytest.raises(TrainingDiverged) as info:
            train(ex, CFG, TrainConfig(epochs=1), params=p)
        assert info.value.parameter == "dec.lstm.W_h"
        assert "dec.lstm.W_h" in str(info.value)

    def test_report_finite(self):
        _, report = train(toy_examples(6, CFG, seed=7), CFG, TrainConfig(epochs=2, batch_size=3))
        d = report.to_dict()
        assert d["seed"] == 0 and len(d["epochs"]) == 2
        assert all(e.loss >= 0 and np.isfinite(e.loss) for e in report.epochs)
