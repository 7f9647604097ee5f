"""Encoder/decoder contracts, attention normalization, loss formulas."""

import math

import numpy as np
import pytest

from alseqlab import numerics as nm
from alseqlab.asr_model import (AsrModel, ModelConfig, Vocab, attention_loss,
                                task_loss)
from alseqlab.numerics import Tape, Tensor

from helpers import assert_grads_close, finite_difference_grad


TINY = ModelConfig(feature_dim=4, enc_hidden=8, enc_layers=1, dec_hidden=6,
                   emb_dim=5, attn_dim=6, lp_hidden=4, lp_ff=6)


def make_model(seed=0, cfg=TINY, n_labels=3):
    vocab = Vocab(tuple(f"t{i}" for i in range(n_labels)))
    return AsrModel(vocab, cfg, np.random.default_rng(seed))


class TestVocab:
    def test_reserved_ids_distinct(self):
        v = Vocab(("a", "b", "c"))
        ids = {v.sos_id, v.eos_id, v.blank_id}
        assert len(ids) == 3
        assert all(i >= v.n_labels for i in ids)
        assert v.n_decoder_out == 5
        assert v.n_ctc_out == 4
        assert v.ctc_blank_index == 3

    def test_json_round_trip(self, tmp_path):
        v = Vocab(("x", "y"))
        p = tmp_path / "vocab.json"
        v.save(p)
        assert Vocab.load(p) == v

    def test_duplicate_tokens_rejected(self):
        with pytest.raises(ValueError):
            Vocab(("a", "a"))


class TestEncoder:
    def test_output_shape(self):
        cfg = ModelConfig(feature_dim=4, enc_hidden=8)
        model = make_model(cfg=cfg)
        h = model.encode(np.random.default_rng(0).normal(size=(7, 4)))
        assert h.shape == (7, 16)

    def test_zero_params_zero_input_gives_zero(self):
        model = make_model()
        for p in model.params().values():
            p.data[...] = 0.0
        h = model.encode(np.zeros((5, 4)))
        np.testing.assert_array_equal(h.data, 0.0)

    def test_first_frame_reaches_last_state(self):
        """Bidirectional flow: x[0] influences h[T-1]."""
        model = make_model(seed=3)
        rng = np.random.default_rng(4)
        x = rng.normal(size=(6, 4))
        base = model.encode(x).data[-1].copy()
        x2 = x.copy()
        x2[0] += 0.5
        moved = model.encode(x2).data[-1]
        assert np.max(np.abs(moved - base)) > 1e-6

    def test_feature_dim_mismatch(self):
        model = make_model()
        with pytest.raises(ValueError):
            model.encode(np.zeros((5, 9)))

    def test_two_layer_stack(self):
        cfg = ModelConfig(feature_dim=4, enc_hidden=5, enc_layers=2)
        model = make_model(cfg=cfg)
        assert model.encode(np.zeros((3, 4))).shape == (3, 10)


class TestDecoder:
    def test_teacher_forced_shapes(self):
        model = make_model()
        h = model.encode(np.random.default_rng(1).normal(size=(5, 4)))
        targets = [0, 1, model.vocab.eos_id]
        g, logits, attn = model.decoder.teacher_forced(h, targets)
        assert g.shape == (3, TINY.dec_hidden)
        assert logits.shape == (3, model.vocab.n_decoder_out)
        assert attn.shape == (3, 5)

    def test_attention_rows_sum_to_one(self):
        model = make_model(seed=5)
        h = model.encode(np.random.default_rng(2).normal(size=(9, 4)))
        _, _, attn = model.decoder.teacher_forced(h, [0, 2, 1, model.vocab.eos_id])
        assert np.all(attn >= 0)
        np.testing.assert_allclose(attn.sum(axis=1), 1.0, atol=1e-9)

    def test_single_frame_attention_is_degenerate(self):
        """With T=1 all attention mass sits on the only encoder frame."""
        model = make_model(seed=6)
        h = model.encode(np.random.default_rng(3).normal(size=(1, 4)))
        _, _, attn = model.decoder.teacher_forced(h, [1, model.vocab.eos_id])
        np.testing.assert_allclose(attn, 1.0, atol=1e-12)

    def test_target_out_of_range(self):
        model = make_model()
        h = model.encode(np.zeros((2, 4)))
        with pytest.raises(ValueError):
            model.decoder.teacher_forced(h, [99])


class TestAttentionLoss:
    def test_uniform_single_step(self):
        logits = Tensor(np.zeros((1, 4)))
        assert attention_loss(logits, [2]).item() == pytest.approx(math.log(4), abs=1e-12)

    def test_confident_correct_is_zero(self):
        logits = np.full((1, 4), -1e4)
        logits[0, 1] = 1e4
        assert attention_loss(Tensor(logits), [1]).item() == pytest.approx(0.0, abs=1e-12)

    def test_additive_over_steps(self):
        logits = Tensor(np.zeros((2, 4)))
        assert attention_loss(logits, [0, 3]).item() == pytest.approx(2 * math.log(4), abs=1e-12)


class TestTaskLoss:
    def test_weighted_mix(self):
        val = task_loss(Tensor(2.0), Tensor(1.0), 0.3).item()
        assert val == pytest.approx(1.3, abs=1e-12)

    def test_extremes(self):
        assert task_loss(Tensor(2.0), Tensor(1.0), 1.0).item() == 2.0
        assert task_loss(Tensor(2.0), Tensor(1.0), 0.0).item() == 1.0

    def test_out_of_range(self):
        with pytest.raises(ValueError):
            task_loss(Tensor(2.0), Tensor(1.0), 1.5)


class TestGreedyTranscribe:
    def test_immediate_eos_gives_empty(self):
        model = make_model()
        # bias the output head overwhelmingly toward eos
        model.decoder.b_out.data[...] = -50.0
        model.decoder.b_out.data[model.vocab.eos_id] = 50.0
        assert model.transcribe(np.zeros((4, 4)), max_len=8) == []

    def test_length_capped_by_max_len(self):
        model = make_model(seed=8)
        # bias away from eos so decoding runs to the cap
        model.decoder.b_out.data[model.vocab.eos_id] = -50.0
        out = model.transcribe(np.random.default_rng(5).normal(size=(4, 4)), max_len=5)
        assert len(out) <= 5

    def test_invalid_max_len(self):
        model = make_model()
        with pytest.raises(ValueError):
            model.transcribe(np.zeros((2, 4)), max_len=0)


def test_task_gradients_match_finite_differences():
    """Mixed CTC+attention loss gradient for every trainable tensor."""
    from alseqlab import ctc as ctc_mod

    model = make_model(seed=11)
    rng = np.random.default_rng(12)
    x = rng.normal(size=(4, 4))
    labels = [0, 2]
    targets = labels + [model.vocab.eos_id]

    def loss_value():
        h = model.encode(x)
        l_ctc = ctc_mod.ctc_loss(model.ctc_log_probs(h), labels,
                                 model.vocab.ctc_blank_index)
        _, logits, _ = model.decoder.teacher_forced(h, targets)
        return task_loss(l_ctc, attention_loss(logits, targets), 0.3).item()

    with Tape() as tape:
        h = model.encode(x)
        l_ctc = ctc_mod.ctc_loss(model.ctc_log_probs(h), labels,
                                 model.vocab.ctc_blank_index)
        _, logits, _ = model.decoder.teacher_forced(h, targets)
        loss = task_loss(l_ctc, attention_loss(logits, targets), 0.3)
    tape.backward(loss)

    params = model.params()
    fd = finite_difference_grad(loss_value, params)
    assert_grads_close({k: p.grad for k, p in params.items()}, fd)


def test_checkpoint_round_trip_through_model(tmp_path):
    model = make_model(seed=14)
    path = tmp_path / "asr.ckpt"
    nm.save_params(path, model.params())
    other = make_model(seed=99)
    other.load_state(nm.load_params(path))
    x = np.random.default_rng(15).normal(size=(5, 4))
    np.testing.assert_array_equal(model.encode(x).data, other.encode(x).data)


def test_checkpoint_mismatch_detected(tmp_path):
    model = make_model(seed=14)
    path = tmp_path / "asr.ckpt"
    nm.save_params(path, model.params())
    bigger = make_model(seed=14, cfg=ModelConfig(feature_dim=5, enc_hidden=8,
                                                 dec_hidden=6, emb_dim=5, attn_dim=6))
    with pytest.raises(ValueError):
        bigger.load_state(nm.load_params(path))
