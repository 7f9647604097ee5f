"""Loss-regression heads and the joint recognition + prediction cost.

Each head reads a hidden-state sequence from the recognition model (the
encoder output for the CTC loss, the decoder states for the attention
loss), pools over time, and regresses the corresponding loss value.  The
regression targets are detached, and by default the hidden states are
detached too, so the recognition loss surface is untouched by the heads.
"""

from __future__ import annotations

from dataclasses import dataclass, asdict

import numpy as np

from . import ctc as ctc_mod
from . import numerics as nm
from .asr_model import AsrModel, BiRnn, ModelConfig, Vocab, attention_loss, task_loss
from .numerics import Tensor

ERROR_FNS = ("smooth_l1", "l1", "mse")


@dataclass
class HyperParams:
    """Mixing weights and regression-error settings."""

    ctc_weight: float = 0.3        # recognition loss mix; also reused in ranking
    lp_weight: float = 0.1         # weight of the regression error in the cost
    error_fn: str = "smooth_l1"
    smooth_l1_beta: float = 1.0
    lp_grad_to_asr: bool = False   # let head gradients reach encoder/decoder

    def validate(self) -> None:
        if not 0.0 <= self.ctc_weight <= 1.0:
            raise ValueError(f"ctc_weight must be in [0, 1], got {self.ctc_weight}")
        if self.lp_weight < 0.0:
            raise ValueError(f"lp_weight must be >= 0, got {self.lp_weight}")
        if self.error_fn not in ERROR_FNS:
            raise ValueError(f"error_fn must be one of {ERROR_FNS}, got {self.error_fn!r}")
        if self.smooth_l1_beta <= 0.0:
            raise ValueError(f"smooth_l1_beta must be > 0, got {self.smooth_l1_beta}")

    def to_dict(self) -> dict:
        return asdict(self)

    @classmethod
    def from_dict(cls, d: dict) -> "HyperParams":
        return cls(**d)


def smooth_l1(target: Tensor, pred: Tensor, beta: float) -> Tensor:
    """Quadratic inside |target-pred| < beta, linear outside; C1 at the seam."""
    if beta <= 0.0:
        raise ValueError(f"beta must be > 0, got {beta}")
    diff = target - pred
    if abs(float(diff.data)) < beta:
        return nm.mul(nm.mul(diff, diff), Tensor(0.5 / beta))
    return nm.abs_(diff) - Tensor(0.5 * beta)


def l1_error(target: Tensor, pred: Tensor) -> Tensor:
    return nm.abs_(target - pred)


def mse_error(target: Tensor, pred: Tensor) -> Tensor:
    diff = target - pred
    return nm.mul(diff, diff)


def prediction_error(target: Tensor, pred: Tensor, hyper: HyperParams) -> Tensor:
    if hyper.error_fn == "smooth_l1":
        return smooth_l1(target, pred, hyper.smooth_l1_beta)
    if hyper.error_fn == "l1":
        return l1_error(target, pred)
    return mse_error(target, pred)


def error_total(e_ctc: Tensor, e_attention: Tensor, ctc_weight: float) -> Tensor:
    """Same mixing weight as the recognition loss."""
    if not 0.0 <= ctc_weight <= 1.0:
        raise ValueError(f"ctc_weight must be in [0, 1], got {ctc_weight}")
    return nm.add(nm.mul(e_ctc, Tensor(ctc_weight)),
                  nm.mul(e_attention, Tensor(1.0 - ctc_weight)))


def joint_cost(l_ctc: Tensor, l_attention: Tensor, e_ctc: Tensor,
               e_attention: Tensor, ctc_weight: float, lp_weight: float) -> Tensor:
    """Recognition loss plus down-weighted regression error, one scalar."""
    if not 0.0 <= ctc_weight <= 1.0:
        raise ValueError(f"ctc_weight must be in [0, 1], got {ctc_weight}")
    if lp_weight < 0.0:
        raise ValueError(f"lp_weight must be >= 0, got {lp_weight}")
    task = task_loss(l_ctc, l_attention, ctc_weight)
    reg = nm.add(nm.mul(e_ctc, Tensor(lp_weight * ctc_weight)),
                 nm.mul(e_attention, Tensor(lp_weight * (1.0 - ctc_weight))))
    return nm.add(task, reg)


class LossHead:
    """BiRNN over hidden states, mean-pooled, two dense layers, softplus."""

    def __init__(self, rng: np.random.Generator, input_dim: int,
                 hidden: int, ff_dim: int):
        self.rnn = BiRnn(rng, input_dim, hidden)
        self.ff1_w = nm.init_param(rng, (2 * hidden, ff_dim), 1.0 / np.sqrt(2 * hidden))
        self.ff1_b = Tensor(np.zeros(ff_dim), requires_grad=True)
        self.ff2_w = nm.init_param(rng, (ff_dim,), 1.0 / np.sqrt(ff_dim))
        self.ff2_b = Tensor(np.zeros(()), requires_grad=True)

    def params(self, prefix: str) -> dict[str, Tensor]:
        out = self.rnn.params(f"{prefix}.rnn")
        out.update({f"{prefix}.ff1_w": self.ff1_w, f"{prefix}.ff1_b": self.ff1_b,
                    f"{prefix}.ff2_w": self.ff2_w, f"{prefix}.ff2_b": self.ff2_b})
        return out

    def predict(self, states: Tensor) -> Tensor:
        """Nonnegative scalar loss estimate from a T x input_dim sequence."""
        pooled = nm.mean_axis0(self.rnn(states))
        hidden = nm.tanh(nm.add(nm.matmul(pooled, self.ff1_w), self.ff1_b))
        raw = nm.add(nm.matmul(hidden, self.ff2_w), self.ff2_b)
        return nm.softplus(raw)


@dataclass
class CostParts:
    """Float view of one utterance's cost components."""
    l_ctc: float
    l_attention: float
    pred_ctc: float
    pred_attention: float
    e_ctc: float
    e_attention: float
    cost: float


class JointModel:
    """Recognition model plus the two loss-regression heads."""

    def __init__(self, vocab: Vocab, cfg: ModelConfig, hyper: HyperParams,
                 rng: np.random.Generator):
        hyper.validate()
        self.asr = AsrModel(vocab, cfg, rng)
        self.hyper = hyper
        enc_out = self.asr.encoder.out_dim
        self.lp_ctc = LossHead(rng, enc_out, cfg.lp_hidden, cfg.lp_ff)
        self.lp_att = LossHead(rng, cfg.dec_hidden, cfg.lp_hidden, cfg.lp_ff)

    @property
    def vocab(self) -> Vocab:
        return self.asr.vocab

    def params(self) -> dict[str, Tensor]:
        out = self.asr.params()
        out.update(self.lp_ctc.params("lp_ctc"))
        out.update(self.lp_att.params("lp_att"))
        return out

    def load_state(self, state: dict[str, np.ndarray]) -> None:
        params = self.params()
        missing = set(params) - set(state)
        extra = set(state) - set(params)
        if missing or extra:
            raise ValueError(f"checkpoint mismatch: missing={sorted(missing)} "
                             f"unexpected={sorted(extra)}")
        for name, p in params.items():
            if state[name].shape != p.data.shape:
                raise ValueError(f"shape mismatch for {name}")
            p.data[...] = state[name]

    def utterance_cost(self, features, label_ids: list[int]) -> tuple[Tensor, CostParts]:
        """Full training cost of one utterance; differentiable scalar."""
        vocab = self.vocab
        h = self.asr.encode(features)
        log_probs = self.asr.ctc_log_probs(h)
        l_ctc = ctc_mod.ctc_loss(log_probs, label_ids, vocab.ctc_blank_index)
        targets = list(label_ids) + [vocab.eos_id]
        g, logits, _ = self.asr.decoder.teacher_forced(h, targets)
        l_att = attention_loss(logits, targets)

        h_in = h if self.hyper.lp_grad_to_asr else h.detach()
        g_in = g if self.hyper.lp_grad_to_asr else g.detach()
        pred_ctc = self.lp_ctc.predict(h_in)
        pred_att = self.lp_att.predict(g_in)
        # regression targets are constants: heads chase the loss, not vice versa
        e_ctc = prediction_error(l_ctc.detach(), pred_ctc, self.hyper)
        e_att = prediction_error(l_att.detach(), pred_att, self.hyper)
        cost = joint_cost(l_ctc, l_att, e_ctc, e_att,
                          self.hyper.ctc_weight, self.hyper.lp_weight)
        parts = CostParts(l_ctc.item(), l_att.item(), pred_ctc.item(),
                          pred_att.item(), e_ctc.item(), e_att.item(), cost.item())
        return cost, parts

    def true_losses(self, features, label_ids: list[int]) -> tuple[float, float]:
        """Recognition losses with the given labels; no tape required."""
        h = self.asr.encode(features)
        log_probs = self.asr.ctc_log_probs(h)
        l_ctc = ctc_mod.ctc_loss(log_probs, label_ids, self.vocab.ctc_blank_index)
        targets = list(label_ids) + [self.vocab.eos_id]
        _, logits, _ = self.asr.decoder.teacher_forced(h, targets)
        return l_ctc.item(), attention_loss(logits, targets).item()

    def predicted_losses(self, features, max_len: int):
        """Head outputs for an unlabeled utterance.

        The decoder runs free (greedy) to produce its hidden states; the
        normalization length is the predicted token count, floored at 1.
        Returns (pred_ctc, pred_att, frames, predicted_len).
        """
        h = self.asr.encode(features)
        tokens, g, _ = self.asr.decoder.free_run(h, max_len)
        pred_ctc = self.lp_ctc.predict(h).item()
        pred_att = self.lp_att.predict(g).item()
        return pred_ctc, pred_att, h.shape[0], max(1, len(tokens))
