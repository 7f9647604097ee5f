"""Recognition model: shared recurrent encoder with a CTC head and an
attention decoder, trained with a weighted mix of the two losses.

Desk-scale stand-in for large transformer stacks: tanh recurrences, one
attention head, float64 throughout.  Teacher-forced decoding feeds ground
truth history; free-running decoding feeds the argmax token back in.
"""

from __future__ import annotations

import json
from dataclasses import dataclass, field, asdict
from typing import Sequence

import numpy as np

from . import numerics as nm
from .numerics import Tensor


@dataclass(frozen=True)
class Vocab:
    """Label alphabet plus reserved ids.

    Ids 0..n-1 are labels; sos = n and eos = n+1 (decoder output space is
    exactly n+2 wide).  blank = n+2 stays outside the decoder space; the
    CTC head is n+1 wide with blank as its last column
    (``ctc_blank_index``).
    """

    tokens: tuple[str, ...]

    def __post_init__(self):
        if len(set(self.tokens)) != len(self.tokens):
            raise ValueError("duplicate tokens in vocabulary")

    @property
    def n_labels(self) -> int:
        return len(self.tokens)

    @property
    def sos_id(self) -> int:
        return self.n_labels

    @property
    def eos_id(self) -> int:
        return self.n_labels + 1

    @property
    def blank_id(self) -> int:
        return self.n_labels + 2

    @property
    def ctc_blank_index(self) -> int:
        return self.n_labels

    @property
    def n_decoder_out(self) -> int:
        return self.n_labels + 2

    @property
    def n_ctc_out(self) -> int:
        return self.n_labels + 1

    def ids_of(self, tokens: Sequence[str]) -> list[int]:
        index = {t: i for i, t in enumerate(self.tokens)}
        return [index[t] for t in tokens]

    def tokens_of(self, ids: Sequence[int]) -> list[str]:
        return [self.tokens[i] for i in ids]

    def to_json(self) -> str:
        return json.dumps({"tokens": list(self.tokens),
                           "sos_id": self.sos_id,
                           "eos_id": self.eos_id,
                           "blank_id": self.blank_id})

    @classmethod
    def from_json(cls, text: str) -> "Vocab":
        return cls(tokens=tuple(json.loads(text)["tokens"]))

    def save(self, path) -> None:
        with open(path, "w", encoding="utf-8") as f:
            f.write(self.to_json())
            f.write("\n")

    @classmethod
    def load(cls, path) -> "Vocab":
        with open(path, encoding="utf-8") as f:
            return cls.from_json(f.read())


@dataclass
class ModelConfig:
    feature_dim: int = 8
    enc_hidden: int = 32      # per direction; encoder output width is 2x
    enc_layers: int = 1
    dec_hidden: int = 32
    emb_dim: int = 16
    attn_dim: int = 32
    lp_hidden: int = 16       # loss-head recurrent width per direction
    lp_ff: int = 32

    def to_dict(self) -> dict:
        return asdict(self)

    @classmethod
    def from_dict(cls, d: dict) -> "ModelConfig":
        return cls(**d)


class RnnCell:
    """Single tanh recurrence: h_t = tanh(x_t W + h_{t-1} U + b)."""

    def __init__(self, rng: np.random.Generator, input_dim: int, hidden: int):
        self.hidden = hidden
        self.w = nm.init_param(rng, (input_dim, hidden), 1.0 / np.sqrt(input_dim))
        self.u = nm.init_param(rng, (hidden, hidden), 1.0 / np.sqrt(hidden))
        self.b = Tensor(np.zeros(hidden), requires_grad=True)

    def params(self, prefix: str) -> dict[str, Tensor]:
        return {f"{prefix}.w": self.w, f"{prefix}.u": self.u, f"{prefix}.b": self.b}

    def scan(self, x: Tensor, reverse: bool = False) -> Tensor:
        """Run over all rows of x (T x input_dim); returns T x hidden."""
        pre = nm.add(nm.matmul(x, self.w), self.b)
        T = pre.shape[0]
        h = Tensor(np.zeros(self.hidden))
        rows = []
        order = range(T - 1, -1, -1) if reverse else range(T)
        for t in order:
            h = nm.tanh(nm.add(nm.row(pre, t), nm.matmul(h, self.u)))
            rows.append(h)
        if reverse:
            rows.reverse()
        return nm.stack_rows(rows)


class BiRnn:
    """Bidirectional recurrence; output concatenates both directions."""

    def __init__(self, rng: np.random.Generator, input_dim: int, hidden: int):
        self.fwd = RnnCell(rng, input_dim, hidden)
        self.bwd = RnnCell(rng, input_dim, hidden)

    def params(self, prefix: str) -> dict[str, Tensor]:
        return {**self.fwd.params(f"{prefix}.fwd"), **self.bwd.params(f"{prefix}.bwd")}

    def __call__(self, x: Tensor) -> Tensor:
        return nm.concat_cols(self.fwd.scan(x), self.bwd.scan(x, reverse=True))


class Encoder:
    """Stack of bidirectional layers plus a linear output projection."""

    def __init__(self, rng: np.random.Generator, cfg: ModelConfig):
        self.layers = []
        in_dim = cfg.feature_dim
        for _ in range(cfg.enc_layers):
            self.layers.append(BiRnn(rng, in_dim, cfg.enc_hidden))
            in_dim = 2 * cfg.enc_hidden
        self.proj_w = nm.init_param(rng, (in_dim, in_dim), 1.0 / np.sqrt(in_dim))
        self.proj_b = Tensor(np.zeros(in_dim), requires_grad=True)
        self.out_dim = in_dim

    def params(self) -> dict[str, Tensor]:
        out: dict[str, Tensor] = {}
        for i, layer in enumerate(self.layers):
            out.update(layer.params(f"encoder.layer{i}"))
        out["encoder.proj_w"] = self.proj_w
        out["encoder.proj_b"] = self.proj_b
        return out

    def __call__(self, x: Tensor) -> Tensor:
        if x.data.ndim != 2:
            raise ValueError(f"features must be T x F, got shape {x.data.shape}")
        h = x
        for layer in self.layers:
            h = layer(h)
        return nm.add(nm.matmul(h, self.proj_w), self.proj_b)


class AttentionDecoder:
    """Autoregressive tanh recurrence with additive attention over h."""

    def __init__(self, rng: np.random.Generator, cfg: ModelConfig, vocab: Vocab):
        enc_out = 2 * cfg.enc_hidden
        d, e, a = cfg.dec_hidden, cfg.emb_dim, cfg.attn_dim
        v_out = vocab.n_decoder_out
        self.vocab = vocab
        self.dec_hidden = d
        self.emb = nm.init_param(rng, (v_out, e), 1.0 / np.sqrt(e))
        self.w_query = nm.init_param(rng, (d, a), 1.0 / np.sqrt(d))
        self.w_key = nm.init_param(rng, (enc_out, a), 1.0 / np.sqrt(enc_out))
        self.b_key = Tensor(np.zeros(a), requires_grad=True)
        self.v_energy = nm.init_param(rng, (a,), 1.0 / np.sqrt(a))
        self.w_in = nm.init_param(rng, (e + enc_out, d), 1.0 / np.sqrt(e + enc_out))
        self.u = nm.init_param(rng, (d, d), 1.0 / np.sqrt(d))
        self.b = Tensor(np.zeros(d), requires_grad=True)
        self.w_out = nm.init_param(rng, (d, v_out), 1.0 / np.sqrt(d))
        self.b_out = Tensor(np.zeros(v_out), requires_grad=True)

    def params(self) -> dict[str, Tensor]:
        names = ["emb", "w_query", "w_key", "b_key", "v_energy",
                 "w_in", "u", "b", "w_out", "b_out"]
        return {f"decoder.{n}": getattr(self, n) for n in names}

    def _keys(self, h: Tensor) -> Tensor:
        return nm.add(nm.matmul(h, self.w_key), self.b_key)

    def _step(self, h: Tensor, keys: Tensor, g_prev: Tensor, token_id: int):
        query = nm.matmul(g_prev, self.w_query)
        energy = nm.matmul(nm.tanh(nm.add(keys, query)), self.v_energy)
        weights = nm.softmax(energy)
        context = nm.matmul(weights, h)
        step_in = nm.concat1d([nm.row(self.emb, token_id), context])
        g = nm.tanh(nm.add(nm.add(nm.matmul(step_in, self.w_in),
                                  nm.matmul(g_prev, self.u)), self.b))
        logits = nm.add(nm.matmul(g, self.w_out), self.b_out)
        return g, logits, weights

    def teacher_forced(self, h: Tensor, targets: Sequence[int]):
        """Decode with ground-truth history.

        ``targets`` must already end with eos; step s consumes the previous
        target (sos at s=0).  Returns (g: S x d, logits: S x V, attention
        weights as an S x T array).
        """
        targets = list(targets)
        if not targets:
            raise ValueError("teacher forcing needs at least one target")
        for y in targets:
            if not 0 <= y < self.vocab.n_decoder_out:
                raise ValueError(f"target id {y} outside decoder vocabulary")
        keys = self._keys(h)
        g_prev = Tensor(np.zeros(self.dec_hidden))
        inputs = [self.vocab.sos_id] + targets[:-1]
        g_rows, logit_rows, attn = [], [], []
        for tok in inputs:
            g_prev, logits, weights = self._step(h, keys, g_prev, tok)
            g_rows.append(g_prev)
            logit_rows.append(logits)
            attn.append(weights.data)
        return nm.stack_rows(g_rows), nm.stack_rows(logit_rows), np.stack(attn)

    def free_run(self, h: Tensor, max_len: int):
        """Greedy autoregressive decode from sos until eos or ``max_len``.

        Returns (label tokens without sos/eos, g over the performed steps,
        summed log-probability of the emitted tokens).
        """
        if max_len < 1:
            raise ValueError("max_len must be >= 1")
        keys = self._keys(h)
        g_prev = Tensor(np.zeros(self.dec_hidden))
        tok = self.vocab.sos_id
        tokens: list[int] = []
        g_rows = []
        log_prob = 0.0
        for _ in range(max_len):
            g_prev, logits, _ = self._step(h, keys, g_prev, tok)
            g_rows.append(g_prev)
            lp = nm.log_softmax(logits).data
            nxt = int(np.argmax(lp))
            log_prob += float(lp[nxt])
            if nxt == self.vocab.eos_id:
                break
            if nxt != self.vocab.sos_id:
                tokens.append(nxt)
            tok = nxt
        return tokens, nm.stack_rows(g_rows), log_prob


def attention_loss(logits: Tensor, targets: Sequence[int]) -> Tensor:
    """Cross entropy summed over steps (no length normalization here)."""
    targets = list(targets)
    if logits.shape[0] != len(targets):
        raise ValueError(f"{logits.shape[0]} logit rows for {len(targets)} targets")
    picked = nm.pick_per_row(nm.log_softmax(logits), targets)
    return nm.neg(nm.sum_all(picked))


def task_loss(l_ctc: Tensor, l_attention: Tensor, ctc_weight: float) -> Tensor:
    """Weighted mix of the two recognition losses."""
    if not 0.0 <= ctc_weight <= 1.0:
        raise ValueError(f"ctc_weight must be in [0, 1], got {ctc_weight}")
    return nm.add(nm.mul(l_ctc, Tensor(ctc_weight)),
                  nm.mul(l_attention, Tensor(1.0 - ctc_weight)))


class AsrModel:
    """Encoder + CTC head + attention decoder over a shared vocabulary."""

    def __init__(self, vocab: Vocab, cfg: ModelConfig, rng: np.random.Generator):
        if cfg.feature_dim < 1:
            raise ValueError("feature_dim must be positive")
        self.vocab = vocab
        self.cfg = cfg
        self.encoder = Encoder(rng, cfg)
        enc_out = self.encoder.out_dim
        self.ctc_w = nm.init_param(rng, (enc_out, vocab.n_ctc_out), 1.0 / np.sqrt(enc_out))
        self.ctc_b = Tensor(np.zeros(vocab.n_ctc_out), requires_grad=True)
        self.decoder = AttentionDecoder(rng, cfg, vocab)

    def params(self) -> dict[str, Tensor]:
        out = self.encoder.params()
        out["ctc_head.w"] = self.ctc_w
        out["ctc_head.b"] = self.ctc_b
        out.update(self.decoder.params())
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
                raise ValueError(f"shape mismatch for {name}: "
                                 f"{state[name].shape} vs {p.data.shape}")
            p.data[...] = state[name]

    def encode(self, x) -> Tensor:
        x = x if isinstance(x, Tensor) else Tensor(x)
        if x.data.shape[1] != self.cfg.feature_dim:
            raise ValueError(f"feature dim {x.data.shape[1]} does not match "
                             f"model feature_dim {self.cfg.feature_dim}")
        return self.encoder(x)

    def ctc_log_probs(self, h: Tensor) -> Tensor:
        return nm.log_softmax(nm.add(nm.matmul(h, self.ctc_w), self.ctc_b))

    def transcribe(self, x, max_len: int) -> list[int]:
        """Greedy attention decode of unlabeled features; label ids only."""
        h = self.encode(x)
        tokens, _, _ = self.decoder.free_run(h, max_len)
        return tokens
