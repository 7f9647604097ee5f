"""Synthetic utterance corpora: generation, JSONL persistence, splits.

Each label token owns a fixed prototype feature vector; an utterance is
the per-token concatenation of a few noisy copies of the prototypes.
Duration lower bound 2 guarantees every label sequence (repeats included)
stays alignable for CTC.  Real features can be ingested through the same
JSONL manifest with externally computed feature matrices.
"""

from __future__ import annotations

import json
from dataclasses import dataclass, field, asdict

import numpy as np

CORPUS_FORMAT = "al-seqlab-corpus"
CORPUS_VERSION = 1


class CorpusError(Exception):
    """Missing, corrupt, or incompatible corpus file."""


@dataclass
class Utterance:
    uid: str
    features: np.ndarray          # T x F float64
    tokens: list[str]

    @property
    def n_frames(self) -> int:
        return self.features.shape[0]

    @property
    def n_tokens(self) -> int:
        return len(self.tokens)

    def __eq__(self, other) -> bool:
        return (isinstance(other, Utterance)
                and self.uid == other.uid
                and self.tokens == other.tokens
                and self.features.shape == other.features.shape
                and bool(np.all(self.features == other.features)))


@dataclass
class GenSpec:
    """Knobs for synthetic corpus generation."""

    vocab_size: int = 8
    feature_dim: int = 8
    prototype_seed: int = 1234
    duration_range: tuple[int, int] = (3, 6)    # frames per token
    length_range: tuple[int, int] = (2, 10)     # tokens per utterance
    noise_sigma: float = 0.3
    corpus_size: int = 1000
    split_fractions: tuple[float, float, float] = (0.8, 0.1, 0.1)

    def validate(self) -> None:
        if self.vocab_size < 1 or self.feature_dim < 1 or self.corpus_size < 0:
            raise ValueError("vocab_size, feature_dim must be >= 1 and corpus_size >= 0")
        lo, hi = self.duration_range
        if lo < 2 or hi < lo:
            raise ValueError(f"duration_range must satisfy 2 <= lo <= hi, got {self.duration_range}")
        slo, shi = self.length_range
        if slo < 1 or shi < slo:
            raise ValueError(f"length_range must satisfy 1 <= lo <= hi, got {self.length_range}")
        if self.noise_sigma < 0:
            raise ValueError("noise_sigma must be >= 0")
        if len(self.split_fractions) != 3 or any(f < 0 for f in self.split_fractions):
            raise ValueError("split_fractions must be three nonnegative numbers")
        if abs(sum(self.split_fractions) - 1.0) > 1e-9:
            raise ValueError(f"split_fractions must sum to 1, got {self.split_fractions}")

    def to_dict(self) -> dict:
        d = asdict(self)
        d["duration_range"] = list(self.duration_range)
        d["length_range"] = list(self.length_range)
        d["split_fractions"] = list(self.split_fractions)
        return d

    @classmethod
    def from_dict(cls, d: dict) -> "GenSpec":
        d = dict(d)
        for key in ("duration_range", "length_range", "split_fractions"):
            if key in d:
                d[key] = tuple(d[key])
        return cls(**d)


def token_names(vocab_size: int) -> list[str]:
    return [f"t{i}" for i in range(vocab_size)]


def generate_corpus(spec: GenSpec, seed: int) -> list[Utterance]:
    """Deterministic synthetic corpus; same (spec, seed) gives equal output."""
    spec.validate()
    proto_rng = np.random.default_rng(spec.prototype_seed)
    prototypes = proto_rng.normal(size=(spec.vocab_size, spec.feature_dim))
    names = token_names(spec.vocab_size)

    rng = np.random.default_rng(seed)
    lo_d, hi_d = spec.duration_range
    lo_s, hi_s = spec.length_range
    utterances = []
    for i in range(spec.corpus_size):
        n_tok = int(rng.integers(lo_s, hi_s + 1))
        label_ids = rng.integers(0, spec.vocab_size, size=n_tok)
        chunks = []
        for lab in label_ids:
            dur = int(rng.integers(lo_d, hi_d + 1))
            chunks.append(np.repeat(prototypes[lab][None, :], dur, axis=0))
        feats = np.concatenate(chunks, axis=0)
        if spec.noise_sigma > 0:
            feats = feats + rng.normal(0.0, spec.noise_sigma, size=feats.shape)
        utterances.append(Utterance(uid=f"u{i:05d}",
                                    features=feats,
                                    tokens=[names[j] for j in label_ids]))
    return utterances


def corpus_tokens(utterances: list[Utterance]) -> list[str]:
    """Sorted unique tokens; numeric-friendly order (t2 before t10)."""
    seen = sorted({t for u in utterances for t in u.tokens}, key=lambda s: (len(s), s))
    return seen


def save_corpus(utterances: list[Utterance], path) -> None:
    with open(path, "w", encoding="utf-8") as f:
        f.write(json.dumps({"format": CORPUS_FORMAT, "version": CORPUS_VERSION}))
        f.write("\n")
        for u in utterances:
            rec = {"id": u.uid, "tokens": u.tokens, "features": u.features.tolist()}
            f.write(json.dumps(rec))
            f.write("\n")


def load_corpus(path) -> list[Utterance]:
    try:
        f = open(path, encoding="utf-8")
    except OSError as e:
        raise CorpusError(f"cannot open corpus {path}: {e}") from e
    with f:
        header_line = f.readline()
        try:
            header = json.loads(header_line)
        except json.JSONDecodeError as e:
            raise CorpusError(f"corrupt corpus header in {path}") from e
        if not isinstance(header, dict) or header.get("format") != CORPUS_FORMAT:
            raise CorpusError(f"not an {CORPUS_FORMAT} file: {path}")
        if header.get("version") != CORPUS_VERSION:
            raise CorpusError(f"unsupported corpus version {header.get('version')}")
        utterances = []
        for lineno, line in enumerate(f, start=2):
            if not line.strip():
                continue
            try:
                rec = json.loads(line)
                feats = np.asarray(rec["features"], dtype=np.float64)
                if feats.ndim != 2:
                    raise ValueError("features must be a T x F matrix")
                utterances.append(Utterance(uid=rec["id"],
                                            features=feats,
                                            tokens=list(rec["tokens"])))
            except (json.JSONDecodeError, KeyError, TypeError, ValueError) as e:
                raise CorpusError(f"corrupt corpus record at {path}:{lineno}") from e
    return utterances


def split_corpus(utterances: list[Utterance],
                 fractions: tuple[float, float, float],
                 seed: int) -> tuple[list[Utterance], list[Utterance], list[Utterance]]:
    """Disjoint, exhaustive (train-pool, validation, test) split."""
    if len(fractions) != 3 or any(f < 0 for f in fractions):
        raise ValueError("fractions must be three nonnegative numbers")
    if abs(sum(fractions) - 1.0) > 1e-9:
        raise ValueError(f"fractions must sum to 1, got {fractions}")
    rng = np.random.default_rng(seed)
    order = rng.permutation(len(utterances))
    n = len(utterances)
    n_train = int(round(fractions[0] * n))
    n_val = int(round(fractions[1] * n))
    n_train = min(n_train, n)
    n_val = min(n_val, n - n_train)
    train = [utterances[i] for i in order[:n_train]]
    val = [utterances[i] for i in order[n_train:n_train + n_val]]
    test = [utterances[i] for i in order[n_train + n_val:]]
    return train, val, test
