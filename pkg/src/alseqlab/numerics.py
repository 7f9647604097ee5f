"""Dense float64 tensors with reverse-mode autodiff, Adam, and checkpoints.

A define-by-run tape records every operation whose inputs require
gradients; ``Tape.backward`` replays the recorded entries in reverse to
accumulate gradients.  Inference with no active tape is plain numpy and
is safe to run concurrently against frozen parameters.
"""

from __future__ import annotations

import json
from typing import Callable, Iterable, Sequence

import numpy as np

LOG_ZERO = -1.0e30  # finite stand-in for log(0); exp() underflows to exactly 0.0

# When True every forward op validates its output for NaN/Inf.  Scalar
# outputs and optimizer steps are validated unconditionally, so divergence
# always surfaces; the per-op sweep is for debugging and the test suite.
STRICT_CHECKS = False


def set_strict_checks(enabled: bool) -> None:
    global STRICT_CHECKS
    STRICT_CHECKS = enabled


class NonFiniteError(FloatingPointError):
    """A forward value, gradient, or parameter stopped being finite."""


class Tensor:
    """A numpy float64 array plus a gradient slot."""

    __slots__ = ("data", "grad", "requires_grad")

    def __init__(self, data, requires_grad: bool = False):
        arr = np.asarray(data, dtype=np.float64)
        self.data = arr
        self.grad: np.ndarray | None = None
        self.requires_grad = requires_grad

    @property
    def shape(self) -> tuple[int, ...]:
        return self.data.shape

    def item(self) -> float:
        return float(self.data)

    def detach(self) -> "Tensor":
        return Tensor(self.data, requires_grad=False)

    def zero_grad(self) -> None:
        self.grad = None

    def __repr__(self) -> str:
        return f"Tensor(shape={self.data.shape}, requires_grad={self.requires_grad})"

    # Arithmetic sugar; python scalars are wrapped as constants.
    def __add__(self, other):
        return add(self, _as_tensor(other))

    def __radd__(self, other):
        return add(_as_tensor(other), self)

    def __sub__(self, other):
        return add(self, neg(_as_tensor(other)))

    def __rsub__(self, other):
        return add(_as_tensor(other), neg(self))

    def __mul__(self, other):
        return mul(self, _as_tensor(other))

    def __rmul__(self, other):
        return mul(_as_tensor(other), self)

    def __truediv__(self, other):
        return mul(self, _as_tensor(1.0 / float(other)))

    def __neg__(self):
        return neg(self)

    def __matmul__(self, other):
        return matmul(self, other)


def _as_tensor(x) -> Tensor:
    return x if isinstance(x, Tensor) else Tensor(x)


# ---------------------------------------------------------------------------
# Tape
# ---------------------------------------------------------------------------

_ACTIVE_TAPE: "Tape | None" = None


class Tape:
    """Ordered record of operations for one forward pass.

    Entries are appended in execution order, so inputs always precede the
    ops that consume them; the backward sweep walks the list once in
    reverse.  Use as a context manager around the forward pass.
    """

    __slots__ = ("entries", "_output_ids")

    def __init__(self):
        # entry = (output, inputs tuple, backward rule)
        self.entries: list[tuple[Tensor, tuple[Tensor, ...], Callable]] = []
        self._output_ids: set[int] = set()

    def __enter__(self) -> "Tape":
        global _ACTIVE_TAPE
        if _ACTIVE_TAPE is not None:
            raise RuntimeError("a tape is already active; tapes do not nest")
        _ACTIVE_TAPE = self
        return self

    def __exit__(self, exc_type, exc, tb) -> None:
        global _ACTIVE_TAPE
        _ACTIVE_TAPE = None

    def record(self, out: Tensor, inputs: tuple[Tensor, ...], rule: Callable) -> None:
        self.entries.append((out, inputs, rule))
        self._output_ids.add(id(out))

    def backward(self, root: Tensor) -> None:
        """Populate .grad of every requires-grad ancestor of ``root``."""
        if root.data.shape != ():
            raise ValueError(f"backward root must be a scalar, got shape {root.data.shape}")
        if id(root) not in self._output_ids:
            raise ValueError("backward root was not produced on this tape")
        if not np.isfinite(root.data):
            raise NonFiniteError("backward root is not finite")
        root.grad = np.ones((), dtype=np.float64)
        for out, inputs, rule in reversed(self.entries):
            g = out.grad
            if g is None:
                continue  # not an ancestor of root, or created after it
            grads = rule(g)
            for t, gt in zip(inputs, grads):
                if gt is None or not t.requires_grad:
                    continue
                if t.grad is None:
                    t.grad = gt.copy() if gt.base is not None or gt is g else gt
                else:
                    t.grad += gt


def _record(out_data: np.ndarray, inputs: tuple[Tensor, ...], rule: Callable) -> Tensor:
    """Wrap an op result; record on the active tape when grads are needed."""
    tape = _ACTIVE_TAPE
    needs = tape is not None and any(t.requires_grad for t in inputs)
    if STRICT_CHECKS or out_data.shape == ():
        if not np.all(np.isfinite(out_data)):
            raise NonFiniteError("non-finite value produced by a forward op")
    out = Tensor(out_data, requires_grad=needs)
    if needs:
        tape.record(out, inputs, rule)
    return out


def _unbroadcast(grad: np.ndarray, shape: tuple[int, ...]) -> np.ndarray:
    """Sum ``grad`` down to ``shape`` (inverse of numpy broadcasting)."""
    if grad.shape == shape:
        return grad
    extra = grad.ndim - len(shape)
    if extra > 0:
        grad = grad.sum(axis=tuple(range(extra)))
    axes = tuple(i for i, n in enumerate(shape) if n == 1 and grad.shape[i] != 1)
    if axes:
        grad = grad.sum(axis=axes, keepdims=True)
    return grad


# ---------------------------------------------------------------------------
# Elementwise and linear-algebra ops
# ---------------------------------------------------------------------------

def add(a: Tensor, b: Tensor) -> Tensor:
    out = a.data + b.data

    def rule(g):
        return (_unbroadcast(g, a.data.shape), _unbroadcast(g, b.data.shape))

    return _record(out, (a, b), rule)


def mul(a: Tensor, b: Tensor) -> Tensor:
    out = a.data * b.data

    def rule(g):
        return (_unbroadcast(g * b.data, a.data.shape),
                _unbroadcast(g * a.data, b.data.shape))

    return _record(out, (a, b), rule)


def neg(a: Tensor) -> Tensor:
    return _record(-a.data, (a,), lambda g: (-g,))


def matmul(a: Tensor, b: Tensor) -> Tensor:
    """Matrix product for 1-D/2-D operands (1-D @ 1-D is a dot product)."""
    ad, bd = a.data, b.data
    if ad.ndim not in (1, 2) or bd.ndim not in (1, 2):
        raise ValueError("matmul supports 1-D and 2-D operands only")
    if ad.shape[-1] != bd.shape[0]:
        raise ValueError(f"matmul inner dims disagree: {ad.shape} @ {bd.shape}")
    out = ad @ bd

    def rule(g):
        if ad.ndim == 1 and bd.ndim == 1:      # dot -> scalar
            return (g * bd, g * ad)
        if ad.ndim == 1:                        # (k,) @ (k,n) -> (n,)
            return (bd @ g, np.outer(ad, g))
        if bd.ndim == 1:                        # (m,k) @ (k,) -> (m,)
            return (np.outer(g, bd), ad.T @ g)
        return (g @ bd.T, ad.T @ g)             # (m,k) @ (k,n)

    return _record(out, (a, b), rule)


def tanh(a: Tensor) -> Tensor:
    out = np.tanh(a.data)
    return _record(out, (a,), lambda g: (g * (1.0 - out * out),))


def sigmoid(a: Tensor) -> Tensor:
    out = np.empty_like(a.data)
    np.exp(-np.abs(a.data), out=out)
    out = np.where(a.data >= 0, 1.0 / (1.0 + out), out / (1.0 + out))
    return _record(out, (a,), lambda g: (g * out * (1.0 - out),))


def softplus(a: Tensor) -> Tensor:
    """log(1 + exp(x)), computed without overflow."""
    x = a.data
    out = np.maximum(x, 0.0) + np.log1p(np.exp(-np.abs(x)))

    def rule(g):
        s = np.where(x >= 0, 1.0 / (1.0 + np.exp(-np.abs(x))),
                     np.exp(-np.abs(x)) / (1.0 + np.exp(-np.abs(x))))
        return (g * s,)

    return _record(out, (a,), rule)


def abs_(a: Tensor) -> Tensor:
    out = np.abs(a.data)
    return _record(out, (a,), lambda g: (g * np.sign(a.data),))


def logaddexp(a: Tensor, b: Tensor) -> Tensor:
    out = np.logaddexp(a.data, b.data)

    def rule(g):
        wa = np.exp(a.data - out)
        return (_unbroadcast(g * wa, a.data.shape),
                _unbroadcast(g * (1.0 - wa), b.data.shape))

    return _record(out, (a, b), rule)


def logsumexp(a: Tensor) -> Tensor:
    """Reduce a 1-D tensor to the scalar log(sum(exp(x))), max-shifted."""
    x = a.data
    m = np.max(x)
    out = np.asarray(m + np.log(np.sum(np.exp(x - m))))

    def rule(g):
        return (g * np.exp(x - out),)

    return _record(out, (a,), rule)


def log_softmax(a: Tensor) -> Tensor:
    """Row-wise log-softmax over the last axis (1-D or 2-D input)."""
    x = a.data
    m = x.max(axis=-1, keepdims=True)
    shifted = x - m
    lse = np.log(np.sum(np.exp(shifted), axis=-1, keepdims=True))
    out = shifted - lse

    def rule(g):
        return (g - np.exp(out) * g.sum(axis=-1, keepdims=True),)

    return _record(out, (a,), rule)


def softmax(a: Tensor) -> Tensor:
    """Softmax over the last axis; rows sum to 1."""
    x = a.data
    e = np.exp(x - x.max(axis=-1, keepdims=True))
    out = e / e.sum(axis=-1, keepdims=True)

    def rule(g):
        dot = (g * out).sum(axis=-1, keepdims=True)
        return (out * (g - dot),)

    return _record(out, (a,), rule)


# ---------------------------------------------------------------------------
# Shape / indexing ops
# ---------------------------------------------------------------------------

def concat1d(parts: Sequence[Tensor]) -> Tensor:
    parts = list(parts)
    out = np.concatenate([p.data for p in parts])
    sizes = [p.data.shape[0] for p in parts]
    offsets = np.cumsum([0] + sizes)

    def rule(g):
        return tuple(g[offsets[i]:offsets[i + 1]] for i in range(len(parts)))

    return _record(out, tuple(parts), rule)


def slice1d(a: Tensor, start: int, stop: int) -> Tensor:
    out = a.data[start:stop].copy()

    def rule(g):
        full = np.zeros_like(a.data)
        full[start:stop] = g
        return (full,)

    return _record(out, (a,), rule)


def row(a: Tensor, i: int) -> Tensor:
    out = a.data[i].copy()

    def rule(g):
        full = np.zeros_like(a.data)
        full[i] = g
        return (full,)

    return _record(out, (a,), rule)


def stack_rows(rows: Sequence[Tensor]) -> Tensor:
    rows = list(rows)
    out = np.stack([r.data for r in rows])

    def rule(g):
        return tuple(g[i] for i in range(len(rows)))

    return _record(out, tuple(rows), rule)


def take1d(a: Tensor, indices: Sequence[int]) -> Tensor:
    idx = np.asarray(indices, dtype=np.intp)
    out = a.data[idx]

    def rule(g):
        full = np.zeros_like(a.data)
        np.add.at(full, idx, g)
        return (full,)

    return _record(out, (a,), rule)


def take_columns(a: Tensor, col_ids: Sequence[int]) -> Tensor:
    """Gather columns of a 2-D tensor; repeated ids accumulate on backward."""
    idx = np.asarray(col_ids, dtype=np.intp)
    out = a.data[:, idx]

    def rule(g):
        full = np.zeros_like(a.data)
        np.add.at(full.T, idx, g.T)
        return (full,)

    return _record(out, (a,), rule)


def concat_cols(a: Tensor, b: Tensor) -> Tensor:
    """Column-wise concatenation of two 2-D tensors with equal row counts."""
    if a.data.shape[0] != b.data.shape[0]:
        raise ValueError(f"row counts disagree: {a.data.shape} vs {b.data.shape}")
    na = a.data.shape[1]
    out = np.concatenate([a.data, b.data], axis=1)

    def rule(g):
        return (g[:, :na], g[:, na:])

    return _record(out, (a, b), rule)


def pick_per_row(a: Tensor, ids: Sequence[int]) -> Tensor:
    """out[s] = a[s, ids[s]] for a 2-D tensor."""
    idx = np.asarray(ids, dtype=np.intp)
    rows_idx = np.arange(a.data.shape[0])
    out = a.data[rows_idx, idx]

    def rule(g):
        full = np.zeros_like(a.data)
        full[rows_idx, idx] = g
        return (full,)

    return _record(out, (a,), rule)


def sum_all(a: Tensor) -> Tensor:
    out = np.asarray(a.data.sum())

    def rule(g):
        return (np.broadcast_to(g, a.data.shape),)

    return _record(out, (a,), rule)


def mean_axis0(a: Tensor) -> Tensor:
    """Mean over the first axis (time pooling)."""
    n = a.data.shape[0]
    out = a.data.mean(axis=0)

    def rule(g):
        return (np.broadcast_to(g / n, a.data.shape),)

    return _record(out, (a,), rule)


# ---------------------------------------------------------------------------
# Adam
# ---------------------------------------------------------------------------

class Adam:
    """Adam with bias correction over a name->Tensor parameter dict."""

    def __init__(self, params: dict[str, Tensor], lr: float = 1e-3,
                 beta1: float = 0.9, beta2: float = 0.999, eps: float = 1e-8):
        self.params = params
        self.lr = lr
        self.beta1 = beta1
        self.beta2 = beta2
        self.eps = eps
        self.t = 0
        self.m = {k: np.zeros_like(p.data) for k, p in params.items()}
        self.v = {k: np.zeros_like(p.data) for k, p in params.items()}

    def zero_grad(self) -> None:
        for p in self.params.values():
            p.grad = None

    def step(self) -> None:
        self.t += 1
        b1, b2 = self.beta1, self.beta2
        bc1 = 1.0 - b1 ** self.t
        bc2 = 1.0 - b2 ** self.t
        for k, p in self.params.items():
            g = p.grad
            if g is None:
                continue
            if not np.all(np.isfinite(g)):
                raise NonFiniteError(f"non-finite gradient for parameter '{k}'")
            m = self.m[k]
            v = self.v[k]
            m *= b1
            m += (1.0 - b1) * g
            v *= b2
            v += (1.0 - b2) * (g * g)
            p.data -= self.lr * (m / bc1) / (np.sqrt(v / bc2) + self.eps)
            if not np.all(np.isfinite(p.data)):
                raise NonFiniteError(f"parameter '{k}' diverged to non-finite values")


# ---------------------------------------------------------------------------
# Checkpoint format: one JSON header line, then raw little-endian f64 payloads
# in header order.
# ---------------------------------------------------------------------------

CHECKPOINT_FORMAT = "al-seqlab-ckpt"
CHECKPOINT_VERSION = 1


def save_params(path, params: dict[str, Tensor]) -> None:
    header = {
        "format": CHECKPOINT_FORMAT,
        "version": CHECKPOINT_VERSION,
        "tensors": [{"name": k, "shape": list(p.data.shape)} for k, p in params.items()],
    }
    with open(path, "wb") as f:
        f.write(json.dumps(header).encode("utf-8"))
        f.write(b"\n")
        for p in params.values():
            f.write(np.ascontiguousarray(p.data, dtype="<f8").tobytes())


def load_params(path) -> dict[str, np.ndarray]:
    with open(path, "rb") as f:
        header_line = f.readline()
        try:
            header = json.loads(header_line.decode("utf-8"))
        except (UnicodeDecodeError, json.JSONDecodeError) as e:
            raise ValueError(f"corrupt checkpoint header in {path}") from e
        if header.get("format") != CHECKPOINT_FORMAT:
            raise ValueError(f"not a {CHECKPOINT_FORMAT} file: {path}")
        if header.get("version") != CHECKPOINT_VERSION:
            raise ValueError(f"unsupported checkpoint version {header.get('version')}")
        out: dict[str, np.ndarray] = {}
        for spec in header["tensors"]:
            shape = tuple(spec["shape"])
            count = int(np.prod(shape)) if shape else 1
            raw = f.read(count * 8)
            if len(raw) != count * 8:
                raise ValueError(f"truncated checkpoint payload in {path}")
            out[spec["name"]] = np.frombuffer(raw, dtype="<f8").reshape(shape).copy()
        if f.read(1):
            raise ValueError(f"trailing bytes after checkpoint payload in {path}")
    return out


def init_param(rng: np.random.Generator, shape: tuple[int, ...], scale: float) -> Tensor:
    """Uniform(-scale, scale) initialized trainable tensor."""
    return Tensor(rng.uniform(-scale, scale, size=shape), requires_grad=True)
