"""CTC loss by log-space dynamic programming, plus oracle and decoding.

The loss marginalizes over every frame-level path that collapses (merge
repeats, then drop blanks) to the label sequence.  The recursion runs on
the autodiff tape, so gradients w.r.t. the input log-probabilities come
from the same graph; ``ctc_brute_force`` enumerates paths directly and is
the independent oracle used by the tests.
"""

from __future__ import annotations

from dataclasses import dataclass
from itertools import product
from typing import Sequence

import numpy as np

from . import numerics as nm
from .numerics import LOG_ZERO, Tensor


class InfeasibleAlignmentError(ValueError):
    """Label sequence cannot be aligned: T < S + number of adjacent repeats."""


def _validate_labels(labels: Sequence[int], n_classes: int, blank_id: int) -> None:
    if not 0 <= blank_id < n_classes:
        raise ValueError(f"blank id {blank_id} outside vocabulary of size {n_classes}")
    for y in labels:
        if not 0 <= y < n_classes:
            raise ValueError(f"label id {y} outside vocabulary of size {n_classes}")
        if y == blank_id:
            raise ValueError("labels must not contain the blank id")


def _check_feasible(n_frames: int, labels: Sequence[int]) -> None:
    repeats = sum(1 for a, b in zip(labels, labels[1:]) if a == b)
    needed = len(labels) + repeats
    if n_frames < needed:
        raise InfeasibleAlignmentError(
            f"{len(labels)} labels with {repeats} adjacent repeats need at least "
            f"{needed} frames, got {n_frames}")


def extended_labels(labels: Sequence[int], blank_id: int) -> list[int]:
    """Interleave blanks: y -> [blank, y1, blank, y2, ..., blank]."""
    ext = [blank_id]
    for y in labels:
        ext.append(y)
        ext.append(blank_id)
    return ext


@dataclass
class CtcLattice:
    """Forward DP state: extended labels and the T x (2S+1) log-alpha matrix."""
    extended: list[int]
    log_alpha: np.ndarray
    loss: Tensor

    @property
    def log_likelihood(self) -> float:
        return -self.loss.item()


def ctc_forward(log_probs: Tensor, labels: Sequence[int], blank_id: int) -> CtcLattice:
    """Run the forward recursion; the returned loss is differentiable.

    ``log_probs`` is T x V of row-normalized log-probabilities.  Cells that
    cannot be reached carry ``LOG_ZERO`` instead of -inf so every tensor
    stays finite.
    """
    T, V = log_probs.shape
    labels = list(labels)
    _validate_labels(labels, V, blank_id)
    _check_feasible(T, labels)

    ext = extended_labels(labels, blank_id)
    U = len(ext)
    probs = nm.take_columns(log_probs, ext)  # T x U

    # A skip from u-2 is legal only onto a label differing from ext[u-2].
    skip_mask = np.full(U, LOG_ZERO)
    for u in range(2, U):
        if ext[u] != blank_id and ext[u] != ext[u - 2]:
            skip_mask[u] = 0.0
    skip_mask_t = Tensor(skip_mask[2:])

    init = np.full(U, LOG_ZERO)
    init[0] = 0.0
    if U > 1:
        init[1] = 0.0
    alpha = nm.add(Tensor(init), nm.row(probs, 0))
    log_alpha = [alpha.data.copy()]

    lz1 = Tensor([LOG_ZERO])
    lz2 = Tensor([LOG_ZERO, LOG_ZERO])
    for t in range(1, T):
        stay = alpha
        step = nm.concat1d([lz1, nm.slice1d(alpha, 0, U - 1)])
        merged = nm.logaddexp(stay, step)
        if U > 2:
            skip = nm.add(nm.concat1d([lz2, nm.slice1d(alpha, 0, U - 2)]),
                          nm.concat1d([lz2, skip_mask_t]))
            merged = nm.logaddexp(merged, skip)
        alpha = nm.add(merged, nm.row(probs, t))
        log_alpha.append(alpha.data.copy())

    if U > 1:
        total = nm.logsumexp(nm.take1d(alpha, [U - 2, U - 1]))
    else:
        total = nm.take1d(alpha, [0])
        total = nm.sum_all(total)
    loss = nm.neg(total)
    return CtcLattice(extended=ext, log_alpha=np.stack(log_alpha), loss=loss)


def ctc_loss(log_probs: Tensor, labels: Sequence[int], blank_id: int) -> Tensor:
    """Negative log-likelihood of ``labels`` under the alignment model."""
    return ctc_forward(log_probs, labels, blank_id).loss


def collapse_path(path: Sequence[int], blank_id: int) -> list[int]:
    """Merge consecutive repeats, then drop blanks."""
    out: list[int] = []
    prev = None
    for p in path:
        if p != prev:
            out.append(p)
        prev = p
    return [p for p in out if p != blank_id]


def ctc_brute_force(log_probs, labels: Sequence[int], blank_id: int,
                    max_paths: int = 10**6) -> float:
    """Oracle: enumerate all V^T paths, sum those collapsing to ``labels``."""
    lp = log_probs.data if isinstance(log_probs, Tensor) else np.asarray(log_probs)
    T, V = lp.shape
    labels = list(labels)
    _validate_labels(labels, V, blank_id)
    _check_feasible(T, labels)
    if V ** T > max_paths:
        raise ValueError(f"enumeration bound exceeded: {V}^{T} > {max_paths}")

    total = -np.inf
    for path in product(range(V), repeat=T):
        if collapse_path(path, blank_id) == labels:
            total = np.logaddexp(total, sum(lp[t, p] for t, p in enumerate(path)))
    return float(-total)


def greedy_decode(log_probs, blank_id: int) -> tuple[list[int], float]:
    """Per-frame argmax path, collapsed; also its summed log-probability."""
    lp = log_probs.data if isinstance(log_probs, Tensor) else np.asarray(log_probs)
    path = np.argmax(lp, axis=1)
    top_log_prob = float(lp[np.arange(lp.shape[0]), path].sum())
    return collapse_path(path.tolist(), blank_id), top_log_prob
