"""CTC loss against the path-enumeration oracle and hand-worked cases."""

import math

import numpy as np
import pytest

from alseqlab import ctc
from alseqlab import numerics as nm
from alseqlab.numerics import Tape, Tensor

from helpers import assert_grads_close, finite_difference_grad


def random_log_probs(rng, T, V):
    """Row-normalized log distributions."""
    x = rng.normal(size=(T, V)) * 1.5
    x -= np.log(np.exp(x).sum(axis=1, keepdims=True))
    return x


def test_single_frame_single_label():
    # P(label 0) = 0.6 at the only frame
    lp = np.log(np.array([[0.6, 0.4]]))
    loss = ctc.ctc_loss(Tensor(lp), [0], blank_id=1)
    assert loss.item() == pytest.approx(-math.log(0.6), abs=1e-12)


def test_two_frames_uniform_three_paths():
    # V = {a, blank}, uniform 0.5: paths (a,a), (a,-), (-,a) add to 0.75
    lp = np.log(np.full((2, 2), 0.5))
    loss = ctc.ctc_loss(Tensor(lp), [0], blank_id=1)
    assert loss.item() == pytest.approx(-math.log(0.75), abs=1e-12)


def test_adjacent_repeat_needs_interleaved_blank():
    lp = np.log(np.full((2, 2), 0.5))
    with pytest.raises(ctc.InfeasibleAlignmentError):
        ctc.ctc_loss(Tensor(lp), [0, 0], blank_id=1)
    # with three frames the repeat becomes feasible
    lp3 = np.log(np.full((3, 2), 0.5))
    ctc.ctc_loss(Tensor(lp3), [0, 0], blank_id=1)


def test_label_out_of_range_rejected():
    lp = np.log(np.full((2, 3), 1 / 3))
    with pytest.raises(ValueError):
        ctc.ctc_loss(Tensor(lp), [5], blank_id=2)
    with pytest.raises(ValueError):
        ctc.ctc_loss(Tensor(lp), [2], blank_id=2)  # blank used as label


def test_empty_label_is_all_blank_path():
    rng = np.random.default_rng(0)
    lp = random_log_probs(rng, 4, 3)
    loss = ctc.ctc_loss(Tensor(lp), [], blank_id=2)
    assert loss.item() == pytest.approx(-lp[:, 2].sum(), abs=1e-12)
    assert ctc.ctc_brute_force(lp, [], blank_id=2) == pytest.approx(-lp[:, 2].sum(), abs=1e-9)


def test_brute_force_infeasible_cases():
    rng = np.random.default_rng(1)
    lp = random_log_probs(rng, 1, 3)
    with pytest.raises(ctc.InfeasibleAlignmentError):
        ctc.ctc_brute_force(lp, [0, 1], blank_id=2)


def test_brute_force_enumeration_bound():
    rng = np.random.default_rng(2)
    lp = random_log_probs(rng, 12, 10)
    with pytest.raises(ValueError, match="enumeration bound"):
        ctc.ctc_brute_force(lp, [0], blank_id=9)


def test_oracle_equivalence_random_instances():
    """DP loss equals path enumeration on 200 random feasible instances."""
    rng = np.random.default_rng(42)
    checked = 0
    while checked < 200:
        T = int(rng.integers(1, 7))
        V = int(rng.integers(2, 5))
        S = int(rng.integers(0, 4))
        blank = V - 1
        labels = rng.integers(0, V - 1, size=S).tolist()
        repeats = sum(1 for a, b in zip(labels, labels[1:]) if a == b)
        if T < S + repeats:
            continue
        lp = random_log_probs(rng, T, V)
        dp = ctc.ctc_loss(Tensor(lp), labels, blank).item()
        brute = ctc.ctc_brute_force(lp, labels, blank)
        assert abs(dp - brute) <= 1e-9, (T, V, labels)
        checked += 1


def test_gradient_matches_finite_differences():
    rng = np.random.default_rng(7)
    x = Tensor(rng.normal(size=(5, 4)), requires_grad=True)
    labels = [0, 2, 2]

    def loss_value():
        lp = nm.log_softmax(Tensor(x.data))
        return ctc.ctc_loss(lp, labels, blank_id=3).item()

    with Tape() as tape:
        loss = ctc.ctc_loss(nm.log_softmax(x), labels, blank_id=3)
    tape.backward(loss)
    fd = finite_difference_grad(loss_value, {"x": x})
    assert_grads_close({"x": x.grad}, fd)


def test_loss_vanishes_under_certainty():
    """As the correct alignment's probability approaches 1, loss goes to 0."""
    eps_losses = []
    for conf in (0.9, 0.99, 0.999):
        p = np.full((3, 3), (1 - conf) / 2)
        p[0, 0] = conf   # label a
        p[1, 2] = conf   # blank
        p[2, 1] = conf   # label b
        loss = ctc.ctc_loss(Tensor(np.log(p)), [0, 1], blank_id=2).item()
        eps_losses.append(loss)
    assert eps_losses[0] > eps_losses[1] > eps_losses[2]
    assert eps_losses[2] < 0.01


def test_loss_invariant_to_unused_vocab_permutation():
    rng = np.random.default_rng(9)
    lp = random_log_probs(rng, 5, 5)
    labels = [0]
    blank = 4
    base = ctc.ctc_loss(Tensor(lp), labels, blank).item()
    # swap the unused columns 1, 2, 3 around
    perm = lp[:, [0, 3, 1, 2, 4]]
    assert ctc.ctc_loss(Tensor(perm), labels, blank).item() == pytest.approx(base, abs=1e-12)


def test_alpha_cells_are_log_probabilities():
    rng = np.random.default_rng(10)
    lp = random_log_probs(rng, 6, 4)
    lattice = ctc.ctc_forward(Tensor(lp), [0, 1], blank_id=3)
    assert np.all(lattice.log_alpha <= 1e-12)
    tail = np.logaddexp(lattice.log_alpha[-1, -1], lattice.log_alpha[-1, -2])
    assert tail == pytest.approx(lattice.log_likelihood, abs=1e-9)


class TestGreedyDecode:
    def test_blank_separated_repeat(self):
        # frames argmax: a, blank, a  ->  "aa"
        lp = np.log(np.array([[0.8, 0.2], [0.3, 0.7], [0.9, 0.1]]))
        tokens, top = ctc.greedy_decode(lp, blank_id=1)
        assert tokens == [0, 0]
        assert top == pytest.approx(math.log(0.8) + math.log(0.7) + math.log(0.9))

    def test_repeat_collapses(self):
        lp = np.log(np.array([[0.8, 0.2], [0.6, 0.4]]))
        tokens, _ = ctc.greedy_decode(lp, blank_id=1)
        assert tokens == [0]

    def test_all_blank_gives_empty(self):
        lp = np.log(np.array([[0.2, 0.8], [0.4, 0.6]]))
        tokens, top = ctc.greedy_decode(lp, blank_id=1)
        assert tokens == []
        assert top == pytest.approx(math.log(0.8) + math.log(0.6))
