"""CTC loss against enumeration oracles, decode and collapse behaviour."""

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from slrkit import tensorlab as tl
from slrkit.ctc import (brute_force_ctc, collapse, ctc_loss, greedy_decode,
                        min_frames_required)
from slrkit.errors import InfeasibleTargetError

from oracles import dedupe


def random_logprobs(rng, t_len, k):
    z = rng.uniform(-2.0, 2.0, size=(t_len, k))
    return tl.log_softmax(z)


def random_feasible_instance(rng):
    vocab = int(rng.integers(1, 5))
    t_len = int(rng.integers(1, 9))
    while True:
        n = int(rng.integers(1, min(4, t_len) + 1))
        target = [int(g) for g in rng.integers(0, vocab, n)]
        if min_frames_required(target) <= t_len:
            return random_logprobs(rng, t_len, vocab + 1), target


class TestWorkedExamples:
    def test_single_frame_uniform(self):
        lp = np.full((1, 3), np.log(1 / 3))
        loss, _ = ctc_loss(lp, [0])
        assert loss == pytest.approx(np.log(3.0), abs=1e-12)

    def test_two_frames_uniform(self):
        # alignments (g0,g0), (blank,g0), (g0,blank): p = 3/9
        lp = np.full((2, 3), np.log(1 / 3))
        loss, _ = ctc_loss(lp, [0])
        assert loss == pytest.approx(np.log(3.0), abs=1e-12)
        assert brute_force_ctc(lp, [0]) == pytest.approx(np.log(3.0), abs=1e-12)

    def test_loss_nonnegative(self):
        rng = np.random.default_rng(0)
        for _ in range(50):
            lp, target = random_feasible_instance(rng)
            loss, _ = ctc_loss(lp, target)
            assert loss >= -1e-12

    def test_infeasible_raises(self):
        lp = np.full((2, 3), np.log(1 / 3))
        with pytest.raises(InfeasibleTargetError):
            ctc_loss(lp, [0, 1, 0])
        # adjacent repeat needs a separating blank
        with pytest.raises(InfeasibleTargetError):
            ctc_loss(lp, [0, 0])

    def test_repeat_feasibility_boundary(self):
        lp = np.full((3, 3), np.log(1 / 3))
        loss, _ = ctc_loss(lp, [0, 0])  # 3 frames suffice: g0 blank g0
        assert np.isfinite(loss)
        assert min_frames_required([0, 0]) == 3

    def test_empty_target_probability_of_all_blanks(self):
        lp = np.log(np.full((3, 3), 1 / 3))
        loss, _ = ctc_loss(lp, [])
        assert loss == pytest.approx(3 * np.log(3.0), abs=1e-12)


class TestOracleEquivalence:
    def test_matches_brute_force_on_200_instances(self):
        rng = np.random.default_rng(123)
        for _ in range(200):
            lp, target = random_feasible_instance(rng)
            loss, _ = ctc_loss(lp, target)
            assert abs(loss - brute_force_ctc(lp, target)) <= 1e-6


class TestGradient:
    @pytest.mark.parametrize("seed", range(20))
    def test_gradcheck(self, seed):
        rng = np.random.default_rng(seed)
        lp, target = random_feasible_instance(rng)
        z0 = rng.uniform(-1, 1, lp.shape)
        r = None

        def op(z):
            y = tl.log_softmax(z)
            loss, grad_lp = ctc_loss(y, target)
            return loss, [tl.log_softmax_backward(y, grad_lp)]

        assert tl.finite_difference_check(op, [z0]).max_relative_error <= 1e-3

    def test_grad_through_log_softmax_rows_sum_to_zero(self):
        rng = np.random.default_rng(7)
        for _ in range(20):
            lp, target = random_feasible_instance(rng)
            _, grad_lp = ctc_loss(lp, target)
            g_logits = tl.log_softmax_backward(lp, grad_lp)
            assert np.all(np.abs(g_logits.sum(axis=1)) <= 1e-6)

    def test_grad_is_negative_posterior(self):
        # rows of -grad must each sum to one (a distribution per frame)
        rng = np.random.default_rng(8)
        lp, target = random_feasible_instance(rng)
        _, grad = ctc_loss(lp, target)
        assert np.allclose((-grad).sum(axis=1), 1.0, atol=1e-9)
        assert np.all(-grad >= -1e-12)


class TestGreedyDecode:
    def test_uniform_row_ties_to_class_zero(self):
        lp = np.zeros((3, 4))
        assert np.array_equal(greedy_decode(lp), [0, 0, 0])

    def test_one_hot_rows(self):
        lp = np.log(np.array([[0.9, 0.05, 0.05], [0.05, 0.9, 0.05]]))
        assert np.array_equal(greedy_decode(lp), [0, 1])

    def test_matches_naive_argmax(self):
        rng = np.random.default_rng(5)
        lp = rng.uniform(-3, 3, (30, 6))
        want = [int(max(range(6), key=lambda k: lp[t, k])) for t in range(30)]
        assert np.array_equal(greedy_decode(lp), want)


class TestCollapse:
    def test_worked_example(self):
        # [g0, g0, -, g1, -, g1] -> [g0, g1, g1] with blank index 2
        assert collapse([0, 0, 2, 1, 2, 1], blank=2) == [0, 1, 1]

    def test_all_blank(self):
        assert collapse([3, 3, 3], blank=3) == []

    def test_matches_two_pass_naive(self):
        rng = np.random.default_rng(9)
        for _ in range(200):
            blank = 4
            labels = rng.integers(0, 5, size=rng.integers(1, 20)).tolist()
            want = [g for g in dedupe(labels) if g != blank]
            assert collapse(labels, blank) == want

    @given(st.lists(st.integers(0, 4), min_size=0, max_size=30))
    @settings(max_examples=200, deadline=None)
    def test_never_contains_blank_and_idempotent(self, labels):
        blank = 4
        out = collapse(labels, blank)
        assert blank not in out
        # re-embedding the collapsed sequence as framewise labels is stable
        # up to merging of adjacent repeats
        assert collapse(out, blank) == dedupe(out)
