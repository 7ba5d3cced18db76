"""Pseudo-label refinement: case rules, swapping, densify, losses."""

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from slrkit import tensorlab as tl
from slrkit.ctc import collapse
from slrkit.dplr import (DplrCase, LossBundle, classify_case, densify,
                         generate_dpl, pseudo_label_targets, refine_loss,
                         swap_wrong_glosses, total_loss)
from slrkit.errors import CannotDensifyError, ContractViolationError

from oracles import dedupe, naive_nll, nearest_fill

BLANK = 9  # vocabulary 0..8 in these tests


class TestClassifyCase:
    def test_matched_lengths(self):
        assert classify_case([1, 2], [3, 4]) is DplrCase.CASE1

    def test_off_by_one(self):
        assert classify_case([1], [1, 2]) is DplrCase.CASE2
        assert classify_case([1, 2, 3], [1, 2]) is DplrCase.CASE2

    def test_larger_gap_skips(self):
        assert classify_case([1], [1, 2, 3]) is DplrCase.SKIP
        assert classify_case([1, 2, 3, 4], [1]) is DplrCase.SKIP


class TestSwap:
    def test_worked_example(self):
        # [-, A, -, B, -] with gt [A, C] relabels the B run
        out = swap_wrong_glosses([BLANK, 0, BLANK, 1, BLANK], [0, 1], [0, 2], BLANK)
        assert out.tolist() == [BLANK, 0, BLANK, 2, BLANK]

    def test_noop_when_correct(self):
        fw = [BLANK, 0, 0, BLANK, 1]
        out = swap_wrong_glosses(fw, [0, 1], [0, 1], BLANK)
        assert out.tolist() == fw

    def test_whole_run_relabeled(self):
        out = swap_wrong_glosses([0, 0, BLANK, 1], [0, 1], [2, 1], BLANK)
        assert out.tolist() == [2, 2, BLANK, 1]

    def test_length_mismatch_rejected(self):
        with pytest.raises(ContractViolationError):
            swap_wrong_glosses([0, BLANK], [0], [0, 1], BLANK)

    def test_collapse_mismatch_rejected(self):
        with pytest.raises(ContractViolationError):
            swap_wrong_glosses([0, BLANK], [1], [1], BLANK)


class TestDensify:
    def test_worked_example_tie_goes_left(self):
        # [-, A, -, C, -, -]: frame 2 is equidistant to A and C -> A
        out = densify([BLANK, 0, BLANK, 2, BLANK, BLANK], BLANK)
        assert out.tolist() == [0, 0, 0, 2, 2, 2]

    def test_no_blanks_is_identity(self):
        assert densify([1, 1, 2], BLANK).tolist() == [1, 1, 2]

    def test_single_run_fills_everything(self):
        assert densify([BLANK, BLANK, 0, BLANK], BLANK).tolist() == [0, 0, 0, 0]

    def test_all_blank_raises(self):
        with pytest.raises(CannotDensifyError):
            densify([BLANK, BLANK], BLANK)

    def test_matches_naive_scan(self):
        rng = np.random.default_rng(5)
        for _ in range(300):
            n = int(rng.integers(1, 15))
            labels = rng.integers(0, BLANK + 1, size=n).tolist()
            if all(v == BLANK for v in labels):
                continue
            assert densify(labels, BLANK).tolist() == nearest_fill(labels, BLANK)


class TestGenerateDpl:
    def test_case1_swap_then_densify(self):
        fw = [BLANK, 0, BLANK, 1, BLANK, BLANK]
        out = generate_dpl(fw, [0, 2], BLANK)
        assert out.tolist() == [0, 0, 0, 2, 2, 2]

    def test_case2_densify_only(self):
        fw = [BLANK, BLANK, 0, BLANK]
        out = generate_dpl(fw, [0, 1], BLANK)
        assert out.tolist() == [0, 0, 0, 0]

    def test_skip_returns_none(self):
        assert generate_dpl([BLANK, BLANK, 0, BLANK], [0, 1, 2], BLANK) is None

    def test_all_blank_returns_none(self):
        assert generate_dpl([BLANK, BLANK], [], BLANK) is None

    def test_case2_never_injects_ground_truth(self):
        fw = [BLANK, 3, BLANK]
        out = generate_dpl(fw, [4, 4], BLANK)  # wrong gloss, length off by one
        assert out is not None
        assert set(out.tolist()) == {3}


class TestToggles:
    def test_densify_off_keeps_blanks(self):
        fw = [BLANK, 0, BLANK, 1, BLANK]
        out = pseudo_label_targets(fw, [0, 2], BLANK, densify_on=False,
                                   refine_on=True)
        assert out.tolist() == [BLANK, 0, BLANK, 2, BLANK]

    def test_refine_off_never_swaps(self):
        fw = [BLANK, 0, BLANK, 1, BLANK]
        out = pseudo_label_targets(fw, [0, 2], BLANK, densify_on=True,
                                   refine_on=False)
        assert out.tolist() == [0, 0, 0, 1, 1]

    def test_raw_mode_returns_decode_as_is(self):
        fw = [BLANK, 0, BLANK]
        out = pseudo_label_targets(fw, [1], BLANK, densify_on=False,
                                   refine_on=False)
        assert out.tolist() == fw


class TestRefineLoss:
    def test_one_hot_near_zero(self):
        lp = np.log(np.full((3, 3), 1e-9))
        for t, lab in enumerate([0, 1, 2]):
            lp[t, lab] = np.log(1.0 - 2e-9)
        loss, _ = refine_loss(lp, [0, 1, 2])
        assert loss == pytest.approx(0.0, abs=1e-6)

    def test_uniform_is_log3(self):
        lp = np.full((4, 3), np.log(1 / 3))
        loss, _ = refine_loss(lp, [0, 2, 1, 0])
        assert loss == pytest.approx(np.log(3.0), abs=1e-12)

    def test_matches_naive_nll(self):
        rng = np.random.default_rng(8)
        for _ in range(50):
            t_len = int(rng.integers(1, 12))
            lp = tl.log_softmax(rng.uniform(-2, 2, (t_len, 5)))
            labels = rng.integers(0, 5, t_len)
            loss, grad = refine_loss(lp, labels)
            assert loss == pytest.approx(naive_nll(lp, labels), abs=1e-9)
            assert grad.shape == lp.shape
            assert grad.sum() == pytest.approx(-1.0, abs=1e-9)

    def test_length_mismatch_rejected(self):
        with pytest.raises(ContractViolationError):
            refine_loss(np.zeros((3, 4)), [0, 1])

    @pytest.mark.parametrize("seed", range(20))
    def test_gradcheck(self, seed):
        rng = np.random.default_rng(seed)
        t_len = int(rng.integers(1, 8))
        z = rng.uniform(-1, 1, (t_len, 4))
        labels = rng.integers(0, 4, t_len)

        def op(z):
            y = tl.log_softmax(z)
            loss, grad = refine_loss(y, labels)
            return loss, [tl.log_softmax_backward(y, grad)]

        assert tl.finite_difference_check(op, [z]).max_relative_error <= 1e-3


class TestTotalLoss:
    def test_worked_sum(self):
        bundle = LossBundle(2.0, 1.0, 0.5, 0.8, 1.0, 1.0, 1.0)
        assert total_loss(bundle) == pytest.approx(4.3)

    def test_lambda2_zero_disables_refinement_term(self):
        on = LossBundle(2.0, 1.0, 123.0, 0.8, 1.0, 0.0, 1.0)
        off = LossBundle(2.0, 1.0, 0.0, 0.8, 1.0, 0.0, 1.0)
        assert total_loss(on) == total_loss(off)

    def test_skip_contributes_nothing(self):
        bundle = LossBundle(2.0, 1.0, 0.0, 0.8, 0.5, 7.0, 0.25)
        assert total_loss(bundle) == pytest.approx(2.0 + 0.5 * 1.0 + 0.25 * 0.8)


def random_framewise(rng, t_len, vocab):
    labels = rng.integers(0, vocab + 1, size=t_len)
    # reproduce CTC's blank dominance so case stats are realistic
    blank_mask = rng.uniform(size=t_len) < 0.55
    return np.where(blank_mask, vocab, labels)


class TestInvariantSuite:
    def test_invariants_on_1000_random_instances(self):
        rng = np.random.default_rng(99)
        vocab = 6
        blank = vocab
        for _ in range(1000):
            t_len = int(rng.integers(1, 24))
            fw = random_framewise(rng, t_len, vocab)
            gt = [int(g) for g in rng.integers(0, vocab,
                                               size=rng.integers(1, 6))]
            pred = collapse(fw, blank)
            case = classify_case(pred, gt)
            gap = abs(len(pred) - len(gt))
            assert (case is DplrCase.CASE1) == (gap == 0)
            assert (case is DplrCase.CASE2) == (gap == 1)
            assert (case is DplrCase.SKIP) == (gap >= 2)

            dpl = generate_dpl(fw, gt, blank)
            again = generate_dpl(fw.copy(), list(gt), blank)
            if dpl is None:
                assert again is None
                assert case is DplrCase.SKIP or not np.any(fw != blank)
                continue
            assert np.array_equal(dpl, again)  # deterministic
            assert blank not in dpl.tolist()
            assert dpl.shape == (t_len,)
            # runs never interleave: at most |pred| - 1 label changes
            changes = int((dpl[1:] != dpl[:-1]).sum())
            assert changes <= max(len(pred) - 1, 0)
            if case is DplrCase.CASE1:
                assert collapse(dpl, blank) == dedupe(gt)
            else:
                assert collapse(dpl, blank) == dedupe(pred)
                assert set(dpl.tolist()) <= set(pred)


@given(st.lists(st.integers(0, 5), min_size=1, max_size=20),
       st.lists(st.integers(0, 4), min_size=1, max_size=5))
@settings(max_examples=300, deadline=None)
def test_generate_dpl_properties(framewise, gt):
    blank = 5
    dpl = generate_dpl(framewise, gt, blank)
    pred = collapse(framewise, blank)
    if dpl is None:
        assert classify_case(pred, gt) is DplrCase.SKIP or not any(
            v != blank for v in framewise
        )
    else:
        assert len(dpl) == len(framewise)
        assert blank not in dpl.tolist()
