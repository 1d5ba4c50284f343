import numpy as np
import pytest

from weakseg.hideseek import PseudoMask
from weakseg.losses import (LabelSets, SwitchPolicy, softmax_scores, weak_loss,
                            smx_loss, select_loss, total_loss)
from weakseg.tensorcore import Tensor, backward

from gradcheck import max_relative_grad_error


def sets_for(present, num_classes):
    return LabelSets.from_image_labels(present, num_classes)


class TestLabelSets:
    def test_background_always_present(self):
        s = sets_for([2, 4], 5)
        assert 0 in s.present
        assert s.present == frozenset({0, 2, 4})
        assert s.absent == frozenset({1, 3, 5})

    def test_partition(self):
        s = sets_for([1, 2, 3, 4, 5], 5)
        assert s.absent == frozenset()
        with pytest.raises(ValueError):
            sets_for([9], 5)


class TestSoftmaxScores:
    def test_zero_logits_uniform(self):
        s = softmax_scores(Tensor(np.zeros((3, 2, 2))))
        np.testing.assert_allclose(s.data, np.full((3, 2, 2), 1 / 3), atol=1e-15)

    def test_per_pixel_shift_invariance(self):
        rng = np.random.default_rng(0)
        logits = rng.standard_normal((4, 3, 3))
        shift = rng.standard_normal((1, 3, 3))
        a = softmax_scores(Tensor(logits)).data
        b = softmax_scores(Tensor(logits + shift)).data
        np.testing.assert_allclose(a, b, rtol=0, atol=1e-12)

    def test_sums_to_one(self):
        rng = np.random.default_rng(1)
        s = softmax_scores(Tensor(rng.standard_normal((5, 4, 4)))).data
        np.testing.assert_allclose(s.sum(axis=0), np.ones((4, 4)), rtol=0, atol=1e-12)


class TestWeakLoss:
    def test_perfect_prediction_is_zero(self):
        probs = np.zeros((3, 2, 2))
        probs[1] = 1.0  # class 1 saturated everywhere
        probs[0, 0, 0] = 1.0
        probs[1, 0, 0] = 0.0
        sets = LabelSets(present=frozenset({0, 1}), absent=frozenset({2}))
        loss = weak_loss(Tensor(probs), sets)
        assert float(loss.data) <= 1e-11

    def test_single_present_class_half_prob(self):
        probs = np.zeros((1, 2, 2))
        probs[0, 1, 1] = 0.5
        sets = LabelSets(present=frozenset({0}), absent=frozenset())
        loss = weak_loss(Tensor(probs), sets)
        assert float(loss.data) == pytest.approx(np.log(2.0), rel=1e-12)

    def test_empty_absent_set_is_present_term_alone(self):
        rng = np.random.default_rng(2)
        probs = rng.uniform(0.1, 0.9, (3, 2, 2))
        all_present = LabelSets(present=frozenset({0, 1, 2}), absent=frozenset())
        expected = -np.mean([np.log(probs[c].max()) for c in range(3)])
        assert float(weak_loss(Tensor(probs), all_present).data) == pytest.approx(expected)

    def test_nonnegative(self):
        rng = np.random.default_rng(3)
        for _ in range(20):
            probs = rng.uniform(0, 1, (4, 3, 3))
            sets = sets_for(rng.choice([1, 2, 3], size=2, replace=False), 3)
            assert float(weak_loss(Tensor(probs), sets).data) >= 0.0

    def test_gradient_against_finite_differences(self):
        rng = np.random.default_rng(4)
        probs = rng.uniform(0.05, 0.45, (3, 2, 3))  # well away from max ties
        sets = sets_for([1], 2)
        err = max_relative_grad_error(lambda p: weak_loss(p, sets), [probs])
        assert err < 1e-4

    def test_max_tie_routes_to_first_pixel(self):
        probs = np.full((1, 2, 2), 0.3)
        sets = LabelSets(present=frozenset({0}), absent=frozenset())
        p = Tensor(probs)
        backward(weak_loss(p, sets))
        g = p.grad[0]
        assert g[0, 0] != 0.0
        assert np.all(g.reshape(-1)[1:] == 0.0)


class TestSmxLoss:
    def test_one_hot_agreement_is_zero(self):
        labels = np.array([[0, 1], [2, 0]])
        probs = np.zeros((3, 2, 2))
        for y in range(2):
            for x in range(2):
                probs[labels[y, x], y, x] = 1.0
        loss = smx_loss(Tensor(probs), PseudoMask.from_labels(labels))
        assert float(loss.data) <= 1e-11

    def test_uniform_probs_give_log_classes(self):
        probs = np.full((3, 2, 2), 1 / 3)
        for labels in (np.zeros((2, 2), int), np.array([[1, 2], [0, 1]])):
            loss = smx_loss(Tensor(probs), PseudoMask.from_labels(labels))
            assert float(loss.data) == pytest.approx(np.log(3.0), rel=1e-12)

    def test_gradient_against_finite_differences(self):
        rng = np.random.default_rng(5)
        probs = rng.uniform(0.1, 0.9, (3, 2, 2))
        mask = PseudoMask.from_labels(rng.integers(0, 3, (2, 2)))
        err = max_relative_grad_error(lambda p: smx_loss(p, mask), [probs])
        assert err < 1e-4

    def test_decreases_when_true_class_probability_rises(self):
        rng = np.random.default_rng(6)
        logits = rng.standard_normal((3, 2, 2))
        mask = PseudoMask.from_labels(rng.integers(0, 3, (2, 2)))

        def value(ls):
            return float(smx_loss(softmax_scores(Tensor(ls)), mask).data)

        base = value(logits)
        for y in range(2):
            for x in range(2):
                bumped = logits.copy()
                bumped[mask.labels[y, x], y, x] += 1e-3
                assert value(bumped) < base or base <= 1e-11

    def test_resolution_mismatch_rejected(self):
        with pytest.raises(ValueError, match="match"):
            smx_loss(Tensor(np.full((2, 2, 2), 0.5)), PseudoMask.from_labels(np.zeros((3, 3), int)))


class TestSelectLoss:
    def mask(self, fg):
        labels = np.zeros((4, 4), dtype=int)
        labels.reshape(-1)[:fg] = 1
        return PseudoMask.from_labels(labels)

    def test_none_mode_always_smx(self):
        policy = SwitchPolicy(mode="none", warmup_iters=100, noisy_threshold=0)
        for it in (0, 50, 99, 100, 10_000):
            for fg in (0, 1):
                assert select_loss(policy, it, self.mask(fg)) == "smx"

    def test_fixed_boundary(self):
        policy = SwitchPolicy(mode="fixed", warmup_iters=5000)
        assert select_loss(policy, 4999, self.mask(7)) == "weak"
        assert select_loss(policy, 5000, self.mask(7)) == "smx"
        assert select_loss(policy, 5000, self.mask(0)) == "smx"

    def test_adaptive_all_background_falls_back_to_weak(self):
        policy = SwitchPolicy(mode="adaptive", warmup_iters=10, noisy_threshold=0)
        assert select_loss(policy, 999, self.mask(0)) == "weak"

    def test_adaptive_boundaries(self):
        policy = SwitchPolicy(mode="adaptive", warmup_iters=10, noisy_threshold=0)
        assert select_loss(policy, 9, self.mask(5)) == "weak"    # warm-up
        assert select_loss(policy, 10, self.mask(1)) == "smx"    # 1 > tau
        assert select_loss(policy, 10, self.mask(0)) == "weak"   # 0 <= tau
        tau2 = SwitchPolicy(mode="adaptive", warmup_iters=0, noisy_threshold=2)
        assert select_loss(tau2, 0, self.mask(2)) == "weak"
        assert select_loss(tau2, 0, self.mask(3)) == "smx"

    def test_bad_mode_rejected(self):
        with pytest.raises(ValueError, match="mode"):
            SwitchPolicy(mode="sometimes")


class TestTotalLoss:
    def test_seg_only_weights(self):
        seg, c1, c2 = Tensor(np.float64(2.0)), Tensor(np.float64(3.0)), Tensor(np.float64(5.0))
        assert float(total_loss(seg, c1, c2, (1, 0, 0)).data) == 2.0

    def test_all_zero(self):
        z = Tensor(np.float64(0.0))
        assert float(total_loss(z, z, z).data) == 0.0

    def test_linearity_and_missing_branches(self):
        seg, c1, c2 = Tensor(np.float64(2.0)), Tensor(np.float64(3.0)), Tensor(np.float64(5.0))
        assert float(total_loss(seg, c1, c2, (1, 2, 3)).data) == 2 + 6 + 15
        assert float(total_loss(seg, c1, None, (1, 2, 3)).data) == 2 + 6
        assert float(total_loss(seg, None, None, (1, 2, 3)).data) == 2.0

    def test_gradient_flows_to_all_terms(self):
        seg, c1, c2 = Tensor(np.float64(2.0)), Tensor(np.float64(3.0)), Tensor(np.float64(5.0))
        backward(total_loss(seg, c1, c2, (1.0, 0.5, 0.25)))
        assert float(seg.grad) == 1.0
        assert float(c1.grad) == 0.5
        assert float(c2.grad) == 0.25
