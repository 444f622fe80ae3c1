import math

import numpy as np
import pytest
import torch
from hypothesis import given, settings
from hypothesis import strategies as st

from jaanet.errors import ZeroOccurrenceRateError
from jaanet.losses import (au_detection_loss, au_weights, bp_enhancement,
                           face_alignment_loss, local_au_loss,
                           refinement_constraint, total_loss,
                           weighted_cross_entropy, weighted_dice)

from oracles import central_diff, rel_err


def t(x, dtype=torch.float64):
    return torch.as_tensor(np.asarray(x), dtype=dtype)


class TestAUWeights:
    def test_hand_computed_pair(self):
        w = au_weights([0.25, 0.75])
        np.testing.assert_allclose(w.numpy(), [0.75, 0.25], atol=1e-15)

    def test_equal_rates_are_uniform(self):
        w = au_weights([0.3] * 5)
        np.testing.assert_allclose(w.numpy(), [0.2] * 5, atol=1e-15)

    def test_scale_invariance(self):
        a = au_weights([0.2, 0.4, 0.8])
        b = au_weights([0.1, 0.2, 0.4])
        np.testing.assert_allclose(a.numpy(), b.numpy(), atol=1e-15)

    def test_zero_rate_raises(self):
        with pytest.raises(ZeroOccurrenceRateError):
            au_weights([0.5, 0.0])

    @settings(max_examples=50)
    @given(st.lists(st.floats(1e-4, 1.0), min_size=1, max_size=20))
    def test_normalization(self, rates):
        assert abs(au_weights(rates).sum().item() - 1.0) < 1e-12


class TestAlignmentLoss:
    def test_perfect_prediction_is_zero(self):
        y = t(np.arange(8.0))[None]
        assert face_alignment_loss(y, y.clone(), t([5.0])).item() == 0.0

    def test_single_offset_landmark(self):
        # one landmark off by (3, 4) with d_o = 5: (9 + 16) / (2 * 25)
        y = torch.zeros(1, 8, dtype=torch.float64)
        y_hat = y.clone()
        y_hat[0, 2] += 3.0
        y_hat[0, 3] += 4.0
        assert face_alignment_loss(y, y_hat, t([5.0])).item() == pytest.approx(0.5)

    def test_doubling_d_o_quarters_the_loss(self):
        y = torch.zeros(1, 6, dtype=torch.float64)
        y_hat = torch.ones_like(y)
        l1 = face_alignment_loss(y, y_hat, t([4.0])).item()
        l2 = face_alignment_loss(y, y_hat, t([8.0])).item()
        assert l2 == pytest.approx(l1 / 4.0)

    def test_nonpositive_d_o_raises(self):
        y = torch.zeros(1, 4, dtype=torch.float64)
        with pytest.raises(ValueError):
            face_alignment_loss(y, y, t([0.0]))


class TestCrossEntropy:
    def test_confident_correct_is_near_zero(self):
        p = t([[1.0, 0.0]])
        p_hat = t([[1.0 - 1e-7, 1e-7]])
        w = t([0.5, 0.5])
        assert weighted_cross_entropy(p, p_hat, w).item() < 1e-6

    def test_single_au_log_two(self):
        val = weighted_cross_entropy(t([[1.0]]), t([[0.5]]), t([1.0]))
        assert val.item() == pytest.approx(math.log(2.0), rel=1e-12)

    def test_permutation_equivariance(self, rng):
        p = t(rng.integers(0, 2, size=(3, 5)).astype(float))
        q = t(rng.uniform(0.1, 0.9, size=(3, 5)))
        w = au_weights(rng.uniform(0.1, 1.0, size=5))
        perm = rng.permutation(5)
        a = weighted_cross_entropy(p, q, w)
        b = weighted_cross_entropy(p[:, perm], q[:, perm], w[list(perm)])
        assert a.item() == pytest.approx(b.item(), rel=1e-12)

    def test_saturated_predictions_are_clamped(self):
        val = weighted_cross_entropy(t([[1.0]]), t([[0.0]]), t([1.0]))
        assert torch.isfinite(val)


class TestDice:
    @pytest.mark.parametrize("p,q,expected", [
        (1.0, 1.0, 0.0),
        (0.0, 0.0, 0.0),
        (1.0, 0.0, 0.5),
    ])
    def test_hand_values(self, p, q, expected):
        val = weighted_dice(t([[p]]), t([[q]]), t([1.0]), eps=1.0)
        assert val.item() == pytest.approx(expected, abs=1e-12)

    @settings(max_examples=100)
    @given(st.integers(0, 1), st.floats(1e-6, 1.0 - 1e-6))
    def test_unweighted_term_in_unit_interval(self, p, q):
        val = weighted_dice(t([[float(p)]]), t([[q]]), t([1.0]), eps=1.0)
        assert 0.0 <= val.item() < 1.0


class TestCombinedLosses:
    def test_detection_loss_is_sum_of_parts(self, rng):
        p = t(rng.integers(0, 2, size=(4, 6)).astype(float))
        q = t(rng.uniform(0.05, 0.95, size=(4, 6)))
        w = au_weights(rng.uniform(0.1, 1.0, size=6))
        total = au_detection_loss(p, q, w)
        parts = weighted_cross_entropy(p, q, w) + weighted_dice(p, q, w)
        assert total.item() == pytest.approx(parts.item(), rel=1e-12)

    def test_hand_value_single_au(self):
        val = au_detection_loss(t([[1.0]]), t([[0.5]]), t([1.0]), eps=1.0)
        assert val.item() == pytest.approx(math.log(2.0) + 1.0 / 9.0, rel=1e-12)

    def test_local_loss_matches_detection_form(self, rng):
        p = t(rng.integers(0, 2, size=(2, 3)).astype(float))
        q = t(rng.uniform(0.1, 0.9, size=(2, 3)))
        w = t([0.2, 0.3, 0.5])
        assert local_au_loss(p, q, w).item() == \
            au_detection_loss(p, q, w).item()

    def test_perfect_predictions_near_zero(self):
        p = t([[1.0, 0.0, 1.0]])
        q = t([[1 - 1e-7, 1e-7, 1 - 1e-7]])
        w = t([1 / 3] * 3)
        assert au_detection_loss(p, q, w).item() < 1e-6


class TestTotalLoss:
    def test_lambda_zero_removes_alignment(self):
        a, b, c = t(1.3), t(0.7), t(42.0)
        assert total_loss(a, b, c, 0.0).item() == pytest.approx(2.0)

    def test_linear_in_alignment_term(self):
        a, b = t(0.5), t(0.25)
        l1 = total_loss(a, b, t(1.0), 0.5).item()
        l2 = total_loss(a, b, t(3.0), 0.5).item()
        assert l2 - l1 == pytest.approx(1.0)

    def test_exact_additivity(self, rng):
        vals = rng.uniform(0, 2, size=3)
        lam = 0.5
        got = total_loss(t(vals[0]), t(vals[1]), t(vals[2]), lam).item()
        assert got == pytest.approx(vals[0] + vals[1] + lam * vals[2], rel=1e-15)


class TestBPEnhancement:
    def _grad_at_map(self, lam):
        torch.manual_seed(3)
        maps = torch.rand(2, 3, 4, 4, dtype=torch.float64, requires_grad=True)
        scaled = bp_enhancement(maps, lam)
        loss = (scaled ** 2).sum() * 0.5 + scaled.mean()
        loss.backward()
        return maps.grad.clone(), scaled.detach().clone()

    def test_identity_at_one(self):
        g1, out1 = self._grad_at_map(1.0)
        torch.manual_seed(3)
        ref = torch.rand(2, 3, 4, 4, dtype=torch.float64, requires_grad=True)
        loss = (ref ** 2).sum() * 0.5 + ref.mean()
        loss.backward()
        torch.testing.assert_close(g1, ref.grad, rtol=0, atol=0)

    def test_doubling_is_exact(self):
        g1, out1 = self._grad_at_map(1.0)
        g2, out2 = self._grad_at_map(2.0)
        assert torch.equal(g2, 2.0 * g1)
        assert torch.equal(out1, out2)

    def test_rejects_weakening(self):
        with pytest.raises(ValueError):
            bp_enhancement(torch.rand(1, 1, 2, 2), 0.5)


class TestRefinementConstraint:
    def test_zero_target_uniform_half_gives_log_two_per_point(self):
        pre = torch.zeros(1, 3, 52, 52, dtype=torch.float64)
        ref = torch.full((1, 3, 44, 44), 0.5, dtype=torch.float64)
        val = refinement_constraint(pre, ref).item()
        n_points = 3 * 44 * 44   # n_au * (l/4)^2, = 3 * 1936 at l = 176
        assert val == pytest.approx(n_points * math.log(2.0), rel=1e-12)
        assert 44 * 44 == 1936

    def test_matching_maps_minimize(self, rng):
        pre = t(rng.uniform(0.05, 0.95, size=(1, 2, 12, 12)))
        from jaanet.losses import resize_maps
        target = resize_maps(pre, 8)
        best = refinement_constraint(pre, target).item()
        for _ in range(5):
            other = t(rng.uniform(0.05, 0.95, size=(1, 2, 8, 8)))
            assert refinement_constraint(pre, other).item() >= best


class TestGradientChecks:
    """Analytic gradients w.r.t. prediction inputs vs central differences."""

    def _check(self, fn, x0, tol=1e-5):
        x = torch.tensor(x0, dtype=torch.float64, requires_grad=True)
        fn(x).backward()
        analytic = x.grad.numpy()
        fd = central_diff(lambda a: fn(torch.as_tensor(a)).item(), x0)
        mask = np.maximum(np.abs(analytic), np.abs(fd)) > 1e-10
        assert rel_err(analytic, fd)[mask].max() < tol

    def test_alignment_loss_gradient(self, rng):
        y = t(rng.uniform(0, 32, size=(2, 8)))
        d_o = t(rng.uniform(4, 8, size=2))
        self._check(lambda x: face_alignment_loss(y, x, d_o),
                    rng.uniform(0, 32, size=(2, 8)))

    def test_cross_entropy_gradient(self, rng):
        p = t(rng.integers(0, 2, size=(2, 4)).astype(float))
        w = au_weights(rng.uniform(0.2, 1.0, size=4))
        self._check(lambda x: weighted_cross_entropy(p, x, w),
                    rng.uniform(0.2, 0.8, size=(2, 4)))

    def test_dice_gradient(self, rng):
        p = t(rng.integers(0, 2, size=(2, 4)).astype(float))
        w = au_weights(rng.uniform(0.2, 1.0, size=4))
        self._check(lambda x: weighted_dice(p, x, w),
                    rng.uniform(0.2, 0.8, size=(2, 4)))

    def test_local_loss_gradient(self, rng):
        p = t(rng.integers(0, 2, size=(1, 3)).astype(float))
        w = t([0.5, 0.3, 0.2])
        self._check(lambda x: local_au_loss(p, x, w),
                    rng.uniform(0.2, 0.8, size=(1, 3)))

    def test_refinement_constraint_gradient(self, rng):
        pre = t(rng.uniform(0.1, 0.9, size=(1, 2, 10, 10)))
        self._check(lambda x: refinement_constraint(pre, x),
                    rng.uniform(0.2, 0.8, size=(1, 2, 8, 8)))
