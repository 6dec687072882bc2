import math

import numpy as np
import pytest
from hypothesis import given, strategies as st

from dnarch import autodiff as ad
from dnarch.masks import (GaussianMaskParams, MaskAxis, SigmoidMaskParams, clamp_params,
                          clipped_size, eval_mask, eval_mask_nd, gaussian_sigma_bounds,
                          gaussian_sigma_for_halfwidth, mask_size, masked_values,
                          materialized_count, materialized_range, sigmoid_mu_bounds,
                          sigmoid_mu_for_bound, support_bound)

# frozen from a 50-digit mpmath evaluation
GAUSS_BOUND_SIGMA_HALF = 1.0729830131446736       # mu=0, sigma=0.5, T=0.1
GAUSS_BOUND_SIGMA_SMALL = 0.06974389585440379     # mu=0, sigma=0.0325, T=0.1
SIGMOID_BOUND_TAU25 = 0.08788898309344878         # mu=0, tau=25, T=0.1
SIGMOID_MU_MAX_UNIT = 1.0693840422155243          # [0, 1], tau=25
SIGMOID_MU_MIN_UNIT = 0.11777755916665762
EXP_MINUS_8 = 0.00033546262790251185


def val(x):
    return float(x.data) if isinstance(x, ad.Tensor) else float(x)


class TestEvaluation:
    def test_gaussian_peak_is_one(self):
        assert eval_mask(GaussianMaskParams(0.25, 0.0), 0.0).item() == 1.0

    def test_sigmoid_at_offset_is_half(self):
        assert eval_mask(SigmoidMaskParams(0.3, 25.0), 0.3).item() == 0.5

    def test_gaussian_tail_is_exact_zero(self):
        m = GaussianMaskParams(0.25, 0.0, 0.1)
        assert eval_mask(m, 1.0).item() == 0.0
        np.testing.assert_allclose(eval_mask(m, 1.0, thresholded=False).item(), EXP_MINUS_8, rtol=1e-14)

    def test_threshold_keeps_value_at_bound(self):
        m = SigmoidMaskParams(0.0, 10.0, 0.1)
        x = np.array([-1.0, 0.0, 0.5, 1.0])
        raw = eval_mask(m, x, thresholded=False).data
        np.testing.assert_array_equal(eval_mask(m, x).data, np.where(raw >= 0.1, raw, 0.0))

    def test_nd_is_product(self):
        g = [GaussianMaskParams(0.3, 0.0), GaussianMaskParams(0.5, 0.1)]
        pts = np.array([[0.1, 0.2], [0.2, -0.3], [0.6, 0.0]])
        expected = eval_mask(g[0], pts[:, 0]).data * eval_mask(g[1], pts[:, 1]).data
        np.testing.assert_array_equal(eval_mask_nd(g, pts).data, expected)

    def test_nd_dimension_mismatch(self):
        with pytest.raises(ValueError):
            eval_mask_nd([GaussianMaskParams(0.3)], np.zeros((4, 2)))

    @pytest.mark.parametrize("bad", [dict(sigma=0.0), dict(sigma=-1.0), dict(sigma=0.3, threshold=1.0)])
    def test_invalid_gaussian(self, bad):
        with pytest.raises(ValueError):
            GaussianMaskParams(**bad)

    def test_invalid_sigmoid(self):
        with pytest.raises(ValueError):
            SigmoidMaskParams(0.0, tau=0.0)


class TestSupportBound:
    def test_frozen_gaussian(self):
        np.testing.assert_allclose(support_bound(GaussianMaskParams(0.5, 0.0)), GAUSS_BOUND_SIGMA_HALF,
                                   rtol=1e-15)
        np.testing.assert_allclose(support_bound(GaussianMaskParams(0.0325, 0.0)), GAUSS_BOUND_SIGMA_SMALL,
                                   rtol=1e-15)

    def test_frozen_sigmoid(self):
        np.testing.assert_allclose(support_bound(SigmoidMaskParams(0.0, 25.0)), SIGMOID_BOUND_TAU25,
                                   rtol=1e-14)

    def test_inverse_helpers(self):
        s = gaussian_sigma_for_halfwidth(0.4, 0.2)
        assert math.isclose(support_bound(GaussianMaskParams(s, 0.0, 0.2)), 0.4, rel_tol=1e-15)
        mu = sigmoid_mu_for_bound(0.3, 25.0, 0.1)
        assert math.isclose(support_bound(SigmoidMaskParams(mu, 25.0)), 0.3, rel_tol=1e-14)


@given(mu=st.floats(-1, 1), sigma=st.floats(0.01, 2), t=st.floats(0.01, 0.9))
def test_gaussian_bound_inverts_mask(mu, sigma, t):
    m = GaussianMaskParams(sigma, mu, t)
    assert abs(eval_mask(m, support_bound(m), thresholded=False).item() - t) < 1e-12


@given(mu=st.floats(-1, 1), tau=st.floats(1, 100), t=st.floats(0.01, 0.9))
def test_sigmoid_bound_inverts_mask(mu, tau, t):
    m = SigmoidMaskParams(mu, tau, t)
    assert abs(eval_mask(m, support_bound(m), thresholded=False).item() - t) < 1e-12


@given(s1=st.floats(0.01, 1), s2=st.floats(0.01, 1))
def test_gaussian_size_monotone_in_sigma(s1, s2):
    lo, hi = sorted((s1, s2))
    a = mask_size(GaussianMaskParams(lo), 1.0, 33)
    b = mask_size(GaussianMaskParams(hi), 1.0, 33)
    assert a <= b


@given(m1=st.floats(-1, 1), m2=st.floats(-1, 1))
def test_sigmoid_size_monotone_in_mu(m1, m2):
    lo, hi = sorted((m1, m2))
    assert mask_size(SigmoidMaskParams(lo, 25.0), 1.0, 16) <= mask_size(SigmoidMaskParams(hi, 25.0), 1.0, 16)


@given(mu=st.floats(-1, 1), sigma=st.floats(0.01, 1))
def test_materialized_cells_are_exactly_the_nonzeros(mu, sigma):
    m = GaussianMaskParams(sigma, mu)
    axis = MaskAxis.linspace(33)
    vals = eval_mask(m, axis.coords).data
    lo, hi = materialized_range(m, axis)
    nz = np.nonzero(vals)[0]
    if len(nz):
        assert (lo, hi) == (nz[0], nz[-1])
    assert np.all(vals[:lo] == 0) and np.all(vals[hi + 1:] == 0)


class TestSizes:
    def test_linspace_support(self):
        # a sigmoid with bound 0.5 on 33 points over [0, 1] keeps indices 0..16
        mu = sigmoid_mu_for_bound(0.5, 25.0)
        axis = MaskAxis.linspace(33, 0.0, 1.0)
        assert materialized_count(SigmoidMaskParams(mu, 25.0), axis) == 17

    def test_sigmoid_size_anchor(self):
        mu = sigmoid_mu_for_bound(1.0, 25.0)
        np.testing.assert_allclose(mask_size(SigmoidMaskParams(mu, 25.0), 1.0, 16), 16.0, rtol=1e-14)
        mu = sigmoid_mu_for_bound(0.0, 25.0)
        np.testing.assert_allclose(mask_size(SigmoidMaskParams(mu, 25.0), 1.0, 16), 8.0, rtol=1e-14)

    def test_gaussian_size_anchor(self):
        s = gaussian_sigma_for_halfwidth(0.25)
        np.testing.assert_allclose(mask_size(GaussianMaskParams(s), 1.0, 64), 16.0, rtol=1e-14)

    def test_size_is_differentiable(self):
        mu = ad.Tensor(np.array(0.1), requires_grad=True)
        size = mask_size(SigmoidMaskParams(mu, 25.0), 1.0, 16)
        ad.backward(size)
        assert mu.grad == pytest.approx(8.0)

    def test_clip_passes_gradient(self):
        s = ad.Tensor(np.array(40.0), requires_grad=True)
        out = clipped_size(s * 2.0, 32.0)
        ad.backward(out)
        assert out.item() == 32.0 and s.grad == 2.0

    def test_empty_support_keeps_one_cell(self):
        m = SigmoidMaskParams(-5.0, 25.0)
        axis = MaskAxis.cells(8)
        assert materialized_range(m, axis) == (0, 0)
        lo, hi, v = masked_values(m, axis)
        assert v.shape == (1,)


class TestAxes:
    def test_cells(self):
        np.testing.assert_allclose(MaskAxis.cells(4).coords, [-0.75, -0.25, 0.25, 0.75])

    def test_frequency_nyquist_at_one(self):
        for n in (8, 9, 64):
            ax = MaskAxis.frequency(n)
            assert ax.coords[0] == -1.0 and ax.n == n // 2 + 1
        assert MaskAxis.frequency(8).coords[-1] == 1.0

    def test_offsets(self):
        np.testing.assert_allclose(MaskAxis.offsets(8).coords, np.arange(-3, 4) / 4)
        assert MaskAxis.offsets(9).n == 9

    def test_degenerate_axis(self):
        with pytest.raises(ValueError):
            MaskAxis.cells(0)
        with pytest.raises(ValueError):
            MaskAxis(1.0, 1.0, np.zeros(1))


class TestClamping:
    def test_frozen_unit_bounds(self):
        lo, hi = sigmoid_mu_bounds(0.0, 1.0, 25.0)
        np.testing.assert_allclose(lo, SIGMOID_MU_MIN_UNIT, rtol=1e-14)
        np.testing.assert_allclose(hi, SIGMOID_MU_MAX_UNIT, rtol=1e-14)

    def test_clamp_levels(self):
        lo, hi = sigmoid_mu_bounds(-1.0, 1.0, 25.0)
        np.testing.assert_allclose(eval_mask(SigmoidMaskParams(lo, 25.0), -1.0).item(), 0.95, rtol=1e-12)
        np.testing.assert_allclose(eval_mask(SigmoidMaskParams(hi, 25.0), 1.0).item(), 0.85, rtol=1e-12)

    def test_clamp_tensor_in_place(self):
        t = ad.Tensor(np.array(5.0), requires_grad=True)
        m = clamp_params(SigmoidMaskParams(t, 25.0), (0.0, 1.0))
        assert m.mu is t and t.item() == 1.0

    def test_sigma_bounds(self):
        lo, hi = gaussian_sigma_bounds(1 / 64, 0.5)
        assert support_bound(GaussianMaskParams(lo)) == pytest.approx(1 / 64)
        assert clamp_params(GaussianMaskParams(1e-6), (lo, hi)).sigma == lo


@given(sigma=st.floats(0.05, 1), x=st.floats(-0.9, 0.9))
def test_mask_gradient_wrt_sigma(sigma, x):
    def f(s):
        return eval_mask(GaussianMaskParams(s), np.array(x), thresholded=False)

    rep = ad.check_gradients(f, np.array(sigma))
    assert rep.passed, rep.max_rel_error


@given(mu=st.floats(-0.5, 0.5), x=st.floats(-1, 1))
def test_mask_gradient_wrt_mu(mu, x):
    def f(m):
        return eval_mask(SigmoidMaskParams(m, 10.0), np.array(x), thresholded=False)

    rep = ad.check_gradients(f, np.array(mu))
    assert rep.passed, rep.max_rel_error
