import math

import numpy as np
import pytest
from hypothesis import given, strategies as st

from dnarch import autodiff as ad
from dnarch.complexity import (arch_cost, base_cost, complexity_loss, cost_fourier_conv, depth_weights,
                               network_cost, total_loss)
from dnarch.export import snapshot, trim
from dnarch.network import DNArchNetwork, NetworkConfig

from oracles import hand_count


def config(**kw):
    base = dict(in_channels=1, out_dim=2, spatial_shape=(64,), depth_base=4, width_base=16,
                kernel_hidden=8, kernel_layers=1, encoding_features=4)
    base.update(kw)
    return NetworkConfig(**base)


def open_all(net):
    for name, (lo, hi) in net.mask_bounds.items():
        net.params[name].data = np.asarray(hi)


class TestCounts:
    def test_base_cost_is_hand_count(self):
        assert base_cost(config()) == hand_count(64, 1, 16, 4, 2, 6)

    def test_fixed_network_cost_is_hand_count(self):
        est = network_cost(DNArchNetwork(config(learn="")))
        assert est.value == hand_count(64, 1, 16, 4, 2, 6)
        assert est.relative == 1.0

    def test_fully_open_masks(self):
        net = DNArchNetwork(config())
        open_all(net)
        assert network_cost(net).value == hand_count(64, 1, 32, 8, 2, 6)

    def test_dense_decoder(self):
        assert base_cost(config(task="dense", out_dim=3)) == hand_count(64, 1, 16, 4, 3, 6, dense=True)

    def test_2d(self):
        c = config(spatial_shape=(8, 8), learn="")
        assert network_cost(DNArchNetwork(c)).value == hand_count(64, 1, 16, 4, 2, 6)

    def test_fft_cost_floor(self):
        assert cost_fourier_conv(0.5, 3.0) == 0.0
        assert cost_fourier_conv(8.0, 2.0) == 48.0

    def test_breakdown_sums_to_total(self):
        est = network_cost(DNArchNetwork(config()))
        assert math.isclose(sum(est.breakdown.values()), est.value, rel_tol=1e-12)


class TestDepthWeights:
    def test_integer_depth(self):
        assert depth_weights(2.0, 4) == [1.0, 1.0, 0.0, 0.0]

    def test_fractional_depth(self):
        d = ad.Tensor(np.array(2.25), requires_grad=True)
        w = depth_weights(d, 4)
        assert w[0] == 1.0 and w[1] == 1.0 and w[3] == 0.0
        assert w[2].item() == pytest.approx(0.25)


class TestLoss:
    def test_zero_at_target(self):
        assert complexity_loss(123.0, 123.0) == 0.0

    def test_scale_invariant(self):
        a = complexity_loss(1234.5, 1000.0)
        b = complexity_loss(1234.5e10, 1000.0e10)
        assert a == b

    def test_nonpositive_target(self):
        with pytest.raises(ValueError):
            complexity_loss(1.0, 0.0)

    def test_lambda_zero_drops_term(self):
        l_obj = ad.Tensor(np.array(0.7))
        assert total_loss(l_obj, float("nan"), 0.0) is l_obj

    def test_negative_lambda(self):
        with pytest.raises(ValueError):
            total_loss(1.0, 1.0, -0.1)


@given(c=st.floats(1, 1e6), t=st.floats(1, 1e6))
def test_loss_nonnegative_and_symmetric_in_ratio(c, t):
    assert complexity_loss(c, t) >= 0
    assert complexity_loss(c, t) == pytest.approx((c / t - 1) ** 2)


@given(q=st.floats(0.0, 1.0))
def test_cost_monotone_in_width(q):
    net = DNArchNetwork(config(kernel_hidden=4))
    name = "blocks.0.mask.in"
    lo, hi = net.mask_bounds[name]
    net.params[name].data = np.asarray(lo + q * (hi - lo))
    a = network_cost(net).value
    net.params[name].data = np.asarray(hi)
    assert a <= network_cost(net).value


def test_arch_cost_of_trimmed_base():
    net = DNArchNetwork(config(learn=""))
    assert arch_cost(net.config, snapshot(trim(net))) == base_cost(net.config)


def test_gradient_reaches_every_active_mask():
    net = DNArchNetwork(config())
    net.params["mask.depth"].data = np.asarray(1.0)
    est = network_cost(net)
    names = [k for k in net.mask_bounds if "kernel" not in k]
    grads = ad.gradients(est.loss() + est.total * 1e-9, [net.params[k] for k in names])
    for name, g in zip(names, grads):
        assert g != 0, name
