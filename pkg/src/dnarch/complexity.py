"""Differentiable operation counts of a masked network and the budget loss.

Costs count multiply-accumulates.  Sizes are the differentiable mask sizes
of :class:`~dnarch.network.DNArchNetwork`, so the count is on the tape and
its gradient reaches every mask parameter.  Per residual block with
resolution size ``r`` and width sizes ``a, b, c`` (input, middle, output)::

    FFT of the input           r * log2(r) * a
    channel-mixing convolution r * a * b
    norm + nonlinearity        2 * r * b
    pointwise linear           r * b * c
    norm + nonlinearity + drop 3 * r * c

The encoder (linear layer, norm, nonlinearity) and the decoder are counted
at the identity-path width.  Blocks are weighted by the depth size ``d``:
``w_l = clamp(d - l + 1, 0, 1)`` for the 1-based block index ``l``.
"""
from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np

from . import autodiff as ad

__all__ = ["ComplexityEstimate", "cost_pointwise_linear", "cost_fourier_conv", "cost_pointwise_op",
           "block_cost", "network_cost", "base_cost", "complexity_loss", "total_loss",
           "arch_cost", "depth_weights"]


def _val(x) -> float:
    return float(x.data) if isinstance(x, ad.Tensor) else float(x)


@dataclass
class ComplexityEstimate:
    total: object                       # Tensor (on the tape) or float
    target: float
    breakdown: dict = field(default_factory=dict)
    lam: float = 0.1

    @property
    def value(self) -> float:
        return _val(self.total)

    @property
    def relative(self) -> float:
        return self.value / self.target

    def loss(self):
        return complexity_loss(self.total, self.target)


def cost_pointwise_linear(size_res, size_in, size_out):
    return size_res * size_in * size_out


def cost_pointwise_op(size_res, size_ch):
    return size_res * size_ch


def cost_fourier_conv(size_res, size_ch=1.0):
    """``r log2 r`` per transformed channel; sizes below 1 count as 1."""
    if isinstance(size_res, ad.Tensor):
        r = ad.where(size_res.data < 1.0, 1.0, size_res)
        return r * ad.log2(r) * size_ch
    r = max(float(size_res), 1.0)
    return r * math.log2(r) * size_ch


def block_cost(r, a, b, c) -> dict:
    return {
        "fft": cost_fourier_conv(r, a),
        "conv": cost_pointwise_linear(r, a, b),
        "act1": cost_pointwise_op(r, b) * 2.0,
        "pw": cost_pointwise_linear(r, b, c),
        "act2": cost_pointwise_op(r, c) * 3.0,
    }


def _sum(terms):
    out = 0.0
    for t in terms:
        out = t + out
    return out


def depth_weights(d, n_blocks: int) -> list:
    """``clamp(d - l + 1, 0, 1)`` for blocks ``l = 1..n_blocks``.

    The block that ``d`` is about to add or remove keeps a gradient even at
    integer ``d`` (one-sided), and the last block passes its gradient
    straight through the upper clamp, matching the clipped depth size.
    """
    weights = []
    dv = _val(d)
    tensor = isinstance(d, ad.Tensor)
    for l in range(1, n_blocks + 1):
        frac = dv - l + 1.0
        if tensor and l == n_blocks and frac >= 1.0:
            weights.append(ad.clip_max_st(d - (l - 1.0), 1.0))
        elif frac >= 1.0:
            weights.append(1.0)
        elif frac < 0.0 or (frac == 0.0 and not tensor):
            weights.append(0.0)
        else:
            weights.append(d - (l - 1.0))
    return weights


def _io_costs(L: int, c_in: int, stream, out_dim: int, task: str) -> tuple:
    enc = cost_pointwise_linear(L, c_in, stream) + cost_pointwise_op(L, stream) * 2.0
    if task == "classification":
        dec = cost_pointwise_op(L, stream) + cost_pointwise_linear(1, stream, out_dim)
    else:
        dec = cost_pointwise_linear(L, stream, out_dim)
    return enc, dec


def network_cost(net, target: float | None = None, lam: float = 0.1) -> ComplexityEstimate:
    """Differentiable cost of ``net`` under its current masks."""
    c = net.config
    L = int(np.prod(c.spatial_shape))
    enc, dec = _io_costs(L, c.in_channels, c.stream_width, c.out_dim, c.task)
    breakdown = {"encoder": _val(enc), "decoder": _val(dec)}
    weights = depth_weights(net.depth_size(), c.depth_max)
    terms = [enc, dec]
    for l, w in enumerate(weights):
        if not isinstance(w, ad.Tensor) and w == 0.0:
            breakdown[f"block{l}"] = 0.0
            continue
        parts = block_cost(net.resolution_size(l), net.width_size(l, "in"),
                           net.width_size(l, "mid"), net.width_size(l, "out"))
        cost = _sum(parts.values()) * w
        breakdown[f"block{l}"] = _val(cost)
        terms.append(cost)
    total = _sum(terms)
    return ComplexityEstimate(total, base_cost(c) if target is None else float(target), breakdown, lam)


def arch_cost(config, snapshot) -> float:
    """Cost of a materialised architecture (integer sizes, every listed block whole)."""
    L = int(np.prod(config.spatial_shape))
    stream = config.stream_width
    enc, dec = _io_costs(L, config.in_channels, stream, config.out_dim, config.task)
    total = enc + dec
    for row in snapshot.blocks:
        r = float(np.prod(row.resolution))
        total += sum(block_cost(r, *[float(w) for w in row.widths]).values())
    return float(total)


def base_cost(config) -> float:
    """Cost of the base architecture: ``depth_base`` full-resolution blocks of ``width_base``."""
    L = int(np.prod(config.spatial_shape))
    C = config.width_base
    enc, dec = _io_costs(L, config.in_channels, C, config.out_dim, config.task)
    return float(enc + dec + config.depth_base * sum(block_cost(float(L), C, C, C).values()))


def complexity_loss(c_curr, c_target: float):
    """``(C_curr / C_target - 1)^2``."""
    if not c_target > 0:
        raise ValueError(f"target complexity must be positive, got {c_target}")
    rel = c_curr / c_target - 1.0
    return rel * rel


def total_loss(l_obj, l_comp, lam: float):
    if lam < 0:
        raise ValueError("lambda must be non-negative")
    return l_obj + l_comp * lam if lam else l_obj
