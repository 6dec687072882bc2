"""Finite-difference checks of the gradients a training step relies on.

Thresholded masks and clipped sizes are only piecewise smooth, so every
check runs at a state whose grid values sit clear of ``T_m`` and whose
sizes sit clear of their caps; finite differences are meaningless across
those kinks.
"""
from __future__ import annotations

from contextlib import contextmanager

import numpy as np

from . import autodiff as ad
from .complexity import complexity_loss, network_cost, total_loss
from .kernels import KernelNet, masked_kernel
from .masks import (GaussianMaskParams, MaskAxis, SigmoidMaskParams, eval_mask, mask_size)
from .network import DNArchNetwork
from .training import objective

__all__ = ["boundary_margin", "interior_state", "check_parameter", "gradient_suite"]


@contextmanager
def substituted(net: DNArchNetwork, name: str, value: ad.Tensor):
    """Temporarily route parameter ``name`` through ``value``."""
    old = net.params[name]
    net.params[name] = value
    short = name[len("kernelnet."):] if name.startswith("kernelnet.") else None
    if short is not None:
        net.kernelnet.params[short] = value
    try:
        yield
    finally:
        net.params[name] = old
        if short is not None:
            net.kernelnet.params[short] = old


def _mask_grids(net: DNArchNetwork):
    """``(params, coords, size cap, anchor length)`` for every mask of an active block."""
    c = net.config
    out = []
    for l in net.active_blocks():
        resolution = net.block_plan(l).resolution
        for m, r, n in zip(net.kernel_masks(l), resolution, c.spatial_shape):
            if m is not None:
                out.append((m, MaskAxis.offsets(r).coords, 2 * ((n - 1) // 2) + 1, n))
        for m, n in zip(net.res_masks(l), c.spatial_shape):
            if m is not None:
                out.append((m, MaskAxis.frequency(n).coords, n, n))
        for which in ("in", "mid", "out"):
            m = net.width_mask(l, which)
            if m is not None:
                out.append((m, net.channel_axis.coords, c.width_max, c.width_max))
    m = net.depth_mask()
    if m is not None:
        out.append((m, net.depth_axis.coords, c.depth_max, c.depth_max))
    return out


def boundary_margin(net: DNArchNetwork) -> float:
    """Smallest relative distance to a kink of the loss.

    Kinks sit where a grid value crosses ``T_m``, where a size reaches its
    cap (above it the clip is straight-through, so finite differences see a
    flat function) and where the depth size crosses an integer.  A size
    above its cap counts as a negative margin.
    """
    margin = np.inf
    with ad.no_grad():
        for params, coords, cap, n0 in _mask_grids(net):
            raw = eval_mask(params, coords, thresholded=False).data
            margin = min(margin, float(np.min(np.abs(raw - params.threshold))))
            size = float(ad.as_tensor(mask_size(params, 1.0, n0)).data)
            margin = min(margin, (cap - size) / cap)
        if net.depth_mask() is not None:
            d = float(ad.as_tensor(net.depth_size()).data)
            margin = min(margin, abs(d - round(d)))
    return margin


def interior_state(net: DNArchNetwork, rng: np.random.Generator, margin: float = 1e-3,
                   tries: int = 200) -> float:
    """Move every mask parameter to a random interior point with a safe margin."""
    for _ in range(tries):
        for name, (lo, hi) in net.mask_bounds.items():
            net.params[name].data = np.asarray(rng.uniform(lo + 0.1 * (hi - lo), hi - 0.1 * (hi - lo)))
        m = boundary_margin(net)
        if m > margin:
            return m
    raise RuntimeError("no interior mask state with the requested margin found")


def check_parameter(net: DNArchNetwork, name: str, loss_fn, index=None, step: float = 1e-5,
                    tolerance: float = 1e-4):
    """Central-difference check of d loss / d param[index] along one coordinate."""
    base = net.params[name].data
    index = () if base.ndim == 0 else (index if index is not None else (0,) * base.ndim)
    onehot = np.zeros_like(base)
    onehot[index] = 1.0

    def f(s):
        value = ad.Tensor(base) + s * ad.Tensor(onehot)
        with substituted(net, name, value):
            return loss_fn()

    return ad.check_gradients(f, np.array(0.0), step=step, tolerance=tolerance)


def _network_loss(net: DNArchNetwork, x, y, kind: str, lam: float, target: float):
    def loss_fn():
        out = net.forward(x, train=False)
        l_obj = objective(out, y, kind)
        est = network_cost(net, target, lam)
        return total_loss(l_obj, complexity_loss(est.total, target), lam)
    return loss_fn


def _primitive_checks(rng, threshold: float = 0.1) -> list:
    coords = np.linspace(-1, 1, 33)
    w = rng.standard_normal(33)
    results = []

    def gauss_value(s):
        return (eval_mask(GaussianMaskParams(s, 0.0, threshold), coords) * w).sum()

    def sigm_value(mu):
        return (eval_mask(SigmoidMaskParams(mu, 25.0, threshold), coords) * w).sum()

    results.append(("mask value / sigma", ad.check_gradients(gauss_value, np.array(0.2731))))
    results.append(("mask value / mu", ad.check_gradients(sigm_value, np.array(0.1237))))
    results.append(("mask size / sigma", ad.check_gradients(
        lambda s: mask_size(GaussianMaskParams(s, 0.0, threshold), 1.0, 64), np.array(0.2731))))
    results.append(("mask size / mu", ad.check_gradients(
        lambda mu: mask_size(SigmoidMaskParams(mu, 25.0, threshold), 1.0, 64), np.array(0.1237))))

    net = KernelNet(1, 1.0, np.random.default_rng(7), hidden=32, hidden_layers=2, encoding_features=16)
    net.register("k", 2, 3)
    axis = MaskAxis.offsets(64)
    target = rng.standard_normal((2, 3, 64))

    def kernel_loss(s):
        psi, ((lo, hi),) = masked_kernel(net, "k", [GaussianMaskParams(s, 0.0, threshold)], [axis])
        return (psi * target[:, :, lo:hi + 1]).sum()

    results.append(("masked kernel / sigma", ad.check_gradients(kernel_loss, np.array(0.1713))))
    return results


def gradient_suite(net: DNArchNetwork, x, y, kind: str, lam: float = 0.1, target: float | None = None,
                   seed: int = 0) -> list:
    """``[(label, GradientReport)]`` for mask primitives and the full training loss.

    The full-loss checks cover one parameter of every mask kind present in
    ``net`` and one KernelNet weight.
    """
    rng = np.random.default_rng(seed)
    results = _primitive_checks(rng, net.config.threshold)
    interior_state(net, rng)
    if target is None:
        # off target so the budget term contributes a gradient
        target = 0.8 * network_cost(net).value
    loss_fn = _network_loss(net, x, y, kind, lam, target)
    chosen, active = {}, net.active_blocks()
    for name in net.mask_bounds:
        kind_key = name.split(".mask.")[-1].split(".")[0] if ".mask." in name else name
        if kind_key not in chosen and (name == "mask.depth" or int(name.split(".")[1]) in active):
            chosen[kind_key] = name
    for name in chosen.values():
        results.append((f"total loss / {name}", check_parameter(net, name, loss_fn)))
    for name in ("kernelnet.trunk.0.weight", "kernelnet.head.block0.weight"):
        results.append((f"total loss / {name}", check_parameter(net, name, loss_fn, index=(1, 2))))
    return results
