"""Continuous convolutional kernels generated by a shared coordinate MLP.

One :class:`KernelNet` serves every convolution of a network: coordinates
go through a fixed random Fourier encoding and a shared trunk, and each
registered layer owns an affine head producing its ``N_in * N_out`` kernel
values per coordinate.
"""
from __future__ import annotations

import numpy as np

from . import autodiff as ad
from .masks import masked_values

__all__ = ["KernelNet", "normalized_grid", "fourier_encode", "kernel_grid", "masked_kernel"]


def normalized_grid(sizes) -> np.ndarray:
    """Coordinates ``linspace(-1, 1, K)`` per dimension, shape ``(*sizes, D)``."""
    sizes = tuple(int(s) for s in np.atleast_1d(sizes))
    if any(s < 1 for s in sizes):
        raise ValueError(f"grid sizes must be >= 1, got {sizes}")
    axes = [np.linspace(-1.0, 1.0, s) if s > 1 else np.zeros(1) for s in sizes]
    return np.stack(np.meshgrid(*axes, indexing="ij"), axis=-1)


def fourier_encode(coords, W: np.ndarray, omega0: float) -> np.ndarray:
    """``[cos(2 pi omega0 W x), sin(2 pi omega0 W x)]`` for coordinates ``(..., D)``."""
    coords = np.asarray(coords, dtype=float)
    if coords.shape[-1] != W.shape[0]:
        raise ValueError(f"coordinates of dimension {coords.shape[-1]} for an encoding "
                         f"matrix expecting {W.shape[0]}")
    proj = 2.0 * np.pi * omega0 * (coords @ W)
    return np.concatenate([np.cos(proj), np.sin(proj)], axis=-1)


def kernel_grid(axes) -> np.ndarray:
    """Cartesian product of per-dimension coordinate vectors, shape ``(*K, D)``."""
    return np.stack(np.meshgrid(*axes, indexing="ij"), axis=-1)


class KernelNet:
    """Fourier encoding -> GELU trunk -> per-layer affine heads.

    ``hidden_layers`` trunk layers plus a head give the kernel MLP its depth.
    """

    def __init__(self, dim: int, omega0: float, rng: np.random.Generator,
                 hidden: int = 128, hidden_layers: int = 3, encoding_features: int = 128):
        self.dim = dim
        self.omega0 = float(omega0)
        self.hidden = hidden
        self.W = rng.standard_normal((dim, encoding_features))
        self.params: dict = {}
        self.heads: dict = {}
        fan_in = 2 * encoding_features
        for i in range(hidden_layers):
            self.params[f"trunk.{i}.weight"] = ad.Tensor(
                rng.standard_normal((fan_in, hidden)) * np.sqrt(2.0 / fan_in), requires_grad=True)
            self.params[f"trunk.{i}.bias"] = ad.Tensor(np.zeros(hidden), requires_grad=True)
            fan_in = hidden
        self._rng = rng
        self.n_trunk = hidden_layers

    def register(self, layer_id: str, n_in: int, n_out: int) -> None:
        gain = 1.0 / np.sqrt(self.hidden * n_in)
        self.params[f"head.{layer_id}.weight"] = ad.Tensor(
            self._rng.standard_normal((self.hidden, n_in * n_out)) * gain, requires_grad=True)
        self.params[f"head.{layer_id}.bias"] = ad.Tensor(np.zeros(n_in * n_out), requires_grad=True)
        self.heads[layer_id] = (n_in, n_out)

    def trunk(self, coords) -> ad.Tensor:
        h = ad.Tensor(fourier_encode(coords, self.W, self.omega0))
        for i in range(self.n_trunk):
            h = ad.gelu(h @ self.params[f"trunk.{i}.weight"] + self.params[f"trunk.{i}.bias"])
        return h

    def kernel_values(self, layer_id: str, coords, n_in: int | None = None,
                      n_out: int | None = None) -> ad.Tensor:
        """Kernel ``psi`` of shape ``[n_in, n_out, *grid]`` at coordinates ``(*grid, D)``.

        ``n_in`` / ``n_out`` select the leading channels of the layer's head.
        """
        if layer_id not in self.heads:
            raise KeyError(f"layer '{layer_id}' has no registered kernel head")
        coords = np.asarray(coords, dtype=float)
        full_in, full_out = self.heads[layer_id]
        n_in = full_in if n_in is None else n_in
        n_out = full_out if n_out is None else n_out
        grid = coords.shape[:-1]
        h = self.trunk(coords.reshape(-1, self.dim))
        w = self.params[f"head.{layer_id}.weight"]
        b = self.params[f"head.{layer_id}.bias"]
        if (n_in, n_out) != (full_in, full_out):
            w = w.reshape(self.hidden, full_in, full_out)[:, :n_in, :n_out].reshape(self.hidden, -1)
            b = b.reshape(full_in, full_out)[:n_in, :n_out].reshape(-1)
        vals = h @ w + b
        return vals.transpose(1, 0).reshape((n_in, n_out) + grid)


def masked_kernel(net: KernelNet, layer_id: str, masks, axes, n_in=None, n_out=None):
    """Kernel times its Gaussian mask, evaluated on the mask's support only.

    ``masks`` holds one :class:`GaussianMaskParams` (or ``None`` for an
    unmasked dimension) per spatial dimension and ``axes`` the matching
    :class:`MaskAxis`.  Returns ``(kernel, ranges)`` with the inclusive
    index range kept along each axis.
    """
    ranges, coord_axes, mask_vals = [], [], []
    for params, axis in zip(masks, axes):
        if params is None:
            lo, hi, vals = 0, axis.n - 1, None
        else:
            lo, hi, vals = masked_values(params, axis)
        ranges.append((lo, hi))
        coord_axes.append(axis.coords[lo:hi + 1])
        mask_vals.append(vals)
    psi = net.kernel_values(layer_id, kernel_grid(coord_axes), n_in, n_out)
    nd = len(ranges)
    for d, vals in enumerate(mask_vals):
        if vals is None:
            continue
        shape = [1] * (2 + nd)
        shape[2 + d] = -1
        psi = psi * vals.reshape(shape)
    return psi, ranges

