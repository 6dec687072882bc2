"""Gaussian and sigmoid differentiable masks over a discretised axis.

A mask is a function of a coordinate with learnable parameters that is
forced to exactly zero wherever its value drops below a threshold ``T_m``.
Inverting the mask gives the support bound ``x_T`` (the coordinate where the
mask equals ``T_m``); the bound turns into a differentiable size of the
masked dimension and tells which grid cells have to be materialised at all.

Mask parameters may be plain floats or scalar :class:`~dnarch.autodiff.Tensor`
objects; every function here is differentiable in them.
"""
from __future__ import annotations

import math
from dataclasses import dataclass
from typing import Union

import numpy as np

from . import autodiff as ad

Scalar = Union[float, ad.Tensor]

# mask level at the lowest / highest axis position when the sigmoid offset
# hits its lower / upper clamp
SIGMOID_LOW_LEVEL = 0.95
SIGMOID_HIGH_LEVEL = 0.85


def _value(x) -> float:
    return float(x.data) if isinstance(x, ad.Tensor) else float(x)


@dataclass
class GaussianMaskParams:
    sigma: Scalar
    mu: Scalar = 0.0
    threshold: float = 0.1

    def __post_init__(self):
        if _value(self.sigma) <= 0:
            raise ValueError(f"Gaussian mask needs sigma > 0, got {_value(self.sigma)}")
        if not 0.0 < self.threshold < 1.0:
            raise ValueError(f"threshold must lie in (0, 1), got {self.threshold}")


@dataclass
class SigmoidMaskParams:
    mu: Scalar
    tau: float
    threshold: float = 0.1

    def __post_init__(self):
        if _value(self.tau) <= 0:
            raise ValueError(f"sigmoid mask needs tau > 0, got {_value(self.tau)}")
        if not 0.0 < self.threshold < 1.0:
            raise ValueError(f"threshold must lie in (0, 1), got {self.threshold}")


MaskParams = Union[GaussianMaskParams, SigmoidMaskParams]


@dataclass(frozen=True, eq=False)
class MaskAxis:
    """Grid of cell coordinates along one masked dimension.

    ``coords`` are sorted and lie within ``[x_min, x_max]``; ``n_ref`` is the
    number of cells a mask whose support bound sits at ``x_max`` covers,
    which anchors the differentiable size.
    """

    x_min: float
    x_max: float
    coords: np.ndarray
    label: str = "linspace"

    def __post_init__(self):
        if not self.x_min < self.x_max:
            raise ValueError(f"axis needs x_min < x_max, got [{self.x_min}, {self.x_max}]")

    @property
    def n(self) -> int:
        return len(self.coords)

    @classmethod
    def linspace(cls, n: int, x_min: float = -1.0, x_max: float = 1.0) -> "MaskAxis":
        if n < 1:
            raise ValueError("axis needs at least one grid point")
        coords = np.linspace(x_min, x_max, n) if n > 1 else np.array([0.5 * (x_min + x_max)])
        return cls(x_min, x_max, coords, "linspace")

    @classmethod
    def cells(cls, n: int, x_min: float = -1.0, x_max: float = 1.0) -> "MaskAxis":
        """``n`` equal cells tiling ``[x_min, x_max]``, coordinates at cell centres."""
        if n < 1:
            raise ValueError("axis needs at least one cell")
        width = (x_max - x_min) / n
        return cls(x_min, x_max, x_min + (np.arange(n) + 0.5) * width, "cells")

    @classmethod
    def frequency(cls, length: int) -> "MaskAxis":
        """Non-negative DFT bins of a length-``length`` signal on ``[-1, 1]``.

        Bin ``k`` sits at ``-1 + 4k/length`` so the Nyquist frequency maps
        to ``+1`` for any length.
        """
        bins = np.arange(length // 2 + 1)
        return cls(-1.0, 1.0, -1.0 + 4.0 * bins / length, "frequency")

    @classmethod
    def offsets(cls, resolution: int) -> "MaskAxis":
        """Relative kernel offsets ``-h..h`` at ``resolution``, coordinate ``2d/resolution``."""
        h = (resolution - 1) // 2
        d = np.arange(-h, h + 1)
        return cls(-1.0, 1.0, 2.0 * d / resolution, "offsets")


# -- evaluation -------------------------------------------------------------------

def _gaussian_raw(params: GaussianMaskParams, x):
    z = (ad.as_tensor(x) - params.mu) / params.sigma
    return ad.exp(z * z * -0.5)


def _sigmoid_raw(params: SigmoidMaskParams, x):
    return 1.0 - ad.sigmoid((ad.as_tensor(x) - params.mu) * params.tau)


def eval_mask(params: MaskParams, x, thresholded: bool = True) -> ad.Tensor:
    """Mask value at coordinate(s) ``x``; values below ``T_m`` are exactly 0.

    With ``thresholded=False`` the bare Gaussian / sigmoid expression is returned.
    """
    if isinstance(params, GaussianMaskParams):
        raw = _gaussian_raw(params, x)
    elif isinstance(params, SigmoidMaskParams):
        raw = _sigmoid_raw(params, x)
    else:
        raise TypeError(f"unknown mask parameters {type(params).__name__}")
    if not thresholded:
        return raw
    return ad.where(raw.data >= params.threshold, raw, 0.0)


def eval_mask_nd(params_per_dim, coords) -> ad.Tensor:
    """Product of 1D masks; ``coords`` has one trailing entry per dimension."""
    coords = np.asarray(coords, dtype=float)
    params_per_dim = list(params_per_dim)
    if coords.shape[-1] != len(params_per_dim):
        raise ValueError(f"{len(params_per_dim)} mask dimensions but coordinates of "
                         f"dimension {coords.shape[-1]}")
    out = None
    for d, params in enumerate(params_per_dim):
        m = eval_mask(params, coords[..., d])
        out = m if out is None else out * m
    return out


def support_bound(params: MaskParams):
    """Coordinate where the pre-threshold mask equals ``T_m``.

    Gaussian: the upper bound ``mu + sqrt(-2 sigma^2 log T_m)``;
    sigmoid: ``mu - log(1/(1 - T_m) - 1) / tau``.
    """
    t = params.threshold
    if isinstance(params, GaussianMaskParams):
        return params.mu + params.sigma * math.sqrt(-2.0 * math.log(t))
    return params.mu - math.log(1.0 / (1.0 - t) - 1.0) / params.tau


def gaussian_sigma_for_halfwidth(halfwidth: float, threshold: float = 0.1) -> float:
    return halfwidth / math.sqrt(-2.0 * math.log(threshold))


def sigmoid_mu_for_bound(bound: float, tau: float, threshold: float = 0.1) -> float:
    return bound + math.log(1.0 / (1.0 - threshold) - 1.0) / tau


# -- sizes ------------------------------------------------------------------------

def mask_size(params: MaskParams, x0: float, n0: float, x_min: float = -1.0):
    """Differentiable size of the masked dimension.

    ``(x0, n0)`` is the anchor pair: a support bound and the length it
    corresponds to.  Gaussian sizes scale with the support half-width
    ``x_T - mu``; sigmoid sizes with the covered extent ``x_T - x_min``.
    """
    xt = support_bound(params)
    if isinstance(params, GaussianMaskParams):
        ref = x0 - _value(params.mu)
        if ref <= 0:
            raise ValueError("Gaussian size anchor must have a positive half-width")
        return (xt - params.mu) * (n0 / ref)
    ref = x0 - x_min
    if ref <= 0:
        raise ValueError("sigmoid size anchor must lie above x_min")
    return (xt - x_min) * (n0 / ref)


def clipped_size(size, max_size: float):
    """``min(size, max_size)`` with a straight-through gradient."""
    if max_size <= 0:
        raise ValueError("max_size must be positive")
    if isinstance(size, ad.Tensor):
        return ad.clip_max_st(size, max_size)
    return min(float(size), max_size)


# -- clamping ---------------------------------------------------------------------

def _logit(p: float) -> float:
    return math.log(p / (1.0 - p))


def sigmoid_mu_bounds(x_min: float, x_max: float, tau: float,
                      low_level: float = SIGMOID_LOW_LEVEL,
                      high_level: float = SIGMOID_HIGH_LEVEL) -> tuple:
    """Offsets at which the mask equals ``low_level`` at ``x_min`` / ``high_level`` at ``x_max``."""
    mu_min = x_min - _logit(1.0 - low_level) / tau
    mu_max = x_max - _logit(1.0 - high_level) / tau
    return mu_min, mu_max


def gaussian_sigma_bounds(cell_halfwidth: float, max_halfwidth: float,
                          threshold: float = 0.1) -> tuple:
    """``sigma_min`` keeps one cell (support half-width = half a cell)."""
    return (gaussian_sigma_for_halfwidth(cell_halfwidth, threshold),
            gaussian_sigma_for_halfwidth(max_halfwidth, threshold))


def clamp_value(value: float, bounds: tuple) -> float:
    lo, hi = bounds
    return float(min(max(value, lo), hi))


def clamp_params(params: MaskParams, bounds: tuple) -> MaskParams:
    """Reset the learnable parameter into ``bounds``; runs outside the tape.

    Tensor-valued parameters are updated by rebinding their data array.
    """
    name = "sigma" if isinstance(params, GaussianMaskParams) else "mu"
    p = getattr(params, name)
    if isinstance(p, ad.Tensor):
        p.data = np.asarray(clamp_value(float(p.data), bounds))
    else:
        setattr(params, name, clamp_value(p, bounds))
    return params


# -- materialisation ----------------------------------------------------------------

def materialized_range(params: MaskParams, axis: MaskAxis) -> tuple:
    """Inclusive index interval ``(lo, hi)`` of grid cells with non-zero mask.

    The interval comes from the support bound; the two boundary cells are
    re-evaluated so the result agrees bit-exactly with :func:`eval_mask`.
    An empty support degenerates to the single most central cell.
    """
    coords = axis.coords
    xt = _value(support_bound(params))
    if isinstance(params, GaussianMaskParams):
        mu = _value(params.mu)
        lo_c, hi_c = 2 * mu - xt, xt
    else:
        lo_c, hi_c = -np.inf, xt
    lo = int(np.searchsorted(coords, lo_c, side="left"))
    hi = int(np.searchsorted(coords, hi_c, side="right")) - 1
    lo, hi = max(lo - 1, 0), min(hi + 1, axis.n - 1)
    if lo <= hi:
        idx = np.arange(lo, hi + 1)
        with ad.no_grad():
            vals = eval_mask(params, coords[idx]).data
        nz = np.nonzero(vals)[0]
        if len(nz):
            return int(idx[nz[0]]), int(idx[nz[-1]])
    if isinstance(params, GaussianMaskParams):
        c = int(np.argmin(np.abs(coords - _value(params.mu))))
    else:
        c = 0
    return c, c


def masked_values(params: MaskParams, axis: MaskAxis) -> tuple:
    """``(lo, hi, values)`` over the materialised cells only."""
    lo, hi = materialized_range(params, axis)
    return lo, hi, eval_mask(params, axis.coords[lo:hi + 1])


def materialized_count(params: MaskParams, axis: MaskAxis) -> int:
    lo, hi = materialized_range(params, axis)
    return hi - lo + 1
