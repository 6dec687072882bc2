"""Fourier-domain convolution, learnable low-pass downsampling and upsampling.

Conventions used throughout:

* The last spatial axis is transformed with a real-input FFT (``L//2 + 1``
  bins); in 2D the axis before it uses a full complex FFT.
* Forward transforms are unnormalised, inverse transforms carry ``1/L``.
* Convolution is circular; kernels are centred, offset ``d`` sits at index
  ``d mod L`` of the zero-padded kernel.
* Resolution masks are sigmoids over the normalised frequency axis of
  :meth:`MaskAxis.frequency`.  Keeping bins ``0..k_c`` gives an output of
  odd length ``2 k_c + 1``, or the full length when every bin is kept.
  Spectra are rescaled by ``L'/L`` on the way down (and ``L/L'`` on the way
  up) so sample amplitudes are preserved.
"""
from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from . import autodiff as ad
from .masks import MaskAxis, SigmoidMaskParams, eval_mask, materialized_range, support_bound

__all__ = [
    "Spectrum", "CutoffSpec", "dft", "idft", "cutoff_for", "lowpass_downsample",
    "fourier_conv", "fourier_conv_downsample", "conv_at_output_resolution",
    "spectral_upsample", "spatial_downsample_equiv", "frequency_magnitudes",
]

_LETTERS = "hw"


@dataclass
class Spectrum:
    """Real-input spectrum of a signal with spatial ``shape``."""

    coeffs: ad.Tensor
    shape: tuple

    @property
    def ndim(self) -> int:
        return len(self.shape)


@dataclass(frozen=True)
class CutoffSpec:
    """Per-axis cutoff: ``omega_max`` (support bound), kept bin ``k_c``, lengths."""

    omega_max: tuple
    bins: tuple
    in_shape: tuple
    out_shape: tuple

    @property
    def is_identity(self) -> bool:
        return self.in_shape == self.out_shape


def _spatial_shape(f: ad.Tensor, nd: int) -> tuple:
    if f.ndim < nd:
        raise ValueError(f"signal of rank {f.ndim} has fewer than {nd} spatial axes")
    return tuple(f.shape[-nd:])


def _mask_list(masks, nd=None) -> list:
    if masks is None or isinstance(masks, SigmoidMaskParams):
        masks = [masks]
    masks = list(masks)
    if nd is not None and len(masks) != nd:
        raise ValueError(f"{len(masks)} resolution masks for {nd} spatial axes")
    return masks


def dft(f, ndim: int = 1) -> Spectrum:
    f = ad.as_tensor(f)
    shape = _spatial_shape(f, ndim)
    if f.is_complex:
        raise TypeError("dft expects a real signal")
    F = ad.rfft(f, axis=-1)
    if ndim == 2:
        F = ad.fft(F, axis=-2)
    elif ndim != 1:
        raise ValueError("only 1D and 2D signals are supported")
    return Spectrum(F, shape)


def idft(spec: Spectrum, shape=None) -> ad.Tensor:
    """Inverse of :func:`dft`; ``shape`` must match the spectrum's bin counts."""
    shape = spec.shape if shape is None else tuple(np.atleast_1d(shape).tolist())
    if len(shape) != spec.ndim:
        raise ValueError(f"spectrum has {spec.ndim} axes, got target shape {shape}")
    F = spec.coeffs
    bins = F.shape[-1]
    if bins != shape[-1] // 2 + 1:
        raise ValueError(f"spectrum with {bins} bins cannot invert to length {shape[-1]}")
    if spec.ndim == 2:
        if F.shape[-2] != shape[0]:
            raise ValueError(f"spectrum with {F.shape[-2]} rows cannot invert to height {shape[0]}")
        F = ad.ifft(F, axis=-2)
    return ad.irfft(F, n=shape[-1], axis=-1)


def frequency_magnitudes(n: int) -> np.ndarray:
    """``|frequency index|`` of each full-FFT bin of a length-``n`` axis."""
    i = np.arange(n)
    return np.minimum(i, n - i)


def cutoff_for(masks, shape) -> CutoffSpec:
    """Cutoff implied by per-axis resolution masks (``None`` keeps an axis whole)."""
    shape = tuple(int(s) for s in shape)
    masks = _mask_list(masks, len(shape))
    omegas, bins, out = [], [], []
    for params, n in zip(masks, shape):
        if params is None:
            omegas.append(1.0)
            k = n // 2
        else:
            omegas.append(float(ad.as_tensor(support_bound(params)).data))
            k = materialized_range(params, MaskAxis.frequency(n))[1]
        bins.append(k)
        out.append(n if k >= n // 2 else 2 * k + 1)
    return CutoffSpec(tuple(omegas), tuple(bins), shape, tuple(out))


def _gather(F: ad.Tensor, axis: int, index: np.ndarray) -> ad.Tensor:
    sl = [slice(None)] * F.ndim
    sl[axis] = index
    return F[tuple(sl)]


def _along(vals, axis: int, ndim: int) -> ad.Tensor:
    shape = [1] * ndim
    shape[axis] = -1
    return vals.reshape(shape)


def _restrict(spec: Spectrum, masks, cut: CutoffSpec) -> Spectrum:
    """Multiply by the masks, keep bins ``<= k_c`` and rescale for the new length."""
    F = spec.coeffs
    nd = spec.ndim
    masks = _mask_list(masks, nd)
    for d, (params, n, k, m) in enumerate(zip(masks, cut.in_shape, cut.bins, cut.out_shape)):
        axis = F.ndim - nd + d
        last = d == nd - 1
        if last:
            src = np.arange(m // 2 + 1)
            mag = src
        else:
            src = np.arange(n) if m == n else np.concatenate([np.arange(k + 1), np.arange(n - k, n)])
            mag = frequency_magnitudes(n)[src]
        if m != n:
            F = F[..., : m // 2 + 1] if last else _gather(F, axis, src)
        if params is not None:
            axis_coords = MaskAxis.frequency(n).coords
            vals = eval_mask(params, axis_coords[: k + 1])
            vals = vals if last else vals[mag]
            F = F * _along(vals, axis, F.ndim)
    scale = float(np.prod(np.asarray(cut.out_shape, float) / np.asarray(cut.in_shape, float)))
    if scale != 1.0:
        F = F * scale
    return Spectrum(F, cut.out_shape)


def lowpass_downsample(f, masks, ndim: int | None = None):
    """Mask the spectrum, crop above the cutoff and return ``(f_down, cutoff)``."""
    masks = _mask_list(masks, ndim)
    nd = len(masks)
    f = ad.as_tensor(f)
    cut = cutoff_for(masks, _spatial_shape(f, nd))
    if cut.is_identity and all(m is None for m in masks):
        return f, cut
    return idft(_restrict(dft(f, nd), masks, cut)), cut


def _conv_layout(psi: ad.Tensor):
    """``(spatial dims, mixes channels)`` from the kernel rank."""
    if psi.ndim in (1, 2):
        return psi.ndim, False
    if psi.ndim in (3, 4):
        return psi.ndim - 2, True
    raise ValueError(f"kernel of rank {psi.ndim} is not a 1D/2D kernel or channel-mixing bank")


def kernel_spectrum(psi, shape) -> ad.Tensor:
    """Spectrum of the centred kernel ``psi`` placed circularly on a grid of ``shape``."""
    psi = ad.as_tensor(psi)
    nd = len(shape)
    for d, n in enumerate(shape):
        axis = psi.ndim - nd + d
        K = psi.shape[axis]
        if K > n:
            raise ValueError(f"kernel of size {K} is longer than the signal ({n}) on axis {d}")
        if K < n:
            widths = [(0, 0)] * psi.ndim
            widths[axis] = (0, n - K)
            psi = ad.pad(psi, widths)
        psi = _gather(psi, axis, (np.arange(n) + K // 2) % n)
    return dft(psi, nd).coeffs


def _multiply(Ff: ad.Tensor, Fk: ad.Tensor, nd: int, mixing: bool) -> ad.Tensor:
    if not mixing:
        return Ff * Fk
    sp = _LETTERS[:nd]
    return ad.einsum(f"bi{sp},io{sp}->bo{sp}", Ff, Fk)


def fourier_conv(f, psi) -> ad.Tensor:
    """Circular convolution via the FFT.

    ``psi`` of rank 1 or 2 is a single kernel broadcast over ``f``'s leading
    axes; rank 3 or 4 is a bank ``[C_in, C_out, *K]`` applied to ``f`` of
    shape ``[B, C_in, *S]``, summing over input channels.
    """
    f, psi = ad.as_tensor(f), ad.as_tensor(psi)
    nd, mixing = _conv_layout(psi)
    shape = _spatial_shape(f, nd)
    Fk = kernel_spectrum(psi, shape)
    return idft(Spectrum(_multiply(dft(f, nd).coeffs, Fk, nd, mixing), shape))


def fourier_conv_downsample(f, psi, masks):
    """Convolve at full resolution and low-pass in one transform pair."""
    f, psi = ad.as_tensor(f), ad.as_tensor(psi)
    nd, mixing = _conv_layout(psi)
    masks = _mask_list(masks, nd)
    shape = _spatial_shape(f, nd)
    cut = cutoff_for(masks, shape)
    prod = _multiply(dft(f, nd).coeffs, kernel_spectrum(psi, shape), nd, mixing)
    return idft(_restrict(Spectrum(prod, shape), masks, cut)), cut


def conv_at_output_resolution(f, kernel_generator, masks, ndim: int | None = None):
    """Downsample first, then convolve with a kernel sampled at the reduced grid.

    ``kernel_generator(out_shape)`` returns the kernel for the reduced
    resolution.  The masked, cropped spectrum is already the spectrum of the
    downsampled signal, so no extra transform pair is spent on it.
    Returns ``(output, cutoff)``.
    """
    f = ad.as_tensor(f)
    masks = _mask_list(masks, ndim)
    nd = len(masks)
    shape = _spatial_shape(f, nd)
    cut = cutoff_for(masks, shape)
    down = _restrict(dft(f, nd), masks, cut)
    psi = ad.as_tensor(kernel_generator(cut.out_shape))
    knd, mixing = _conv_layout(psi)
    if knd != nd:
        raise ValueError(f"kernel has {knd} spatial axes, signal has {nd}")
    prod = _multiply(down.coeffs, kernel_spectrum(psi, cut.out_shape), nd, mixing)
    return idft(Spectrum(prod, cut.out_shape)), cut


def spectral_upsample(f, target_shape, ndim: int | None = None) -> ad.Tensor:
    """Zero-pad the spectrum to ``target_shape``; sample amplitudes are preserved.

    An even-length Nyquist bin is split evenly between the two frequencies it
    aliases so the upsampled signal stays real and interpolates the input.
    """
    f = ad.as_tensor(f)
    target = tuple(int(t) for t in np.atleast_1d(target_shape))
    nd = len(target) if ndim is None else ndim
    shape = _spatial_shape(f, nd)
    if any(t < s for t, s in zip(target, shape)):
        raise ValueError(f"cannot upsample {shape} to the smaller shape {target}")
    if shape == target:
        return f
    F = dft(f, nd).coeffs
    for d, (n, m) in enumerate(zip(shape, target)):
        if n == m:
            continue
        axis = F.ndim - nd + d
        if d == nd - 1:
            w = np.ones(n // 2 + 1)
            if n % 2 == 0:
                w[-1] = 0.5
            F = F * _along(ad.Tensor(w), axis, F.ndim)
            widths = [(0, 0)] * F.ndim
            widths[axis] = (0, m // 2 + 1 - (n // 2 + 1))
            F = ad.pad(F, widths)
        else:
            # gather from the input rows plus one appended zero row
            widths = [(0, 0)] * F.ndim
            widths[axis] = (0, 1)
            F_ext = ad.pad(F, widths)
            src = np.full(m, n)
            w = np.ones(m)
            pos = (n + 1) // 2
            src[:pos] = np.arange(pos)
            neg = n - pos
            src[m - neg:] = np.arange(pos, n)
            if n % 2 == 0:
                src[n // 2] = n // 2
                w[n // 2] = w[m - n // 2] = 0.5
            F = _gather(F_ext, axis, src) * _along(ad.Tensor(w), axis, F.ndim)
    scale = float(np.prod(np.asarray(target, float) / np.asarray(shape, float)))
    return idft(Spectrum(F * scale, target))


def _dirichlet_resample(n: int, m: int) -> np.ndarray:
    """Matrix evaluating the trigonometric interpolant of ``n`` samples at ``m`` points."""
    if m == n:
        return np.eye(n)
    x = np.arange(m) * (n / m)
    k = np.arange(-(n // 2), n // 2 + 1)
    w = np.ones(len(k))
    if n % 2 == 0:
        w[0] = w[-1] = 0.5
    diff = x[:, None] - np.arange(n)[None, :]
    return np.einsum("k,tsk->ts", w, np.cos(2 * np.pi * diff[..., None] * k / n)) / n


def spatial_downsample_equiv(f, masks, ndim: int | None = None):
    """Spatial-domain low-pass: circular convolution with the inverse DFT of
    the mask, then trigonometric resampling at the cutoff length.

    Works one axis at a time (the 2D mask is a product of per-axis masks).
    Returns ``(f_down, cutoff)``.
    """
    f = ad.as_tensor(f)
    masks = _mask_list(masks, ndim)
    nd = len(masks)
    shape = _spatial_shape(f, nd)
    cut = cutoff_for(masks, shape)
    lead = f.shape[:-nd]
    out = f.reshape((-1,) + shape)
    for d, (params, n, m) in enumerate(zip(masks, shape, cut.out_shape)):
        if params is None:
            continue
        vals = eval_mask(params, MaskAxis.frequency(n).coords)
        g = ad.irfft(ad.to_complex(vals), n=n)
        circ = g[(np.arange(n)[:, None] - np.arange(n)[None, :]) % n]
        M = ad.Tensor(_dirichlet_resample(n, m)) @ circ
        spec = ("ps,ms->pm", "psw,ms->pmw", "phs,ms->phm")[0 if nd == 1 else d + 1]
        out = ad.einsum(spec, out, M)
    return out.reshape(lead + cut.out_shape), cut
