"""Low-pass a signal with a learned resolution mask and crop its spectrum.

A length-64 signal made of a slow and a fast sinusoid is passed through a
sigmoid mask whose cutoff sits between the two frequencies.  The cropped
output keeps the slow component at full amplitude, drops the fast one,
and has 2k+1 samples where k is the highest kept frequency bin.

    python3 demos/spectral_downsampling.py
"""
import numpy as np

from dnarch.masks import SigmoidMaskParams, sigmoid_mu_for_bound
from dnarch.spectral import lowpass_downsample

L, SLOW, FAST, KEEP = 64, 3, 20, 8

t = np.arange(L)
signal = np.cos(2 * np.pi * SLOW * t / L) + 0.5 * np.cos(2 * np.pi * FAST * t / L)
x = signal[None, None, :]

# frequency bin k sits at coordinate -1 + 4k/L on the mask axis
bound = -1.0 + 4.0 * (KEEP + 0.5) / L
mask = SigmoidMaskParams(sigmoid_mu_for_bound(bound, tau=200.0), tau=200.0)
down, cut = lowpass_downsample(x, [mask])
y = down.data[0, 0]

print(f"input length {L}, kept bins 0..{cut.bins[0]}, output length {y.size}")
spec = np.abs(np.fft.rfft(y)) / (y.size / 2)
print(f"slow amplitude in output: {spec[SLOW]:.6f}  (input 1.0)")
print(f"largest other amplitude:   {np.delete(spec, SLOW).max():.2e}")

t_down = np.arange(y.size) * L / y.size
expected = np.cos(2 * np.pi * SLOW * t_down / L)
print(f"max deviation from the pure slow wave: {np.max(np.abs(y - expected)):.2e}")
