import numpy as np
import pytest
from hypothesis import given, strategies as st

from dnarch import autodiff as ad
from dnarch.masks import SigmoidMaskParams, sigmoid_mu_bounds, sigmoid_mu_for_bound
from dnarch.spectral import (conv_at_output_resolution, cutoff_for, dft, fourier_conv,
                             fourier_conv_downsample, idft, lowpass_downsample, spatial_downsample_equiv,
                             spectral_upsample)

from oracles import circular_conv, direct_dft, dft_matrix

TAU = 50.0


def mask_keeping(n_bins, length, tau=TAU):
    """Resolution mask whose last kept bin is ``n_bins - 1`` on a length-``length`` axis."""
    bound = -1.0 + 4.0 * (n_bins - 0.5) / length
    return SigmoidMaskParams(sigmoid_mu_for_bound(bound, tau), tau)


def tone(n, k, phase=0.3):
    return np.cos(2 * np.pi * k * np.arange(n) / n + phase)


class TestTransforms:
    @pytest.mark.parametrize("n", [1, 2, 7, 16, 33])
    def test_dft_matches_direct_sum(self, n):
        x = np.random.default_rng(n).standard_normal(n)
        np.testing.assert_allclose(dft(x).coeffs.data, direct_dft(x), atol=1e-11)

    def test_2d_dft_matches_matrices(self):
        x = np.random.default_rng(0).standard_normal((6, 5))
        full = dft_matrix(6) @ x @ dft_matrix(5).T
        np.testing.assert_allclose(dft(x, 2).coeffs.data, full[:, :3], atol=1e-11)

    def test_idft_rejects_wrong_length(self):
        spec = dft(np.zeros(8))
        with pytest.raises(ValueError):
            idft(spec, 11)

    def test_dft_rejects_complex(self):
        with pytest.raises(TypeError):
            dft(np.zeros(4, dtype=complex))


class TestConvolution:
    def test_delta_kernel_is_identity(self):
        f = np.random.default_rng(0).standard_normal(12)
        np.testing.assert_allclose(fourier_conv(f, np.array([0.0, 1.0, 0.0])).data, f, atol=1e-14)

    def test_shift_kernel(self):
        f = np.arange(8.0)
        out = fourier_conv(f, np.array([0.0, 0.0, 1.0])).data
        np.testing.assert_allclose(out, np.roll(f, 1), atol=1e-12)

    def test_channel_mixing_bank(self):
        rng = np.random.default_rng(1)
        f = rng.standard_normal((2, 3, 10))
        psi = rng.standard_normal((3, 4, 5))
        out = fourier_conv(f, psi).data
        ref = np.zeros((2, 4, 10))
        for b in range(2):
            for i in range(3):
                for o in range(4):
                    ref[b, o] += circular_conv(f[b, i], psi[i, o])
        np.testing.assert_allclose(out, ref, atol=1e-12)

    def test_kernel_longer_than_signal(self):
        with pytest.raises(ValueError):
            fourier_conv(np.zeros(4), np.ones(7))

    def test_2d_against_direct_sum(self):
        rng = np.random.default_rng(2)
        f, psi = rng.standard_normal((6, 7)), rng.standard_normal((3, 5))
        out = fourier_conv(f, psi).data
        ref = np.zeros_like(f)
        for t in np.ndindex(f.shape):
            for j in np.ndindex(psi.shape):
                src = ((t[0] - (j[0] - 1)) % 6, (t[1] - (j[1] - 2)) % 7)
                ref[t] += psi[j] * f[src]
        np.testing.assert_allclose(out, ref, atol=1e-12)

    def test_downsample_after_conv_matches_two_steps(self):
        rng = np.random.default_rng(3)
        f, psi = rng.standard_normal(32), rng.standard_normal(9)
        m = mask_keeping(6, 32)
        one, cut = fourier_conv_downsample(f, psi, m)
        two, _ = lowpass_downsample(fourier_conv(f, psi), m)
        assert cut.out_shape == (11,)
        np.testing.assert_allclose(one.data, two.data, atol=1e-12)

    def test_kernel_generator_sees_output_shape(self):
        seen = []

        def gen(shape):
            seen.append(shape)
            return np.array([0.0, 1.0, 0.0])

        out, cut = conv_at_output_resolution(np.ones((1, 32)), gen, [mask_keeping(6, 32)])
        assert seen == [(11,)] and out.shape == (1, 11)


class TestCutoff:
    def test_clamped_mask_keeps_everything(self):
        hi = sigmoid_mu_bounds(-1, 1, TAU)[1]
        cut = cutoff_for([SigmoidMaskParams(hi, TAU)], (64,))
        assert cut.out_shape == (64,) and cut.is_identity

    def test_odd_output_length(self):
        # sixteen kept bins (0..16) of a 64-sample signal give 33 samples
        cut = cutoff_for([mask_keeping(17, 64)], (64,))
        assert cut.bins == (16,) and cut.out_shape == (33,)

    def test_none_is_whole_axis(self):
        assert cutoff_for([None, None], (8, 9)).out_shape == (8, 9)

    def test_mask_count_checked(self):
        with pytest.raises(ValueError):
            cutoff_for([None], (8, 8))


class TestResampling:
    def test_amplitude_preserved_down(self):
        f = 2.0 + tone(64, 3)
        down, cut = lowpass_downsample(f, mask_keeping(9, 64, tau=200.0))
        n = cut.out_shape[0]
        np.testing.assert_allclose(down.data.mean(), 2.0, atol=1e-12)
        assert np.abs(down.data - 2.0).max() > 0.9

    def test_upsample_interpolates(self):
        f = np.random.default_rng(4).standard_normal(8)
        up = spectral_upsample(f, (24,)).data
        np.testing.assert_allclose(up[::3], f, atol=1e-12)

    def test_upsample_2d_interpolates(self):
        f = np.random.default_rng(5).standard_normal((4, 5))
        up = spectral_upsample(f, (8, 10), 2).data
        np.testing.assert_allclose(up[::2, ::2], f, atol=1e-12)

    def test_upsample_to_smaller_rejected(self):
        with pytest.raises(ValueError):
            spectral_upsample(np.zeros(8), (4,))

    def test_upsample_gradient(self):
        w = np.random.default_rng(6).standard_normal(20)
        rep = ad.check_gradients(lambda x: (spectral_upsample(x, (20,)) * ad.Tensor(w)).sum(),
                                 np.random.default_rng(7).standard_normal(6))
        assert rep.passed

    def test_spatial_path_2d(self):
        f = np.random.default_rng(8).standard_normal((2, 16, 12))
        masks = [mask_keeping(4, 16), mask_keeping(3, 12)]
        a, _ = lowpass_downsample(f, masks)
        b, _ = spatial_downsample_equiv(f, masks)
        assert a.shape == (2, 7, 5)
        np.testing.assert_allclose(a.data, b.data, atol=1e-10)


@given(n=st.integers(1, 32), k=st.integers(1, 32), seed=st.integers(0, 10_000))
def test_fourier_conv_is_circular_conv(n, k, seed):
    k = min(k, n)
    rng = np.random.default_rng(seed)
    f, psi = rng.standard_normal(n), rng.standard_normal(k)
    np.testing.assert_allclose(fourier_conv(f, psi).data, circular_conv(f, psi), atol=1e-9)


@given(n=st.integers(2, 40), seed=st.integers(0, 10_000))
def test_lowpass_is_idempotent(n, seed):
    f = np.random.default_rng(seed).standard_normal(n)
    m = mask_keeping(max(1, n // 4), n, tau=500.0)
    once, cut = lowpass_downsample(f, m)
    if cut.is_identity:
        return
    up = spectral_upsample(once, (n,))
    again, _ = lowpass_downsample(up, m)
    # the mask attenuates in-band bins, so compare against a second attenuation
    assert np.linalg.norm(again.data) <= np.linalg.norm(once.data) + 1e-12


@given(seed=st.integers(0, 10_000), q=st.floats(0.05, 0.95))
def test_mask_gradient_through_downsampling(seed, q):
    f = np.random.default_rng(seed).standard_normal(32)
    w = np.random.default_rng(seed + 1).standard_normal(32)
    lo, hi = sigmoid_mu_bounds(-1, 1, 5.0)
    mu0 = lo + q * (hi - lo)
    with ad.no_grad():
        _, cut = lowpass_downsample(f, SigmoidMaskParams(mu0, 5.0))
    for dmu in (-1e-4, 1e-4):
        if cutoff_for([SigmoidMaskParams(mu0 + dmu, 5.0)], (32,)).bins != cut.bins:
            return  # the crop changes within the difference step

    def loss(mu):
        down, _ = lowpass_downsample(f, SigmoidMaskParams(mu, 5.0))
        return (spectral_upsample(down, (32,)) * ad.Tensor(w)).sum()

    rep = ad.check_gradients(loss, np.array(mu0))
    assert rep.passed, rep.max_rel_error
