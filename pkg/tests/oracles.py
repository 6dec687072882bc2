"""Independent reference implementations used by the tests.

Nothing here imports the package's transforms or layers: convolutions are
direct sums, DFTs are explicit matrix products, and the fixed CNN is coded
from the parameter arrays alone.
"""
import math

import numpy as np
from scipy.special import erf


def dft_matrix(n):
    k = np.arange(n)
    return np.exp(-2j * np.pi * np.outer(k, k) / n)


def direct_dft(x):
    """Real-input spectrum (non-negative bins) by an O(L^2) sum."""
    n = len(x)
    return (dft_matrix(n) @ x)[: n // 2 + 1]


def circular_conv(f, psi):
    """``out[t] = sum_j psi[j] f[t - (j - K//2)]`` with periodic indexing, along the last axis."""
    f = np.asarray(f)
    L, K = f.shape[-1], len(psi)
    t, j = np.arange(L)[:, None], np.arange(K)[None, :]
    return f[..., (t - (j - K // 2)) % L] @ psi


def gelu(x):
    return 0.5 * x * (1.0 + erf(x / math.sqrt(2.0)))


def batchnorm(x, gamma, beta, eps=1e-5):
    axes = (0,) + tuple(range(2, x.ndim))
    mean = x.mean(axis=axes, keepdims=True)
    var = ((x - mean) ** 2).mean(axis=axes, keepdims=True)
    shape = (1, -1) + (1,) * (x.ndim - 2)
    return (x - mean) / np.sqrt(var + eps) * gamma.reshape(shape) + beta.reshape(shape)


def mlp_kernel(state, W, omega0, layer, coords, n_in, n_out, n_trunk):
    """Kernel values ``[n_in, n_out, P]`` from raw KernelNet arrays."""
    proj = 2 * np.pi * omega0 * (coords[:, None] @ W)
    h = np.concatenate([np.cos(proj), np.sin(proj)], axis=-1)
    for i in range(n_trunk):
        h = gelu(h @ state[f"kernelnet.trunk.{i}.weight"] + state[f"kernelnet.trunk.{i}.bias"])
    out = h @ state[f"kernelnet.head.{layer}.weight"] + state[f"kernelnet.head.{layer}.bias"]
    return out.T.reshape(n_in, n_out, -1)


def fixed_cnn_forward(state, W, config, x):
    """Plain residual CCNN in 1D: global kernels, full resolution, every block of
    ``depth_base`` active, no masks.  Convolutions are direct circular sums."""
    C, L = config.width_base, config.spatial_shape[0]
    h = np.einsum("bil,io->bol", x, state["encoder.weight"])
    h = gelu(batchnorm(h, state["encoder.bn.gamma"], state["encoder.bn.beta"]))
    half = (L - 1) // 2
    coords = 2.0 * np.arange(-half, half + 1) / L
    for l in range(config.depth_base):
        psi = mlp_kernel(state, W, config.omega0, f"block{l}", coords, C, C, config.kernel_layers)
        y = np.zeros((x.shape[0], C, L))
        for i in range(C):
            for o in range(C):
                y[:, o] += circular_conv(h[:, i], psi[i, o])
        y = gelu(batchnorm(y, state[f"blocks.{l}.bn1.gamma"], state[f"blocks.{l}.bn1.beta"]))
        y = np.einsum("bil,io->bol", y, state[f"blocks.{l}.pw.weight"])
        y = gelu(batchnorm(y, state[f"blocks.{l}.bn2.gamma"], state[f"blocks.{l}.bn2.beta"]))
        h = h + y
    pooled = h.mean(axis=2)
    return pooled @ state["decoder.weight"] + state["decoder.bias"]


def hand_count(L, c_in, C, depth, n_out, log2_L, dense=False):
    """Integer multiply-accumulate count of a fixed CCNN (width C, ``depth`` blocks)."""
    encoder = L * c_in * C + L * C + L * C          # linear, norm, GELU
    block = (L * log2_L * C                        # FFT of the block input
             + L * C * C + L * C + L * C           # channel mixing, norm, GELU
             + L * C * C + L * C + L * C + L * C)  # pointwise, norm, GELU, dropout
    decoder = L * C * n_out if dense else L * C + C * n_out
    return encoder + depth * block + decoder
