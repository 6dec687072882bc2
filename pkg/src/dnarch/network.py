"""Residual continuous-kernel CNN whose architecture is governed by masks.

Learnable architecture components are selected by letters of
``NetworkConfig.learn``:

``K``  kernel size, a Gaussian mask per spatial axis over kernel offsets
``R``  resolution per block, a sigmoid mask per axis over frequencies
``W``  widths, sigmoid masks over channels at each block's input, middle, output
``D``  depth, one sigmoid mask over block indices gating residual branches

A component that is not learned is held at the base architecture with hard
masks: global kernels, full resolution, ``width_base`` channels and the
first ``depth_base`` blocks.
"""
from __future__ import annotations

import json
from dataclasses import asdict, dataclass
from pathlib import Path

import numpy as np

from . import autodiff as ad
from .kernels import KernelNet, masked_kernel
from .masks import (GaussianMaskParams, MaskAxis, SigmoidMaskParams, clipped_size,
                    gaussian_sigma_bounds, gaussian_sigma_for_halfwidth, mask_size,
                    masked_values, materialized_count, sigmoid_mu_bounds, sigmoid_mu_for_bound)
from .spectral import conv_at_output_resolution, cutoff_for, spectral_upsample

__all__ = ["NetworkConfig", "DNArchNetwork", "BlockPlan", "build_network", "batchnorm_forward",
           "save_checkpoint", "load_checkpoint", "CHECKPOINT_FORMAT"]

CHECKPOINT_FORMAT = "dnarch-checkpoint/1"
SIGMA_GLOBAL = 0.5
SMALL_KERNEL_CELLS = 3


@dataclass
class NetworkConfig:
    in_channels: int
    out_dim: int
    spatial_shape: tuple
    task: str = "classification"
    depth_base: int = 4
    depth_max: int | None = None
    width_base: int = 16
    width_max: int | None = None
    dropout: float = 0.0
    omega0: float = 1.0
    threshold: float = 0.1
    tau_resolution: float = 50.0
    tau_channel: float = 25.0
    tau_depth: float = 8.0
    learn: str = "KRWD"
    kernel_init: str | float = "small"
    kernel_hidden: int = 128
    kernel_layers: int = 3
    encoding_features: int = 128
    bn_eps: float = 1e-5

    def __post_init__(self):
        self.spatial_shape = tuple(int(s) for s in np.atleast_1d(self.spatial_shape))
        if self.depth_max is None:
            self.depth_max = 2 * self.depth_base
        if self.width_max is None:
            self.width_max = 2 * self.width_base
        self.learn = "".join(c for c in "KRWD" if c in str(self.learn).upper())
        problems = []
        if len(self.spatial_shape) not in (1, 2) or min(self.spatial_shape) < 1:
            problems.append(f"spatial_shape must be 1D or 2D with positive sizes, got {self.spatial_shape}")
        if self.task not in ("classification", "dense"):
            problems.append(f"task must be 'classification' or 'dense', got {self.task!r}")
        for name in ("in_channels", "out_dim", "depth_base", "width_base", "kernel_hidden",
                     "kernel_layers", "encoding_features"):
            if int(getattr(self, name)) < 1:
                problems.append(f"{name} must be >= 1")
        if self.depth_max < self.depth_base:
            problems.append("depth_max must be >= depth_base")
        if self.width_max < self.width_base:
            problems.append("width_max must be >= width_base")
        if not 0.0 <= self.dropout < 1.0:
            problems.append("dropout must lie in [0, 1)")
        if not 0.0 < self.threshold < 1.0:
            problems.append("threshold must lie in (0, 1)")
        for name in ("omega0", "tau_resolution", "tau_channel", "tau_depth", "bn_eps"):
            if not getattr(self, name) > 0:
                problems.append(f"{name} must be positive")
        if isinstance(self.kernel_init, str) and self.kernel_init not in ("small", "global"):
            problems.append("kernel_init must be 'small', 'global' or a positive sigma")
        elif not isinstance(self.kernel_init, str) and not self.kernel_init > 0:
            problems.append("kernel_init sigma must be positive")
        if problems:
            raise ValueError("; ".join(problems))

    @property
    def ndim(self) -> int:
        return len(self.spatial_shape)

    @property
    def stream_width(self) -> int:
        """Channels carried by the identity path."""
        return self.width_max if "W" in self.learn else self.width_base

    def to_dict(self) -> dict:
        d = asdict(self)
        d["spatial_shape"] = list(self.spatial_shape)
        return d


@dataclass
class BlockPlan:
    """Materialised shape of one block for the current mask state."""

    index: int
    widths: tuple                     # (N_in, N_mid, N_out) channel counts
    width_masks: tuple                # per width mask: Tensor over kept channels, or None
    cutoff: object                    # CutoffSpec of the resolution masks
    res_masks: list                   # SigmoidMaskParams per axis, or None entries
    kernel_masks: list                # GaussianMaskParams per axis, or None entries
    gate: object = None               # depth gate Tensor, or None for a hard gate of 1

    @property
    def resolution(self) -> tuple:
        return self.cutoff.out_shape

    def kernel_axes(self) -> list:
        return [MaskAxis.offsets(r) for r in self.resolution]

    def kernel_size(self) -> tuple:
        return tuple(a.n if m is None else materialized_count(m, a)
                     for m, a in zip(self.kernel_masks, self.kernel_axes()))


def batchnorm_forward(x, gamma, beta, train: bool = True, eps: float = 1e-5) -> ad.Tensor:
    """Normalise each channel (axis 1) with the current batch's statistics.

    No running averages are kept; evaluation also uses batch statistics.
    """
    x = ad.as_tensor(x)
    if train and x.shape[0] < 2:
        raise ValueError("batch normalisation in training mode needs a batch of at least 2")
    axes = (0,) + tuple(range(2, x.ndim))
    mean = x.mean(axis=axes, keepdims=True)
    centred = x - mean
    var = (centred * centred).mean(axis=axes, keepdims=True)
    shape = (1, -1) + (1,) * (x.ndim - 2)
    y = centred / ad.sqrt(var + eps)
    return y * ad.as_tensor(gamma).reshape(shape) + ad.as_tensor(beta).reshape(shape)


def _mix(x: ad.Tensor, w: ad.Tensor) -> ad.Tensor:
    """Pointwise linear layer over the channel axis of ``[B, C, *S]``."""
    sp = "hw"[: x.ndim - 2]
    return ad.einsum(f"bi{sp},io->bo{sp}", x, w)


def _channel_scale(x: ad.Tensor, vals) -> ad.Tensor:
    if vals is None:
        return x
    return x * vals.reshape((1, -1) + (1,) * (x.ndim - 2))


class DNArchNetwork:
    """Encoder, ``depth_max`` residual blocks and a decoder, plus their masks."""

    def __init__(self, config: NetworkConfig, seed: int = 0):
        self.config = config
        rng = np.random.default_rng(seed)
        c = config
        S, C = c.stream_width, c.stream_width
        self.params: dict = {}

        def weight(name, shape, fan_in):
            self.params[name] = ad.Tensor(rng.standard_normal(shape) / np.sqrt(fan_in), requires_grad=True)

        def const(name, shape, value):
            self.params[name] = ad.Tensor(np.full(shape, float(value)), requires_grad=True)

        weight("encoder.weight", (c.in_channels, S), c.in_channels)
        const("encoder.bn.gamma", S, 1.0)
        const("encoder.bn.beta", S, 0.0)

        self.kernelnet = KernelNet(c.ndim, c.omega0, rng, c.kernel_hidden, c.kernel_layers,
                                   c.encoding_features)
        for l in range(c.depth_max):
            self.kernelnet.register(f"block{l}", C, C)
            const(f"blocks.{l}.bn1.gamma", C, 1.0)
            const(f"blocks.{l}.bn1.beta", C, 0.0)
            weight(f"blocks.{l}.pw.weight", (C, C), C)
            const(f"blocks.{l}.bn2.gamma", C, 1.0)
            const(f"blocks.{l}.bn2.beta", C, 0.0)
        weight("decoder.weight", (S, c.out_dim), S)
        const("decoder.bias", c.out_dim, 0.0)
        for name, p in self.kernelnet.params.items():
            self.params[f"kernelnet.{name}"] = p

        # mask parameters and their clamp bounds
        self.mask_bounds: dict = {}
        T = c.threshold
        if "K" in c.learn:
            for l in range(c.depth_max):
                for d, n in enumerate(c.spatial_shape):
                    lo, _ = gaussian_sigma_bounds(1.0 / n, 1.0, T)
                    self._mask(f"blocks.{l}.mask.kernel.{d}", self._initial_sigma(n), (lo, SIGMA_GLOBAL))
        if "R" in c.learn:
            bounds = sigmoid_mu_bounds(-1.0, 1.0, c.tau_resolution)
            for l in range(c.depth_max):
                for d in range(c.ndim):
                    self._mask(f"blocks.{l}.mask.res.{d}", bounds[1], bounds)
        if "W" in c.learn:
            bounds = sigmoid_mu_bounds(-1.0, 1.0, c.tau_channel)
            mu = sigmoid_mu_for_bound(2.0 * c.width_base / c.width_max - 1.0, c.tau_channel, T)
            for l in range(c.depth_max):
                for which in ("in", "mid", "out"):
                    self._mask(f"blocks.{l}.mask.{which}", mu, bounds)
        if "D" in c.learn:
            bounds = sigmoid_mu_bounds(-1.0, 1.0, c.tau_depth)
            mu = sigmoid_mu_for_bound(2.0 * c.depth_base / c.depth_max - 1.0, c.tau_depth, T)
            self._mask("mask.depth", mu, bounds)

        self.channel_axis = MaskAxis.cells(c.width_max)
        self.depth_axis = MaskAxis.cells(c.depth_max)
        self.freq_axes = [MaskAxis.frequency(n) for n in c.spatial_shape]

    def _initial_sigma(self, n: int) -> float:
        init = self.config.kernel_init
        if init == "small":
            return gaussian_sigma_for_halfwidth(SMALL_KERNEL_CELLS / n, self.config.threshold)
        if init == "global":
            return SIGMA_GLOBAL
        return float(init)

    def _mask(self, name: str, value: float, bounds: tuple) -> None:
        lo, hi = bounds
        self.params[name] = ad.Tensor(np.asarray(min(max(value, lo), hi)), requires_grad=True)
        self.mask_bounds[name] = (lo, hi)

    # -- bookkeeping ------------------------------------------------------------------

    def parameters(self) -> list:
        return list(self.params.values())

    def is_mask(self, name: str) -> bool:
        return name in self.mask_bounds

    def clamp_masks(self) -> None:
        for name, (lo, hi) in self.mask_bounds.items():
            p = self.params[name]
            p.data = np.clip(p.data, lo, hi)

    def masks_out_of_bounds(self) -> list:
        return [name for name, (lo, hi) in self.mask_bounds.items()
                if not lo <= float(self.params[name].data) <= hi]

    def state_dict(self) -> dict:
        return {name: p.data.copy() for name, p in self.params.items()}

    def load_state_dict(self, state: dict) -> None:
        missing = set(self.params) - set(state)
        extra = set(state) - set(self.params)
        if missing or extra:
            raise ValueError(f"parameter mismatch: missing {sorted(missing)}, unexpected {sorted(extra)}")
        for name, value in state.items():
            p = self.params[name]
            if p.shape != np.shape(value):
                raise ValueError(f"parameter {name}: expected shape {p.shape}, got {np.shape(value)}")
            p.data = np.array(value, dtype=float)

    # -- masks as parameter objects --------------------------------------------------

    def _sigmoid(self, name: str, tau: float) -> SigmoidMaskParams:
        return SigmoidMaskParams(self.params[name], tau, self.config.threshold)

    def width_mask(self, l: int, which: str):
        if "W" not in self.config.learn:
            return None
        return self._sigmoid(f"blocks.{l}.mask.{which}", self.config.tau_channel)

    def res_masks(self, l: int) -> list:
        if "R" not in self.config.learn:
            return [None] * self.config.ndim
        return [self._sigmoid(f"blocks.{l}.mask.res.{d}", self.config.tau_resolution)
                for d in range(self.config.ndim)]

    def kernel_masks(self, l: int) -> list:
        if "K" not in self.config.learn:
            return [None] * self.config.ndim
        return [GaussianMaskParams(self.params[f"blocks.{l}.mask.kernel.{d}"], 0.0, self.config.threshold)
                for d in range(self.config.ndim)]

    def depth_mask(self):
        if "D" not in self.config.learn:
            return None
        return self._sigmoid("mask.depth", self.config.tau_depth)

    def depth_gates(self) -> list:
        """Per block: ``None`` (skipped), ``1.0`` (hard gate) or a gate Tensor."""
        D = self.config.depth_max
        mask = self.depth_mask()
        if mask is None:
            return [1.0 if l < self.config.depth_base else None for l in range(D)]
        lo, hi, vals = masked_values(mask, self.depth_axis)
        return [vals[l - lo] if lo <= l <= hi else None for l in range(D)]

    def active_blocks(self) -> list:
        return [l for l, g in enumerate(self.depth_gates()) if g is not None]

    def block_plan(self, l: int, gate=1.0) -> BlockPlan:
        counts, vals = [], []
        for which in ("in", "mid", "out"):
            mask = self.width_mask(l, which)
            if mask is None:
                counts.append(self.config.width_base)
                vals.append(None)
            else:
                lo, hi, v = masked_values(mask, self.channel_axis)
                counts.append(hi + 1)
                vals.append(v)
        res_masks = self.res_masks(l)
        cut = cutoff_for(res_masks, self.config.spatial_shape)
        return BlockPlan(l, tuple(counts), tuple(vals), cut, res_masks, self.kernel_masks(l),
                         None if isinstance(gate, float) else gate)

    # -- differentiable sizes ------------------------------------------------------------

    def width_size(self, l: int, which: str):
        mask = self.width_mask(l, which)
        if mask is None:
            return float(self.config.width_base)
        C = self.config.width_max
        return clipped_size(mask_size(mask, 1.0, C), C)

    def resolution_size(self, l: int):
        """Product over axes of the per-axis resolution sizes."""
        total = 1.0
        for mask, n in zip(self.res_masks(l), self.config.spatial_shape):
            size = float(n) if mask is None else clipped_size(mask_size(mask, 1.0, n), n)
            total = size * total
        return total

    def kernel_sizes(self, l: int) -> list:
        out = []
        for mask, n in zip(self.kernel_masks(l), self.config.spatial_shape):
            full = 2 * ((n - 1) // 2) + 1
            out.append(float(full) if mask is None else clipped_size(mask_size(mask, 1.0, n), full))
        return out

    def depth_size(self):
        mask = self.depth_mask()
        if mask is None:
            return float(self.config.depth_base)
        D = self.config.depth_max
        return clipped_size(mask_size(mask, 1.0, D), D)

    # -- forward ----------------------------------------------------------------------------

    def kernel(self, plan: BlockPlan, resolution: tuple) -> ad.Tensor:
        a, b, _ = plan.widths
        axes = [MaskAxis.offsets(r) for r in resolution]
        psi, _ = masked_kernel(self.kernelnet, f"block{plan.index}", plan.kernel_masks, axes, a, b)
        scale = float(np.prod(np.asarray(self.config.spatial_shape, float) / np.asarray(resolution, float)))
        return psi * scale if scale != 1.0 else psi

    def encode(self, x, train: bool) -> ad.Tensor:
        c = self.config
        x = ad.as_tensor(x)
        expected = (c.in_channels,) + c.spatial_shape
        if x.ndim != 2 + c.ndim or x.shape[1:] != expected:
            raise ValueError(f"input batch must have shape [B, {', '.join(map(str, expected))}], got {x.shape}")
        h = _mix(x, self.params["encoder.weight"])
        h = batchnorm_forward(h, self.params["encoder.bn.gamma"], self.params["encoder.bn.beta"],
                              train, c.bn_eps)
        return ad.gelu(h)

    def block_forward(self, l: int, h: ad.Tensor, gate=1.0, train: bool = True, rng=None) -> ad.Tensor:
        """``h + gate * residual(h)``; a gate of exactly 0 returns ``h`` itself."""
        if not isinstance(gate, ad.Tensor) and gate == 0.0:
            return h
        c = self.config
        plan = self.block_plan(l, gate)
        a, b, o = plan.widths
        m_in, m_mid, m_out = plan.width_masks
        p = lambda name: self.params[f"blocks.{l}.{name}"]  # noqa: E731

        x = _channel_scale(h[:, :a], m_in)
        y, cut = conv_at_output_resolution(x, lambda res: self.kernel(plan, res), plan.res_masks, c.ndim)
        y = batchnorm_forward(y, p("bn1.gamma")[:b], p("bn1.beta")[:b], train, c.bn_eps)
        y = _channel_scale(ad.gelu(y), m_mid)
        y = _mix(y, p("pw.weight")[:b, :o])
        y = batchnorm_forward(y, p("bn2.gamma")[:o], p("bn2.beta")[:o], train, c.bn_eps)
        y = ad.gelu(y)
        if train and c.dropout > 0:
            if rng is None:
                raise ValueError("dropout in training mode needs a random generator")
            keep = (rng.random(y.shape) >= c.dropout) / (1.0 - c.dropout)
            y = y * keep
        y = _channel_scale(y, m_out)
        y = spectral_upsample(y, c.spatial_shape, c.ndim)
        if isinstance(gate, ad.Tensor) or gate != 1.0:
            y = y * gate
        S = h.shape[1]
        if o < S:
            y = ad.pad(y, [(0, 0), (0, S - o)] + [(0, 0)] * c.ndim)
        return h + y

    def decode(self, h: ad.Tensor) -> ad.Tensor:
        if self.config.task == "classification":
            pooled = h.mean(axis=tuple(range(2, h.ndim)))
            return pooled @ self.params["decoder.weight"] + self.params["decoder.bias"]
        out = _mix(h, self.params["decoder.weight"])
        return out + self.params["decoder.bias"].reshape((1, -1) + (1,) * self.config.ndim)

    def forward(self, x, train: bool = True, rng=None, gates=None, skip=()) -> ad.Tensor:
        """Predictions for a batch ``[B, C_in, *spatial]``.

        ``gates`` overrides the per-block depth gates; blocks listed in
        ``skip`` are left out entirely.
        """
        h = self.encode(x, train)
        gates = self.depth_gates() if gates is None else list(gates)
        for l, g in enumerate(gates):
            if g is None or l in skip:
                continue
            h = self.block_forward(l, h, g, train, rng)
        return self.decode(h)

    __call__ = forward


def build_network(config: NetworkConfig, seed: int = 0) -> DNArchNetwork:
    return DNArchNetwork(config, seed)


# -- checkpoints ----------------------------------------------------------------------------

def save_checkpoint(path, net: DNArchNetwork, extra: dict | None = None) -> Path:
    """``.npz`` with a format tag, the config as JSON and every parameter array."""
    path = Path(path)
    payload = {
        "__format__": np.array(CHECKPOINT_FORMAT),
        "__config__": np.array(json.dumps({"network": net.config.to_dict(), **(extra or {})})),
        "buffer/kernelnet.W": net.kernelnet.W,
    }
    payload.update({f"param/{k}": v for k, v in net.state_dict().items()})
    with open(path, "wb") as fh:
        np.savez(fh, **payload)
    return path


def load_checkpoint(path):
    """Rebuild the network stored at ``path``; returns ``(net, meta)``."""
    with np.load(path, allow_pickle=False) as data:
        fmt = str(data["__format__"]) if "__format__" in data.files else None
        if fmt != CHECKPOINT_FORMAT:
            raise ValueError(f"{path}: unsupported checkpoint format {fmt!r}")
        meta = json.loads(str(data["__config__"]))
        config = NetworkConfig(**meta["network"])
        net = DNArchNetwork(config)
        net.kernelnet.W = data["buffer/kernelnet.W"].copy()
        net.load_state_dict({k[len("param/"):]: data[k] for k in data.files if k.startswith("param/")})
    return net, meta
