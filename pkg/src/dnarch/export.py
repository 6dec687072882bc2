"""Read the learned architecture off the masks and trim the network to it.

:func:`snapshot` lists the integer sizes the masks materialise.
:func:`trim` builds a mask-free :class:`TrimmedNetwork` that computes the
same function: zero channels and gated-off blocks are dropped, kernels are
sampled once on their support, and every non-zero mask value is folded into
the adjacent weights (``weight' = weight * mask``).
"""
from __future__ import annotations

import copy
import json
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np
from scipy import special

from . import autodiff as ad
from .masks import MaskAxis, eval_mask
from .network import DNArchNetwork, NetworkConfig

__all__ = ["BlockArch", "ArchitectureSnapshot", "TrimmedBlock", "TrimmedNetwork", "EquivalenceReport",
           "snapshot", "trim", "verify_equivalence", "export_table", "parse_structured"]

ARCH_FORMAT = "dnarch-arch/1"


@dataclass
class BlockArch:
    index: int
    kernel: tuple
    resolution: tuple
    widths: tuple

    def as_dict(self) -> dict:
        return {"index": self.index, "kernel": list(self.kernel),
                "resolution": list(self.resolution), "widths": list(self.widths)}


@dataclass
class ArchitectureSnapshot:
    ndim: int
    blocks: list = field(default_factory=list)

    @property
    def depth(self) -> int:
        return len(self.blocks)

    def as_dict(self) -> dict:
        return {"format": ARCH_FORMAT, "ndim": self.ndim, "depth": self.depth,
                "blocks": [b.as_dict() for b in self.blocks]}


def snapshot(net) -> ArchitectureSnapshot:
    """Integer architecture of ``net`` (a masked or a trimmed network)."""
    if isinstance(net, TrimmedNetwork):
        rows = [BlockArch(b.index, tuple(b.kernel.shape[2:]), tuple(b.resolution),
                          (b.kernel.shape[0], b.kernel.shape[1], b.pw.shape[1])) for b in net.blocks]
        return ArchitectureSnapshot(net.config.ndim, rows)
    rows = []
    with ad.no_grad():
        for l in net.active_blocks():
            plan = net.block_plan(l)
            rows.append(BlockArch(l, plan.kernel_size(), plan.resolution, plan.widths))
    return ArchitectureSnapshot(net.config.ndim, rows)


# -- trimmed network -------------------------------------------------------------------------

@dataclass
class TrimmedBlock:
    index: int
    kernel: np.ndarray          # [N_in, N_mid, *K], input-width mask folded in
    in_shape: tuple
    resolution: tuple
    freq_weights: list          # per axis: weights on the kept bins, or None
    bn1: tuple
    pw: np.ndarray              # [N_mid, N_out], middle-width mask folded in
    bn2: tuple
    out_scale: np.ndarray | None  # output-width mask times depth gate


def _np_dft(x, nd):
    F = np.fft.rfft(x, axis=-1)
    return np.fft.fft(F, axis=-2) if nd == 2 else F


def _np_idft(F, shape):
    if len(shape) == 2:
        F = np.fft.ifft(F, axis=-2)
    return np.fft.irfft(F, n=shape[-1], axis=-1)


def _kept_bins(n: int, m: int, full_axis: bool) -> np.ndarray:
    if not full_axis:
        return np.arange(m // 2 + 1)
    if m == n:
        return np.arange(n)
    k = m // 2
    return np.concatenate([np.arange(k + 1), np.arange(n - k, n)])


def _bn(x, gamma, beta, eps):
    axes = (0,) + tuple(range(2, x.ndim))
    mean = x.mean(axis=axes, keepdims=True)
    c = x - mean
    var = (c * c).mean(axis=axes, keepdims=True)
    shape = (1, -1) + (1,) * (x.ndim - 2)
    return c / np.sqrt(var + eps) * gamma.reshape(shape) + beta.reshape(shape)


def _gelu(x):
    return 0.5 * x * (1.0 + special.erf(x / np.sqrt(2.0)))


def _upsample(y, target):
    shape = y.shape[-len(target):]
    if tuple(shape) == tuple(target):
        return y
    nd = len(target)
    F = _np_dft(y, nd)
    for d, (n, m) in enumerate(zip(shape, target)):
        if n == m:
            continue
        axis = F.ndim - nd + d
        if d == nd - 1:
            if n % 2 == 0:
                F = F.copy()
                F[..., -1] *= 0.5
            widths = [(0, 0)] * F.ndim
            widths[axis] = (0, m // 2 - n // 2)
            F = np.pad(F, widths)
        else:
            out_shape = list(F.shape)
            out_shape[axis] = m
            G = np.zeros(out_shape, dtype=complex)
            pos = (n + 1) // 2
            G[:, :, :pos] = F[:, :, :pos]
            G[:, :, m - (n - pos):] = F[:, :, pos:]
            if n % 2 == 0:
                G[:, :, n // 2] = 0.5 * F[:, :, n // 2]
                G[:, :, m - n // 2] = 0.5 * F[:, :, n // 2]
            F = G
    scale = float(np.prod(np.asarray(target, float) / np.asarray(shape, float)))
    return _np_idft(F * scale, target)


class TrimmedNetwork:
    """Dense, mask-free network equivalent to a frozen :class:`DNArchNetwork`."""

    def __init__(self, config: NetworkConfig, stream_width: int, encoder: dict, blocks: list,
                 decoder: dict):
        self.config = config
        self.stream_width = stream_width
        self.encoder = encoder
        self.blocks = blocks
        self.decoder = decoder

    def parameter_count(self) -> int:
        n = sum(v.size for v in self.encoder.values()) + sum(v.size for v in self.decoder.values())
        for b in self.blocks:
            n += b.kernel.size + b.pw.size + sum(v.size for v in b.bn1 + b.bn2)
            n += 0 if b.out_scale is None else b.out_scale.size
        return int(n)

    def _conv(self, b: TrimmedBlock, x):
        nd = self.config.ndim
        F = _np_dft(x, nd)
        for d, (n, m, w) in enumerate(zip(b.in_shape, b.resolution, b.freq_weights)):
            axis = F.ndim - nd + d
            idx = _kept_bins(n, m, d < nd - 1)
            F = np.take(F, idx, axis=axis)
            if w is not None:
                shape = [1] * F.ndim
                shape[axis] = -1
                F = F * w.reshape(shape)
        F = F * float(np.prod(np.asarray(b.resolution, float) / np.asarray(b.in_shape, float)))
        psi = b.kernel
        for d, m in enumerate(b.resolution):
            axis = 2 + d
            K = psi.shape[axis]
            widths = [(0, 0)] * psi.ndim
            widths[axis] = (0, m - K)
            psi = np.take(np.pad(psi, widths), (np.arange(m) + K // 2) % m, axis=axis)
        sp = "hw"[:nd]
        prod = np.einsum(f"bi{sp},io{sp}->bo{sp}", F, _np_dft(psi, nd))
        return _np_idft(prod, b.resolution)

    def forward(self, x, train: bool = False) -> np.ndarray:
        c = self.config
        x = np.asarray(x, dtype=float)
        sp = "hw"[:c.ndim]
        eps = c.bn_eps
        h = np.einsum(f"bi{sp},io->bo{sp}", x, self.encoder["weight"])
        h = _gelu(_bn(h, self.encoder["gamma"], self.encoder["beta"], eps))
        for b in self.blocks:
            a = b.kernel.shape[0]
            y = self._conv(b, h[:, :a])
            y = _gelu(_bn(y, *b.bn1, eps))
            y = np.einsum(f"bi{sp},io->bo{sp}", y, b.pw)
            y = _gelu(_bn(y, *b.bn2, eps))
            if b.out_scale is not None:
                y = y * b.out_scale.reshape((1, -1) + (1,) * c.ndim)
            y = _upsample(y, c.spatial_shape)
            h = h.copy()
            h[:, :y.shape[1]] += y
        if c.task == "classification":
            return h.mean(axis=tuple(range(2, h.ndim))) @ self.decoder["weight"] + self.decoder["bias"]
        out = np.einsum(f"bi{sp},io->bo{sp}", h, self.decoder["weight"])
        return out + self.decoder["bias"].reshape((1, -1) + (1,) * c.ndim)

    __call__ = forward


def _trim_block(net: DNArchNetwork, l: int, gate) -> TrimmedBlock:
    plan = net.block_plan(l)
    a, b, o = plan.widths
    m_in, m_mid, m_out = (None if v is None else v.data for v in plan.width_masks)
    p = lambda name: net.params[f"blocks.{l}.{name}"].data  # noqa: E731
    kernel = net.kernel(plan, plan.resolution).data.copy()
    if m_in is not None:
        kernel = kernel * m_in.reshape((-1,) + (1,) * (kernel.ndim - 1))
    pw = p("pw.weight")[:b, :o].copy()
    if m_mid is not None:
        pw = pw * m_mid[:, None]
    scale = None if m_out is None else m_out.copy()
    g = float(gate.data) if isinstance(gate, ad.Tensor) else float(gate)
    if g != 1.0:
        scale = np.full(o, g) if scale is None else scale * g
    weights = []
    nd = net.config.ndim
    for d, (mask, n, m) in enumerate(zip(plan.res_masks, net.config.spatial_shape, plan.resolution)):
        if mask is None:
            weights.append(None)
            continue
        idx = _kept_bins(n, m, d < nd - 1)
        mags = np.minimum(idx, n - idx) if d < nd - 1 else idx
        coords = MaskAxis.frequency(n).coords
        weights.append(eval_mask(mask, coords[mags]).data.copy())
    return TrimmedBlock(l, kernel, net.config.spatial_shape, plan.resolution, weights,
                        (p("bn1.gamma")[:b].copy(), p("bn1.beta")[:b].copy()), pw,
                        (p("bn2.gamma")[:o].copy(), p("bn2.beta")[:o].copy()), scale)


def trim(net) -> TrimmedNetwork:
    """Mask-free equivalent of ``net``; trimming a trimmed network copies it."""
    if isinstance(net, TrimmedNetwork):
        return copy.deepcopy(net)
    with ad.no_grad():
        blocks = [_trim_block(net, l, g) for l, g in enumerate(net.depth_gates()) if g is not None]
    P = net.params
    encoder = {"weight": P["encoder.weight"].data.copy(), "gamma": P["encoder.bn.gamma"].data.copy(),
               "beta": P["encoder.bn.beta"].data.copy()}
    decoder = {"weight": P["decoder.weight"].data.copy(), "bias": P["decoder.bias"].data.copy()}
    return TrimmedNetwork(copy.deepcopy(net.config), net.config.stream_width, encoder, blocks, decoder)


@dataclass
class EquivalenceReport:
    max_error: float
    tolerance: float
    worst_sample: int = -1
    worst_channel: int = -1
    message: str = ""

    @property
    def passed(self) -> bool:
        return not self.message and self.max_error <= self.tolerance


def verify_equivalence(net, trimmed, n_samples: int = 100, tol: float = 1e-6, seed: int = 0,
                       batch_size: int = 50, inputs=None) -> EquivalenceReport:
    """Largest output difference of the two networks on seeded random inputs.

    Both networks see the same batches, so batch statistics agree.
    """
    c = net.config
    if inputs is None:
        rng = np.random.default_rng(seed)
        inputs = rng.standard_normal((n_samples, c.in_channels) + c.spatial_shape)
    worst = EquivalenceReport(0.0, tol)
    for start in range(0, len(inputs), batch_size):
        xb = inputs[start:start + batch_size]
        with ad.no_grad():
            ya = net.forward(xb, train=False)
            yb = trimmed.forward(xb, train=False)
        ya = ya.data if isinstance(ya, ad.Tensor) else np.asarray(ya)
        yb = yb.data if isinstance(yb, ad.Tensor) else np.asarray(yb)
        if ya.shape != yb.shape:
            return EquivalenceReport(np.inf, tol, start, -1,
                                     f"output shape mismatch {ya.shape} vs {yb.shape} at batch starting {start}")
        err = np.abs(ya - yb)
        if err.size and err.max() > worst.max_error:
            i, ch = np.unravel_index(np.argmax(err), err.shape)[:2]
            worst = EquivalenceReport(float(err.max()), tol, start + int(i), int(ch))
    return worst


# -- tables ------------------------------------------------------------------------------------

def _fmt(values) -> str:
    values = list(values)
    return str(values[0]) if len(values) == 1 else "[" + " ".join(map(str, values)) + "]"


def export_table(snap: ArchitectureSnapshot, fmt: str = "text", path=None) -> str:
    """Text table (Block | Depth | Kernel Size | Resolution | Width) or JSON."""
    if fmt == "structured":
        text = json.dumps(snap.as_dict(), indent=2) + "\n"
    elif fmt == "text":
        axes = " [y x]" if snap.ndim == 2 else ""
        header = ["Block", "Depth", f"Kernel Size{axes}", f"Resolution{axes}", "Width"]
        rows = [header]
        for i, b in enumerate(snap.blocks):
            rows.append([str(b.index + 1), str(snap.depth) if i == 0 else "", _fmt(b.kernel),
                         _fmt(b.resolution), "[" + " ".join(map(str, b.widths)) + "]"])
        if not snap.blocks:
            rows.append(["-", "0", "-", "-", "-"])
        widths = [max(len(r[j]) for r in rows) for j in range(len(header))]
        lines = ["| " + " | ".join(cell.ljust(w) for cell, w in zip(r, widths)) + " |" for r in rows]
        lines.insert(1, "|" + "|".join("-" * (w + 2) for w in widths) + "|")
        text = "\n".join(lines) + "\n"
    else:
        raise ValueError(f"unknown table format {fmt!r}; choose text or structured")
    if path is not None:
        Path(path).write_text(text)
    return text


def parse_structured(text: str) -> ArchitectureSnapshot:
    data = json.loads(text)
    if data.get("format") != ARCH_FORMAT:
        raise ValueError(f"not an architecture export: format {data.get('format')!r}")
    blocks = [BlockArch(int(b["index"]), tuple(b["kernel"]), tuple(b["resolution"]), tuple(b["widths"]))
              for b in data["blocks"]]
    snap = ArchitectureSnapshot(int(data["ndim"]), blocks)
    if snap.depth != int(data["depth"]):
        raise ValueError(f"depth {data['depth']} disagrees with {snap.depth} listed blocks")
    return snap
