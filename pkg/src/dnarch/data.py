"""Seeded synthetic tasks and a small binary dataset format.

Tasks
-----
``lagged-product-1d``
    Length-``L`` sequences of +-1.  The first ``lag`` values form a slowly
    flipping Markov chain; every later value copies the one ``lag`` steps
    back, multiplied by a hidden class sign ``s`` and occasionally flipped.
    The label is the sign of ``sum_t x[t] x[t-lag]``, so the class is only
    visible to a receptive field spanning ``lag`` steps.  The slow chain
    gives partial evidence at shorter offsets, which lets a small kernel
    feel a gradient towards growing.
``bandlimited-regression-1d``
    White noise in, its low-pass (frequencies ``<= cutoff``) out; a dense task.
``blob-count-2d``
    ``16 x 16`` images holding 1 to 3 Gaussian blobs plus noise; the class is
    the blob count minus one.
``file:<path>``
    Arrays stored in the DNDS binary format (see :func:`write_dataset`).

Binary format (little endian)::

    magic    4 bytes   b"DNDS"
    version  uint32    1
    kind     uint32    0 = classification, 1 = dense
    n_train, n_val, n_test   uint32 x 3
    x_rank   uint32, then x_rank uint32 sample dimensions (channels first)
    y_rank   uint32, then y_rank uint32 target dimensions (0 for class labels)
    n_classes uint32   (0 for dense)
    payload  float64 inputs of every sample, then targets
             (int64 class labels or float64 dense targets)
"""
from __future__ import annotations

import struct
from dataclasses import dataclass
from pathlib import Path

import numpy as np

__all__ = ["Split", "Dataset", "make_dataset", "write_dataset", "read_dataset", "TASKS",
           "DatasetFormatError"]

MAGIC = b"DNDS"
FORMAT_VERSION = 1


class DatasetFormatError(ValueError):
    def __init__(self, message: str, offset: int):
        super().__init__(f"{message} (byte offset {offset})")
        self.offset = offset


@dataclass
class Split:
    x: np.ndarray
    y: np.ndarray

    def __len__(self):
        return len(self.x)


@dataclass
class Dataset:
    train: Split
    val: Split
    test: Split
    kind: str              # "classification" or "dense"
    n_classes: int = 0     # classes, or output channels for dense tasks

    @property
    def in_channels(self) -> int:
        return self.train.x.shape[1]

    @property
    def spatial_shape(self) -> tuple:
        return tuple(self.train.x.shape[2:])

    @property
    def out_dim(self) -> int:
        return self.n_classes if self.kind == "classification" else self.train.y.shape[1]

    def split(self, name: str) -> Split:
        if name not in ("train", "val", "test"):
            raise ValueError(f"unknown split {name!r}; choose train, val or test")
        return getattr(self, name)


def _splits(x, y, sizes) -> tuple:
    a, b, _ = sizes
    return Split(x[:a], y[:a]), Split(x[a:a + b], y[a:a + b]), Split(x[a + b:], y[a + b:])


def lagged_product(n: int, rng: np.random.Generator, length: int = 64, lag: int = 24,
                   flip: float = 0.1, persistence: float = 0.03) -> tuple:
    if not 0 < lag < length:
        raise ValueError(f"lag must lie in (0, {length}), got {lag}")
    x = np.empty((n, length))
    s = rng.choice([-1.0, 1.0], size=n)
    x[:, 0] = rng.choice([-1.0, 1.0], size=n)
    steps = np.where(rng.random((n, lag - 1)) < persistence, -1.0, 1.0)
    x[:, 1:lag] = x[:, :1] * np.cumprod(steps, axis=1)
    eps = np.where(rng.random((n, length - lag)) < flip, -1.0, 1.0)
    for t in range(lag, length):
        x[:, t] = s * eps[:, t - lag] * x[:, t - lag]
    score = np.sum(x[:, lag:] * x[:, :-lag], axis=1)
    # an exact tie is resolved by the hidden sign
    label = np.where(score != 0, score > 0, s > 0).astype(np.int64)
    return x[:, None, :], label


def bandlimited_regression(n: int, rng: np.random.Generator, length: int = 64,
                           cutoff: int = 8) -> tuple:
    x = rng.standard_normal((n, 1, length))
    F = np.fft.rfft(x, axis=-1)
    F[..., cutoff + 1:] = 0.0
    return x, np.fft.irfft(F, n=length, axis=-1)


def blob_count(n: int, rng: np.random.Generator, size: int = 16, max_blobs: int = 3,
               width: float = 1.2, noise: float = 0.1) -> tuple:
    yy, xx = np.mgrid[0:size, 0:size]
    counts = rng.integers(1, max_blobs + 1, size=n)
    img = noise * rng.standard_normal((n, size, size))
    for i, k in enumerate(counts):
        # keep blobs apart so they stay countable
        centres = []
        while len(centres) < k:
            c = rng.uniform(2, size - 2, size=2)
            if all(np.hypot(*(c - o)) > 4 * width for o in centres):
                centres.append(c)
        for cy, cx in centres:
            img[i] += np.exp(-((yy - cy) ** 2 + (xx - cx) ** 2) / (2 * width ** 2))
    return img[:, None], (counts - 1).astype(np.int64)


TASKS = ("lagged-product-1d", "bandlimited-regression-1d", "blob-count-2d")


def make_dataset(task: str, seed: int = 0, sizes=(2000, 500, 500), **options) -> Dataset:
    """Train/val/test splits of ``task``; identical for identical arguments."""
    if task.startswith("file:"):
        return read_dataset(task[len("file:"):])
    sizes = tuple(int(s) for s in sizes)
    if len(sizes) != 3 or min(sizes) < 1:
        raise ValueError(f"need three positive split sizes, got {sizes}")
    rng = np.random.default_rng(seed)
    n = sum(sizes)
    if task == "lagged-product-1d":
        x, y = lagged_product(n, rng, **options)
        return Dataset(*_splits(x, y, sizes), "classification", 2)
    if task == "bandlimited-regression-1d":
        x, y = bandlimited_regression(n, rng, **options)
        return Dataset(*_splits(x, y, sizes), "dense", 0)
    if task == "blob-count-2d":
        x, y = blob_count(n, rng, **options)
        return Dataset(*_splits(x, y, sizes), "classification", int(options.get("max_blobs", 3)))
    raise ValueError(f"unknown task {task!r}; choose one of {', '.join(TASKS)} or file:<path>")


# -- binary format ---------------------------------------------------------------------

def write_dataset(path, data: Dataset) -> Path:
    path = Path(path)
    kind = 0 if data.kind == "classification" else 1
    x_dims = data.train.x.shape[1:]
    y_dims = data.train.y.shape[1:]
    head = [MAGIC, struct.pack("<II", FORMAT_VERSION, kind),
            struct.pack("<III", len(data.train), len(data.val), len(data.test)),
            struct.pack(f"<I{len(x_dims)}I", len(x_dims), *x_dims),
            struct.pack(f"<I{len(y_dims)}I", len(y_dims), *y_dims),
            struct.pack("<I", data.n_classes)]
    splits = (data.train, data.val, data.test)
    xs = np.concatenate([s.x for s in splits]).astype("<f8")
    ys = np.concatenate([s.y for s in splits]).astype("<i8" if kind == 0 else "<f8")
    with open(path, "wb") as fh:
        fh.write(b"".join(head))
        fh.write(xs.tobytes())
        fh.write(ys.tobytes())
    return path


def read_dataset(path) -> Dataset:
    raw = Path(path).read_bytes()
    pos = 0

    def take(fmt: str):
        nonlocal pos
        size = struct.calcsize(fmt)
        if pos + size > len(raw):
            raise DatasetFormatError(f"file ends inside the header while reading {fmt!r}", pos)
        vals = struct.unpack_from(fmt, raw, pos)
        pos += size
        return vals

    if raw[:4] != MAGIC:
        raise DatasetFormatError(f"bad magic {raw[:4]!r}, expected {MAGIC!r}", 0)
    pos = 4
    version, kind = take("<II")
    if version != FORMAT_VERSION:
        raise DatasetFormatError(f"unsupported version {version}", 4)
    if kind not in (0, 1):
        raise DatasetFormatError(f"unknown dataset kind {kind}", 8)
    sizes = take("<III")
    (x_rank,) = take("<I")
    x_dims = take(f"<{x_rank}I")
    (y_rank,) = take("<I")
    y_dims = take(f"<{y_rank}I")
    (n_classes,) = take("<I")
    if x_rank < 2 or x_rank > 3:
        raise DatasetFormatError(f"inputs need rank 2 or 3 (channels + 1D/2D), got {x_rank}", pos)
    n = sum(sizes)
    x_count = n * int(np.prod(x_dims))
    y_count = n * int(np.prod(y_dims)) if y_rank else n
    need = pos + 8 * (x_count + y_count)
    if len(raw) != need:
        raise DatasetFormatError(f"payload size mismatch: expected {need} bytes in total, "
                                 f"found {len(raw)}", min(len(raw), need))
    x = np.frombuffer(raw, "<f8", x_count, pos).reshape((n,) + tuple(x_dims)).astype(float)
    pos += 8 * x_count
    if kind == 0:
        y = np.frombuffer(raw, "<i8", y_count, pos).astype(np.int64)
        bad = np.nonzero((y < 0) | (y >= n_classes))[0]
        if len(bad):
            raise DatasetFormatError(f"label {y[bad[0]]} outside [0, {n_classes})", pos + 8 * int(bad[0]))
        return Dataset(*_splits(x, y, sizes), "classification", int(n_classes))
    y = np.frombuffer(raw, "<f8", y_count, pos).reshape((n,) + tuple(y_dims)).astype(float)
    return Dataset(*_splits(x, y, sizes), "dense", 0)
