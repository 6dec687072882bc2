"""Config-driven training, evaluation and logging.

Output directory layout after :func:`train`::

    config.yaml     effective configuration (defaults filled in)
    steps.csv       one row per optimiser step: step, epoch, lr, l_obj, l_comp, rel_complexity
    metrics.csv     one row per epoch, columns in METRIC_COLUMNS
    checkpoint.npz  parameters of the last completed epoch
    arch.txt        learned architecture as a table
    arch.json       the same, machine readable

Both CSV files are append-only: the header goes out before the first step
and rows follow at the end of every epoch.  Metric columns:

    epoch, step          epoch number (1-based) and optimiser steps taken so far
    l_obj, l_comp        task and complexity loss of the epoch's last step
    rel_complexity       C_curr / C_target with the masks at the end of the epoch
    train_loss/acc       running mean over the epoch (acc empty for dense tasks)
    val_loss/acc         validation metrics with frozen masks
    depth, depth_size    active blocks and the differentiable depth size
    kernel, resolution   per active block, space separated ("AxB" in 2D)
    widths               per active block, "in/mid/out" channel counts
"""
from __future__ import annotations

import csv
import dataclasses
import math
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np
import yaml

from . import autodiff as ad
from .complexity import base_cost, complexity_loss, network_cost, total_loss
from .data import TASKS, Dataset, make_dataset
from .export import export_table, snapshot
from .network import DNArchNetwork, NetworkConfig, load_checkpoint, save_checkpoint

__all__ = ["RunConfig", "ConfigError", "NumericError", "load_config", "network_config", "AdamW",
           "learning_rate", "train", "evaluate", "evaluate_checkpoint", "TrainResult",
           "STEP_COLUMNS", "METRIC_COLUMNS", "dataset_for"]

STEP_COLUMNS = ["step", "epoch", "lr", "l_obj", "l_comp", "rel_complexity"]
METRIC_COLUMNS = ["epoch", "step", "l_obj", "l_comp", "rel_complexity", "train_loss", "train_acc",
                  "val_loss", "val_acc", "depth", "depth_size", "kernel", "resolution", "widths"]


class ConfigError(ValueError):
    """Invalid or unknown configuration entry."""


class NumericError(RuntimeError):
    """Loss or gradient became non-finite."""


@dataclass
class RunConfig:
    task: str = "lagged-product-1d"
    task_options: dict = field(default_factory=dict)
    n_train: int = 2000
    n_val: int = 500
    n_test: int = 500
    epochs: int = 50
    batch_size: int = 50
    eval_batch_size: int = 250
    lr: float = 0.01
    mask_lr: float | None = None
    warmup_epochs: int = 5
    weight_decay: float = 0.01
    betas: tuple = (0.9, 0.999)
    dropout: float = 0.0
    omega0: float = 1.0
    lam: float = 0.1
    tau_resolution: float = 50.0
    tau_channel: float = 25.0
    tau_depth: float = 8.0
    threshold: float = 0.1
    depth_base: int = 4
    depth_max: int | None = None
    width_base: int = 16
    width_max: int | None = None
    learn: str = "KRWD"
    kernel_init: str | float = "small"
    target_complexity: str | float = "auto"
    seed: int = 0
    output_dir: str = "runs/default"

    def __post_init__(self):
        self.betas = tuple(self.betas)
        self.validate()

    def validate(self) -> None:
        def fail(name, why):
            raise ConfigError(f"{name}: {why} (got {getattr(self, name)!r})")

        if not (self.task in TASKS or str(self.task).startswith("file:")):
            fail("task", f"must be one of {', '.join(TASKS)} or file:<path>")
        if not isinstance(self.task_options, dict):
            fail("task_options", "must be a mapping")
        for name in ("n_train", "n_val", "n_test", "epochs", "batch_size", "eval_batch_size",
                     "depth_base", "width_base"):
            if not isinstance(getattr(self, name), int) or getattr(self, name) < 1:
                fail(name, "must be an integer >= 1")
        if self.batch_size < 2:
            fail("batch_size", "must be >= 2 (batch statistics)")
        if not isinstance(self.warmup_epochs, int) or not 0 <= self.warmup_epochs < self.epochs:
            fail("warmup_epochs", "must be an integer in [0, epochs)")
        for name in ("lr", "omega0", "tau_resolution", "tau_channel", "tau_depth"):
            if not _is_number(getattr(self, name)) or getattr(self, name) <= 0:
                fail(name, "must be > 0")
        if self.mask_lr is not None and (not _is_number(self.mask_lr) or self.mask_lr <= 0):
            fail("mask_lr", "must be > 0 or omitted")
        for name in ("weight_decay", "lam"):
            if not _is_number(getattr(self, name)) or getattr(self, name) < 0:
                fail(name, "must be >= 0")
        if not _is_number(self.dropout) or not 0 <= self.dropout < 1:
            fail("dropout", "must lie in [0, 1)")
        if not _is_number(self.threshold) or not 0 < self.threshold < 1:
            fail("threshold", "must lie in (0, 1)")
        if len(self.betas) != 2 or not all(_is_number(b) and 0 <= b < 1 for b in self.betas):
            fail("betas", "must be two numbers in [0, 1)")
        if set(str(self.learn).upper()) - set("KRWD"):
            fail("learn", "may only contain the letters K, R, W, D")
        if not (self.target_complexity == "auto"
                or (_is_number(self.target_complexity) and self.target_complexity > 0)):
            fail("target_complexity", "must be 'auto' or a positive number")
        if not (self.kernel_init in ("small", "global")
                or (_is_number(self.kernel_init) and self.kernel_init > 0)):
            fail("kernel_init", "must be 'small', 'global' or a positive sigma")
        for name, base in (("depth_max", self.depth_base), ("width_max", self.width_base)):
            v = getattr(self, name)
            if v is not None and (not isinstance(v, int) or v < base):
                fail(name, f"must be an integer >= {base} or omitted")

    def to_dict(self) -> dict:
        d = dataclasses.asdict(self)
        d["betas"] = list(self.betas)
        return d


def _is_number(v) -> bool:
    return isinstance(v, (int, float)) and not isinstance(v, bool) and math.isfinite(v)


_ALIASES = {"lambda": "lam"}
_FIELDS = {f.name for f in dataclasses.fields(RunConfig)}


def config_from_mapping(data: dict) -> RunConfig:
    """Build a config from a mapping; nested sections are flattened."""
    flat = {}

    def visit(d, where):
        for key, value in d.items():
            key = _ALIASES.get(str(key), str(key))
            if key in _FIELDS:
                if key in flat:
                    raise ConfigError(f"{key}: given more than once")
                flat[key] = value
            elif isinstance(value, dict):
                visit(value, f"{where}{key}.")
            elif value is None:
                continue  # empty section
            else:
                raise ConfigError(f"unknown config key '{where}{key}'")

    visit(data or {}, "")
    try:
        return RunConfig(**flat)
    except TypeError as exc:
        raise ConfigError(str(exc)) from None


def load_config(path) -> RunConfig:
    path = Path(path)
    if not path.is_file():
        raise ConfigError(f"config file {path} does not exist")
    try:
        data = yaml.safe_load(path.read_text())
    except yaml.YAMLError as exc:
        raise ConfigError(f"{path}: not valid YAML: {exc}") from None
    if data is not None and not isinstance(data, dict):
        raise ConfigError(f"{path}: top level must be a mapping")
    return config_from_mapping(data or {})


def dataset_for(run: RunConfig) -> Dataset:
    return make_dataset(run.task, run.seed, (run.n_train, run.n_val, run.n_test), **run.task_options)


def network_config(run: RunConfig, data: Dataset) -> NetworkConfig:
    return NetworkConfig(
        in_channels=data.in_channels, out_dim=data.out_dim, spatial_shape=data.spatial_shape,
        task=data.kind, depth_base=run.depth_base, depth_max=run.depth_max,
        width_base=run.width_base, width_max=run.width_max, dropout=run.dropout,
        omega0=run.omega0, threshold=run.threshold, tau_resolution=run.tau_resolution,
        tau_channel=run.tau_channel, tau_depth=run.tau_depth, learn=run.learn,
        kernel_init=run.kernel_init)


# -- optimisation ---------------------------------------------------------------------------

def learning_rate(step: int, total_steps: int, warmup_steps: int, base: float) -> float:
    """Linear warm-up to ``base`` over ``warmup_steps``, then cosine decay to 0."""
    if step < warmup_steps:
        return base * (step + 1) / warmup_steps
    span = max(total_steps - warmup_steps, 1)
    progress = min((step - warmup_steps) / span, 1.0)
    return 0.5 * base * (1.0 + math.cos(math.pi * progress))


class AdamW:
    """Adam with decoupled weight decay; ``decay[name]`` switches decay per parameter."""

    def __init__(self, params: dict, betas=(0.9, 0.999), eps: float = 1e-8, weight_decay: float = 0.0,
                 decay: dict | None = None):
        self.params = params
        self.b1, self.b2 = betas
        self.eps = eps
        self.weight_decay = weight_decay
        self.decay = decay or {}
        self.m = {k: np.zeros_like(p.data) for k, p in params.items()}
        self.v = {k: np.zeros_like(p.data) for k, p in params.items()}
        self.t = 0

    def step(self, grads: dict, lr: dict) -> None:
        self.t += 1
        c1 = 1.0 - self.b1 ** self.t
        c2 = 1.0 - self.b2 ** self.t
        for name, p in self.params.items():
            g = grads[name]
            rate = lr[name]
            if self.weight_decay and self.decay.get(name, True):
                p.data = p.data * (1.0 - rate * self.weight_decay)
            self.m[name] = self.b1 * self.m[name] + (1.0 - self.b1) * g
            self.v[name] = self.b2 * self.v[name] + (1.0 - self.b2) * g * g
            p.data = p.data - rate * (self.m[name] / c1) / (np.sqrt(self.v[name] / c2) + self.eps)


# -- losses and evaluation ------------------------------------------------------------------

def objective(out: ad.Tensor, y: np.ndarray, kind: str) -> ad.Tensor:
    if kind == "classification":
        picked = out[np.arange(len(y)), y]
        return (ad.logsumexp(out, axis=1) - picked).mean()
    diff = out - y
    return (diff * diff).mean()


def evaluate(net: DNArchNetwork, split, kind: str, batch_size: int = 250) -> dict:
    """Mean loss (and accuracy for classification) with frozen masks."""
    total, correct, n = 0.0, 0, len(split)
    with ad.no_grad():
        for start in range(0, n, batch_size):
            xb, yb = split.x[start:start + batch_size], split.y[start:start + batch_size]
            out = net.forward(xb, train=False)
            total += float(objective(out, yb, kind).data) * len(xb)
            if kind == "classification":
                correct += int(np.sum(np.argmax(out.data, axis=1) == yb))
    metrics = {"loss": total / n}
    if kind == "classification":
        metrics["accuracy"] = correct / n
    return metrics


def _arch_columns(net: DNArchNetwork) -> dict:
    snap = snapshot(net)
    return {
        "depth": snap.depth,
        "kernel": " ".join("x".join(map(str, b.kernel)) for b in snap.blocks),
        "resolution": " ".join("x".join(map(str, b.resolution)) for b in snap.blocks),
        "widths": " ".join("/".join(map(str, b.widths)) for b in snap.blocks),
    }


@dataclass
class TrainResult:
    net: DNArchNetwork
    run: RunConfig
    output_dir: Path
    metrics: list
    steps: list
    target: float

    @property
    def final(self) -> dict:
        return self.metrics[-1]


def _start_csv(path: Path, columns: list) -> None:
    with open(path, "w", newline="") as fh:
        csv.DictWriter(fh, fieldnames=columns).writeheader()


def _append_csv(path: Path, columns: list, rows: list) -> None:
    with open(path, "a", newline="") as fh:
        writer = csv.DictWriter(fh, fieldnames=columns)
        for row in rows:
            writer.writerow({k: _cell(row[k]) for k in columns})


def _cell(v):
    if isinstance(v, float):
        return repr(v)
    return v


def train(run: RunConfig, data: Dataset | None = None, log=None) -> TrainResult:
    """Train a network for ``run`` and write logs, checkpoint and architecture.

    Raises :class:`NumericError` when the loss or a gradient is non-finite;
    the checkpoint of the last completed epoch stays on disk.
    """
    out_dir = Path(run.output_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    (out_dir / "config.yaml").write_text(yaml.safe_dump(run.to_dict(), sort_keys=False))
    data = dataset_for(run) if data is None else data
    net = DNArchNetwork(network_config(run, data), run.seed)
    target = base_cost(net.config) if run.target_complexity == "auto" else float(run.target_complexity)
    names = list(net.params)
    leaves = [net.params[k] for k in names]
    opt = AdamW(net.params, run.betas, weight_decay=run.weight_decay,
                decay={k: not net.is_mask(k) for k in names})
    rng = np.random.default_rng(run.seed + 1)
    n_train = len(data.train)
    per_epoch = math.ceil(n_train / run.batch_size)
    total_steps, warmup = per_epoch * run.epochs, per_epoch * run.warmup_epochs
    mask_scale = (run.mask_lr / run.lr) if run.mask_lr is not None else 1.0
    extra = {"run": run.to_dict(), "target_complexity": target}
    ckpt = out_dir / "checkpoint.npz"
    save_checkpoint(ckpt, net, {**extra, "epoch": 0})
    _start_csv(out_dir / "steps.csv", STEP_COLUMNS)
    _start_csv(out_dir / "metrics.csv", METRIC_COLUMNS)

    steps, metrics, step = [], [], 0
    for epoch in range(1, run.epochs + 1):
        epoch_start = len(steps)
        order = rng.permutation(n_train)
        seen, loss_sum, correct = 0, 0.0, 0
        for start in range(0, n_train, run.batch_size):
            idx = order[start:start + run.batch_size]
            if len(idx) < 2:
                continue
            xb, yb = data.train.x[idx], data.train.y[idx]
            lr = learning_rate(step, total_steps, warmup, run.lr)
            out = net.forward(xb, train=True, rng=rng)
            l_obj = objective(out, yb, data.kind)
            est = network_cost(net, target, run.lam)
            l_comp = complexity_loss(est.total, target)
            loss = total_loss(l_obj, l_comp, run.lam)
            grads = ad.gradients(loss, leaves)
            if not np.isfinite(loss.data) or not all(np.all(np.isfinite(g)) for g in grads):
                raise NumericError(f"non-finite loss or gradient at step {step} (epoch {epoch}); "
                                   f"last good checkpoint: {ckpt}")
            opt.step(dict(zip(names, grads)),
                     {k: lr * (mask_scale if net.is_mask(k) else 1.0) for k in names})
            net.clamp_masks()
            outside = net.masks_out_of_bounds()
            if outside:
                raise RuntimeError(f"mask parameters left their bounds after clamping: {outside}")
            row = {"step": step, "epoch": epoch, "lr": lr, "l_obj": float(l_obj.data),
                   "l_comp": float(ad.as_tensor(l_comp).data), "rel_complexity": est.relative}
            steps.append(row)
            step += 1
            seen += len(idx)
            loss_sum += row["l_obj"] * len(idx)
            if data.kind == "classification":
                correct += int(np.sum(np.argmax(out.data, axis=1) == yb))

        val = evaluate(net, data.val, data.kind, run.eval_batch_size)
        with ad.no_grad():
            est = network_cost(net, target, run.lam)
            depth_size = float(ad.as_tensor(net.depth_size()).data)
        mrow = {"epoch": epoch, "step": step, "l_obj": steps[-1]["l_obj"], "l_comp": steps[-1]["l_comp"],
                "rel_complexity": est.relative, "train_loss": loss_sum / max(seen, 1),
                "train_acc": correct / max(seen, 1) if data.kind == "classification" else "",
                "val_loss": val["loss"], "val_acc": val.get("accuracy", ""), "depth_size": depth_size,
                **_arch_columns(net)}
        metrics.append(mrow)
        save_checkpoint(ckpt, net, {**extra, "epoch": epoch})
        _append_csv(out_dir / "steps.csv", STEP_COLUMNS, steps[epoch_start:])
        _append_csv(out_dir / "metrics.csv", METRIC_COLUMNS, [mrow])
        if log is not None:
            log(mrow)

    snap = snapshot(net)
    export_table(snap, "text", out_dir / "arch.txt")
    export_table(snap, "structured", out_dir / "arch.json")
    return TrainResult(net, run, out_dir, metrics, steps, target)


def evaluate_checkpoint(path, split: str = "test") -> dict:
    """Metrics of a saved checkpoint on a split of the dataset it was trained on."""
    net, meta = load_checkpoint(path)
    if "run" not in meta:
        raise ConfigError(f"{path}: checkpoint carries no run configuration")
    run = config_from_mapping(meta["run"])
    data = dataset_for(run)
    part = data.split(split)
    expected = (net.config.in_channels,) + net.config.spatial_shape
    if part.x.shape[1:] != expected:
        raise ConfigError(f"{path}: dataset samples of shape {part.x.shape[1:]} do not fit a network "
                          f"expecting {expected}")
    return evaluate(net, part, data.kind, run.eval_batch_size)
