"""Command line entry point: ``dnarch <command> ...``.

Exit codes: 0 success, 1 configuration or input error, 2 numeric failure.
"""
from __future__ import annotations

import argparse
import json
import sys

from .complexity import network_cost
from .data import DatasetFormatError
from .export import export_table, snapshot
from .network import DNArchNetwork, load_checkpoint
from .training import (ConfigError, NumericError, dataset_for, evaluate_checkpoint, load_config,
                       network_config, train)

EXIT_OK, EXIT_CONFIG, EXIT_NUMERIC = 0, 1, 2


def _cmd_train(args) -> int:
    run = load_config(args.config)
    if args.output_dir:
        run.output_dir = args.output_dir

    def log(row):
        acc = f" val_acc={row['val_acc']:.4f}" if row["val_acc"] != "" else ""
        print(f"epoch {row['epoch']:3d}  loss={row['train_loss']:.4f}  val_loss={row['val_loss']:.4f}{acc}"
              f"  rel_complexity={row['rel_complexity']:.3f}  depth={row['depth']}  kernel={row['kernel']}",
              flush=True)

    result = train(run, log=None if args.quiet else log)
    print(f"wrote {result.output_dir}/checkpoint.npz, metrics.csv, steps.csv, arch.txt, arch.json")
    print((result.output_dir / "arch.txt").read_text(), end="")
    return EXIT_OK


def _cmd_eval(args) -> int:
    print(json.dumps(evaluate_checkpoint(args.checkpoint, args.split)))
    return EXIT_OK


def _cmd_export(args) -> int:
    net, _ = load_checkpoint(args.checkpoint)
    text = export_table(snapshot(net), args.format, args.output)
    if args.output is None:
        print(text, end="")
    return EXIT_OK


def _cmd_check_grads(args) -> int:
    from .gradcheck import gradient_suite

    run = load_config(args.config)
    data = dataset_for(run)
    net = DNArchNetwork(network_config(run, data), run.seed)
    n = min(args.samples, len(data.train))
    results = gradient_suite(net, data.train.x[:n], data.train.y[:n], data.kind, run.lam or 0.1,
                             seed=run.seed)
    failed = 0
    for label, rep in results:
        status = "ok  " if rep.passed else "FAIL"
        failed += not rep.passed
        print(f"{status} {label:45s} max rel err {rep.max_rel_error:.2e}")
    print(f"{len(results) - failed}/{len(results)} gradient checks passed")
    return EXIT_OK if failed == 0 else EXIT_NUMERIC


def _cmd_complexity(args) -> int:
    run = load_config(args.config)
    data = dataset_for(run)
    net = DNArchNetwork(network_config(run, data), run.seed)
    target = None if run.target_complexity == "auto" else float(run.target_complexity)
    est = network_cost(net, target, run.lam)
    for name, value in est.breakdown.items():
        print(f"{name:10s} {value:16.1f}")
    print(f"{'total':10s} {est.value:16.1f}")
    print(f"{'target':10s} {est.target:16.1f}")
    print(f"relative complexity {est.relative:.4f}")
    return EXIT_OK


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="dnarch", description=__doc__.splitlines()[0])
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("train", help="train from a YAML config")
    p.add_argument("config")
    p.add_argument("--output-dir", help="override output_dir from the config")
    p.add_argument("--quiet", action="store_true", help="no per-epoch progress lines")
    p.set_defaults(func=_cmd_train)

    p = sub.add_parser("eval", help="evaluate a checkpoint on a dataset split")
    p.add_argument("checkpoint")
    p.add_argument("split", choices=["train", "val", "test"])
    p.set_defaults(func=_cmd_eval)

    p = sub.add_parser("export-arch", help="print or write the learned architecture")
    p.add_argument("checkpoint")
    p.add_argument("--format", choices=["text", "structured"], default="text")
    p.add_argument("--output", help="file to write instead of stdout")
    p.set_defaults(func=_cmd_export)

    p = sub.add_parser("check-grads", help="finite-difference gradient checks for a config")
    p.add_argument("config")
    p.add_argument("--samples", type=int, default=16, help="training samples in the check batch")
    p.set_defaults(func=_cmd_check_grads)

    p = sub.add_parser("complexity", help="operation-count breakdown of the initial network")
    p.add_argument("config")
    p.set_defaults(func=_cmd_complexity)
    return parser


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    try:
        return args.func(args)
    except NumericError as exc:
        print(f"numeric failure: {exc}", file=sys.stderr)
        return EXIT_NUMERIC
    except (ConfigError, DatasetFormatError, FileNotFoundError, ValueError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_CONFIG


if __name__ == "__main__":
    sys.exit(main())
