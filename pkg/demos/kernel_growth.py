"""Watch a kernel mask widen until it covers a long-range dependency.

The lagged-product label depends on two input positions 24 steps apart.
Starting from a 3-tap kernel with only the kernel mask learned, the
network has to grow its kernels before it can solve the task.  Per-epoch
kernel sizes and validation accuracy are printed as training goes.

    python3 demos/kernel_growth.py          # about 20 seconds
"""
from pathlib import Path

from dnarch.export import export_table, snapshot
from dnarch.training import load_config, train

run = load_config(Path(__file__).with_name("kernel_growth.yaml"))
result = train(run)

print(f"{'epoch':>5} {'kernels':>12} {'val_acc':>8}")
for row in result.metrics:
    print(f"{row['epoch']:>5} {row['kernel']:>12} {row['val_acc']:>8.3f}")
print()
print(export_table(snapshot(result.net)))
print(f"outputs in {result.output_dir}")
