"""Learn all four architecture axes while holding a complexity budget.

With kernel, resolution, width and depth masks all learnable and the
complexity penalty switched on, the relative cost C/C_target is pulled
towards 1 after warm-up.  The script prints how that ratio evolves and
the final trimmed architecture.

    python3 demos/budget_tracking.py        # about a minute
"""
from pathlib import Path

import numpy as np

from dnarch.complexity import arch_cost
from dnarch.export import export_table, snapshot, trim
from dnarch.training import load_config, train

run = load_config(Path(__file__).with_name("budget.yaml"))
result = train(run)

ratio = np.array([float(r["rel_complexity"]) for r in result.steps])
print(f"target cost {result.target:.0f} operations")
for row in result.metrics[::5] + [result.metrics[-1]]:
    print(f"epoch {row['epoch']:>3}: C/C_target {float(row['rel_complexity']):.3f}, "
          f"depth {row['depth']}, val_acc {row['val_acc']:.3f}")

warm = run.warmup_epochs * len(ratio) // run.epochs
tail = ratio[warm:]
print(f"after warm-up: ratio in [{tail.min():.3f}, {tail.max():.3f}], "
      f"{np.mean(np.abs(tail - 1) <= 0.25):.0%} of steps within 25%")

trimmed = trim(result.net)
print(f"trimmed cost / target: {arch_cost(result.net.config, snapshot(trimmed)) / result.target:.3f}")
print(export_table(snapshot(trimmed)))
