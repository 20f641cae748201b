#!/usr/bin/env python3
"""Drive every pinned benchmark config (multi-seed sweeps).

This is the full reproduction workload: hours of CPU.  Pass config names to
run a subset, e.g.  `python scripts/run_all_experiments.py chirp poisson`.
"""

import os
import sys
import time

sys.path.insert(0, os.path.join(os.path.dirname(__file__), "..", "src"))

from abpinn.config import load_config
from abpinn.experiment import run_experiment

CONFIG_DIR = os.path.join(os.path.dirname(__file__), "..", "configs")
ALL = [
    "chirp",
    "sine",
    "chirp-window-study",
    "advection",
    "helmholtz-local",
    "helmholtz-addition",
    "poisson",
    "allen-cahn",
    "kdv",
]


def main(names):
    for name in names or ALL:
        cfg = load_config(os.path.join(CONFIG_DIR, f"{name}.cfg"))
        t0 = time.time()
        print(f"== {name} ({len(cfg.seeds)} seeds) ==", flush=True)
        rows = run_experiment(cfg)
        best = min(
            (r for r in rows if not r["diverged"]),
            key=lambda r: r["final_residual"],
            default=None,
        )
        took = (time.time() - t0) / 60
        if best is None:
            print(f"   all seeds diverged ({took:.1f} min)")
        else:
            print(
                f"   best seed {best['seed']}: final_l2={best['final_l2']:.4g} "
                f"final_residual={best['final_residual']:.4g} ({took:.1f} min)"
            )


if __name__ == "__main__":
    main(sys.argv[1:])
