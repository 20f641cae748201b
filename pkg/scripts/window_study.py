#!/usr/bin/env python3
"""Window-shape study: train the two-sided chirp with each of the four
reference window shapes, as an adaptive-basis model and as its static
(fbpinn) twin, and report final losses.

Roughly 8 x the chirp-window-study config's runtime.
"""

import os
import sys
import time

sys.path.insert(0, os.path.join(os.path.dirname(__file__), "..", "src"))

from abpinn.config import load_config, dumps, loads
from abpinn.experiment import run_experiment

CONFIG = os.path.join(os.path.dirname(__file__), "..", "configs",
                      "chirp-window-study.cfg")
WINDOWS = ("gauss", "quartic", "sigmoid_product", "sigmoid_radial")


def main():
    base = dumps(load_config(CONFIG))
    for window in WINDOWS:
        for mode in ("abpinn", "fbpinn"):
            text = base.replace("window = gauss", f"window = {window}")
            text = text.replace("mode = abpinn", f"mode = {mode}")
            text = text.replace(
                "directory = runs/chirp-window-study",
                f"directory = runs/window-study/{window}-{mode}",
            )
            cfg = loads(text)
            t0 = time.time()
            rows = run_experiment(cfg)
            r = rows[0]
            print(
                f"{window:16s} {mode:7s}: final_residual={r['final_residual']:.4g} "
                f"final_l2={r['final_l2']:.4g} ({(time.time() - t0) / 60:.1f} min)",
                flush=True,
            )


if __name__ == "__main__":
    main()
