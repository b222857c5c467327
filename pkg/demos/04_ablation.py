"""Reproduce the ablation ordering on the synthetic benchmark.

Run:  python3 demos/04_ablation.py [seeds]

Each variant is trained from scratch for the same number of steps on the
same 5000 lines (20% vertical), once per seed.  The medians show what
rotating vertical lines buys over a plain recognizer, and what the
disentangling losses add on top.  Expect about 4 minutes per run on one
core; three variants and three seeds take roughly 40 minutes.
"""
import logging
import sys

from ostr.ablation import benchmark_data, medians, run_ablation
from ostr.config import RunConfig

logging.basicConfig(level=logging.INFO, format="%(asctime)s %(message)s")
seeds = range(int(sys.argv[1]) if len(sys.argv) > 1 else 3)
config = RunConfig()
runs = run_ablation(config, ("base", "rotation", "full"), seeds, data=benchmark_data(config), keep_models=())

test, vertical = medians(runs), medians(runs, "vertical")
print("variant\tmedian test ACC\tmedian vertical-only ACC")
for v in ("base", "rotation", "full"):
    print(f"{v}\t{test[v]:.4f}\t{vertical[v]:.4f}")
