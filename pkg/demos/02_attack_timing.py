"""Does it matter when the attackers are active?

Same desk preset at m=20%, but poisoning is confined to the first half of
training, the second half, or runs throughout. Poison applied early is washed
out by later honest rounds; poison applied late is what the final model keeps.
"""
import dataclasses

import numpy as np

from fedpoison.harness import execute, load_preset, plan

config = load_preset("timing")
source = config.federation.source_class
jobs = plan(config)
baselines = {j.directory: execute(j.config) for j in jobs if j.cell == "baseline"}

gaps: dict[str, list[float]] = {}
for job in jobs:
    if job.cell == "baseline":
        continue
    attacked = execute(job.config).result.series
    clean = baselines[job.baseline].result.series
    window = job.config.federation.attack_window
    gaps.setdefault(f"{job.cell} {window}", []).append(
        float(clean.recall[-1][source] - attacked.recall[-1][source]))

print(f"final source-recall gap to the clean twin (class {source}, points)")
for cell, values in gaps.items():
    print(f"  {cell:>36}: mean {np.mean(values):6.2f}  per seed "
          + ", ".join(f"{v:.1f}" for v in values))
