"""How much does label flipping hurt as more participants turn malicious?

Runs the desk-scale preset (20 participants, 5 per round, 50 rounds, three
seeds) for a few malicious percentages, writes the usual run directories and
report tables to a temporary folder, and prints the recall-loss grid.
"""
import csv
import dataclasses
import tempfile
from pathlib import Path

from fedpoison.harness import load_preset, run_experiment

# Start from the desk preset and sweep the malicious percentage. Every cell
# reuses the same per-repeat seeds, so differences come from m alone.
config = load_preset("desk")
config = dataclasses.replace(config, name="feasibility-demo",
                             sweep=(("malicious_percent", (0, 10, 20, 40)),))

out = Path(tempfile.mkdtemp(prefix="fedpoison-feasibility-"))
runs, tables = run_experiment(config, out)
print(f"{len(runs)} attacked runs written under {out}")

# recall_loss.csv has one row per (source, target) pair and one column per m:
# clean-twin source recall minus attacked source recall, in points.
with open(tables["recall_loss"]) as fh:
    rows = list(csv.reader(fh))
print("\nrecall loss (points, mean over repeats)")
for row in rows:
    print("  " + "  ".join(f"{cell:>10}" for cell in row))

# The summary table holds the raw final recalls behind those differences.
with open(tables["summary"]) as fh:
    for row in csv.DictReader(fh):
        print(f"  {row['cell']:>24}: final source recall {float(row['final_source_recall_mean']):6.2f}")
