"""Spotting malicious participants from their uploads.

For every upload we take the change to the source class output node (its
incoming weights and bias), standardize, project onto two principal
components and split into two clusters. The smaller cluster is flagged when
the clusters are well separated.
"""
import numpy as np

from fedpoison.defense import balanced_accuracy, evaluate_updates
from fedpoison.harness import execute, load_preset

config = load_preset("desk")
outcome = execute(config)
result = outcome.result
malicious = set(result.pool.malicious)
report = outcome.defense

print(f"designated malicious: {sorted(malicious)}")
print(f"flagged:              {sorted(report.flagged)}")
print(f"attack detected: {report.attack_detected}, separation ratio {report.separation:.2f}")
print(f"balanced accuracy: {balanced_accuracy(report.flagged, malicious, range(len(result.pool.ids))):.2f}")

# The same pipeline against the previous global model instead of the current one.
previous = evaluate_updates((config.defense_start, config.federation.rounds), result,
                            config.federation.source_class, reference="previous")
print(f"\nreference=previous flags {sorted(previous.flagged)}")

# Without knowing the source class, try each class in turn. The flipped pair
# lights up; classes the attack never touched stay quiet.
sweep = evaluate_updates((config.defense_start, config.federation.rounds), result, None)
print("\nper-class sweep (class: detected, separation)")
for c, rep in sweep.reports.items():
    print(f"  {c}: {str(rep.attack_detected):>5}  {rep.separation:5.2f}  flagged {sorted(rep.flagged)}")

# The 2-D coordinates are kept, so a plot is one scatter call away.
coords = np.array([row[2:4] for row in report.rows()])
print(f"\n{len(coords)} fingerprints projected, pc1 range {coords[:, 0].min():.2f}..{coords[:, 0].max():.2f}")
