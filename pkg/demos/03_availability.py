"""What if malicious participants get picked more often than chance?

With alpha set, each round slot goes to an available malicious participant
with probability alpha. Only the late window is attacked here, and the
damage is read as the mean source recall over that window.
"""
import numpy as np

from fedpoison.harness import execute, load_preset, plan
from fedpoison.metrics import consecutive_round_deltas, group_deltas, window_recall

config = load_preset("availability")
source = config.federation.source_class
by_alpha: dict[str, list] = {}
for job in plan(config):
    if job.cell != "baseline":
        by_alpha.setdefault(str(job.config.federation.alpha), []).append(execute(job.config))

print("window-mean source recall and malicious slots per round")
for alpha, outcomes in by_alpha.items():
    window = outcomes[0].config.federation.attack_window
    recall = np.mean([window_recall(o.result.series, source, window) for o in outcomes])
    slots = np.mean([np.mean(o.result.series.malicious_selected[window[0] - 1:]) for o in outcomes])
    print(f"  alpha={alpha:>7}: recall {recall:6.2f}  malicious per round {slots:.2f}")

# Round-to-round view under uniform selection: when one more malicious
# participant is picked than last round, source recall drops, and vice versa.
pairs = []
for o in by_alpha["None"]:
    pairs += consecutive_round_deltas(o.result.series, source, o.config.federation.attack_window[0]).pairs
means, sizes = group_deltas(pairs)
print("\nchange in malicious count -> mean change in source recall (uniform selection)")
for dm in sorted(means):
    print(f"  {dm:+d}: {means[dm]:+6.1f} points over {sizes[dm]} round pairs")
