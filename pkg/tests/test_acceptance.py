"""Acceptance checks on the desk-scale preset (N=20, k=5, R=50, three seeds).

Every simulated check goes through the same planning code as ``fedpoison
sweep --preset desk``: each repeat gets its own derived seeds and is
compared with the seed-matched run that has no malicious participants.
"""
import dataclasses
from functools import lru_cache

import numpy as np
import pytest

from fedpoison.defense import balanced_accuracy, pca2, standardize
from fedpoison.federation import aggregate
from fedpoison.harness import emit_config, execute, load_preset, plan, run_single
from fedpoison.metrics import (ConfusionMatrix, accuracy, baseline_miscount, class_recall,
                               consecutive_round_deltas, group_deltas, recalls, window_recall)
from fedpoison.model import Architecture, ParameterVector, gradient, mean_loss

SEEDS = 3
SOURCE, TARGET = 5, 3
pytestmark = pytest.mark.slow


def _desk(**fed_changes):
    cfg = load_preset("desk")
    assert cfg.repeats == SEEDS
    fed = dataclasses.replace(cfg.federation, **fed_changes)
    return dataclasses.replace(cfg, federation=fed)


@lru_cache(maxsize=None)
def _execute(config_text: str):
    from fedpoison.harness import parse_config
    return execute(parse_config(config_text))


def grid(sweep: dict, **fed_changes):
    """{cell coordinates: [(attacked outcome, baseline outcome) per repeat]}."""
    cfg = dataclasses.replace(_desk(**fed_changes), sweep=tuple((k, tuple(v)) for k, v in sweep.items()))
    jobs = plan(cfg)
    baselines = {j.directory: _execute(emit_config(j.config)) for j in jobs if j.cell == "baseline"}
    out: dict = {}
    for job in jobs:
        if job.cell != "baseline":
            out.setdefault(job.coords, []).append((_execute(emit_config(job.config)), baselines[job.baseline]))
    return out


def _final(outcome, c=SOURCE):
    return float(outcome.result.series.recall[-1][c])


# 1 -----------------------------------------------------------------------------------------

def _loss_longdouble(sizes, flat, x, y):
    """Independent dense ReLU/softmax cross-entropy in extended precision.

    Central differences at h=1e-5 in float64 carry ~1e-11 roundoff, which
    swamps coordinates whose true gradient is ~1e-9; the wider mantissa keeps
    the oracle honest there.
    """
    flat, a, pos = np.asarray(flat, dtype=np.longdouble), np.asarray(x, dtype=np.longdouble), 0
    for i, (n_in, n_out) in enumerate(zip(sizes, sizes[1:])):
        w = flat[pos:pos + n_out * n_in].reshape(n_out, n_in)
        pos += n_out * n_in
        z = a @ w.T + flat[pos:pos + n_out]
        pos += n_out
        a = np.maximum(z, 0) if i < len(sizes) - 2 else z
    z = a - a.max(axis=1, keepdims=True)
    logp = z - np.log(np.exp(z).sum(axis=1, keepdims=True))
    picked = np.maximum(np.exp(logp[np.arange(len(y)), y]), np.longdouble(1e-12))
    return -np.log(picked).mean()


def test_gradient_matches_finite_differences(record_criterion):
    rng = np.random.default_rng(2024)
    worst, cases, h = 0.0, 0, np.longdouble(1e-5)
    while cases < 20:
        sizes = [int(rng.integers(2, 8)) for _ in range(int(rng.integers(2, 5)))]
        arch = Architecture(tuple(sizes))
        if arch.n_params > 200:
            continue
        cases += 1
        params = ParameterVector(arch, rng.normal(size=arch.n_params))
        n = int(rng.integers(1, 9))
        x, y = rng.normal(size=(n, sizes[0])), rng.integers(sizes[-1], size=n)
        assert abs(float(_loss_longdouble(sizes, params.flat, x, y)) - mean_loss(params, x, y)) < 1e-12
        g = gradient(params, x, y)
        for i in range(arch.n_params):
            up = params.flat.astype(np.longdouble)
            down = up.copy()
            up[i] += h
            down[i] -= h
            fd = float((_loss_longdouble(sizes, up, x, y) - _loss_longdouble(sizes, down, x, y)) / (2 * h))
            scale = max(abs(g[i]), abs(fd))
            if scale > 0:
                worst = max(worst, abs(g[i] - fd) / scale)
    ok = worst <= 1e-4
    record_criterion(1, "gradient vs central differences", ok,
                     f"max relative error {worst:.2e} over {cases} nets (h=1e-5, limit 1e-4)")
    assert ok


# 2 -----------------------------------------------------------------------------------------

def test_fedavg_oracle(record_criterion):
    rng = np.random.default_rng(7)
    exact, identical = True, True
    for trial in range(50):
        k, d = int(rng.integers(1, 11)), int(rng.integers(1, 120))
        arch = Architecture((d, 2))
        vs = [ParameterVector(arch, rng.normal(scale=10.0 ** rng.integers(-3, 4), size=arch.n_params))
              for _ in range(k)]
        got = aggregate(vs).flat
        for j in range(arch.n_params):
            ref, acc = vs[0].flat[j], 0.0
            for v in vs:  # ids ascending
                acc += v.flat[j] - ref
            exact &= got[j] == ref + acc / k
        same = aggregate([vs[0]] * k).flat
        identical &= bool(np.array_equal(same, vs[0].flat))
    ok = exact and identical
    record_criterion(2, "FedAvg vs scalar loop", ok,
                     f"bit-exact loop agreement={exact}, identical-vector identity={identical}")
    assert ok


# 3 -----------------------------------------------------------------------------------------

def test_metric_oracles(record_criterion):
    rng = np.random.default_rng(3)
    exact, worst_identity = True, 0.0
    for _ in range(100):
        n = int(rng.integers(2, 11))
        counts = rng.integers(0, 60, size=(n, n))
        counts[np.arange(n), rng.integers(n, size=n)] += 1  # every class present
        cm = ConfusionMatrix(counts)
        total = sum(int(v) for v in counts.ravel())
        exact &= accuracy(cm) == 100.0 * sum(int(counts[i, i]) for i in range(n)) / total
        for c in range(n):
            exact &= class_recall(cm, c) == 100.0 * int(counts[c, c]) / sum(int(v) for v in counts[c])
            for j in range(n):
                if j != c:
                    exact &= baseline_miscount(cm, c, j) == int(counts[c, j])
        weighted = sum(counts[c].sum() / total * recalls(cm)[c] for c in range(n))
        worst_identity = max(worst_identity, abs(accuracy(cm) - weighted))
    ok = exact and worst_identity <= 1e-9
    record_criterion(3, "metric oracles", ok,
                     f"exact={exact}, max |acc - sum freq*recall| = {worst_identity:.1e}")
    assert ok


# 4 -----------------------------------------------------------------------------------------

def test_feasibility_trend(record_criterion):
    levels = (0, 10, 20, 40)
    cells = grid({"malicious_percent": levels}, attack_window=(1, 50))
    means = []
    for m in levels:
        runs = cells[(("malicious_percent", str(m)),)]
        means.append(np.mean([_final(a) for a, _ in runs]))
    loss40 = np.mean([_final(b) - _final(a) for a, b in cells[(("malicious_percent", "40"),)]])
    monotone = all(x >= y for x, y in zip(means, means[1:]))
    ok = monotone and loss40 >= 25
    record_criterion(4, "source recall falls as m grows", ok,
                     "mean final recall " + ", ".join(f"m={m}%: {v:.1f}" for m, v in zip(levels, means))
                     + f"; loss at 40% = {loss40:.1f} (need >= 25)")
    assert ok


# 5 -----------------------------------------------------------------------------------------

def test_targetedness(record_criterion):
    (runs,) = grid({"malicious_percent": (20,)}, attack_window=(1, 50)).values()
    drop = np.mean([_final(b) - _final(a) for a, b in runs])
    others = [c for c in range(10) if c not in (SOURCE, TARGET)]
    side = np.mean([np.abs(a.result.series.recall[-1][others] - b.result.series.recall[-1][others]).mean()
                    for a, b in runs])
    ok = drop >= 10 and side <= 3
    record_criterion(5, "attack is targeted", ok,
                     f"source drop {drop:.1f} (need >= 10), mean |delta| other classes {side:.2f} (need <= 3)")
    assert ok


# 6 -----------------------------------------------------------------------------------------

def test_early_window_recovery(record_criterion):
    (runs,) = grid({"malicious_percent": (20,)}, attack_window=(1, 25)).values()
    gaps = [abs(_final(a) - _final(b)) for a, b in runs]
    ok = max(gaps) <= 2
    record_criterion(6, "recovery after early poisoning", ok,
                     "per-seed |final recall - clean twin| = " + ", ".join(f"{g:.2f}" for g in gaps)
                     + " (limit 2)")
    assert ok


# 7 -----------------------------------------------------------------------------------------

def test_availability_monotone(record_criterion):
    window = (25, 50)
    cells = grid({"alpha": (None, 0.6, 0.9)}, attack_window=window)
    mean = {}
    for coords, runs in cells.items():
        mean[coords[0][1]] = np.mean([window_recall(a.result.series, SOURCE, window) for a, _ in runs])
    ok = mean["0.9"] <= mean["0.6"] <= mean["None"]
    record_criterion(7, "late-window damage grows with alpha", ok,
                     f"window-mean source recall alpha=0.9: {mean['0.9']:.2f} <= alpha=0.6: "
                     f"{mean['0.6']:.2f} <= uniform: {mean['None']:.2f}")
    assert ok


# 8 -----------------------------------------------------------------------------------------

def test_consecutive_delta_trend(record_criterion):
    window = (25, 50)
    (runs,) = grid({"alpha": (None,)}, attack_window=window).values()
    pairs = []
    for attacked, _ in runs:
        pairs += consecutive_round_deltas(attacked.result.series, SOURCE, start=window[0]).pairs
    means, sizes = group_deltas(pairs)
    keys = sorted(means)
    ok = all(means[a] >= means[b] for a, b in zip(keys, keys[1:]))
    record_criterion(8, "recall change vs change in malicious count", ok,
                     ", ".join(f"{dm:+d}: {means[dm]:+.1f} (n={sizes[dm]})" for dm in keys))
    assert ok


# 9 -----------------------------------------------------------------------------------------

def test_defense_separation(record_criterion):
    cells = grid({"malicious_percent": (10, 20)}, attack_window=(1, 50))
    scores, false_flags, honest_alarms = [], 0, 0
    for runs in cells.values():
        for attacked, clean in runs:
            res = attacked.result
            assert attacked.defense is not None
            scores.append(balanced_accuracy(attacked.defense.flagged, res.pool.malicious,
                                            range(res.config.n_participants)))
    honest = [clean for runs in cells.values() for _, clean in runs]
    honest = list({id(h): h for h in honest}.values())
    for clean in honest:
        false_flags += len(clean.defense.flagged)
        honest_alarms += clean.defense.attack_detected
    ok = min(scores) >= 0.9 and false_flags == 0 and honest_alarms == 0 and len(honest) == SEEDS
    record_criterion(9, "defense flags the malicious participants", ok,
                     f"balanced accuracy min {min(scores):.2f} over {len(scores)} attacked runs; "
                     f"{len(honest)} honest runs: {honest_alarms} alarms, {false_flags} false flags")
    assert ok


# 10 ----------------------------------------------------------------------------------------

def test_pca_and_standardize(record_criterion):
    rng = np.random.default_rng(10)
    ortho, var_rel, std_mean, std_var = 0.0, 0.0, 0.0, 0.0
    for _ in range(50):
        u = rng.normal(size=(50, 6)) * rng.uniform(0.1, 10, size=6)
        res = pca2(u)
        ortho = max(ortho, np.abs(res.components @ res.components.T - np.eye(2)).max())
        centered = u - u.mean(axis=0)
        evals = np.linalg.eigh(centered.T @ centered / u.shape[0])[0][::-1][:2]
        var_rel = max(var_rel, (np.abs(res.projected.var(axis=0) - evals) / evals).max())
        z = standardize(np.column_stack([u, np.full(50, 4.2)]))
        std_mean = max(std_mean, np.abs(z.mean(axis=0)).max())
        v = z.var(axis=0)
        std_var = max(std_var, np.abs(v[v != 0] - 1).max())
        assert v[-1] == 0
    ok = ortho <= 1e-8 and var_rel <= 1e-6 and std_mean < 1e-10 and std_var <= 1e-10
    record_criterion(10, "PCA and standardization", ok,
                     f"orthonormality {ortho:.1e}, variance rel err {var_rel:.1e}, "
                     f"column mean {std_mean:.1e}, |var-1| {std_var:.1e}")
    assert ok


# 11 ----------------------------------------------------------------------------------------

def test_end_to_end_determinism(record_criterion, tmp_path):
    cfg = dataclasses.replace(_desk(alpha=0.8), name="determinism")
    a = run_single(cfg, tmp_path / "a")
    b = run_single(cfg, tmp_path / "b")
    same = {name: (a.path / name).read_bytes() == (b.path / name).read_bytes()
            for name in ("rounds.csv", "defense.csv", "blacklist.txt", "final_params.txt")}
    ok = all(same.values())
    record_criterion(11, "byte-identical reruns", ok,
                     ", ".join(f"{k}: {'same' if v else 'DIFFERENT'}" for k, v in same.items()))
    assert ok
