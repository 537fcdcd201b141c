"""Summary tables derived from run directories.

Everything here reads the files written by :mod:`fedpoison.harness.runs`, so
``fedpoison report`` regenerates the same tables from disk that a sweep
writes at the end.
"""
from __future__ import annotations

import csv
import os
from collections import OrderedDict, defaultdict
from pathlib import Path
from typing import Sequence

import numpy as np

from ..metrics import (baseline_miscount, consecutive_round_deltas, group_deltas, recall_loss,
                       recall_shift_triple, window_recall)
from .config import ExperimentConfig, parse_config
from .runs import RunArtifact, load_run


def _fmt(x) -> str:
    if isinstance(x, (int, np.integer)):
        return str(int(x))
    if x is None or (isinstance(x, float) and np.isnan(x)):
        return "nan"
    return format(float(x), ".6f")


def _mean_std(values: Sequence[float]) -> tuple[float, float]:
    arr = np.asarray(values, dtype=float)
    if arr.size == 0:
        return float("nan"), float("nan")
    std = float(arr.std(ddof=1)) if arr.size > 1 else 0.0
    return float(arr.mean()), std


def _write(path: Path, header, rows) -> Path:
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(header)
        for row in rows:
            w.writerow([v if isinstance(v, str) else _fmt(v) for v in row])
    return path


class PairedRun:
    """An attacked run together with its seed-matched clean baseline."""

    def __init__(self, run: RunArtifact, baseline: RunArtifact | None):
        self.run = run
        self.baseline = baseline
        fed = run.config.federation
        self.source, self.target = fed.source_class, fed.target_class
        self.window = fed.attack_window

    @property
    def cell(self) -> str:
        return self.run.summary.get("cell", self.run.path.name)

    @property
    def coords(self) -> "OrderedDict[str, str]":
        return OrderedDict((k[len("coord."):], v) for k, v in self.run.summary.items()
                           if k.startswith("coord."))

    def eval_window(self) -> tuple[int, int]:
        return self.window or (1, len(self.run.series))

    def loss(self, reduction: str) -> float:
        if self.baseline is None:
            return float("nan")
        window = None if reduction == "final" else self.eval_window()
        return recall_loss(self.baseline.series, self.run.series, self.source, window)


def _coord_key(value: str):
    try:
        return (0, float(value), "")
    except ValueError:
        return (1, 0.0, value)


def _order(pair: "PairedRun"):
    return (tuple((k, _coord_key(v)) for k, v in pair.coords.items()),
            pair.cell, int(pair.run.summary.get("repeat", 0)), str(pair.run.path))


def load_pairs(run_dirs: Sequence[str | os.PathLike]) -> list[PairedRun]:
    """Load runs with their baselines, ordered numerically by sweep coordinates."""
    pairs = []
    cache: dict[Path, RunArtifact] = {}
    for d in run_dirs:
        run = load_run(d)
        base = None
        rel = run.summary.get("baseline")
        if rel:
            bpath = (Path(d) / rel).resolve()
            if bpath not in cache:
                cache[bpath] = load_run(bpath)
            base = cache[bpath]
        pairs.append(PairedRun(run, base))
    return sorted(pairs, key=_order)


def _by_cell(pairs: list[PairedRun]) -> "OrderedDict[str, list[PairedRun]]":
    cells: OrderedDict[str, list[PairedRun]] = OrderedDict()
    for p in pairs:
        cells.setdefault(p.cell, []).append(p)
    return cells


def summary_table(pairs: list[PairedRun]):
    """Mean and standard deviation of the headline metrics per cell."""
    metrics = ("final_accuracy", "final_source_recall", "window_source_recall",
               "recall_loss_final", "recall_loss_window", "balanced_accuracy")
    header = ["cell", "repeats"] + [f"{m}_{s}" for m in metrics for s in ("mean", "std")]
    rows = []
    for cell, group in _by_cell(pairs).items():
        values = defaultdict(list)
        for p in group:
            s = p.run.series
            values["final_accuracy"].append(s.accuracy[-1])
            values["final_source_recall"].append(s.recall[-1][p.source])
            values["window_source_recall"].append(window_recall(s, p.source, p.eval_window()))
            values["recall_loss_final"].append(p.loss("final"))
            values["recall_loss_window"].append(p.loss("window"))
            if "balanced_accuracy" in p.run.summary:
                values["balanced_accuracy"].append(float(p.run.summary["balanced_accuracy"]))
        row = [cell, len(group)]
        for m in metrics:
            row.extend(_mean_std(values[m]))
        rows.append(row)
    return header, rows


def recall_loss_grid(pairs: list[PairedRun], reduction: str = "final"):
    """Source-recall loss per (class pair, other coordinates) row and m% column."""
    columns = sorted({p.run.config.federation.malicious_percent for p in pairs})
    grid: OrderedDict = OrderedDict()
    for p in pairs:
        others = tuple((k, v) for k, v in p.coords.items() if k != "malicious_percent")
        key = (p.source, p.target, others)
        cell = grid.setdefault(key, {"mcnt": [], "loss": defaultdict(list)})
        cell["loss"][p.run.config.federation.malicious_percent].append(p.loss(reduction))
        if p.baseline is not None:
            cell["mcnt"].append(baseline_miscount(p.baseline.confusion, p.source, p.target))
    header = ["source", "target", "setting", "m_cnt"] + [f"m={m:g}" for m in columns]
    rows = []
    for (src, tgt, others), cell in grid.items():
        setting = " ".join(f"{k}={v}" for k, v in others) or "-"
        mcnt = float(np.mean(cell["mcnt"])) if cell["mcnt"] else float("nan")
        rows.append([src, tgt, setting, mcnt]
                    + [float(np.mean(cell["loss"][m])) if cell["loss"][m] else float("nan")
                       for m in columns])
    return header, rows


def recall_shift_table(pairs: list[PairedRun]):
    """Final-round recall change of source, target and all remaining classes."""
    header = ["cell", "source", "target", "delta_source_recall", "delta_target_recall",
              "sum_other_delta_recall", "mean_abs_other_delta_recall"]
    rows = []
    for cell, group in _by_cell(pairs).items():
        acc = []
        for p in group:
            if p.baseline is None:
                continue
            base, att = p.baseline.series.recall[-1], p.run.series.recall[-1]
            d_src, d_tgt, d_other = recall_shift_triple(base, att, p.source, p.target)
            others = [c for c in range(len(base)) if c not in (p.source, p.target)]
            acc.append((d_src, d_tgt, d_other, float(np.mean(np.abs((att - base)[others])))))
        if acc:
            means = np.mean(np.array(acc), axis=0)
            rows.append([cell, group[0].source, group[0].target, *means])
    return header, rows


def final_round_table(pairs: list[PairedRun]):
    """Final source recall split by whether any malicious participant was in the last round."""
    header = ["cell", "recall_with_malicious", "runs_with_malicious",
              "recall_without_malicious", "runs_without_malicious"]

    def split(group):
        yes = [p.run.series.recall[-1][p.source] for p in group if p.run.series.malicious_selected[-1] > 0]
        no = [p.run.series.recall[-1][p.source] for p in group if p.run.series.malicious_selected[-1] == 0]
        return [float(np.mean(yes)) if yes else float("nan"), len(yes),
                float(np.mean(no)) if no else float("nan"), len(no)]

    rows = [[cell, *split(group)] for cell, group in _by_cell(pairs).items()]
    rows.append(["all", *split(pairs)])
    return header, rows


def consecutive_table(pairs: list[PairedRun]):
    """Mean round-to-round source recall change per change in malicious count."""
    header = ["cell", "delta_malicious", "mean_delta_source_recall", "count"]
    rows = []
    for cell, group in _by_cell(pairs).items():
        collected = []
        for p in group:
            start = p.window[0] if p.window else 1
            if len(p.run.series) - max(start - 1, 1) >= 1:
                collected += consecutive_round_deltas(p.run.series, p.source, start).pairs
        if not collected:
            continue
        means, sizes = group_deltas(collected)
        rows += [[cell, dm, means[dm], sizes[dm]] for dm in means]
    return header, rows


def defense_table(pairs: list[PairedRun]):
    header = ["cell", "repeat", "attack_detected", "flagged", "malicious", "balanced_accuracy",
              "separation"]
    rows = []
    for p in pairs:
        s = p.run.summary
        if "attack_detected" not in s:
            continue
        rows.append([p.cell, s.get("repeat", "0"), s["attack_detected"], s.get("flagged", ""),
                     s.get("malicious", ""), float(s["balanced_accuracy"]), float(s["separation"])])
    return header, rows


def export_report(run_dirs: Sequence[str | os.PathLike], out_dir: str | os.PathLike,
                  config: ExperimentConfig | None = None) -> dict[str, Path]:
    """Write all summary tables for the given attacked run directories."""
    if not run_dirs:
        raise ValueError("no runs to report on")
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    if config is None and (out / "experiment.ini").exists():
        config = parse_config((out / "experiment.ini").read_text())
    reduction = config.recall_window if config is not None else "final"
    pairs = load_pairs(run_dirs)
    tables = {
        "summary": summary_table(pairs),
        "recall_loss": recall_loss_grid(pairs, reduction),
        "recall_shift": recall_shift_table(pairs),
        "final_round": final_round_table(pairs),
        "consecutive_deltas": consecutive_table(pairs),
        "defense": defense_table(pairs),
    }
    return {name: _write(out / f"{name}.csv", *table) for name, table in tables.items()}


def find_runs(root: str | os.PathLike) -> list[Path]:
    """Attacked run directories below ``root`` (those that name a baseline or a cell)."""
    found = []
    for summary in sorted(Path(root).rglob("summary.txt")):
        kv = summary.read_text()
        if "cell = baseline" in kv:
            continue
        found.append(summary.parent)
    return found
