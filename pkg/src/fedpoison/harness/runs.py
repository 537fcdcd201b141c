"""Executing runs and sweeps, and reading/writing run directories.

A run directory holds::

    config.ini        full config snapshot (re-runnable as is)
    seeds.txt         seed manifest
    rounds.csv        per-round selection, malicious count, accuracy, recalls
    confusion.csv     final-round confusion matrix
    final_params.txt  final global parameters, one value per line
    globals.csv       global parameters after every round (round 0 = initial)
    updates.csv       every participant upload
    defense.csv       2-D coordinates, clusters and flags (if the defense ran)
    blacklist.txt     flagged participant ids (if the defense ran)
    summary.txt       key = value digest of the run
"""
from __future__ import annotations

import csv
import dataclasses
import itertools
import logging
import os
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass, field
from pathlib import Path
from typing import Any

import numpy as np

from ..defense import DefenseReport, balanced_accuracy, evaluate_updates
from ..federation import ConfigError, FederationConfig, RunResult, run_training
from ..metrics import ConfusionMatrix, MetricsSeries, confusion, window_recall
from ..model import Architecture, ParameterVector, dump_params
from .config import (DataConfig, ExperimentConfig, SEED_FIELDS, cell_data, cell_federation,
                     emit_config, format_window, parse_config)

log = logging.getLogger(__name__)


class ExperimentError(RuntimeError):
    """A sweep cell failed; the message names the cell."""


def _fmt(x: float) -> str:
    return repr(float(x))


def read_kv(path: Path) -> dict[str, str]:
    out = {}
    for line in Path(path).read_text().splitlines():
        if "=" in line and not line.lstrip().startswith("#"):
            key, value = line.split("=", 1)
            out[key.strip()] = value.strip()
    return out


def write_kv(path: Path, items: dict[str, Any]) -> None:
    Path(path).write_text("".join(f"{k} = {v}\n" for k, v in items.items()))


@dataclass
class RunOutcome:
    config: ExperimentConfig
    result: RunResult
    defense: DefenseReport | None
    final_confusion: ConfusionMatrix
    path: Path | None = None


def defense_rounds(config: ExperimentConfig) -> tuple[int, int]:
    return (min(config.defense_start, config.federation.rounds), config.federation.rounds)


def execute(config: ExperimentConfig) -> RunOutcome:
    """Train one federation and, if enabled, run the defense on its uploads."""
    fed = config.federation
    train, test = config.data.load((fed.source_class, fed.target_class))
    result = run_training(fed, train, test)
    report = None
    if config.defense:
        report = evaluate_updates(defense_rounds(config), result, fed.source_class,
                                  tau_sep=config.tau_sep, reference=config.defense_reference)
    return RunOutcome(config, result, report, confusion(result.final_params, test))


def _write_matrix(path: Path, header: list[str], rows) -> None:
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(header)
        w.writerows(rows)


def write_run(outcome: RunOutcome, path: str | os.PathLike, extra: dict[str, Any] | None = None) -> Path:
    path = Path(path)
    path.mkdir(parents=True, exist_ok=True)
    cfg, res = outcome.config, outcome.result
    fed = cfg.federation
    (path / "config.ini").write_text(emit_config(cfg))
    seeds = {name: getattr(fed, name) for name in SEED_FIELDS}
    seeds.update(train_seed=cfg.data.train_seed, test_seed=cfg.data.test_seed,
                 experiment_seed=cfg.seed)
    write_kv(path / "seeds.txt", seeds)

    n_classes = res.arch.n_classes
    _write_matrix(path / "rounds.csv",
                  ["round", "selected", "malicious_selected", "params_hash", "accuracy",
                   *(f"recall_{c}" for c in range(n_classes))],
                  ([rec.round, " ".join(map(str, rec.selected)), rec.malicious_selected,
                    rec.params_hash, _fmt(rec.accuracy), *(_fmt(v) for v in rec.recall)]
                   for rec in res.records))
    _write_matrix(path / "confusion.csv", [f"pred_{c}" for c in range(n_classes)],
                  outcome.final_confusion.counts.tolist())
    dump_params(res.final_params, path / "final_params.txt")
    _write_matrix(path / "globals.csv", ["round", *(f"p{i}" for i in range(len(res.final_params)))],
                  ([r, *(_fmt(v) for v in theta.flat)] for r, theta in enumerate(res.history)))
    _write_matrix(path / "updates.csv",
                  ["round", "participant", *(f"p{i}" for i in range(len(res.final_params)))],
                  ([r, pid, *(_fmt(v) for v in res.updates[(r, pid)].flat)]
                   for r, pid in sorted(res.updates)))

    summary: dict[str, Any] = dict(extra or {})
    src = fed.source_class
    window = fed.attack_window or (1, fed.rounds)
    summary.update(
        layer_sizes=" ".join(map(str, res.arch.layer_sizes)),
        malicious=" ".join(map(str, res.pool.malicious)),
        attack_window=format_window(fed.attack_window),
        final_accuracy=_fmt(res.series.accuracy[-1]),
        final_source_recall=_fmt(res.series.recall[-1][src]),
        window_source_recall=_fmt(window_recall(res.series, src, window)),
        final_round_malicious=res.series.malicious_selected[-1],
    )
    if outcome.defense is not None:
        write_defense(outcome.defense, path)
        summary.update(
            defense_rounds="{}-{}".format(*defense_rounds(cfg)),
            attack_detected=str(outcome.defense.attack_detected).lower(),
            flagged=" ".join(map(str, sorted(outcome.defense.flagged))),
            separation=_fmt(outcome.defense.separation),
            balanced_accuracy=_fmt(balanced_accuracy(outcome.defense.flagged, res.pool.malicious,
                                                     range(fed.n_participants))),
        )
    write_kv(path / "summary.txt", summary)
    outcome.path = path
    return path


def write_defense(report: DefenseReport, path: Path, suffix: str = "") -> None:
    _write_matrix(path / f"defense{suffix}.csv",
                  ["participant", "round", "pc1", "pc2", "cluster", "flagged"],
                  ([pid, r, _fmt(x), _fmt(y), c, int(f)] for pid, r, x, y, c, f in report.rows()))
    (path / f"blacklist{suffix}.txt").write_text("".join(f"{p}\n" for p in sorted(report.flagged)))


def read_blacklist(path: str | os.PathLike) -> tuple[int, ...]:
    text = Path(path).read_text()
    return tuple(int(tok) for tok in text.replace(",", " ").split())


@dataclass
class RunArtifact:
    """A completed run read back from disk."""

    path: Path
    config: ExperimentConfig
    series: MetricsSeries
    selected: list[tuple[int, ...]]
    confusion: ConfusionMatrix
    summary: dict[str, str]

    @property
    def malicious(self) -> tuple[int, ...]:
        return tuple(int(t) for t in self.summary.get("malicious", "").split())


def load_run(path: str | os.PathLike) -> RunArtifact:
    path = Path(path)
    config = parse_config((path / "config.ini").read_text())
    series = MetricsSeries()
    selected = []
    with open(path / "rounds.csv", newline="") as fh:
        reader = csv.reader(fh)
        header = next(reader)
        n_rec = sum(h.startswith("recall_") for h in header)
        for row in reader:
            selected.append(tuple(int(t) for t in row[1].split()))
            series.accuracy.append(float(row[4]))
            series.recall.append(np.array([float(v) for v in row[5:5 + n_rec]]))
            series.malicious_selected.append(int(row[2]))
    counts = np.loadtxt(path / "confusion.csv", delimiter=",", skiprows=1, dtype=np.int64, ndmin=2)
    return RunArtifact(path, config, series, selected, ConfusionMatrix(counts),
                       read_kv(path / "summary.txt"))


@dataclass
class RecordedRun:
    """Global parameter history and uploads of a run, as needed by the defense."""

    history: list[ParameterVector]
    updates: dict[tuple[int, int], ParameterVector]
    malicious: tuple[int, ...] = ()
    n_participants: int = 0


def load_recorded(path: str | os.PathLike) -> RecordedRun:
    path = Path(path)
    summary = read_kv(path / "summary.txt")
    arch = Architecture(tuple(int(t) for t in summary["layer_sizes"].split()))
    glob = np.loadtxt(path / "globals.csv", delimiter=",", skiprows=1, ndmin=2)
    history = [ParameterVector(arch, row[1:]) for row in glob[np.argsort(glob[:, 0])]]
    ups = np.loadtxt(path / "updates.csv", delimiter=",", skiprows=1, ndmin=2)
    updates = {(int(row[0]), int(row[1])): ParameterVector(arch, row[2:]) for row in ups}
    config = parse_config((path / "config.ini").read_text())
    return RecordedRun(history, updates, tuple(int(t) for t in summary.get("malicious", "").split()),
                       config.federation.n_participants)


def baseline_config(config: ExperimentConfig) -> ExperimentConfig:
    """The seed-matched run without poisoning."""
    fed = dataclasses.replace(config.federation, malicious_percent=0.0, attack_window=None)
    return dataclasses.replace(config, federation=fed, name=config.name + "-baseline")


def run_single(config: ExperimentConfig, out_dir: str | os.PathLike | None = None,
               with_baseline: bool = True) -> RunOutcome:
    """Execute one config; optionally write it (and its clean twin) to ``out_dir``."""
    outcome = execute(config)
    if out_dir is not None:
        out_dir = Path(out_dir)
        extra: dict[str, Any] = {"cell": config.name, "repeat": 0}
        if with_baseline:
            base = execute(baseline_config(config))
            write_run(base, out_dir / "baseline", {"cell": "baseline", "repeat": 0})
            extra["baseline"] = "../baseline"
        write_run(outcome, out_dir / "run", extra)
    return outcome


def _cell_name(coords: dict[str, Any]) -> str:
    if not coords:
        return "base"
    parts = []
    for k, v in coords.items():
        if v is None:
            v = "uniform"
        elif isinstance(v, tuple):
            v = "-".join(map(str, v))
        parts.append(f"{k}={v}")
    return "__".join(parts)


@dataclass(frozen=True)
class Job:
    cell: str
    repeat: int
    config: ExperimentConfig
    directory: str
    baseline: str | None = None
    coords: tuple = ()
    owner: str = ""  # for baseline jobs: the first cell that refers to it

    @property
    def label(self) -> str:
        return f"baseline of cell {self.owner!r}" if self.cell == "baseline" else f"cell {self.cell!r}"


def plan(config: ExperimentConfig) -> list[Job]:
    """All (cell, repeat) runs of a sweep plus the clean baselines they refer to."""
    axes = [name for name, _ in config.sweep]
    grids = [values for _, values in config.sweep]
    jobs, baselines = [], {}
    for values in itertools.product(*grids) if grids else [()]:
        coords = dict(zip(axes, values))
        cell = _cell_name(coords)
        for rep in range(config.repeats):
            fed = cell_federation(config, coords, repeat=rep)
            exp = dataclasses.replace(config, federation=fed, data=cell_data(config, rep),
                                      sweep=(), name=cell, repeats=1)
            base = baseline_config(exp)
            key = emit_config(dataclasses.replace(base, name=""))
            if key not in baselines:
                bname = f"baselines/b{len(baselines):03d}"
                baselines[key] = Job("baseline", rep, base, bname, owner=cell)
            jobs.append(Job(cell, rep, exp, f"cells/{cell}/rep{rep}", baselines[key].directory,
                            tuple((a, str(v)) for a, v in coords.items())))
    return list(baselines.values()) + jobs


def _run_job(job: Job, root: str) -> str:
    try:
        outcome = execute(job.config)
    except Exception as exc:
        raise ExperimentError(f"{job.label} repeat {job.repeat} failed: {exc}") from exc
    extra: dict[str, Any] = {"cell": job.cell, "repeat": job.repeat}
    extra.update({f"coord.{k}": v for k, v in job.coords})
    if job.baseline:
        extra["baseline"] = os.path.relpath(Path(root) / job.baseline, Path(root) / job.directory)
    write_run(outcome, Path(root) / job.directory, extra)
    return job.directory


def run_experiment(config: ExperimentConfig, out_dir: str | os.PathLike, workers: int = 1):
    """Run every sweep cell and repeat, then write the summary tables.

    Returns the run directories of the attacked cells and the report paths.
    """
    from .report import export_report

    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    (out / "experiment.ini").write_text(emit_config(config))
    jobs = plan(config)
    log.info("running %d jobs with %d worker(s)", len(jobs), workers)
    if workers > 1:
        with ProcessPoolExecutor(max_workers=workers) as pool:
            done = list(pool.map(_run_job, jobs, itertools.repeat(str(out))))
    else:
        done = [_run_job(job, str(out)) for job in jobs]
    cell_dirs = [out / d for d, job in zip(done, jobs) if job.cell != "baseline"]
    return cell_dirs, export_report(cell_dirs, out, config)
