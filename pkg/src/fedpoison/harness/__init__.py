"""Experiment orchestration: configs, presets, run directories and reports."""
from __future__ import annotations

from importlib import resources

from ..federation import ConfigError
from .config import (DataConfig, ExperimentConfig, cell_data, cell_federation, derive_seed,
                     emit_config, parse_config, parse_window)
from .report import export_report, find_runs
from .runs import (ExperimentError, RunArtifact, RunOutcome, baseline_config, execute, load_recorded,
                   load_run, plan, read_blacklist, run_experiment, run_single, write_defense,
                   write_run)


def list_presets() -> list[str]:
    root = resources.files("fedpoison") / "presets"
    return sorted(p.name[:-4] for p in root.iterdir() if p.name.endswith(".ini"))


def preset_text(name: str) -> str:
    if name not in list_presets():
        raise ConfigError(f"unknown preset {name!r}; available: {', '.join(list_presets())}")
    return (resources.files("fedpoison") / "presets" / f"{name}.ini").read_text()


def load_preset(name: str, seed: int | None = None) -> ExperimentConfig:
    return parse_config(preset_text(name), seed=seed)


__all__ = [
    "ConfigError", "DataConfig", "ExperimentConfig", "ExperimentError", "RunArtifact", "RunOutcome",
    "baseline_config", "cell_data", "cell_federation", "derive_seed", "emit_config", "execute",
    "export_report", "find_runs", "list_presets", "load_preset", "load_recorded", "load_run",
    "parse_config", "parse_window", "plan", "preset_text", "read_blacklist", "run_experiment",
    "run_single", "write_defense", "write_run",
]
