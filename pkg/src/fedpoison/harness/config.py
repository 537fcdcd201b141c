"""INI-style experiment configuration.

A config file has up to four sections::

    [experiment]   name, repeats, seed, window split, defense settings
    [federation]   FederationConfig fields (aliases: N, k, R, m)
    [data]         synthetic task geometry or CSV paths
    [sweep]        axis = comma-separated values, one axis per key

Every key has a default except in ``[sweep]``; unknown sections and keys are
rejected. Seeds that are not given explicitly are derived from the
experiment seed, and :func:`emit_config` always writes them out, so an
emitted config reproduces a run exactly.
"""
from __future__ import annotations

import configparser
import dataclasses
import hashlib
from dataclasses import dataclass, field
from typing import Any

import numpy as np

from ..data import LabeledDataset, SyntheticSpec, generate_synthetic, load_csv, paired_centers
from ..federation import ConfigError, FederationConfig

SEED_FIELDS = ("designation_seed", "selection_seed", "init_seed", "shuffle_seed",
               "partition_seed")
ALIASES = {"N": "n_participants", "k": "per_round", "R": "rounds", "m": "malicious_percent",
           "m_percent": "malicious_percent"}
WINDOW_WORDS = ("all", "none", "early", "late")


def derive_seed(base: int, *keys) -> int:
    """Stable 32-bit seed from a base seed and any number of labels."""
    text = "/".join([str(int(base)), *(str(k) for k in keys)])
    return int.from_bytes(hashlib.sha256(text.encode()).digest()[:4], "little")


@dataclass(frozen=True)
class DataConfig:
    """Where training and test data come from.

    ``kind="synthetic"`` draws Gaussian clusters on scaled coordinate axes
    (see :func:`fedpoison.data.paired_centers`) with the attacked class pair
    placed ``pair_distance`` apart; ``pair_distance = 0`` keeps all classes
    equidistant. ``kind="csv"`` reads ``train_path`` and ``test_path``.
    """

    kind: str = "synthetic"
    class_count: int = 10
    n_features: int = 10
    separation: float = 4.0
    cluster_stddev: float = 1.0
    pair_distance: float = 2.0
    train_per_class: int = 600
    test_per_class: int = 200
    train_seed: int | None = None
    test_seed: int | None = None
    train_path: str = ""
    test_path: str = ""

    def __post_init__(self):
        if self.kind not in ("synthetic", "csv"):
            raise ConfigError(f"unknown data kind {self.kind!r}")
        if self.kind == "csv" and not (self.train_path and self.test_path):
            raise ConfigError("csv data needs train_path and test_path")
        if self.kind == "synthetic":
            if self.class_count < 2:
                raise ConfigError("class_count must be >= 2")
            if self.n_features < self.class_count:
                raise ConfigError("n_features must be >= class_count")
            if self.cluster_stddev <= 0 or self.separation <= 0:
                raise ConfigError("separation and cluster_stddev must be positive")
            if self.pair_distance < 0:
                raise ConfigError("pair_distance must be >= 0")
            if self.train_per_class < 1 or self.test_per_class < 1:
                raise ConfigError("examples per class must be >= 1")

    def load(self, pair: tuple[int, int]) -> tuple[LabeledDataset, LabeledDataset]:
        if self.kind == "csv":
            train = load_csv(self.train_path)
            test = load_csv(self.test_path, class_count=train.class_count)
            if test.class_count != train.class_count:
                raise ConfigError("test set has labels unseen in the training set")
            return train, test
        if any(c >= self.class_count for c in pair):
            raise ConfigError(f"attacked classes {pair} outside [0, {self.class_count})")
        centers = paired_centers(self.class_count, self.n_features, self.separation,
                                 pair=pair if self.pair_distance > 0 else None,
                                 pair_distance=self.pair_distance or None)
        train = generate_synthetic(SyntheticSpec(centers, self.cluster_stddev,
                                                 self.train_per_class, self.train_seed))
        test = generate_synthetic(SyntheticSpec(centers, self.cluster_stddev,
                                                self.test_per_class, self.test_seed))
        return train, test


@dataclass(frozen=True)
class ExperimentConfig:
    """A federation template plus data source, seeds, sweep axes and defense settings.

    ``window_split`` is the round that separates the ``early`` window
    ``[1, split - 1]`` from the ``late`` window ``[split, R]``; 0 means
    ``R // 2``.
    """

    federation: FederationConfig
    data: DataConfig = DataConfig()
    name: str = "run"
    repeats: int = 1
    seed: int = 0
    window_split: int = 0
    defense: bool = True
    defense_start: int = 10
    defense_reference: str = "current"
    tau_sep: float = 2.0
    recall_window: str = "final"
    sweep: tuple[tuple[str, tuple[Any, ...]], ...] = ()

    def __post_init__(self):
        if self.repeats < 1:
            raise ConfigError("repeats must be >= 1")
        if self.defense_reference not in ("current", "previous"):
            raise ConfigError("defense_reference must be 'current' or 'previous'")
        if self.recall_window not in ("final", "window"):
            raise ConfigError("recall_window must be 'final' or 'window'")
        if self.tau_sep <= 0:
            raise ConfigError("tau_sep must be positive")
        if not 0 <= self.window_split <= self.federation.rounds:
            raise ConfigError("window_split must lie in [0, R]")
        if self.defense_start < 1:
            raise ConfigError("defense_start must be >= 1")

    @property
    def split(self) -> int:
        return self.window_split or max(self.federation.rounds // 2, 1)


_EXPERIMENT_KEYS = {f.name for f in dataclasses.fields(ExperimentConfig)} - {
    "federation", "data", "sweep"}
_FED_FIELDS = {f.name: f for f in dataclasses.fields(FederationConfig)}
_DATA_FIELDS = {f.name: f for f in dataclasses.fields(DataConfig)}


def _parse_bool(text: str) -> bool:
    low = text.strip().lower()
    if low in ("1", "true", "yes", "on"):
        return True
    if low in ("0", "false", "no", "off"):
        return False
    raise ConfigError(f"not a boolean: {text!r}")


def _parse_int_list(text: str) -> tuple[int, ...]:
    text = text.strip()
    return tuple(int(v) for v in text.replace(",", " ").split()) if text else ()


def parse_window(text: str, rounds: int, split: int):
    """``all``, ``none``, ``early``, ``late`` or ``first-last``."""
    word = str(text).strip().lower()
    if word == "all":
        return (1, rounds)
    if word == "none":
        return None
    if word == "early":
        return (1, split - 1)
    if word == "late":
        return (split, rounds)
    for sep in ("-", ","):
        if sep in word:
            lo, hi = word.split(sep)
            return (int(lo), int(hi))
    raise ConfigError(f"cannot read attack window {text!r}")


def format_window(window) -> str:
    return "none" if window is None else f"{window[0]}-{window[1]}"


def _parse_fed_value(name: str, text: str):
    if name == "alpha":
        return None if text.strip().lower() == "uniform" else float(text)
    if name in ("hidden_layers", "blacklist"):
        return _parse_int_list(text)
    if name == "attack_window":
        return text.strip()
    kind = _FED_FIELDS[name].type
    if "float" in str(kind):
        return float(text)
    return int(text)


def _format_fed_value(name: str, value) -> str:
    if name == "alpha":
        return "uniform" if value is None else repr(float(value))
    if name in ("hidden_layers", "blacklist"):
        return ", ".join(str(v) for v in value)
    if name == "attack_window":
        return format_window(value)
    if isinstance(value, float):
        return repr(value)
    return str(value)


def _parse_data_value(name: str, text: str):
    kind = str(_DATA_FIELDS[name].type)
    if name in ("train_seed", "test_seed"):
        return None if text.strip().lower() in ("", "none") else int(text)
    if kind == "str":
        return text.strip()
    if "float" in kind:
        return float(text)
    return int(text)


def _parse_experiment_value(name: str, text: str):
    if name == "defense":
        return _parse_bool(text)
    if name in ("name", "defense_reference", "recall_window"):
        return text.strip()
    if name == "tau_sep":
        return float(text)
    return int(text)


def parse_config(text: str, seed: int | None = None) -> ExperimentConfig:
    """Parse and validate config text; ``seed`` overrides ``[experiment] seed``.

    Raises:
        ConfigError: unknown section or key, unparsable or out-of-range value.
    """
    parser = configparser.ConfigParser(interpolation=None, delimiters=("=",),
                                       comment_prefixes=("#", ";"))
    parser.optionxform = str
    try:
        parser.read_string(text)
    except configparser.Error as exc:
        raise ConfigError(f"malformed config: {exc}") from None
    unknown = set(parser.sections()) - {"experiment", "federation", "data", "sweep"}
    if unknown:
        raise ConfigError(f"unknown section(s): {', '.join(sorted(unknown))}")

    def section(name):
        return dict(parser.items(name)) if parser.has_section(name) else {}

    try:
        exp_raw = section("experiment")
        bad = set(exp_raw) - _EXPERIMENT_KEYS
        if bad:
            raise ConfigError(f"unknown [experiment] key(s): {', '.join(sorted(bad))}")
        exp = {k: _parse_experiment_value(k, v) for k, v in exp_raw.items()}
        if seed is not None:
            exp["seed"] = int(seed)
        base_seed = exp.get("seed", 0)

        fed_raw = {}
        for key, value in section("federation").items():
            name = ALIASES.get(key, key)
            if name not in _FED_FIELDS:
                raise ConfigError(f"unknown [federation] key {key!r}")
            if name in fed_raw:
                raise ConfigError(f"duplicate [federation] key {key!r}")
            fed_raw[name] = value
        fed = {k: _parse_fed_value(k, v) for k, v in fed_raw.items()}
        for name in SEED_FIELDS:
            fed.setdefault(name, derive_seed(base_seed, name))
        rounds = fed.get("rounds", _FED_FIELDS["rounds"].default)
        split = exp.get("window_split", 0) or max(rounds // 2, 1)
        fed["attack_window"] = parse_window(fed.get("attack_window", "all"), rounds, split)
        federation = FederationConfig(**fed)

        data_raw = section("data")
        bad = set(data_raw) - set(_DATA_FIELDS)
        if bad:
            raise ConfigError(f"unknown [data] key(s): {', '.join(sorted(bad))}")
        data = {k: _parse_data_value(k, v) for k, v in data_raw.items()}
        data.setdefault("train_seed", derive_seed(base_seed, "train_data"))
        data.setdefault("test_seed", derive_seed(base_seed, "test_data"))
        data_cfg = DataConfig(**data)

        sweep = []
        for axis, values in section("sweep").items():
            name = ALIASES.get(axis, axis)
            if name not in _FED_FIELDS or name in SEED_FIELDS:
                raise ConfigError(f"cannot sweep over {axis!r}")
            if name == "attack_window":
                parsed = tuple(v.strip().lower() for v in values.split(","))
                for word in parsed:
                    parse_window(word, rounds, split)
            elif name in ("hidden_layers", "blacklist"):
                parsed = tuple(_parse_int_list(v) for v in values.split(";"))
            else:
                parsed = tuple(_parse_fed_value(name, v) for v in values.split(","))
            if not parsed:
                raise ConfigError(f"empty sweep axis {axis!r}")
            sweep.append((name, parsed))
        config = ExperimentConfig(federation=federation, data=data_cfg, sweep=tuple(sweep), **exp)
    except ConfigError:
        raise
    except (TypeError, ValueError) as exc:
        raise ConfigError(str(exc)) from None
    for name, values in config.sweep:
        for v in values:
            cell_federation(config, {name: v})
    return config


def emit_config(config: ExperimentConfig) -> str:
    """Serialize with every field explicit; ``parse_config`` reads it back unchanged."""
    lines = ["[experiment]"]
    for f in dataclasses.fields(ExperimentConfig):
        if f.name in ("federation", "data", "sweep"):
            continue
        value = getattr(config, f.name)
        if isinstance(value, bool):
            text = "true" if value else "false"
        elif isinstance(value, float):
            text = repr(value)
        else:
            text = str(value)
        lines.append(f"{f.name} = {text}")
    lines += ["", "[federation]"]
    for f in dataclasses.fields(FederationConfig):
        lines.append(f"{f.name} = {_format_fed_value(f.name, getattr(config.federation, f.name))}")
    lines += ["", "[data]"]
    for f in dataclasses.fields(DataConfig):
        value = getattr(config.data, f.name)
        lines.append(f"{f.name} = {repr(value) if isinstance(value, float) else value}")
    if config.sweep:
        lines += ["", "[sweep]"]
        for name, values in config.sweep:
            if name in ("hidden_layers", "blacklist"):
                text = "; ".join(_format_fed_value(name, v) for v in values)
            elif name == "attack_window":
                text = ", ".join(values)
            else:
                text = ", ".join(_format_fed_value(name, v) for v in values)
            lines.append(f"{name} = {text}")
    return "\n".join(lines) + "\n"


def cell_federation(config: ExperimentConfig, coords: dict[str, Any],
                    repeat: int | None = None) -> FederationConfig:
    """Federation config of one sweep cell.

    Seeds depend on the repeat index only, not on the sweep coordinates, so
    cells that differ in one axis share data, designation order,
    initialisation and participant schedule.
    """
    changes = dict(coords)
    fed = config.federation
    rounds = changes.get("rounds", fed.rounds)
    if "attack_window" in changes:
        changes["attack_window"] = parse_window(changes["attack_window"], rounds,
                                                config.window_split or max(rounds // 2, 1))
    elif "rounds" in changes and fed.attack_window == (1, fed.rounds):
        changes["attack_window"] = (1, rounds)
    if repeat is not None:
        for name in SEED_FIELDS:
            changes[name] = derive_seed(config.seed, "repeat", repeat, name)
    try:
        return dataclasses.replace(fed, **changes)
    except (TypeError, ValueError) as exc:
        raise ConfigError(f"sweep cell {coords}: {exc}") from None


def cell_data(config: ExperimentConfig, repeat: int | None = None) -> DataConfig:
    if repeat is None or config.data.kind != "synthetic":
        return config.data
    return dataclasses.replace(config.data,
                               train_seed=derive_seed(config.seed, "repeat", repeat, "train_data"),
                               test_seed=derive_seed(config.seed, "repeat", repeat, "test_data"))
