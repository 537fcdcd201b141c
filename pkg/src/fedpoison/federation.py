"""Federated averaging with label-flipping participants.

Round ``r`` (1-based) selects ``k`` participants, each trains one SGD epoch
from the previous global parameters on its own shard, and the aggregator
averages the uploads in participant-id order. Malicious participants flip
their source-class labels only inside the attack window and otherwise
behave exactly like honest ones.
"""
from __future__ import annotations

import hashlib
import math
from dataclasses import dataclass, field
from typing import Iterable, Sequence

import numpy as np

from .data import LabeledDataset, Partition, flip_labels, partition_iid
from .metrics import MetricsSeries, confusion
from .model import Architecture, ParameterVector, init_params, sgd_epoch


class ConfigError(ValueError):
    """Invalid federation or experiment configuration."""


@dataclass(frozen=True)
class FederationConfig:
    """Everything that determines one federated training run.

    ``alpha=None`` means uniform participant selection. ``attack_window`` is
    an inclusive 1-based round range, ``"all"`` for every round, or ``None``
    for a run without any poisoning.
    """

    n_participants: int = 50
    per_round: int = 5
    rounds: int = 200
    malicious_percent: float = 10.0
    alpha: float | None = None
    attack_window: tuple[int, int] | str | None = "all"
    source_class: int = 5
    target_class: int = 3
    hidden_layers: tuple[int, ...] = (16,)
    learning_rate: float = 0.05
    batch_size: int = 10
    designation_seed: int = 0
    selection_seed: int = 1
    init_seed: int = 2
    shuffle_seed: int = 3
    partition_seed: int = 4
    blacklist: tuple[int, ...] = ()

    def __post_init__(self):
        object.__setattr__(self, "hidden_layers", tuple(int(h) for h in self.hidden_layers))
        object.__setattr__(self, "blacklist", tuple(sorted({int(b) for b in self.blacklist})))
        window = self.attack_window
        if isinstance(window, str):
            if window != "all":
                raise ConfigError(f"unknown attack window {window!r}")
            window = (1, int(self.rounds))
        if window is not None:
            window = tuple(int(v) for v in window)
        object.__setattr__(self, "attack_window", window)
        self.validate()

    def validate(self) -> None:
        n, k = self.n_participants, self.per_round
        if n < 1:
            raise ConfigError("n_participants must be >= 1")
        if not 1 <= k <= n:
            raise ConfigError(f"per_round must lie in [1, n_participants], got {k}")
        if self.rounds < 1:
            raise ConfigError("rounds must be >= 1")
        if not 0 <= self.malicious_percent <= 100:
            raise ConfigError("malicious_percent must lie in [0, 100]")
        if self.alpha is not None and not 0 <= self.alpha <= 1:
            raise ConfigError("alpha must lie in [0, 1] or be 'uniform'")
        if self.attack_window is not None:
            if len(self.attack_window) != 2:
                raise ConfigError("attack_window must be a (first, last) pair")
            lo, hi = self.attack_window
            if not 1 <= lo <= hi <= self.rounds:
                raise ConfigError(f"attack_window {self.attack_window} not within [1, {self.rounds}]")
        if self.source_class == self.target_class:
            raise ConfigError("source_class and target_class must differ")
        if min(self.source_class, self.target_class) < 0:
            raise ConfigError("class ids must be nonnegative")
        if any(h < 1 for h in self.hidden_layers):
            raise ConfigError("hidden layer widths must be positive")
        if self.learning_rate < 0:
            raise ConfigError("learning_rate must be >= 0")
        if self.batch_size < 1:
            raise ConfigError("batch_size must be >= 1")
        if any(not 0 <= b < n for b in self.blacklist):
            raise ConfigError("blacklisted ids must be participant ids")
        if n - len(self.blacklist) < k:
            raise ConfigError("blacklist leaves fewer than per_round participants")

    @property
    def malicious_count(self) -> int:
        return malicious_count(self.n_participants, self.malicious_percent)

    def architecture(self, n_features: int, class_count: int) -> Architecture:
        return Architecture((n_features, *self.hidden_layers, class_count))

    def in_window(self, r: int) -> bool:
        return self.attack_window is not None and self.attack_window[0] <= r <= self.attack_window[1]


def malicious_count(n: int, percent: float) -> int:
    # half-up rounding of N * m%
    return int(math.floor(n * percent / 100.0 + 0.5))


@dataclass(frozen=True)
class ParticipantPool:
    honest: tuple[int, ...]
    malicious: tuple[int, ...]
    partitions: dict[int, Partition] = field(default_factory=dict)

    def __post_init__(self):
        if set(self.honest) & set(self.malicious):
            raise ValueError("a participant cannot be both honest and malicious")

    @property
    def ids(self) -> tuple[int, ...]:
        return tuple(sorted(self.honest + self.malicious))

    def is_malicious(self, pid: int) -> bool:
        return pid in self._malicious_set

    @property
    def _malicious_set(self) -> frozenset:
        return frozenset(self.malicious)


def designate_malicious(n: int, percent: float, seed) -> ParticipantPool:
    """Pick ``round(N * m%)`` malicious ids uniformly at random.

    The ids are a prefix of one seeded permutation, so for a fixed seed the
    malicious set at a lower percentage is contained in the set at any
    higher percentage.
    """
    count = malicious_count(n, percent)
    perm = np.random.default_rng(seed).permutation(n)
    malicious = tuple(sorted(int(i) for i in perm[:count]))
    honest = tuple(sorted(int(i) for i in perm[count:]))
    return ParticipantPool(honest, malicious)


def select_participants(pool: ParticipantPool, k: int, alpha: float | None, in_window: bool,
                        seed, r: int, excluded: Iterable[int] = ()) -> list[int]:
    """Choose ``k`` distinct participants for round ``r``.

    Outside the attack window, with ``alpha=None``, or when no malicious
    participant is available, this is a uniform draw without replacement. Inside it, every slot independently goes to a
    not-yet-chosen malicious participant with probability ``alpha`` and to
    an honest one otherwise, falling back to the other side when the chosen
    side is exhausted.
    """
    excluded = set(excluded)
    rng = np.random.default_rng([int(seed), int(r)])
    mal = [i for i in pool.malicious if i not in excluded]
    hon = [i for i in pool.honest if i not in excluded]
    if alpha is None or not in_window or not mal:
        # with nobody to favour the biased draw degenerates to the uniform one
        available = np.array([i for i in pool.ids if i not in excluded])
        if k > available.size:
            raise ValueError(f"cannot select {k} of {available.size} participants")
        return [int(i) for i in rng.choice(available, size=k, replace=False)]
    if k > len(mal) + len(hon):
        raise ValueError(f"cannot select {k} of {len(mal) + len(hon)} participants")
    chosen = []
    for _ in range(k):
        side = mal if rng.random() < alpha else hon
        if not side:
            side = hon if side is mal else mal
        chosen.append(side.pop(int(rng.integers(len(side)))))
    return chosen


def aggregate(updates: Sequence[ParameterVector]) -> ParameterVector:
    """Coordinate-wise mean of the uploads, accumulated in the given order.

    The mean is computed as ``u_0 + sum(u_i - u_0) / k`` which equals the
    arithmetic mean and returns ``k`` identical vectors bit-exactly.
    """
    if not updates:
        raise ValueError("nothing to aggregate")
    arch = updates[0].arch
    for u in updates[1:]:
        if u.arch != arch or len(u) != len(updates[0]):
            raise ValueError("updates have different dimensions")
    ref = updates[0].flat
    acc = np.zeros_like(ref)
    for u in updates:
        acc += u.flat - ref
    return ParameterVector(arch, ref + acc / len(updates))


def params_digest(params: ParameterVector) -> str:
    return hashlib.sha256(params.flat.tobytes()).hexdigest()[:16]


@dataclass(frozen=True)
class RoundRecord:
    round: int
    selected: tuple[int, ...]
    malicious_selected: int
    params_hash: str
    accuracy: float
    recall: np.ndarray


@dataclass
class FederationState:
    config: FederationConfig
    pool: ParticipantPool
    testset: LabeledDataset
    params: ParameterVector
    series: MetricsSeries = field(default_factory=MetricsSeries)
    history: list[ParameterVector] = field(default_factory=list)
    updates: dict[tuple[int, int], ParameterVector] = field(default_factory=dict)
    records: list[RoundRecord] = field(default_factory=list)


@dataclass
class RunResult:
    config: FederationConfig
    pool: ParticipantPool
    records: list[RoundRecord]
    series: MetricsSeries
    history: list[ParameterVector]
    updates: dict[tuple[int, int], ParameterVector]

    @property
    def final_params(self) -> ParameterVector:
        return self.history[-1]

    @property
    def arch(self) -> Architecture:
        return self.history[0].arch


def local_update(config: FederationConfig, pool: ParticipantPool, params: ParameterVector,
                 pid: int, r: int) -> ParameterVector:
    shard = pool.partitions[pid]
    if config.in_window(r) and pool.is_malicious(pid):
        shard = flip_labels(shard, config.source_class, config.target_class)
    return sgd_epoch(params, shard, config.batch_size, config.learning_rate,
                     seed=[config.shuffle_seed, r, pid])


def run_round(state: FederationState, r: int) -> tuple[FederationState, RoundRecord]:
    """Select, train locally, aggregate and evaluate one round (mutates ``state``)."""
    cfg = state.config
    if not 1 <= r <= cfg.rounds:
        raise ValueError(f"round {r} outside 1..{cfg.rounds}")
    selected = sorted(select_participants(state.pool, cfg.per_round, cfg.alpha, cfg.in_window(r),
                                          cfg.selection_seed, r, excluded=cfg.blacklist))
    uploads = []
    for pid in selected:
        theta = local_update(cfg, state.pool, state.params, pid, r)
        state.updates[(r, pid)] = theta
        uploads.append(theta)
    state.params = aggregate(uploads)
    state.history.append(state.params)
    n_mal = sum(state.pool.is_malicious(p) for p in selected)
    cm = confusion(state.params, state.testset)
    state.series.append(cm, n_mal)
    record = RoundRecord(r, tuple(selected), n_mal, params_digest(state.params),
                         state.series.accuracy[-1], state.series.recall[-1])
    state.records.append(record)
    return state, record


def build_pool(config: FederationConfig, train: LabeledDataset) -> ParticipantPool:
    skeleton = designate_malicious(config.n_participants, config.malicious_percent,
                                   config.designation_seed)
    shards = partition_iid(train, config.n_participants, config.partition_seed)
    return ParticipantPool(skeleton.honest, skeleton.malicious, {p.owner: p for p in shards})


def run_training(config: FederationConfig, train: LabeledDataset, test: LabeledDataset) -> RunResult:
    """Train for ``config.rounds`` rounds starting from seeded initial parameters."""
    if train.n_features != test.n_features or train.class_count != test.class_count:
        raise ValueError("train and test sets have different shapes")
    for c in (config.source_class, config.target_class):
        if c >= train.class_count:
            raise ConfigError(f"class {c} outside [0, {train.class_count})")
    arch = config.architecture(train.n_features, train.class_count)
    theta0 = init_params(arch, config.init_seed)
    state = FederationState(config, build_pool(config, train), test, theta0, history=[theta0])
    for r in range(1, config.rounds + 1):
        run_round(state, r)
    return RunResult(config, state.pool, state.records, state.series, state.history, state.updates)
