"""Aggregator-side identification of label-flipping participants.

For every recorded upload the aggregator takes the difference to the global
parameters, keeps only the weights and bias feeding the suspected source
class's output node, standardizes the collected rows, projects them on two
principal components and splits the projected points with 2-means. The
participants that end up in the smaller group are flagged, unless the two
groups are not clearly separated.
"""
from __future__ import annotations

from dataclasses import dataclass, field
from typing import Iterable, Sequence

import numpy as np

from .model import Architecture, ParameterVector

STD_EPS = 1e-12
DEFAULT_TAU_SEP = 2.0


@dataclass(frozen=True)
class UpdateFingerprint:
    participant: int
    round: int
    values: np.ndarray


@dataclass(frozen=True)
class PCAResult:
    projected: np.ndarray
    components: np.ndarray
    variances: np.ndarray
    mean: np.ndarray


@dataclass
class DefenseReport:
    source_class: int | None
    labels: list[tuple[int, int]]
    coords: np.ndarray
    row_cluster: np.ndarray
    participant_cluster: dict[int, int]
    flagged: set[int]
    attack_detected: bool
    separation: float = 0.0
    centroids: np.ndarray = field(default_factory=lambda: np.zeros((2, 2)))

    def rows(self):
        """(participant, round, pc1, pc2, cluster, flagged) per fingerprint."""
        for (pid, r), (x, y), c in zip(self.labels, self.coords, self.row_cluster):
            yield pid, r, float(x), float(y), int(c), pid in self.flagged


@dataclass
class DefenseSweep:
    """Per-class reports for an unknown source class."""

    reports: dict[int, DefenseReport]

    @property
    def flagged(self) -> dict[int, list[int]]:
        """Participant id -> classes whose iteration flagged it."""
        out: dict[int, list[int]] = {}
        for c, rep in sorted(self.reports.items()):
            for pid in sorted(rep.flagged):
                out.setdefault(pid, []).append(c)
        return out

    @property
    def detected_classes(self) -> list[int]:
        return [c for c, rep in sorted(self.reports.items()) if rep.attack_detected]


def compute_delta(update: ParameterVector, reference: ParameterVector) -> ParameterVector:
    if update.arch != reference.arch or len(update) != len(reference):
        raise ValueError("parameter vectors have different shapes")
    return ParameterVector(update.arch, update.flat - reference.flat)


def extract_source_slice(delta: ParameterVector, source: int, arch: Architecture | None = None,
                         participant: int = -1, round: int = -1) -> UpdateFingerprint:
    """Incoming weights of output node ``source`` followed by its bias."""
    arch = arch or delta.arch
    if len(delta) != arch.n_params:
        raise ValueError("delta does not match the architecture")
    if not 0 <= source < arch.n_classes:
        raise ValueError(f"class {source} outside [0, {arch.n_classes})")
    return UpdateFingerprint(participant, round, delta.flat[arch.output_node_indices(source)].copy())


def standardize(u: np.ndarray) -> np.ndarray:
    """Zero-mean, unit population variance columns; near-constant columns become 0."""
    u = np.asarray(u, dtype=np.float64)
    if u.ndim != 2 or u.shape[0] < 2:
        raise ValueError("standardize needs a matrix with at least two rows")
    centered = u - u.mean(axis=0)
    std = u.std(axis=0)
    out = np.zeros_like(centered)
    ok = std >= STD_EPS
    out[:, ok] = centered[:, ok] / std[ok]
    return out


def _orient(v: np.ndarray) -> np.ndarray:
    return v if v[np.argmax(np.abs(v))] >= 0 else -v


def _power_iteration(cov: np.ndarray, start: np.ndarray, against: Sequence[np.ndarray],
                     tol: float, max_iter: int, scale: float) -> np.ndarray:
    def project_out(v):
        for _ in range(2):  # second pass removes what rounding left behind
            for w in against:
                v = v - (v @ w) * w
        return v

    v = project_out(start)
    v /= np.linalg.norm(v)
    for _ in range(max_iter):
        w = project_out(cov @ v)
        norm = np.linalg.norm(w)
        if norm <= 1e-13 * scale:
            # remaining spectrum is numerically zero; any orthogonal direction will do
            return v
        w /= norm
        if min(np.linalg.norm(w - v), np.linalg.norm(w + v)) < tol:
            v = w
            break
        v = w
    return project_out(v) / np.linalg.norm(project_out(v))


def pca2(u: np.ndarray, tol: float = 1e-10, max_iter: int = 10_000) -> PCAResult:
    """Project rows on the two leading eigenvectors of the column covariance.

    Eigenvectors come from power iteration with deflation; the second one is
    kept orthogonal to the first throughout. Each component is signed so its
    largest-magnitude coordinate is positive.
    """
    u = np.asarray(u, dtype=np.float64)
    if u.ndim != 2 or u.shape[0] < 2 or u.shape[1] < 2:
        raise ValueError("pca2 needs at least two rows and two columns")
    mean = u.mean(axis=0)
    centered = u - mean
    cov = centered.T @ centered / u.shape[0]
    d = cov.shape[0]
    start = np.random.default_rng(0).standard_normal(d)
    scale = max(float(np.abs(cov).max()), 1e-300)
    v1 = _power_iteration(cov, start, [], tol, max_iter, scale)
    lam1 = float(v1 @ cov @ v1)
    deflated = cov - lam1 * np.outer(v1, v1)
    v2 = _power_iteration(deflated, np.roll(start, 1), [v1], tol, max_iter, scale)
    v1, v2 = _orient(v1), _orient(v2)
    components = np.vstack([v1, v2])
    projected = centered @ components.T
    variances = np.array([v1 @ cov @ v1, v2 @ cov @ v2])
    return PCAResult(projected, components, variances, mean)


def two_means(points: np.ndarray, restarts: int = 20, seed: int = 0,
              max_iter: int = 300) -> tuple[np.ndarray, np.ndarray]:
    """Lloyd's 2-means with seeded k-means++ restarts; lowest inertia wins."""
    rng = np.random.default_rng(seed)
    n = points.shape[0]
    best = None
    for _ in range(restarts):
        first = rng.integers(n)
        d2 = ((points - points[first]) ** 2).sum(axis=1)
        if d2.sum() == 0:
            second = (first + 1) % n
        else:
            second = rng.choice(n, p=d2 / d2.sum())
        centroids = points[[first, second]].copy()
        assign = None
        for _ in range(max_iter):
            dist = ((points[:, None, :] - centroids[None, :, :]) ** 2).sum(axis=2)
            new = np.argmin(dist, axis=1)
            if assign is not None and np.array_equal(new, assign):
                break
            assign = new
            for j in (0, 1):
                if (assign == j).any():
                    centroids[j] = points[assign == j].mean(axis=0)
        inertia = float(((points - centroids[assign]) ** 2).sum())
        if best is None or inertia < best[0] - 1e-12:
            best = (inertia, assign.copy(), centroids.copy())
    return best[1], best[2]


def _cluster_spread(points: np.ndarray, assign: np.ndarray) -> float:
    """Mean over clusters of the average pairwise distance between members."""
    spreads = []
    for j in (0, 1):
        members = points[assign == j]
        if len(members) > 1:
            diff = members[:, None, :] - members[None, :, :]
            dist = np.sqrt((diff ** 2).sum(axis=2))
            n = len(members)
            spreads.append(dist.sum() / (n * (n - 1)))
    return float(np.mean(spreads)) if spreads else 0.0


def flag_malicious(coords: np.ndarray, labels: Sequence[tuple[int, int]],
                   tau_sep: float = DEFAULT_TAU_SEP, restarts: int = 20, seed: int = 0,
                   source_class: int | None = None) -> DefenseReport:
    """Cluster 2-D update coordinates and flag the minority participants.

    ``labels[i]`` is the ``(participant, round)`` of row ``i``. Rows are put in
    a canonical order first so the outcome does not depend on input order.
    A participant belongs to the cluster holding most of its rows; the
    cluster with fewer participants (ties: the one whose centroid lies
    farther from the origin) is flagged. If the centroid distance is below
    ``tau_sep`` times the mean within-cluster pairwise distance, nobody is
    flagged.
    """
    coords = np.asarray(coords, dtype=np.float64)
    labels = [(int(p), int(r)) for p, r in labels]
    if coords.shape != (len(labels), 2):
        raise ValueError("need one (x, y) row per label")
    if len({p for p, _ in labels}) < 2:
        raise ValueError("flagging needs at least two distinct participants")
    order = sorted(range(len(labels)), key=lambda i: (labels[i], tuple(coords[i])))
    inverse = np.empty(len(order), dtype=int)
    inverse[order] = np.arange(len(order))
    pts = coords[order]
    lab = [labels[i] for i in order]

    def report(assign, participant_cluster, flagged, detected, separation, centroids):
        return DefenseReport(source_class, labels, coords, assign[inverse], participant_cluster,
                             flagged, detected, separation, centroids)

    if np.ptp(pts, axis=0).max() == 0:
        zeros = np.zeros(len(lab), dtype=int)
        return report(zeros, {p: 0 for p, _ in lab}, set(), False, 0.0, np.zeros((2, 2)))

    assign, centroids = two_means(pts, restarts=restarts, seed=seed)
    rows_by_pid: dict[int, list[int]] = {}
    for i, (pid, _) in enumerate(lab):
        rows_by_pid.setdefault(pid, []).append(i)
    participant_cluster = {}
    for pid, idx in rows_by_pid.items():
        votes = np.bincount(assign[idx], minlength=2)
        if votes[0] != votes[1]:
            participant_cluster[pid] = int(np.argmax(votes))
        else:
            centre = pts[idx].mean(axis=0)
            participant_cluster[pid] = int(np.argmin(((centroids - centre) ** 2).sum(axis=1)))

    separation = float(np.linalg.norm(centroids[0] - centroids[1]))
    spread = _cluster_spread(pts, assign)
    ratio = separation / spread if spread > 0 else np.inf
    members = [sorted(p for p, c in participant_cluster.items() if c == j) for j in (0, 1)]
    if len(members[0]) != len(members[1]):
        minority = 0 if len(members[0]) < len(members[1]) else 1
    else:
        minority = int(np.argmax(np.linalg.norm(centroids, axis=1)))
    detected = ratio >= tau_sep and len(members[minority]) > 0
    flagged = set(members[minority]) if detected else set()
    return report(assign, participant_cluster, flagged, detected, ratio, centroids)


def collect_fingerprints(history: Sequence[ParameterVector],
                         updates: dict[tuple[int, int], ParameterVector],
                         rounds: tuple[int, int], source: int,
                         reference: str = "current") -> list[UpdateFingerprint]:
    """Fingerprints for all uploads in the inclusive round range.

    ``history[r]`` is the global model after round ``r``. ``reference``
    selects the parameters subtracted from an upload of round ``r``:
    ``"current"`` uses the model aggregated in that same round,
    ``"previous"`` the model the participant started from.
    """
    lo, hi = rounds
    if lo > hi:
        raise ValueError(f"empty round range {rounds}")
    if reference not in ("current", "previous"):
        raise ValueError(f"unknown delta reference {reference!r}")
    prints = []
    for (r, pid) in sorted(updates):
        if lo <= r <= hi:
            base = history[r] if reference == "current" else history[r - 1]
            delta = compute_delta(updates[(r, pid)], base)
            prints.append(extract_source_slice(delta, source, participant=pid, round=r))
    return prints


def evaluate_fingerprints(prints: Sequence[UpdateFingerprint], source: int | None = None,
                          tau_sep: float = DEFAULT_TAU_SEP, seed: int = 0) -> DefenseReport:
    if len(prints) < 2:
        raise ValueError("need at least two fingerprints")
    u = np.vstack([p.values for p in prints])
    coords = pca2(standardize(u)).projected
    return flag_malicious(coords, [(p.participant, p.round) for p in prints], tau_sep=tau_sep,
                          seed=seed, source_class=source)


def evaluate_updates(rounds: tuple[int, int], run, source: int | None,
                     tau_sep: float = DEFAULT_TAU_SEP, reference: str = "current",
                     seed: int = 0) -> DefenseReport | DefenseSweep:
    """Run the detection pipeline on a recorded run.

    ``run`` needs ``history`` (global parameters, index 0 = initial) and
    ``updates`` keyed by ``(round, participant)``. With ``source=None`` every
    class is tried in turn and a :class:`DefenseSweep` is returned.
    """
    lo, hi = rounds
    if lo > hi:
        raise ValueError(f"empty round range {rounds}")
    if source is None:
        n_classes = run.history[0].arch.n_classes
        return DefenseSweep({c: evaluate_updates(rounds, run, c, tau_sep, reference, seed)
                             for c in range(n_classes)})
    prints = collect_fingerprints(run.history, run.updates, rounds, source, reference)
    if not prints:
        raise ValueError(f"no recorded updates in rounds {lo}..{hi}")
    return evaluate_fingerprints(prints, source, tau_sep, seed)


def balanced_accuracy(flagged: Iterable[int], malicious: Iterable[int], ids: Iterable[int]) -> float:
    """Mean of the detection rate on malicious and the pass rate on honest ids."""
    flagged, malicious, ids = set(flagged), set(malicious), set(ids)
    honest = ids - malicious
    rates = []
    if malicious:
        rates.append(len(flagged & malicious) / len(malicious))
    if honest:
        rates.append(len(honest - flagged) / len(honest))
    return float(np.mean(rates))
