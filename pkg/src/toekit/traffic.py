"""Traffic-matrix traces: synthesis, recurrence analysis, clustering, and
single-matrix predictors.

Clustering operates on sum-normalized, flattened snapshots under Euclidean
distance; closeness between snapshots is otherwise measured with cosine
similarity, which is scale-invariant.
"""

from __future__ import annotations

import csv
import json
from dataclasses import dataclass, field

import numpy as np

from .core import check_traffic_matrix
from .errors import ConfigError

__all__ = [
    "ClusteringReport",
    "GeneratorConfig",
    "RepresentativeSet",
    "TrafficTrace",
    "choose_k_silhouette",
    "cosine_similarity",
    "kmeans_centroids",
    "load_trace",
    "normalize",
    "pca_project",
    "predictor_ave",
    "predictor_max",
    "recurrence_fraction",
    "save_trace",
    "synth_trace",
]


@dataclass(frozen=True)
class TrafficTrace:
    """Time-ordered inter-pod demand snapshots, one every ``period_s`` seconds."""

    snapshots: np.ndarray  # (T, n, n)
    period_s: float = 300.0

    def __post_init__(self):
        snaps = np.asarray(self.snapshots, dtype=float)
        if snaps.ndim != 3 or snaps.shape[1] != snaps.shape[2]:
            raise ValueError("trace must have shape (T, n, n)")
        for t in range(snaps.shape[0]):
            check_traffic_matrix(snaps[t])
        snaps = np.ascontiguousarray(snaps)
        snaps.setflags(write=False)
        object.__setattr__(self, "snapshots", snaps)

    def __len__(self) -> int:
        return self.snapshots.shape[0]

    @property
    def n(self) -> int:
        return self.snapshots.shape[1]


@dataclass(frozen=True)
class RepresentativeSet:
    """A handful of matrices standing in for future demand."""

    tms: np.ndarray  # (m, n, n)
    kind: str  # "centroids" | "ave" | "max" | "last"
    source_window: tuple[int, int] = (0, 0)

    def __post_init__(self):
        tms = np.asarray(self.tms, dtype=float)
        if tms.ndim != 3:
            raise ValueError("representative set must be (m, n, n)")
        object.__setattr__(self, "tms", tms)

    def __len__(self) -> int:
        return self.tms.shape[0]


@dataclass(frozen=True)
class ClusteringReport:
    assignments: np.ndarray
    chosen_k: int
    silhouette_by_k: dict[int, float] = field(default_factory=dict)
    degenerate: bool = False
    inertia: float = 0.0
    inertia_path: tuple[float, ...] = ()


def cosine_similarity(a: np.ndarray, b: np.ndarray) -> float:
    """dot(vec(a), vec(b)) / (|vec(a)| |vec(b)|); in [0, 1] for demand matrices."""
    a = np.asarray(a, dtype=float).ravel()
    b = np.asarray(b, dtype=float).ravel()
    if a.shape != b.shape:
        raise ValueError("matrices must have identical shapes")
    na, nb = np.linalg.norm(a), np.linalg.norm(b)
    if na == 0.0 or nb == 0.0:
        raise ValueError("cosine similarity is undefined for an all-zero matrix")
    return float(a @ b / (na * nb))


def recurrence_fraction(trace: TrafficTrace, lookback: int, threshold: float) -> float:
    """Fraction of snapshots with a historical lookalike.

    A snapshot counts as recurrent when its max cosine similarity to any of
    the ``lookback`` snapshots preceding it reaches ``threshold``. Every
    snapshot with at least one predecessor is scored; near the start of the
    trace the window truncates, which keeps the scored set identical across
    lookbacks (so the fraction is non-decreasing in the lookback).
    """
    if lookback < 1:
        raise ValueError("lookback must be >= 1")
    if not 0.0 < threshold <= 1.0:
        raise ValueError("threshold must be in (0, 1]")
    snaps = trace.snapshots
    t_total = len(trace)
    if t_total < lookback + 1:
        raise ValueError(
            f"trace has {t_total} snapshots; need at least lookback+1 = {lookback + 1}"
        )
    flat = snaps.reshape(t_total, -1)
    norms = np.linalg.norm(flat, axis=1)
    if (norms == 0.0).any():
        raise ValueError("trace contains an all-zero snapshot")
    unit = flat / norms[:, None]
    hits = 0
    for t in range(1, t_total):
        sims = unit[max(t - lookback, 0) : t] @ unit[t]
        if sims.max() >= threshold:
            hits += 1
    return hits / (t_total - 1)


def normalize(tm: np.ndarray) -> np.ndarray:
    """Scale a demand matrix so its entries sum to 1."""
    tm = np.asarray(tm, dtype=float)
    total = tm.sum()
    if total <= 0.0:
        raise ValueError("cannot normalize a zero traffic matrix")
    return tm / total


def _normalized_vectors(window: np.ndarray) -> np.ndarray:
    window = np.asarray(window, dtype=float)
    t = window.shape[0]
    flat = window.reshape(t, -1)
    totals = flat.sum(axis=1)
    if (totals <= 0.0).any():
        raise ValueError("window contains a zero snapshot")
    return flat / totals[:, None]


def _kmeans_plus_plus(vecs: np.ndarray, k: int, rng: np.random.Generator) -> np.ndarray:
    t = vecs.shape[0]
    centers = np.empty((k, vecs.shape[1]))
    idx = int(rng.integers(t))
    centers[0] = vecs[idx]
    d2 = ((vecs - centers[0]) ** 2).sum(axis=1)
    for c in range(1, k):
        total = d2.sum()
        if total <= 0.0:
            idx = int(rng.integers(t))  # all points coincide with a center
        else:
            idx = int(rng.choice(t, p=d2 / total))
        centers[c] = vecs[idx]
        d2 = np.minimum(d2, ((vecs - centers[c]) ** 2).sum(axis=1))
    return centers


def kmeans_centroids(
    window: np.ndarray, k: int, seed: int, max_iter: int = 300
) -> tuple[RepresentativeSet, ClusteringReport]:
    """Lloyd's algorithm with k-means++ seeding over normalized snapshots.

    Runs until the assignment reaches a fixpoint or ``max_iter`` sweeps.
    Deterministic for a given seed; an emptied cluster is re-seeded with the
    point farthest from its assigned centroid.
    """
    window = np.asarray(window, dtype=float)
    t = window.shape[0]
    if not 1 <= k <= t:
        raise ValueError(f"need 1 <= k <= {t} snapshots, got k={k}")
    n = window.shape[1]
    vecs = _normalized_vectors(window)
    rng = np.random.default_rng(seed)
    centers = _kmeans_plus_plus(vecs, k, rng)
    labels = np.full(t, -1)
    inertia_path = []
    for _ in range(max_iter):
        d2 = ((vecs[:, None, :] - centers[None, :, :]) ** 2).sum(axis=2)
        new_labels = d2.argmin(axis=1)
        for c in range(k):
            if not (new_labels == c).any():
                worst = int(np.argmax(d2[np.arange(t), new_labels]))
                new_labels[worst] = c
                centers[c] = vecs[worst]
        inertia_path.append(float(d2[np.arange(t), new_labels].sum()))
        if (new_labels == labels).all():
            break
        labels = new_labels
        for c in range(k):
            centers[c] = vecs[labels == c].mean(axis=0)
    centroids = centers.reshape(k, n, n).copy()
    for c in range(k):
        np.fill_diagonal(centroids[c], 0.0)
    reps = RepresentativeSet(centroids, "centroids", (0, t))
    report = ClusteringReport(
        assignments=labels.copy(),
        chosen_k=k,
        inertia=inertia_path[-1],
        inertia_path=tuple(inertia_path),
    )
    return reps, report


def _mean_silhouette(vecs: np.ndarray, labels: np.ndarray, k: int) -> float:
    t = vecs.shape[0]
    dist = np.sqrt(np.maximum(((vecs[:, None, :] - vecs[None, :, :]) ** 2).sum(axis=2), 0.0))
    scores = np.zeros(t)
    for i in range(t):
        own = labels == labels[i]
        own_count = own.sum() - 1
        if own_count == 0:
            scores[i] = 0.0  # singleton cluster
            continue
        a = dist[i, own].sum() / own_count
        b = np.inf
        for c in range(k):
            if c == labels[i]:
                continue
            mask = labels == c
            if mask.any():
                b = min(b, dist[i, mask].mean())
        top = max(a, b)
        scores[i] = 0.0 if top == 0.0 else (b - a) / top
    return float(scores.mean())


def choose_k_silhouette(
    window: np.ndarray, k_range: tuple[int, int], seed: int
) -> ClusteringReport:
    """Pick the cluster count with the best mean silhouette (ties: smaller k)."""
    window = np.asarray(window, dtype=float)
    t = window.shape[0]
    k_min, k_max = int(k_range[0]), int(k_range[1])
    if k_min < 2 or k_max > t - 1 or k_min > k_max:
        raise ValueError(f"need 2 <= k_min <= k_max <= {t - 1}")
    vecs = _normalized_vectors(window)
    spread = ((vecs - vecs[0]) ** 2).sum()
    if spread == 0.0:
        # all snapshots identical: a single cluster, silhouette undefined
        return ClusteringReport(
            assignments=np.zeros(t, dtype=int), chosen_k=1, degenerate=True
        )
    sil_by_k: dict[int, float] = {}
    labels_by_k: dict[int, np.ndarray] = {}
    for k in range(k_min, k_max + 1):
        _, rep = kmeans_centroids(window, k, seed)
        labels_by_k[k] = rep.assignments
        sil_by_k[k] = _mean_silhouette(vecs, rep.assignments, k)
    chosen = max(sorted(sil_by_k), key=lambda k: (sil_by_k[k], -k))
    return ClusteringReport(
        assignments=labels_by_k[chosen], chosen_k=chosen, silhouette_by_k=sil_by_k
    )


def predictor_ave(window: np.ndarray) -> RepresentativeSet:
    """Element-wise mean of the historical snapshots."""
    window = np.asarray(window, dtype=float)
    if window.shape[0] == 0:
        raise ValueError("empty window")
    return RepresentativeSet(window.mean(axis=0)[None], "ave", (0, window.shape[0]))


def predictor_max(window: np.ndarray) -> RepresentativeSet:
    """Element-wise max of the historical snapshots."""
    window = np.asarray(window, dtype=float)
    if window.shape[0] == 0:
        raise ValueError("empty window")
    return RepresentativeSet(window.max(axis=0)[None], "max", (0, window.shape[0]))


def pca_project(window: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
    """Project normalized snapshots on the first two principal components.

    Returns (coords, pve): per-snapshot 2-D coordinates and the proportion of
    variance explained by each of the two components. Plot data only.
    """
    window = np.asarray(window, dtype=float)
    if window.shape[0] < 3:
        raise ValueError("PCA projection needs at least 3 snapshots")
    vecs = _normalized_vectors(window)
    centered = vecs - vecs.mean(axis=0)
    u, s, _ = np.linalg.svd(centered, full_matrices=False)
    total = float((s**2).sum())
    if total <= (1e-12 * np.linalg.norm(vecs)) ** 2:
        raise ValueError("window has no variation (rank 0)")
    coords = u[:, :2] * s[:2]
    pve = (s[:2] ** 2) / total
    if len(s) < 2:  # pragma: no cover - T >= 3 guarantees two singular values
        coords = np.pad(coords, ((0, 0), (0, 2 - coords.shape[1])))
        pve = np.pad(pve, (0, 2 - len(pve)))
    return coords, pve


@dataclass(frozen=True)
class GeneratorConfig:
    """Synthetic trace spec; the clustered-recurrent mode is the stand-in for
    production traces."""

    kind: str  # "random" | "nearest_neighbor" | "clustered_recurrent"
    n: int
    length: int
    period_s: float = 300.0
    volume: float = 1.0  # total Gbps per snapshot for normalized generators
    peak: float = 1.0  # per-entry scale for the uniform generators
    rho: int = 2  # nearest-neighbor reach (circular index distance)
    modes: int = 3
    switch_period: int = 50
    drift: float = 0.3  # fraction of each mode replaced by its drift target by trace end
    noise: float = 0.05
    hot_pairs: int = 0  # extra hotspot entries per mode (0: n hotspots)

    def __post_init__(self):
        if self.kind not in ("random", "nearest_neighbor", "clustered_recurrent"):
            raise ConfigError(f"unknown generator kind: {self.kind!r}")
        if self.n < 2 or self.length < 1:
            raise ConfigError("generator needs n >= 2 and length >= 1")


def _random_tm(rng: np.random.Generator, n: int, peak: float) -> np.ndarray:
    tm = rng.uniform(0.0, peak, size=(n, n))
    np.fill_diagonal(tm, 0.0)
    return tm


def _hotspot_mode(rng: np.random.Generator, n: int, hot_pairs: int) -> np.ndarray:
    """A skewed latent mode: faint uniform background plus a few hot pairs."""
    tm = rng.uniform(0.0, 0.05, size=(n, n))
    hot = hot_pairs if hot_pairs > 0 else n
    for _ in range(hot):
        i = int(rng.integers(n))
        j = int(rng.integers(n - 1))
        j = j + 1 if j >= i else j
        tm[i, j] += rng.uniform(0.5, 1.0)
    np.fill_diagonal(tm, 0.0)
    return tm


def synth_trace(spec: GeneratorConfig | dict, seed: int) -> TrafficTrace:
    """Deterministic synthetic trace for the configured generator."""
    if isinstance(spec, dict):
        spec = GeneratorConfig(**spec)
    rng = np.random.default_rng(seed)
    n, t_total = spec.n, spec.length
    snaps = np.empty((t_total, n, n))
    if spec.kind == "random":
        for t in range(t_total):
            snaps[t] = _random_tm(rng, n, spec.peak)
    elif spec.kind == "nearest_neighbor":
        idx = np.arange(n)
        circ = np.abs(idx[:, None] - idx[None, :])
        reach = np.minimum(circ, n - circ) <= spec.rho
        np.fill_diagonal(reach, False)
        for t in range(t_total):
            tm = _random_tm(rng, n, spec.peak)
            tm[~reach] = 0.0
            snaps[t] = tm
    else:  # clustered_recurrent
        base = [_hotspot_mode(rng, n, spec.hot_pairs) for _ in range(spec.modes)]
        target = [_hotspot_mode(rng, n, spec.hot_pairs) for _ in range(spec.modes)]
        for t in range(t_total):
            m = (t // spec.switch_period) % spec.modes
            w = spec.drift * (t / max(t_total - 1, 1))
            mode = (1.0 - w) * base[m] + w * target[m]
            tm = mode + spec.noise * rng.uniform(0.0, 1.0, size=(n, n))
            np.fill_diagonal(tm, 0.0)
            snaps[t] = spec.volume * tm / tm.sum()
    return TrafficTrace(snaps, spec.period_s)


def save_trace(trace: TrafficTrace, path: str, fmt: str = "csv") -> None:
    """Write a trace as sparse CSV triplets (t, i, j, gbps) or dense JSON."""
    if fmt == "csv":
        with open(path, "w", newline="") as fh:
            writer = csv.writer(fh)
            writer.writerow(["t", "i", "j", "gbps"])
            for t in range(len(trace)):
                tm = trace.snapshots[t]
                for i, j in np.argwhere(tm > 0.0):
                    writer.writerow([t, int(i), int(j), repr(float(tm[i, j]))])
    elif fmt == "json":
        with open(path, "w") as fh:
            json.dump(
                {"period_s": trace.period_s, "snapshots": trace.snapshots.tolist()},
                fh,
            )
    else:
        raise ConfigError(f"unknown trace format {fmt!r}")


def load_trace(path: str, n: int | None = None, period_s: float = 300.0) -> TrafficTrace:
    """Read a trace written by :func:`save_trace` (format sniffed from content)."""
    with open(path) as fh:
        first = fh.read(1)
    if first == "{":
        with open(path) as fh:
            payload = json.load(fh)
        return TrafficTrace(np.asarray(payload["snapshots"]), payload.get("period_s", period_s))
    rows = []
    with open(path, newline="") as fh:
        reader = csv.DictReader(fh)
        for row in reader:
            rows.append((int(row["t"]), int(row["i"]), int(row["j"]), float(row["gbps"])))
    if not rows:
        raise ConfigError(f"trace file {path} is empty")
    t_total = max(r[0] for r in rows) + 1
    if n is None:
        n = max(max(r[1] for r in rows), max(r[2] for r in rows)) + 1
    snaps = np.zeros((t_total, n, n))
    for t, i, j, v in rows:
        snaps[t, i, j] = v
    return TrafficTrace(snaps, period_s)
