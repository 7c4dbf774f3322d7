"""Agglomerative clustering of problem-class effect vectors.

Plain Lance-Williams agglomeration over a precomputed distance matrix with a
deterministic tie-break, silhouette scoring, and a silhouette-guided grid
search over (k, metric, linkage). Effect vectors are clustered as-is, without
dimensionality reduction.
"""
from __future__ import annotations

from dataclasses import dataclass

import numpy as np

__all__ = [
    "METRICS",
    "LINKAGES",
    "Dendrogram",
    "ClusterReport",
    "ClusteringError",
    "distance_matrix",
    "agglomerate",
    "cut_k",
    "silhouette",
    "grid_search",
    "write_dendrogram",
    "read_dendrogram",
]

METRICS = ("euclidean", "cosine")
LINKAGES = ("single", "complete", "average", "ward")


class ClusteringError(ValueError):
    pass


@dataclass(frozen=True)
class Dendrogram:
    """Ordered merge list; leaves are 0..n-1, merge m creates cluster n+m."""

    n_leaves: int
    merges: tuple[tuple[int, int, float, int], ...]  # (id_a, id_b, height, new_id)
    metric: str = "euclidean"
    linkage: str = "average"


@dataclass(frozen=True)
class ClusterReport:
    best_k: int
    best_metric: str
    best_linkage: str
    best_score: float
    labels: dict[str, int]
    grid: tuple[dict, ...]  # one entry per (k, metric, linkage) cell


def distance_matrix(vectors, metric: str) -> np.ndarray:
    vectors = np.asarray(vectors, dtype=float)
    if vectors.ndim != 2 or vectors.shape[0] < 2:
        raise ClusteringError("need at least 2 vectors of equal length")
    if metric == "euclidean":
        diff = vectors[:, None, :] - vectors[None, :, :]
        dist = np.sqrt(np.sum(diff * diff, axis=2))
    elif metric == "cosine":
        norms = np.linalg.norm(vectors, axis=1)
        if np.any(norms == 0.0):
            raise ClusteringError("cosine distance is undefined for zero vectors")
        unit = vectors / norms[:, None]
        dist = 1.0 - unit @ unit.T
        np.clip(dist, 0.0, None, out=dist)
    else:
        raise ClusteringError(f"unknown metric {metric!r}")
    np.fill_diagonal(dist, 0.0)
    return (dist + dist.T) / 2.0


def agglomerate(distances, linkage: str, metric: str = "euclidean") -> Dendrogram:
    """Standard Lance-Williams agglomeration.

    Tie-break: among minimum-distance pairs, merge the one with the smallest
    (min id, max id). Ward is only defined over euclidean distances.
    """
    if linkage not in LINKAGES:
        raise ClusteringError(f"unknown linkage {linkage!r}")
    if linkage == "ward" and metric != "euclidean":
        raise ClusteringError("ward linkage requires euclidean distances")
    dist = np.asarray(distances, dtype=float)
    n = dist.shape[0]
    if dist.shape != (n, n) or n < 2:
        raise ClusteringError("distances must be a square matrix of >= 2 points")

    current = {i: dict() for i in range(n)}
    for i in range(n):
        for j in range(i + 1, n):
            current[i][j] = float(dist[i, j])
            current[j][i] = float(dist[i, j])
    sizes = {i: 1 for i in range(n)}
    merges = []
    next_id = n
    for _ in range(n - 1):
        best = None  # (height, min_id, max_id)
        for a in current:
            for b, d in current[a].items():
                if a < b:
                    key = (d, a, b)
                    if best is None or key < best:
                        best = key
        height, a, b = best
        d_ab = height
        na, nb = sizes[a], sizes[b]
        new = {}
        for x in current:
            if x in (a, b):
                continue
            d_ax, d_bx = current[a][x], current[b][x]
            if linkage == "single":
                d_new = min(d_ax, d_bx)
            elif linkage == "complete":
                d_new = max(d_ax, d_bx)
            elif linkage == "average":
                d_new = (na * d_ax + nb * d_bx) / (na + nb)
            else:  # ward
                nx = sizes[x]
                d_new = np.sqrt(
                    ((nx + na) * d_ax**2 + (nx + nb) * d_bx**2 - nx * d_ab**2)
                    / (na + nb + nx)
                )
            new[x] = float(d_new)
        for x in list(current):
            current[x].pop(a, None)
            current[x].pop(b, None)
        del current[a], current[b]
        for x, d_new in new.items():
            current[x][next_id] = d_new
        current[next_id] = new
        sizes[next_id] = na + nb
        merges.append((a, b, height, next_id))
        next_id += 1
    return Dendrogram(n_leaves=n, merges=tuple(merges), metric=metric, linkage=linkage)


def cut_k(dendrogram: Dendrogram, k: int) -> np.ndarray:
    """Labels after undoing the last k-1 merges; contiguous ints in leaf order."""
    n = dendrogram.n_leaves
    if not 1 <= k <= n:
        raise ClusteringError(f"k={k} outside [1, {n}]")
    parent = {}
    for a, b, _, new in dendrogram.merges[: n - k]:
        parent[a] = new
        parent[b] = new

    def find(i):
        while i in parent:
            i = parent[i]
        return i

    labels = np.empty(n, dtype=int)
    mapping = {}
    for leaf in range(n):
        root = find(leaf)
        if root not in mapping:
            mapping[root] = len(mapping)
        labels[leaf] = mapping[root]
    return labels


def silhouette(labels, distances) -> float:
    """Mean of (b - a) / max(a, b); singleton clusters contribute 0."""
    labels = np.asarray(labels)
    dist = np.asarray(distances, dtype=float)
    clusters = np.unique(labels)
    if clusters.size < 2:
        raise ClusteringError("silhouette needs at least 2 clusters")
    n = labels.size
    scores = np.zeros(n)
    for i in range(n):
        own = labels[i]
        mask_own = labels == own
        if mask_own.sum() == 1:
            continue  # singleton
        a = dist[i, mask_own].sum() / (mask_own.sum() - 1)
        b = min(
            dist[i, labels == c].mean() for c in clusters if c != own
        )
        denom = max(a, b)
        scores[i] = 0.0 if denom == 0.0 else (b - a) / denom
    return float(scores.mean())


def grid_search(vectors, ks, metrics=METRICS, linkages=LINKAGES, names=None) -> ClusterReport:
    """Evaluate every (k, metric, linkage) cell; pick the best silhouette.

    Ties break toward smaller k, then metric order, then linkage order.
    ward+cosine cells are recorded as invalid, never evaluated.
    """
    vectors = np.asarray(vectors, dtype=float)
    n = vectors.shape[0]
    ks = [k for k in ks]
    if not ks:
        raise ClusteringError("empty k range")
    for k in ks:
        if not 2 <= k <= n - 1:
            raise ClusteringError(f"k={k} outside [2, {n - 1}]")
    if names is None:
        names = [str(i) for i in range(n)]

    grid = []
    best = None  # (-score, k, metric_idx, linkage_idx, labels)
    for mi, metric in enumerate(metrics):
        dist = distance_matrix(vectors, metric)
        for li, link in enumerate(linkages):
            if link == "ward" and metric != "euclidean":
                for k in ks:
                    grid.append(
                        {"k": k, "metric": metric, "linkage": link,
                         "score": None, "valid": False}
                    )
                continue
            dendro = agglomerate(dist, link, metric)
            for k in ks:
                labels = cut_k(dendro, k)
                score = silhouette(labels, dist)
                grid.append(
                    {"k": k, "metric": metric, "linkage": link,
                     "score": score, "valid": True}
                )
                key = (-score, k, mi, li)
                if best is None or key < best[0]:
                    best = (key, labels, metric, link, k, score)
    if best is None:
        raise ClusteringError("no valid grid cells")
    _, labels, metric, link, k, score = best
    return ClusterReport(
        best_k=k,
        best_metric=metric,
        best_linkage=link,
        best_score=score,
        labels={name: int(label) for name, label in zip(names, labels)},
        grid=tuple(grid),
    )


def write_dendrogram(dendrogram: Dendrogram, leaf_names, path) -> None:
    lines = [
        f"# n_leaves {dendrogram.n_leaves}",
        f"# metric {dendrogram.metric}",
        f"# linkage {dendrogram.linkage}",
        f"# leaves {'|'.join(leaf_names)}",
        "id_a,id_b,height,new_id",
    ]
    for a, b, h, new in dendrogram.merges:
        lines.append(f"{a},{b},{h!r},{new}")
    with open(path, "w") as fh:
        fh.write("\n".join(lines) + "\n")


def read_dendrogram(path):
    meta = {}
    merges = []
    header_seen = False
    with open(path) as fh:
        for line in fh:
            line = line.rstrip("\n")
            if not line:
                continue
            if line.startswith("#"):
                key, _, value = line[1:].strip().partition(" ")
                meta[key] = value
                continue
            if not header_seen:
                header_seen = True
                continue
            a, b, h, new = line.split(",")
            merges.append((int(a), int(b), float(h), int(new)))
    dendro = Dendrogram(
        n_leaves=int(meta["n_leaves"]),
        merges=tuple(merges),
        metric=meta.get("metric", "euclidean"),
        linkage=meta.get("linkage", "average"),
    )
    return dendro, meta.get("leaves", "").split("|")
