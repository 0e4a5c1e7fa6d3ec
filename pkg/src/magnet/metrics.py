"""Vibration-intensity metrics, regime grouping, and selection-error rates.

RMSA summarises a 3-axis acceleration window as the root-sum-of-squares of
per-axis RMS values (no frequency weighting). Trials are grouped into
low/high vibration regimes either by a 1-D k-means threshold or by the
split mean, and error rates are reported overall and per group.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .errors import InputError

SILHOUETTE_K_RANGE = (2, 3, 4, 5)


def rmsa(acc: np.ndarray) -> float:
    """Root-sum-of-squares across axes of per-axis RMS acceleration."""
    acc = np.asarray(acc, dtype=np.float64)
    if acc.ndim != 2 or acc.shape[1] != 3:
        raise InputError(f"acc window must be (T, 3), got {acc.shape}")
    if acc.shape[0] == 0:
        raise InputError("acc window is empty")
    per_axis_ms = np.mean(acc**2, axis=0)
    return float(np.sqrt(per_axis_ms.sum()))


def kmeans_1d(values: np.ndarray, k: int, max_iter: int = 200) -> tuple[np.ndarray, np.ndarray]:
    """Lloyd's algorithm on scalars with deterministic quantile init.

    Returns (sorted cluster centers, labels aligned to sorted centers).
    """
    x = np.asarray(values, dtype=np.float64).ravel()
    if k < 1:
        raise InputError(f"k must be >= 1, got {k}")
    if len(np.unique(x)) < k:
        raise InputError(f"need at least {k} distinct values for k={k}")
    centers = np.quantile(x, (np.arange(k) + 0.5) / k)
    # Quantile init can collide on skewed data; nudge apart deterministically.
    for i in range(1, k):
        if centers[i] <= centers[i - 1]:
            centers[i] = np.nextafter(centers[i - 1], np.inf)
    labels = np.zeros(len(x), dtype=int)
    for _ in range(max_iter):
        d = np.abs(x[:, None] - centers[None, :])
        new_labels = np.argmin(d, axis=1)
        new_centers = centers.copy()
        for j in range(k):
            members = x[new_labels == j]
            if len(members):
                new_centers[j] = members.mean()
        if np.array_equal(new_labels, labels) and np.allclose(new_centers, centers):
            break
        labels, centers = new_labels, new_centers
    order = np.argsort(centers)
    remap = np.empty(k, dtype=int)
    remap[order] = np.arange(k)
    return centers[order], remap[labels]


def silhouette_1d(values: np.ndarray, labels: np.ndarray) -> float:
    """Mean silhouette coefficient; rows chunked to bound the pairwise matrix."""
    x = np.asarray(values, dtype=np.float64).ravel()
    labels = np.asarray(labels)
    k = labels.max() + 1
    if k < 2:
        raise InputError("silhouette needs at least 2 clusters")
    counts = np.bincount(labels, minlength=k)
    scores = np.empty(len(x))
    for start in range(0, len(x), 512):
        rows = slice(start, min(start + 512, len(x)))
        d = np.abs(x[rows, None] - x[None, :])
        # Sum of distances from each row point to every cluster.
        sums = np.zeros((d.shape[0], k))
        for j in range(k):
            sums[:, j] = d[:, labels == j].sum(axis=1)
        own = labels[rows]
        a_den = counts[own] - 1
        a = np.where(a_den > 0, sums[np.arange(d.shape[0]), own] / np.maximum(a_den, 1), 0.0)
        # empty clusters divide 0/0; the own-cluster mask hides them anyway
        means = np.divide(sums, counts[None, :], out=np.full_like(sums, np.inf),
                          where=counts[None, :] > 0)
        other = np.where(np.arange(k)[None, :] == own[:, None], np.inf, means)
        b = other.min(axis=1)
        denom = np.maximum(a, b)
        scores[rows] = np.where((denom > 0) & (a_den > 0), (b - a) / np.where(denom > 0, denom, 1), 0.0)
    return float(scores.mean())


def select_k(values: np.ndarray, k_range=SILHOUETTE_K_RANGE) -> tuple[int, dict[int, float]]:
    """Pick the cluster count with the best silhouette score."""
    scores: dict[int, float] = {}
    for k in k_range:
        try:
            _, labels = kmeans_1d(values, k)
        except InputError:
            continue
        if len(np.unique(labels)) < 2:
            continue
        scores[k] = silhouette_1d(values, labels)
    if not scores:
        raise InputError("no k in range produced a valid clustering")
    best = max(scores, key=lambda k: (scores[k], -k))
    return best, scores


@dataclass
class GroupingRule:
    """Splits trials into G1 (below threshold) and G2 (at or above)."""

    name: str
    threshold: float

    def group(self, value: float) -> int:
        return 1 if value < self.threshold else 2


def cluster_threshold(values: np.ndarray, k_range=SILHOUETTE_K_RANGE) -> tuple[GroupingRule, dict]:
    """Threshold at the midpoint of adjacent cluster centers; with k > 2 the
    widest gap between adjacent centers defines the split."""
    k, scores = select_k(values, k_range)
    centers, _ = kmeans_1d(values, k)
    gaps = np.diff(centers)
    at = int(np.argmax(gaps))
    threshold = float((centers[at] + centers[at + 1]) / 2)
    info = {"k": k, "centers": centers.tolist(), "silhouette": scores}
    return GroupingRule(name="clust", threshold=threshold), info


def mean_threshold(values: np.ndarray) -> GroupingRule:
    return GroupingRule(name="mean", threshold=float(np.mean(values)))


def error_at_k(rankings: list[list[int]], intended: list[int], k: int) -> float:
    """Fraction of trials whose intended target is absent from the top k."""
    if len(rankings) != len(intended):
        raise InputError(f"{len(rankings)} rankings vs {len(intended)} intended ids")
    if not rankings:
        raise InputError("no trials to score")
    misses = sum(1 for r, t in zip(rankings, intended) if t not in r[:k])
    return misses / len(rankings)


def grouped_error_at_1(
    rankings: list[list[int]],
    intended: list[int],
    rmsa_values: list[float],
    rule: GroupingRule,
) -> dict[int, float]:
    """E@1 within each vibration group. Groups with no trials are omitted."""
    if not (len(rankings) == len(intended) == len(rmsa_values)):
        raise InputError("rankings, intended, and rmsa lists must align")
    hits: dict[int, list[int]] = {1: [], 2: []}
    for r, t, m in zip(rankings, intended, rmsa_values):
        hits[rule.group(m)].append(0 if r[0] == t else 1)
    return {g: float(np.mean(v)) for g, v in hits.items() if v}
