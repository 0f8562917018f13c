"""Local Outlier Factor in novelty mode, trained on correct-route features only.

Scores measure how isolated a query is relative to the local density of the
stored training set: a point whose local reachability density matches its
neighbors scores near 1, an outlier scores well above it. Neighbor k-distances
inside reachability follow the original LOF convention (the neighbor's own
k-distance), which the definitional oracle in the tests pins down.
"""

from __future__ import annotations

import csv
from dataclasses import dataclass, replace
from typing import Sequence

import numpy as np
from scipy.spatial.distance import cdist

EUCLIDEAN = "euclidean"
MANHATTAN = "manhattan"

_CDIST_NAMES = {EUCLIDEAN: "euclidean", MANHATTAN: "cityblock"}

_ZERO_DISTANCE_FLOOR = 1e-12  # duplicate clusters would otherwise blow up LRD


def _distances_to(points: np.ndarray, query: np.ndarray, metric: str) -> np.ndarray:
    # one kernel for every distance in this module: neighbor membership
    # tests (d <= k-distance) must see bit-identical values on both sides
    if metric not in _CDIST_NAMES:
        raise ValueError(f"unsupported metric {metric!r}")
    return cdist(points, query[None, :], metric=_CDIST_NAMES[metric])[:, 0]


def _pairwise(points: np.ndarray, metric: str) -> np.ndarray:
    if metric not in _CDIST_NAMES:
        raise ValueError(f"unsupported metric {metric!r}")
    return cdist(points, points, metric=_CDIST_NAMES[metric])


def k_distance(
    points: np.ndarray,
    index: int,
    k: int,
    metric: str = EUCLIDEAN,
) -> tuple[float, np.ndarray]:
    """K-distance of point ``index`` within its own set, plus the neighbor set.

    The point itself never counts as a neighbor. Returns the distance to its
    k-th nearest distinct neighbor and the indices of everything at or
    inside that radius, so distance ties can grow the set beyond k.
    """
    points = np.atleast_2d(np.asarray(points, dtype=float))
    n = points.shape[0]
    if k < 1:
        raise ValueError("k must be at least 1")
    if n - 1 < k:
        raise ValueError(f"need at least {k} other points, got {n - 1}")
    dist = _distances_to(points, points[index], metric)
    dist[index] = np.inf
    dk = float(np.partition(dist, k - 1)[k - 1])
    return dk, np.flatnonzero(dist <= dk)


def reachability_distance(
    points: np.ndarray,
    index_a: int,
    index_b: int,
    k: int,
    metric: str = EUCLIDEAN,
) -> float:
    """max of a's own k-distance and the direct distance from a to b."""
    points = np.atleast_2d(np.asarray(points, dtype=float))
    dk, _ = k_distance(points, index_a, k, metric)
    direct = float(_distances_to(points[index_b][None, :], points[index_a], metric)[0])
    return max(dk, direct)


def _member_tables(points: np.ndarray, k: int, metric: str):
    """Per-point k-distance and LRD with each point excluded from its own set.

    Reachability of a point from neighbor B uses B's own k-distance (the
    original LOF convention).
    """
    n = points.shape[0]
    if n <= k:
        raise ValueError(f"a set of {n} points cannot support k={k}")
    dist = _pairwise(points, metric)
    np.fill_diagonal(dist, np.inf)
    dk = np.partition(dist, k - 1, axis=1)[:, k - 1]
    lrd = np.empty(n)
    for i in range(n):
        neigh = np.flatnonzero(dist[i] <= dk[i])
        reach = np.maximum(dk[neigh], dist[i, neigh])
        lrd[i] = len(neigh) / max(reach.sum(), _ZERO_DISTANCE_FLOOR)
    return dk, lrd


def local_reachability_density(
    points: np.ndarray,
    index: int,
    k: int,
    metric: str = EUCLIDEAN,
) -> float:
    """Inverse mean reachability distance of one point from its neighbors."""
    points = np.atleast_2d(np.asarray(points, dtype=float))
    return float(_member_tables(points, k, metric)[1][index])


def lof_score(
    points: np.ndarray,
    index: int,
    k: int,
    metric: str = EUCLIDEAN,
) -> float:
    """Ratio of the neighbors' mean LRD to the point's own LRD."""
    points = np.atleast_2d(np.asarray(points, dtype=float))
    dk, lrd = _member_tables(points, k, metric)
    dist = _distances_to(points, points[index], metric)
    dist[index] = np.inf
    neigh = np.flatnonzero(dist <= dk[index])
    return float(lrd[neigh].mean() / lrd[index])


@dataclass(frozen=True)
class LofModel:
    """Stored training features with precomputed k-distances and LRDs."""

    features: np.ndarray
    k: int
    tau: float
    metric: str
    train_k_distance: np.ndarray
    train_lrd: np.ndarray

    def __post_init__(self):
        for name in ("features", "train_k_distance", "train_lrd"):
            arr = np.asarray(getattr(self, name), dtype=float)
            arr.setflags(write=False)
            object.__setattr__(self, name, arr)
        if self.k < 1:
            raise ValueError("k must be at least 1")
        if self.features.shape[0] <= self.k:
            raise ValueError("training set must exceed k points")
        if self.tau < 1.0:
            raise ValueError("decision threshold must be at least 1")

    @property
    def num_train(self) -> int:
        return self.features.shape[0]


def fit(
    features: np.ndarray,
    k: int,
    tau: float = 1.5,
    metric: str = EUCLIDEAN,
) -> LofModel:
    """Precompute neighbor tables over correct-route features (labels unseen)."""
    features = np.atleast_2d(np.asarray(features, dtype=float))
    dk, lrd = _member_tables(features, k, metric)
    return LofModel(
        features=features,
        k=k,
        tau=tau,
        metric=metric,
        train_k_distance=dk,
        train_lrd=lrd,
    )


def score(model: LofModel, query: Sequence[float]) -> float:
    """LOF score of a query against the stored training set only."""
    dist = _distances_to(model.features, np.asarray(query, dtype=float), model.metric)
    dk = float(np.partition(dist, model.k - 1)[model.k - 1])
    neigh = np.flatnonzero(dist <= dk)
    reach = np.maximum(model.train_k_distance[neigh], dist[neigh])
    query_lrd = len(neigh) / max(reach.sum(), _ZERO_DISTANCE_FLOOR)
    return float(model.train_lrd[neigh].mean() / query_lrd)


def predict(model: LofModel, query: Sequence[float]) -> tuple[float, bool]:
    """(LOF score, anomalous?) for one query."""
    value = score(model, query)
    return value, value > model.tau


def score_many(model: LofModel, queries: np.ndarray) -> np.ndarray:
    queries = np.atleast_2d(np.asarray(queries, dtype=float))
    return np.array([score(model, q) for q in queries])


def calibrate_tau(
    model: LofModel,
    validation_features: np.ndarray,
    percentile: float = 99.0,
) -> LofModel:
    """Set tau to a percentile of validation-inlier scores (never below 1)."""
    values = score_many(model, validation_features)
    return replace(model, tau=max(1.0, float(np.percentile(values, percentile))))


def select_k(
    train_features: np.ndarray,
    validation_features: np.ndarray,
    candidates: Sequence[int] = tuple(range(1, 11)),
    tau: float = 1.5,
    metric: str = EUCLIDEAN,
) -> int:
    """Neighbor count maximizing inlier accuracy on the validation split.

    Accuracy is the fraction of validation inliers scoring at or below tau;
    ties go to the smallest k.
    """
    best_k, best_acc = None, -1.0
    for k in candidates:
        if train_features.shape[0] <= k:
            continue
        model = fit(train_features, k, tau=tau, metric=metric)
        values = score_many(model, validation_features)
        acc = float(np.mean(values <= tau))
        if acc > best_acc:
            best_k, best_acc = k, acc
    if best_k is None:
        raise ValueError("no usable k candidate for this training set size")
    return best_k


# ---------------------------------------------------------------------------
# persistence


def save_lof_model(model: LofModel, path: str) -> None:
    """CSV with a config row followed by per-training-point rows."""
    with open(path, "w", newline="", encoding="utf-8") as fh:
        writer = csv.writer(fh, lineterminator="\n")
        writer.writerow(["k", "tau", "metric", "dim"])
        writer.writerow([model.k, repr(model.tau), model.metric, model.features.shape[1]])
        writer.writerow(["k_distance", "lrd", "features..."])
        for i in range(model.num_train):
            row = [repr(float(model.train_k_distance[i])), repr(float(model.train_lrd[i]))]
            row.extend(repr(float(v)) for v in model.features[i])
            writer.writerow(row)


def load_lof_model(path: str) -> LofModel:
    with open(path, "r", newline="", encoding="utf-8") as fh:
        reader = csv.reader(fh)
        header = next(reader)
        if header[:3] != ["k", "tau", "metric"]:
            raise ValueError(f"{path} is not a LOF model file")
        k_str, tau_str, metric, _dim = next(reader)
        next(reader)  # column header
        dk, lrd, feats = [], [], []
        for row in reader:
            dk.append(float(row[0]))
            lrd.append(float(row[1]))
            feats.append([float(v) for v in row[2:]])
    return LofModel(
        features=np.asarray(feats),
        k=int(k_str),
        tau=float(tau_str),
        metric=metric,
        train_k_distance=np.asarray(dk),
        train_lrd=np.asarray(lrd),
    )
