"""Unsupervised segmentation of a scene into superpoint segments.

Points are clustered with Lloyd's algorithm (k-means++ seeding) on a
6-dimensional feature: positions min-max normalized per axis to [0, 1]
concatenated with colors scaled by a configurable weight. The result is
always a partition — disjoint, covering, with no empty segment — because
segment pooling divides by segment sizes downstream.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .errors import PartitionError, ShapeError
from .pointcloud import PointCloud
from .rng import substream


@dataclass(frozen=True)
class SegmentAssignment:
    """Partition of point indices into ``num_segments`` segments."""

    segment_of: np.ndarray
    num_segments: int

    def __post_init__(self):
        seg = np.ascontiguousarray(self.segment_of, dtype=np.int64)
        if seg.ndim != 1:
            raise ShapeError(f"segment_of must be 1-D, got shape {seg.shape}")
        m = int(self.num_segments)
        if m < 1:
            raise PartitionError(f"num_segments must be >= 1, got {m}")
        if seg.size == 0:
            raise PartitionError("segment_of must cover at least one point")
        if seg.min() < 0 or seg.max() >= m:
            raise PartitionError(
                f"segment ids must lie in [0, {m}), got range [{seg.min()}, {seg.max()}]"
            )
        used = np.bincount(seg, minlength=m)
        if np.any(used == 0):
            empty = int(np.flatnonzero(used == 0)[0])
            raise PartitionError(f"segment {empty} of {m} is empty")
        object.__setattr__(self, "segment_of", seg)
        object.__setattr__(self, "num_segments", m)

    @property
    def sizes(self) -> np.ndarray:
        return np.bincount(self.segment_of, minlength=self.num_segments)


@dataclass(frozen=True)
class KMeansConfig:
    target_segments: int = 2000
    max_iters: int = 100
    tol: float = 1e-4
    color_weight: float = 1.0
    seed: int = 0

    def __post_init__(self):
        if self.target_segments < 1:
            raise ValueError(f"target_segments must be >= 1, got {self.target_segments}")
        if self.max_iters < 1:
            raise ValueError(f"max_iters must be >= 1, got {self.max_iters}")
        if self.tol < 0:
            raise ValueError(f"tol must be >= 0, got {self.tol}")
        if self.color_weight < 0:
            raise ValueError(f"color_weight must be >= 0, got {self.color_weight}")


def segment_features(cloud: PointCloud, color_weight: float) -> np.ndarray:
    """N x 6 clustering features: unit-box positions + weighted colors.

    Positions are min-max normalized per axis over the scene; a degenerate
    axis (max == min) maps to 0.5 for every point.
    """
    pos = cloud.positions
    lo = pos.min(axis=0)
    hi = pos.max(axis=0)
    span = hi - lo
    normed = np.empty_like(pos)
    for axis in range(3):
        if span[axis] == 0.0:
            normed[:, axis] = 0.5
        else:
            normed[:, axis] = (pos[:, axis] - lo[axis]) / span[axis]
    return np.hstack([normed, cloud.colors * color_weight])


def _kmeans_pp_init(features: np.ndarray, m: int, rng: np.random.Generator) -> np.ndarray:
    """k-means++ seeding: first center uniform, the rest D²-weighted."""
    n = features.shape[0]
    centers = np.empty((m, features.shape[1]))
    centers[0] = features[rng.integers(n)]
    d2 = np.sum((features - centers[0]) ** 2, axis=1)
    for k in range(1, m):
        total = d2.sum()
        if total <= 0.0:
            # all remaining mass sits on the chosen centers; pick uniformly
            idx = rng.integers(n)
        else:
            idx = rng.choice(n, p=d2 / total)
        centers[k] = features[idx]
        d2 = np.minimum(d2, np.sum((features - centers[k]) ** 2, axis=1))
    return centers


def _pairwise_sq_dists(features: np.ndarray, centers: np.ndarray) -> np.ndarray:
    # |x - c|^2 = |x|^2 - 2 x.c + |c|^2 ; clip tiny negatives from cancellation
    d2 = (
        np.sum(features**2, axis=1)[:, None]
        - 2.0 * features @ centers.T
        + np.sum(centers**2, axis=1)[None, :]
    )
    return np.maximum(d2, 0.0)


def _repair_empty(labels: np.ndarray, features: np.ndarray, centers: np.ndarray) -> np.ndarray:
    """Give each empty cluster the point farthest from its current centroid.

    Donor clusters must keep at least one member, so the partition invariant
    survives; moving the worst-placed point can only lower the objective.
    """
    m = centers.shape[0]
    counts = np.bincount(labels, minlength=m)
    if not np.any(counts == 0):
        return labels
    labels = labels.copy()
    dist_to_own = np.sum((features - centers[labels]) ** 2, axis=1)
    for empty in np.flatnonzero(counts == 0):
        donors = counts[labels] > 1
        if not np.any(donors):
            break
        candidates = np.where(donors, dist_to_own, -np.inf)
        thief = int(np.argmax(candidates))
        counts[labels[thief]] -= 1
        labels[thief] = empty
        counts[empty] += 1
        dist_to_own[thief] = 0.0
    return labels


def lloyd_kmeans(
    features: np.ndarray,
    m: int,
    max_iters: int,
    tol: float,
    rng: np.random.Generator,
) -> tuple[np.ndarray, np.ndarray, list[float]]:
    """Lloyd iterations on precomputed features.

    Returns (labels, centers, objective history). The objective — summed
    squared distance of points to their assigned centroid — is recorded
    after each update step and is non-increasing. Features are unit-scaled
    by construction (see :func:`segment_features`), so ``tol`` acts as a
    relative centroid-shift threshold.
    """
    n = features.shape[0]
    if m > n:
        raise ValueError(f"m={m} exceeds point count {n}")
    centers = _kmeans_pp_init(features, m, rng)
    labels = np.zeros(n, dtype=np.int64)
    history: list[float] = []
    for _ in range(max_iters):
        d2 = _pairwise_sq_dists(features, centers)
        labels = np.argmin(d2, axis=1).astype(np.int64)
        labels = _repair_empty(labels, features, centers)
        new_centers = np.zeros_like(centers)
        np.add.at(new_centers, labels, features)
        counts = np.bincount(labels, minlength=m)
        new_centers /= counts[:, None]
        shift = float(np.max(np.linalg.norm(new_centers - centers, axis=1)))
        centers = new_centers
        history.append(float(np.sum((features - centers[labels]) ** 2)))
        if shift < tol:
            break
    return labels, centers, history


def kmeans_segments_with_history(
    cloud: PointCloud, cfg: KMeansConfig
) -> tuple[SegmentAssignment, list[float]]:
    """Segment a scene; also return the per-iteration Lloyd objective."""
    n = cloud.n
    m = min(cfg.target_segments, n)
    if m == n:
        # singleton partition: each point its own segment, ids by index
        return SegmentAssignment(np.arange(n, dtype=np.int64), n), []
    features = segment_features(cloud, cfg.color_weight)
    rng = substream(cfg.seed, 0)
    labels, _, history = lloyd_kmeans(features, m, cfg.max_iters, cfg.tol, rng)
    # compact ids so every id in [0, m_used) is occupied
    used, compact = np.unique(labels, return_inverse=True)
    return SegmentAssignment(compact.astype(np.int64), int(used.size)), history


def kmeans_segments(cloud: PointCloud, cfg: KMeansConfig) -> SegmentAssignment:
    """Partition a scene into min(cfg.target_segments, N) superpoint segments."""
    assignment, _ = kmeans_segments_with_history(cloud, cfg)
    return assignment
