"""Point-set primitives: seeded subsampling, nearest-anchor assignment,
block partitions, and the partition-keyed reductions built on them.

Nearest-neighbor queries are brute force (desk scale tops out well below
10k points); assignments tie-break to the lowest anchor index so partitions
are deterministic.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from . import rng
from .tensor import (
    Tensor,
    segment_max,
    segment_max_np,
    segment_mean,
    segment_mean_np,
    take_rows,
)


@dataclass
class PointCloud:
    positions: np.ndarray
    features: np.ndarray | None = None
    label: int | None = None

    def __post_init__(self):
        self.positions = np.asarray(self.positions, dtype=np.float64)
        if self.positions.ndim != 2 or self.positions.shape[1] != 3:
            raise ValueError(f"positions must be (N, 3), got {self.positions.shape}")
        if len(self.positions) < 1:
            raise ValueError("point cloud must contain at least one point")
        if not np.isfinite(self.positions).all():
            raise ValueError("positions must be finite")
        if self.features is not None:
            self.features = np.asarray(self.features)
            if self.features.shape[0] != len(self.positions):
                raise ValueError("features row count must match point count")

    @property
    def n(self) -> int:
        return len(self.positions)


@dataclass
class BlockPartition:
    """Anchor set plus the per-point nearest-anchor assignment.

    ``from_anchors`` builds the canonical partition (nearest anchor, lowest
    index on ties). Direct construction permits arbitrary assignments, which
    the anchor-independence checks exploit; ``validate`` re-checks the
    nearest-anchor property when it is wanted.
    """

    anchors: np.ndarray
    assignment: np.ndarray
    block_sizes: np.ndarray = field(init=False)

    def __post_init__(self):
        self.anchors = np.asarray(self.anchors, dtype=np.float64)
        self.assignment = np.asarray(self.assignment, dtype=np.int64)
        m = len(self.anchors)
        if self.assignment.min(initial=0) < 0 or (len(self.assignment) and self.assignment.max() >= m):
            raise ValueError("assignment indices out of range")
        self.block_sizes = np.bincount(self.assignment, minlength=m)

    @property
    def num_blocks(self) -> int:
        return len(self.anchors)

    @classmethod
    def from_anchors(cls, points: np.ndarray, anchors: np.ndarray) -> "BlockPartition":
        return cls(anchors, one_nn_assign_indices(points, anchors))

    def validate(self, points: np.ndarray) -> bool:
        return bool(np.array_equal(self.assignment, one_nn_assign_indices(points, self.anchors)))


# -- subsampling -------------------------------------------------------------


def subsample_count(n: int, ratio: int) -> int:
    if ratio < 1:
        raise ValueError("ratio must be >= 1")
    return max(1, -(-n // ratio))


def random_subsample_indices(n: int, ratio: int, *seed_parts) -> np.ndarray:
    """ceil(n/ratio) distinct point indices via a seeded partial shuffle
    (at least one survives even when ratio exceeds n)."""
    return rng.sample_indices(n, subsample_count(n, ratio), *seed_parts)


def random_subsample(cloud: PointCloud, ratio: int, seed: int) -> np.ndarray:
    return cloud.positions[random_subsample_indices(cloud.n, ratio, seed)]


def fps_subsample_indices(points: np.ndarray, count: int, *seed_parts) -> np.ndarray:
    """Farthest-point iteration from a seeded start index."""
    n = len(points)
    if not 1 <= count <= n:
        raise ValueError(f"count must lie in [1, {n}], got {count}")
    start = int(rng.generator(*seed_parts, "fps").integers(n))
    chosen = np.empty(count, dtype=np.int64)
    chosen[0] = start
    best = ((points - points[start]) ** 2).sum(axis=1)
    for i in range(1, count):
        nxt = int(np.argmax(best))
        chosen[i] = nxt
        np.minimum(best, ((points - points[nxt]) ** 2).sum(axis=1), out=best)
    return chosen


def fps_subsample(cloud: PointCloud, count: int, seed: int) -> np.ndarray:
    return cloud.positions[fps_subsample_indices(cloud.positions, count, seed)]


# -- nearest neighbors ---------------------------------------------------------


def _sq_dists(queries: np.ndarray, targets: np.ndarray) -> np.ndarray:
    q = np.asarray(queries, dtype=np.float64)
    t = np.asarray(targets, dtype=np.float64)
    d2 = q @ (-2.0 * t.T)
    d2 += np.einsum("ij,ij->i", q, q)[:, None]
    d2 += np.einsum("ij,ij->i", t, t)[None, :]
    np.maximum(d2, 0.0, out=d2)
    return d2


_EXACT_PAIR_LIMIT = 1 << 18  # broadcast-difference path up to ~6 MB of temporaries


def one_nn_assign_indices(points: np.ndarray, anchors: np.ndarray) -> np.ndarray:
    """Nearest anchor per point, ties to the lowest anchor index.

    Small problems take the exact coordinate-difference form, which keeps
    coincident points at a true zero distance so the tie-break is honored
    bit-for-bit. Large problems switch to a chunked expanded form in single
    precision; with non-degenerate inputs the argmin is unaffected.
    """
    points = np.asarray(points, dtype=np.float64)
    anchors = np.asarray(anchors, dtype=np.float64)
    n, m = len(points), len(anchors)
    if m < 1:
        raise ValueError("need at least one anchor")
    if n * m <= _EXACT_PAIR_LIMIT:
        d2 = ((points[:, None, :] - anchors[None, :, :]) ** 2).sum(axis=2)
        return np.argmin(d2, axis=1).astype(np.int64)
    q = points.astype(np.float32)
    t = anchors.astype(np.float32)
    sq_t = np.einsum("ij,ij->i", t, t)
    out = np.empty(n, dtype=np.int64)
    chunk = max(1, _EXACT_PAIR_LIMIT // (2 * m))
    for lo in range(0, n, chunk):
        qq = q[lo : lo + chunk]
        d2 = qq @ (-2.0 * t.T)
        d2 += np.einsum("ij,ij->i", qq, qq)[:, None]
        d2 += sq_t[None, :]
        out[lo : lo + chunk] = np.argmin(d2, axis=1)
    return out


def one_nn_assign(points: np.ndarray, anchors: np.ndarray) -> BlockPartition:
    return BlockPartition(anchors, one_nn_assign_indices(points, anchors))


def knn(points: np.ndarray, centers: np.ndarray, k: int) -> np.ndarray:
    """Indices of the k nearest source points per center, ascending distance,
    ties to the lower source index."""
    n = len(points)
    if k > n:
        raise ValueError(f"k={k} exceeds point count {n}")
    d2 = _sq_dists(centers, points)
    if k == n:
        cand = np.broadcast_to(np.arange(n, dtype=np.int64), d2.shape)
    else:
        cand = np.argpartition(d2, k - 1, axis=1)[:, :k]
    rows = np.arange(len(centers))[:, None]
    cd = d2[rows, cand]
    order = np.lexsort((cand, cd), axis=1)
    return np.ascontiguousarray(cand[rows, order].astype(np.int64))


# -- partition-keyed reductions ------------------------------------------------


def scatter_mean(features, partition: BlockPartition):
    """Per-block mean rows; empty blocks yield zero rows. Accepts a plain
    array or a differentiable tensor."""
    if isinstance(features, Tensor):
        return segment_mean(features, partition.assignment, partition.num_blocks)
    return segment_mean_np(np.asarray(features), partition.assignment, partition.num_blocks)


def scatter_max(features, partition: BlockPartition):
    """Per-block channel-wise max; empty blocks yield zero rows; gradients
    route to the lowest-index argmax row."""
    if isinstance(features, Tensor):
        return segment_max(features, partition.assignment, partition.num_blocks)
    out, _ = segment_max_np(np.asarray(features), partition.assignment, partition.num_blocks)
    return out


def gather(anchor_features, partition: BlockPartition):
    """Broadcast anchor rows back to their members: out[i] = rows[assignment[i]]."""
    if isinstance(anchor_features, Tensor):
        return take_rows(anchor_features, partition.assignment)
    return np.asarray(anchor_features)[partition.assignment]
