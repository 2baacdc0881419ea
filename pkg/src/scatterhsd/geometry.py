"""Point-set kernels: normalization, farthest point sampling, kNN, Chamfer.

Every distance is a squared Euclidean distance evaluated as
``dx*dx + dy*dy + dz*dz`` in that order, so scalar reference code and the
vectorized kernels here agree bit for bit. Ties always go to the lower index.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import Optional, Sequence, Union

import numpy as np

from .errors import InvalidInput

ArrayLike = Union["PointCloud", np.ndarray, Sequence[Sequence[float]]]


@dataclass(frozen=True, eq=False)
class PointCloud:
    """An ordered set of 3D points with optional per-point part labels.

    Arrays are copied on construction and flagged read-only, so a cloud can be
    shared freely between threads.
    """

    points: np.ndarray
    labels: Optional[np.ndarray] = field(default=None)

    def __post_init__(self):
        pts = np.array(self.points, dtype=np.float64, copy=True)
        if pts.ndim != 2 or pts.shape[1] != 3:
            raise InvalidInput(f"points must have shape (n, 3), got {pts.shape}")
        if not np.isfinite(pts).all():
            raise InvalidInput("point coordinates must be finite")
        pts.setflags(write=False)
        object.__setattr__(self, "points", pts)
        if self.labels is not None:
            lab = np.array(self.labels, dtype=np.int64, copy=True).reshape(-1)
            if lab.shape[0] != pts.shape[0]:
                raise InvalidInput(
                    f"{lab.shape[0]} labels for {pts.shape[0]} points")
            lab.setflags(write=False)
            object.__setattr__(self, "labels", lab)

    def __len__(self):
        return self.points.shape[0]

    def __eq__(self, other):
        if not isinstance(other, PointCloud):
            return NotImplemented
        if not np.array_equal(self.points, other.points):
            return False
        if (self.labels is None) != (other.labels is None):
            return False
        return self.labels is None or np.array_equal(self.labels, other.labels)

    __hash__ = None

    def subset(self, indices) -> "PointCloud":
        idx = np.asarray(indices, dtype=np.int64)
        labels = None if self.labels is None else self.labels[idx]
        return PointCloud(self.points[idx], labels)


@dataclass(frozen=True)
class NeighborIndex:
    center_index: int
    neighbor_indices: tuple


def as_points(cloud: ArrayLike) -> np.ndarray:
    """Return an (n, 3) float64 array view of ``cloud``."""
    if isinstance(cloud, PointCloud):
        return cloud.points
    pts = np.asarray(cloud, dtype=np.float64)
    if pts.ndim != 2 or pts.shape[1] != 3:
        raise InvalidInput(f"points must have shape (n, 3), got {pts.shape}")
    return pts


def sq_dists_to(points: np.ndarray, q: np.ndarray) -> np.ndarray:
    """Squared distances from every row of ``points`` to the single point ``q``."""
    dx = points[:, 0] - q[0]
    dy = points[:, 1] - q[1]
    dz = points[:, 2] - q[2]
    return dx * dx + dy * dy + dz * dz


def pairwise_sq_dists(a: np.ndarray, b: np.ndarray) -> np.ndarray:
    """Squared distances between point sets; leading batch axes broadcast.

    ``a`` is (..., n, 3), ``b`` is (..., m, 3); the result is (..., n, m).
    """
    out = None
    for c in range(3):
        ac = np.ascontiguousarray(a[..., c])
        bc = np.ascontiguousarray(b[..., c])
        d = ac[..., :, None] - bc[..., None, :]
        d *= d
        if out is None:
            out = d
        else:
            out += d
    return out


def normalize(cloud: PointCloud) -> PointCloud:
    """Center on the centroid and scale so the farthest point has norm 1."""
    pts = as_points(cloud)
    if pts.shape[0] == 0:
        raise InvalidInput("cannot normalize an empty cloud")
    centered = pts - pts.mean(axis=0)
    radius = math.sqrt(float(np.max(sq_dists_to(centered, np.zeros(3)))))
    if radius > 0:
        centered = centered / radius
    labels = cloud.labels if isinstance(cloud, PointCloud) else None
    return PointCloud(centered, labels)


def fps(cloud: ArrayLike, m: int, start: Optional[int] = 0,
        rng: Optional[np.random.Generator] = None) -> list:
    """Greedy farthest point sampling.

    Starts at ``start`` and repeatedly takes the unselected point whose minimum
    squared distance to the selection is largest. Pass ``start=None`` with an
    ``rng`` to draw the start index (augmentation mode).
    """
    pts = as_points(cloud)
    n = pts.shape[0]
    if not 1 <= m <= n:
        raise InvalidInput(f"fps needs 1 <= m <= {n}, got m={m}")
    if start is None:
        if rng is None:
            raise InvalidInput("start=None requires an rng")
        start = int(rng.integers(n))
    if not 0 <= start < n:
        raise InvalidInput(f"start index {start} out of range for {n} points")
    mind = sq_dists_to(pts, pts[start])
    mind[start] = -1.0
    out = [int(start)]
    for _ in range(m - 1):
        nxt = int(np.argmax(mind))
        out.append(nxt)
        np.minimum(mind, sq_dists_to(pts, pts[nxt]), out=mind)
        mind[nxt] = -1.0
    return out


def batch_fps(points: np.ndarray, m: int, start: np.ndarray) -> np.ndarray:
    """Farthest point sampling over a batch (B, n, 3); returns (B, m) indices."""
    b, n, _ = points.shape
    if not 1 <= m <= n:
        raise InvalidInput(f"fps needs 1 <= m <= {n}, got m={m}")
    rows = np.arange(b)
    out = np.empty((b, m), dtype=np.int64)
    out[:, 0] = start
    cur = points[rows, start]
    d = points - cur[:, None, :]
    mind = d[..., 0] * d[..., 0] + d[..., 1] * d[..., 1] + d[..., 2] * d[..., 2]
    mind[rows, start] = -1.0
    for j in range(1, m):
        nxt = np.argmax(mind, axis=1)
        out[:, j] = nxt
        d = points - points[rows, nxt][:, None, :]
        np.minimum(mind, d[..., 0] * d[..., 0] + d[..., 1] * d[..., 1]
                   + d[..., 2] * d[..., 2], out=mind)
        mind[rows, nxt] = -1.0
    return out


def farthest_from_origin(points: np.ndarray) -> np.ndarray:
    """Index of the point with the largest norm in each cloud of (B, n, 3).

    Depends only on coordinates, which makes it a permutation-invariant FPS
    seed (up to exact ties).
    """
    p = points
    r = p[..., 0] * p[..., 0] + p[..., 1] * p[..., 1] + p[..., 2] * p[..., 2]
    return np.argmax(r, axis=-1)


def _k_smallest_rows(d: np.ndarray, k: int) -> np.ndarray:
    """Per-row indices of the k smallest entries, ordered by (value, index)."""
    n = d.shape[-1]
    if k == n:
        return np.argsort(d, axis=-1, kind="stable")
    flat = d.reshape(-1, n)
    part = np.argpartition(flat, k - 1, axis=-1)[:, :k]
    kth = np.take_along_axis(flat, part, axis=-1).max(axis=-1)
    ties_ok = (flat <= kth[:, None]).sum(axis=-1) == k
    out = np.empty((flat.shape[0], k), dtype=np.int64)
    if ties_ok.all():
        vals = np.take_along_axis(flat, part, axis=-1)
        # sort candidates by (value, index)
        order = np.lexsort((part, vals), axis=-1)
        out[:] = np.take_along_axis(part, order, axis=-1)
    else:
        for r in range(flat.shape[0]):
            if ties_ok[r]:
                cand = part[r]
            else:
                cand = np.flatnonzero(flat[r] <= kth[r])
            order = np.lexsort((cand, flat[r, cand]))
            out[r] = cand[order][:k]
    return out.reshape(d.shape[:-1] + (k,))


def knn(cloud: ArrayLike, center: int, k: int) -> NeighborIndex:
    """The k nearest points to ``cloud[center]``, the center itself included."""
    pts = as_points(cloud)
    n = pts.shape[0]
    if not 1 <= k <= n:
        raise InvalidInput(f"knn needs 1 <= k <= {n}, got k={k}")
    if not 0 <= center < n:
        raise InvalidInput(f"center index {center} out of range")
    d = sq_dists_to(pts, pts[center])
    idx = _k_smallest_rows(d[None, :], k)[0]
    return NeighborIndex(int(center), tuple(int(i) for i in idx))


def batch_knn(query: np.ndarray, ref: np.ndarray, k: int) -> np.ndarray:
    """kNN indices into ``ref`` (B, n, 3) for each query point (B, m, 3) -> (B, m, k)."""
    n = ref.shape[-2]
    if not 1 <= k <= n:
        raise InvalidInput(f"knn needs 1 <= k <= {n}, got k={k}")
    return _k_smallest_rows(pairwise_sq_dists(query, ref), k)


def _min_dists(a: np.ndarray, b: np.ndarray, chunk: int = 2048):
    """For each row of ``a``: (min squared distance to b, argmin index)."""
    mins = np.empty(a.shape[0])
    arg = np.empty(a.shape[0], dtype=np.int64)
    for s in range(0, a.shape[0], chunk):
        d = pairwise_sq_dists(a[s:s + chunk], b)
        j = np.argmin(d, axis=1)
        arg[s:s + chunk] = j
        mins[s:s + chunk] = d[np.arange(d.shape[0]), j]
    return mins, arg


def chamfer(a: ArrayLike, b: ArrayLike) -> float:
    """Bidirectional mean nearest-neighbour squared distance.

    Sums are exact (``math.fsum``), so the value does not depend on point order
    and ``chamfer(a, b) == chamfer(b, a)`` holds exactly.
    """
    pa, pb = as_points(a), as_points(b)
    if pa.shape[0] == 0 or pb.shape[0] == 0:
        raise InvalidInput("chamfer of an empty cloud")
    ab, _ = _min_dists(pa, pb)
    ba, _ = _min_dists(pb, pa)
    return math.fsum(ab) / pa.shape[0] + math.fsum(ba) / pb.shape[0]


def nearest_map(a: ArrayLike, b: ArrayLike) -> np.ndarray:
    """Index of the nearest ``b`` point for every ``a`` point."""
    pa, pb = as_points(a), as_points(b)
    if pa.shape[0] == 0 or pb.shape[0] == 0:
        raise InvalidInput("nearest_map of an empty cloud")
    return _min_dists(pa, pb)[1]
