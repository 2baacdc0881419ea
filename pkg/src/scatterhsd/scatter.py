"""Scattered (incomplete) inputs: FPS patch centroids plus kNN patches."""

from __future__ import annotations

from dataclasses import dataclass, replace

import numpy as np

from .errors import InvalidInput
from .geometry import PointCloud, _k_smallest_rows, as_points, fps, pairwise_sq_dists

# Named resolutions from the sparsity table: (seeds, neighbors).
SPARSITY_PRESETS = {
    "low": (32, 16),
    "medium": (32, 8),
    "high": (64, 8),
}


@dataclass(frozen=True)
class ScatterConfig:
    seeds: int
    neighbors: int
    source_size: int = 10_000
    rng_seed: int = 0

    def __post_init__(self):
        if self.seeds < 1 or self.neighbors < 1:
            raise InvalidInput("seeds and neighbors must be positive")
        if self.seeds * self.neighbors > self.source_size:
            raise InvalidInput(
                f"{self.seeds}x{self.neighbors} points exceed source size {self.source_size}")

    @property
    def output_size(self) -> int:
        return self.seeds * self.neighbors

    @classmethod
    def preset(cls, name: str, **kw) -> "ScatterConfig":
        s, k = SPARSITY_PRESETS[name]
        return cls(seeds=s, neighbors=k, **kw)


def scatter_indices(dense, cfg: ScatterConfig) -> np.ndarray:
    """Indices into ``dense`` of the scattered sample, patch by patch.

    Returned as a (seeds, neighbors) array; row i is the kNN patch of the i-th
    FPS centroid, nearest first.
    """
    return _patches(as_points(dense), cfg)[1]


def _patches(pts: np.ndarray, cfg: ScatterConfig):
    if pts.shape[0] != cfg.source_size:
        raise InvalidInput(
            f"dense cloud has {pts.shape[0]} points, config expects {cfg.source_size}")
    rng = np.random.default_rng(cfg.rng_seed)
    centers = np.asarray(fps(pts, cfg.seeds, start=None, rng=rng))
    d = pairwise_sq_dists(pts[centers], pts)
    return centers, _k_smallest_rows(d, cfg.neighbors)


def scatter_sample(dense: PointCloud, cfg: ScatterConfig) -> PointCloud:
    """Concatenate the kNN patches around ``cfg.seeds`` FPS centroids.

    Overlapping patches keep their duplicates, so the output always has exactly
    ``seeds * neighbors`` points, each one copied from ``dense``.
    """
    idx = scatter_indices(dense, cfg).reshape(-1)
    if isinstance(dense, PointCloud):
        return dense.subset(idx)
    return PointCloud(as_points(dense)[idx])


def multi_view(dense: PointCloud, cfg: ScatterConfig, views: int) -> list:
    """``views`` independent scatter draws; view v uses ``rng_seed + v``."""
    if views < 1:
        raise InvalidInput("views must be >= 1")
    return [scatter_sample(dense, replace(cfg, rng_seed=cfg.rng_seed + v))
            for v in range(views)]


def patch_radii(dense, cfg: ScatterConfig) -> np.ndarray:
    """Distance from each patch centroid to its farthest patch member."""
    pts = as_points(dense)
    centers, idx = _patches(pts, cfg)
    diff = pts[idx] - pts[centers][:, None, :]
    return np.sqrt((diff * diff).sum(axis=-1)).max(axis=1)
