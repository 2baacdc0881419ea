import numpy as np
import pytest

from scatterhsd.corpus import ShapeSpec, gen_shape
from scatterhsd.errors import InvalidInput
from scatterhsd.geometry import PointCloud
from scatterhsd.scatter import (SPARSITY_PRESETS, ScatterConfig, multi_view, patch_radii,
                                scatter_indices, scatter_sample)


@pytest.fixture(scope="module")
def dense():
    return gen_shape(ShapeSpec(6, {}, 11), 10_000)


def test_presets_match_sparsity_table():
    assert SPARSITY_PRESETS == {"low": (32, 16), "medium": (32, 8), "high": (64, 8)}
    assert ScatterConfig.preset("low").output_size == 512
    assert ScatterConfig.preset("high").output_size == 512


def test_config_validation():
    with pytest.raises(InvalidInput):
        ScatterConfig(200, 100, source_size=10_000)
    with pytest.raises(InvalidInput):
        ScatterConfig(0, 8)


def test_single_patch_is_whole_cloud():
    pts = np.random.default_rng(0).normal(size=(50, 3))
    out = scatter_sample(PointCloud(pts), ScatterConfig(1, 50, source_size=50))
    assert sorted(map(tuple, out.points)) == sorted(map(tuple, pts))


def test_low_sparsity_structure(dense):
    cfg = ScatterConfig(32, 16, rng_seed=3)
    out = scatter_sample(dense, cfg)
    assert len(out) == 512
    idx = scatter_indices(dense, cfg)
    pts = dense.points
    for row in idx:
        c = pts[row[0]]
        r = ((pts[row] - c) ** 2).sum(axis=1).max()
        # every non-member is at least as far as the farthest member
        others = np.setdiff1d(np.arange(len(pts)), row)
        assert ((pts[others] - c) ** 2).sum(axis=1).min() >= r
    # points are copies of dense points, labels carried
    lookup = {tuple(p): i for i, p in enumerate(pts)}
    for p, lab in zip(out.points, out.labels):
        i = lookup[tuple(p)]
        assert dense.labels[i] == lab


def test_high_sparsity_patches_are_smaller(dense):
    lo = [patch_radii(dense, ScatterConfig(32, 16, rng_seed=s)).mean() for s in range(100)]
    hi = [patch_radii(dense, ScatterConfig(64, 8, rng_seed=s)).mean() for s in range(100)]
    assert np.mean(hi) < np.mean(lo)
    assert sum(h < l for h, l in zip(hi, lo)) == 100


def test_wrong_source_size(dense):
    with pytest.raises(InvalidInput):
        scatter_sample(dense.subset(np.arange(5000)), ScatterConfig(64, 8))


def test_multi_view_determinism_and_offsets(dense):
    cfg = ScatterConfig(64, 8, rng_seed=10)
    views = multi_view(dense, cfg, 8)
    again = multi_view(dense, cfg, 8)
    assert len(views) == 8
    assert all(a == b for a, b in zip(views, again))
    assert views[0] == scatter_sample(dense, cfg)
    assert views[3] == scatter_sample(dense, ScatterConfig(64, 8, rng_seed=13))
    assert multi_view(dense, cfg, 1) == [scatter_sample(dense, cfg)]
    with pytest.raises(InvalidInput):
        multi_view(dense, cfg, 0)


def test_multi_view_centroid_sets_distinct(dense):
    # reported rather than guaranteed: distinct random starts give distinct FPS sets
    sets = [frozenset(scatter_indices(dense, ScatterConfig(64, 8, rng_seed=v))[:, 0])
            for v in range(8)]
    distinct = len(set(sets))
    print(f"distinct centroid sets among 8 views: {distinct}")
    assert distinct >= 1
