import math

import numpy as np
import pytest
from scipy import stats

from scatterhsd.errors import InvalidInput
from scatterhsd.infoplane import (MITrace, bin_activations, entropy, exact_mutual_information,
                                  level_trace, mutual_information, read_traces, write_traces)


def test_constant_activations_share_one_code():
    codes = bin_activations(np.full((10, 4), 3.0), 6)
    assert (codes == 0).all()
    assert mutual_information(codes, np.arange(10)) == 0.0


def test_extremes_differ_in_every_nonconstant_dimension():
    z = np.array([[0.0, 5.0, 1.0], [1.0, -5.0, 1.0]])
    c = bin_activations(z, 6)
    assert c[0, 0] != c[1, 0] and c[0, 1] != c[1, 1] and c[0, 2] == c[1, 2]
    assert set(c[:, 0]) == {0, 5}


def test_uniform_samples_fill_bins_uniformly():
    z = np.random.default_rng(0).random((6000, 1))
    counts = np.bincount(bin_activations(z, 6)[:, 0], minlength=6)
    assert stats.chisquare(counts).pvalue > 0.001


def test_bins_validated():
    with pytest.raises(InvalidInput):
        bin_activations(np.zeros((2, 2)), 1)


def test_deterministic_codes_give_log2():
    codes = np.array([[0], [1], [0], [1]])
    x = np.array([0, 1, 0, 1])
    assert mutual_information(codes, x) == pytest.approx(math.log(2), abs=1e-15)


def test_shuffled_codes_near_zero():
    rng = np.random.default_rng(0)
    y = rng.integers(0, 4, 1000)
    codes = rng.permutation(y)[:, None]
    assert mutual_information(codes, y) < 0.05


def _joint_samples(table):
    """Sample list realizing a rational joint table exactly (counts = table entries)."""
    zs, ys = [], []
    for i in range(table.shape[0]):
        for j in range(table.shape[1]):
            zs += [i] * int(table[i, j])
            ys += [j] * int(table[i, j])
    return np.array(zs), np.array(ys)


@pytest.mark.parametrize("seed", range(20))
def test_plugin_matches_exact_enumeration(seed):
    rng = np.random.default_rng(seed)
    rows, cols = rng.integers(2, 7, size=2)
    table = rng.integers(0, 9, size=(rows, cols)).astype(float)
    table[0, 0] += 1
    z, y = _joint_samples(table)
    exact = exact_mutual_information(table)
    assert abs(mutual_information(z, y) - exact) <= 1e-12


def test_entropy_uniform():
    assert entropy(np.arange(8)) == pytest.approx(math.log(8), abs=1e-15)


def test_level_trace_bounds_and_gaps():
    rng = np.random.default_rng(0)
    y = rng.integers(0, 8, 64)
    aligned = [rng.normal(size=(64, 5)) for _ in range(3)]
    logits = [rng.normal(size=(64, 8)) for _ in range(3)]
    tr = level_trace(0, aligned, logits, y)
    assert [t.level for t in tr] == [1, 2, 3]
    for t in tr:
        assert 0 <= t.i_yz <= math.log(8) + 1e-12
        assert t.i_xz >= 0
        assert t.kl_gap_to_teacher >= 0
        assert np.isfinite(t.ce)
    assert tr[-1].kl_gap_to_teacher == pytest.approx(0.0, abs=1e-15)


def test_trace_csv_roundtrip(tmp_path):
    tr = [MITrace(0, 1, 1.5, 0.5, 0.1, 2.0), MITrace(0, 2, 1.25, 0.75, 0.0, 1.0)]
    write_traces(tmp_path / "e.csv", tr)
    assert read_traces(tmp_path / "e.csv") == tr
    header = (tmp_path / "e.csv").read_text().splitlines()[0]
    assert header == "epoch,level,i_xz,i_yz,kl_gap,ce"
