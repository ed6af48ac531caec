import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st
from hypothesis.extra.numpy import arrays

from srdlab.parallel import blocks, map_blocks
from srdlab.rng import PathBlockNoise, path_generator, role_id
from srdlab.stats import Estimate, RunningStats, batch_means, merge_all, within_sigma

samples = arrays(np.float64, st.integers(2, 200), elements=st.floats(-1e3, 1e3, allow_nan=False))


@given(samples, st.integers(1, 50))
@settings(max_examples=100, deadline=None)
def test_merge_equals_pooled(v, cut):
    cut = min(cut, v.size - 1)
    merged = RunningStats.from_values(v[:cut]).merge(RunningStats.from_values(v[cut:]))
    pooled = RunningStats.from_values(v)
    assert merged.count == pooled.count
    assert merged.mean == pytest.approx(pooled.mean, rel=1e-9, abs=1e-9)
    assert merged.m2 == pytest.approx(pooled.m2, rel=1e-7, abs=1e-6)


def test_estimate_matches_numpy():
    v = np.random.default_rng(0).standard_normal(1000)
    e = Estimate.from_samples(v)
    assert e.mean == pytest.approx(v.mean())
    assert e.stderr == pytest.approx(v.std(ddof=1) / np.sqrt(1000))
    with pytest.raises(ValueError):
        RunningStats.from_values([1.0]).estimate()
    assert merge_all([]).count == 0


def test_batch_means_and_sigma():
    x = np.arange(100.0)
    e = batch_means(x, 10)
    assert e.mean == pytest.approx(49.5)
    assert e.stderr > 0
    with pytest.raises(ValueError):
        batch_means(x[:3], 10)
    assert within_sigma(Estimate(1.0, 0.1, 10), 1.25, 3)
    assert not within_sigma(Estimate(1.0, 0.1, 10), Estimate(2.0, 0.1, 10), 3)


def test_stream_independent_of_chunking():
    a = PathBlockNoise(9, 3, 4, (2, 5), "x")
    whole = a.next(10)
    b = PathBlockNoise(9, 3, 4, (2, 5), "x")
    parts = np.concatenate([b.next(3), b.next(7)])
    np.testing.assert_array_equal(whole, parts)
    # a single path's stream is the same in any block
    c = PathBlockNoise(9, 5, 1, (2, 5), "x").next(10)
    np.testing.assert_array_equal(c[:, 0], whole[:, 2])


def test_roles_are_distinct():
    x = path_generator(1, 0, "x").standard_normal(4)
    y = path_generator(1, 0, "y").standard_normal(4)
    assert not np.allclose(x, y)
    with pytest.raises(ValueError):
        role_id("nope")
    with pytest.raises(ValueError):
        path_generator(-1, 0)


def test_blocks_partition():
    assert blocks(7, 3) == [(0, 3), (3, 3), (6, 1)]
    with pytest.raises(ValueError):
        blocks(0)
    assert map_blocks(lambda s, c: (s, c), 5, 2) == [(0, 2), (2, 2), (4, 1)]


def _square_block(start, count):
    return [i * i for i in range(start, start + count)]


def test_process_pool_preserves_order():
    assert map_blocks(_square_block, 9, 2, n_workers=2) == map_blocks(_square_block, 9, 2, n_workers=1)
