import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from adaprox import sampling as smp
from adaprox.exceptions import EstimateStateError
from adaprox.problems import PoolQuadratic


@pytest.fixture
def big_pool():
    r = np.random.default_rng(0)
    return PoolQuadratic(np.eye(3), np.ones(3), r.normal(size=(5000, 3)) * 2.0)


class TestEstimate:
    def test_moments_match_numpy(self, quad, rng):
        x = rng.normal(size=quad.dimension)
        e = smp.estimate(quad, x, 17, rng, retain=True)
        G = quad.component_gradients(x, e.sample_ids)
        np.testing.assert_allclose(e.mean, G.mean(axis=0), rtol=1e-13)
        assert smp.sample_variance_total(e) == pytest.approx(G.var(axis=0, ddof=1).sum(), rel=1e-12)
        np.testing.assert_allclose(e.gradients, G)

    def test_chunked_reduction_above_chunk_size(self, big_pool):
        x = np.zeros(3)
        ids = np.arange(5000)
        e = smp.batch_gradient(big_pool, x, ids)
        G = big_pool.component_gradients(x, ids)
        np.testing.assert_allclose(e.mean, G.mean(axis=0), atol=1e-13)
        assert e.sum_sq_dev == pytest.approx(((G - G.mean(axis=0)) ** 2).sum(), rel=1e-12)
        assert e.full

    def test_workers_do_not_change_bits(self, big_pool):
        ids = np.random.default_rng(1).integers(0, 5000, size=4500)
        a = smp.batch_gradient(big_pool, np.ones(3), ids, workers=1)
        b = smp.batch_gradient(big_pool, np.ones(3), ids, workers=4)
        np.testing.assert_array_equal(a.mean, b.mean)
        assert a.sum_sq_dev == b.sum_sq_dev

    def test_batch_of_one_is_rejected(self, quad, rng):
        with pytest.raises(ValueError):
            smp.estimate(quad, np.zeros(quad.dimension), 1, rng)
        with pytest.raises(ValueError):
            smp.batch_gradient(quad, np.zeros(quad.dimension), [])

    def test_retained_gradients_required(self, quad, rng):
        e = smp.estimate(quad, np.zeros(quad.dimension), 4, rng)
        with pytest.raises(EstimateStateError):
            e.deviations
        with pytest.raises(EstimateStateError):
            smp.sample_variance_directional(e, np.ones(quad.dimension))

    def test_directional_variance(self, quad, rng):
        x = rng.normal(size=quad.dimension)
        e = smp.estimate(quad, x, 9, rng, retain=True)
        d = rng.normal(size=quad.dimension)
        G = quad.component_gradients(x, e.sample_ids)
        assert smp.sample_variance_directional(e, d) == pytest.approx(np.var(G @ d, ddof=1), rel=1e-12)


class TestAugment:
    def test_equals_fresh_batch_on_same_ids(self, quad, rng):
        x = rng.normal(size=quad.dimension)
        e = smp.estimate(quad, x, 5, smp.rng_stream(3, 0, 0), retain=True)
        grown = smp.augment(e, quad, x, 23, smp.rng_stream(3, 0, 1))
        fresh = smp.batch_gradient(quad, x, grown.sample_ids, retain=True)
        np.testing.assert_allclose(grown.mean, fresh.mean, rtol=1e-10, atol=1e-14)
        assert grown.sum_sq_dev == pytest.approx(fresh.sum_sq_dev, rel=1e-10)
        np.testing.assert_array_equal(grown.gradients, fresh.gradients)
        np.testing.assert_array_equal(grown.sample_ids[:5], e.sample_ids)

    def test_must_grow(self, quad, rng):
        e = smp.estimate(quad, np.zeros(quad.dimension), 5, rng)
        with pytest.raises(ValueError):
            smp.augment(e, quad, np.zeros(quad.dimension), 5, rng)

    def test_without_replacement_excludes_drawn(self, quad):
        x = np.zeros(quad.dimension)
        e = smp.estimate(quad, x, 10, smp.rng_stream(0, 0, 0), replace=False)
        assert len(set(e.sample_ids)) == 10
        grown = smp.augment(e, quad, x, 30, smp.rng_stream(0, 0, 1), replace=False)
        assert sorted(grown.sample_ids) == list(range(30))
        with pytest.raises(ValueError):
            smp.augment(grown, quad, x, 31, smp.rng_stream(0, 0, 2), replace=False)

    @settings(max_examples=60, deadline=None)
    @given(st.integers(2, 40), st.integers(1, 60), st.integers(0, 2**32 - 1))
    def test_property_merge(self, S, extra, seed):
        r = np.random.default_rng(seed)
        p = PoolQuadratic(np.eye(2), np.zeros(2), r.normal(size=(25, 2)) * 10 ** r.uniform(-3, 3))
        x = r.normal(size=2)
        e = smp.estimate(p, x, S, smp.rng_stream(seed, 1, 0))
        g = smp.augment(e, p, x, S + extra, smp.rng_stream(seed, 1, 1))
        f = smp.batch_gradient(p, x, g.sample_ids)
        scale = np.abs(f.mean).max() + np.sqrt(f.sum_sq_dev / f.batch_size)
        np.testing.assert_allclose(g.mean, f.mean, atol=1e-10 * scale)
        assert abs(g.sum_sq_dev - f.sum_sq_dev) <= 1e-10 * max(f.sum_sq_dev, 1e-300) + 1e-20


class TestStreams:
    def test_reproducible_and_distinct(self):
        a = smp.rng_stream(5, 2, 0).integers(0, 1 << 30, size=8)
        b = smp.rng_stream(5, 2, 0).integers(0, 1 << 30, size=8)
        c = smp.rng_stream(5, 2, 1).integers(0, 1 << 30, size=8)
        d = smp.rng_stream(5, 3, 0).integers(0, 1 << 30, size=8)
        np.testing.assert_array_equal(a, b)
        assert not np.array_equal(a, c) and not np.array_equal(a, d)

    def test_uniform_ids(self, quad):
        ids = smp.draw_ids(quad, np.random.default_rng(0), 60_000)
        counts = np.bincount(ids, minlength=quad.n_samples)
        assert counts.min() > 1700 and counts.max() < 2300
