import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from helmguard.backends import HashingEmbedder, ReplayEmbedder, ScriptedBackend
from helmguard.monitor import (
    EmbeddingCache,
    MonitorConfig,
    REFERENCE_TAU,
    anomaly_score,
    calibrate_threshold,
    classify,
    describe_scene,
    embed_scene,
    empirical_quantile,
    loo_scores,
)


def make_cache(vectors, ids=None):
    vectors = np.asarray(vectors, dtype=float)
    ids = ids or [f"img-{i}" for i in range(vectors.shape[0])]
    return EmbeddingCache(vectors=vectors, source_ids=tuple(ids))


def oracle_quantile(scores, alpha):
    """Scan the sorted scores for the first value covering alpha of the mass."""
    s = sorted(scores)
    n = len(s)
    for value in s:
        if sum(1 for x in s if x <= value) / n >= alpha:
            return value
    return s[-1]


class TestAnomalyScore:
    def test_cache_member_scores_zero(self):
        cache = make_cache([[1.0, 0.0], [0.0, 1.0]])
        assert anomaly_score(np.array([1.0, 0.0]), cache) == 0.0

    def test_orthogonal_scores_one(self):
        cache = make_cache([[1.0, 0.0, 0.0], [0.0, 1.0, 0.0]])
        assert anomaly_score(np.array([0.0, 0.0, 1.0]), cache) == pytest.approx(1.0)

    def test_sixty_degrees(self):
        cache = make_cache([[1.0, 0.0]])
        q = np.array([math.cos(math.radians(60)), math.sin(math.radians(60))])
        assert anomaly_score(q, cache) == pytest.approx(0.5, abs=1e-12)

    def test_zero_query_rejected(self):
        cache = make_cache([[1.0, 0.0]])
        with pytest.raises(ValueError):
            anomaly_score(np.zeros(2), cache)

    def test_dimension_mismatch_rejected(self):
        cache = make_cache([[1.0, 0.0]])
        with pytest.raises(ValueError):
            anomaly_score(np.array([1.0, 0.0, 0.0]), cache)

    def test_score_bounds_random(self):
        rng = np.random.default_rng(2)
        cache = make_cache(rng.standard_normal((30, 8)))
        for _ in range(200):
            s = anomaly_score(rng.standard_normal(8), cache)
            assert 0.0 <= s <= 2.0

    def test_monotone_in_cache_growth(self):
        rng = np.random.default_rng(3)
        cache = make_cache(rng.standard_normal((10, 6)))
        queries = rng.standard_normal((20, 6))
        grown = cache.with_vector(rng.standard_normal(6), "extra")
        for q in queries:
            assert anomaly_score(q, grown) <= anomaly_score(q, cache) + 1e-12


class TestCalibration:
    def test_identical_vectors_zero_threshold(self):
        cache = make_cache([[1.0, 0.0]] * 5)
        assert calibrate_threshold(cache, alpha=0.95) == 0.0

    def test_matches_sort_based_oracle(self):
        rng = np.random.default_rng(4)
        for n in (20, 57):
            cache = make_cache(rng.standard_normal((n, 12)))
            scores = loo_scores(cache)
            for alpha in (0.5, 0.9, 0.95, 0.99):
                assert calibrate_threshold(cache, alpha) == oracle_quantile(list(scores), alpha)

    def test_coverage_at_least_alpha(self):
        rng = np.random.default_rng(5)
        for n in (20, 200):
            cache = make_cache(rng.standard_normal((n, 16)))
            tau = calibrate_threshold(cache, alpha=0.95)
            scores = loo_scores(cache)
            assert (scores <= tau).mean() >= 0.95

    def test_quantile_tight(self):
        rng = np.random.default_rng(6)
        cache = make_cache(rng.standard_normal((40, 8)))
        scores = np.sort(loo_scores(cache))
        tau = calibrate_threshold(cache, alpha=0.95)
        achieved = (scores <= tau).mean()
        # Any strictly smaller candidate value under-covers.
        smaller = scores[scores < tau]
        if smaller.size:
            assert (scores <= smaller.max()).mean() < 0.95
        assert achieved >= 0.95

    def test_reference_threshold_is_recorded_not_asserted(self):
        assert REFERENCE_TAU == 0.2375

    def test_small_cache_rejected(self):
        with pytest.raises(ValueError):
            calibrate_threshold(make_cache([[1.0, 0.0]]))

    def test_alpha_validation(self):
        cache = make_cache([[1.0, 0.0], [0.0, 1.0]])
        with pytest.raises(ValueError):
            calibrate_threshold(cache, alpha=1.0)

    @given(st.lists(st.floats(min_value=0, max_value=2), min_size=2, max_size=40),
           st.floats(min_value=0.05, max_value=0.99))
    @settings(max_examples=150, deadline=None)
    def test_quantile_matches_oracle_property(self, values, alpha):
        assert empirical_quantile(np.array(values), alpha) == oracle_quantile(values, alpha)


class TestClassify:
    def test_boundary_is_nominal(self):
        cache = make_cache([[1.0, 0.0], [0.0, 1.0]])
        e = np.array([0.6, 0.8])
        tau = anomaly_score(e, cache)
        assert classify(e, cache, tau) == "nominal"

    def test_reference_threshold_cases(self):
        cache = make_cache([[1.0, 0.0]])
        low_cos = np.array([0.70, math.sqrt(1 - 0.70**2)])   # score 0.30 > 0.2375
        high_cos = np.array([0.80, math.sqrt(1 - 0.80**2)])  # score 0.20 < 0.2375
        assert classify(low_cos, cache, REFERENCE_TAU) == "anomalous"
        assert classify(high_cos, cache, REFERENCE_TAU) == "nominal"


class TestEmbedScene:
    def test_replay_passthrough_normalized(self):
        describer = ScriptedBackend("dock with small sailboat ahead")
        embedder = ReplayEmbedder({"dock with small sailboat ahead": [3.0, 4.0]})
        v = embed_scene(describer, embedder, b"png")
        assert np.allclose(v, [0.6, 0.8])

    def test_zero_embedding_is_error(self):
        describer = ScriptedBackend("sentence")
        embedder = ReplayEmbedder({"sentence": [0.0, 0.0]})
        with pytest.raises(ValueError):
            embed_scene(describer, embedder, b"png")

    def test_deterministic_with_hashing_mock(self):
        describer = ScriptedBackend(lambda p, image, s: f"scene-{len(image)}")
        embedder = HashingEmbedder(dim=32)
        a = embed_scene(describer, embedder, b"same-bytes")
        b = embed_scene(describer, embedder, b"same-bytes")
        assert np.array_equal(a, b)
        c = embed_scene(describer, embedder, b"other-bytes!")
        assert not np.array_equal(a, c)

    def test_empty_sentence_is_error(self):
        with pytest.raises(ValueError):
            describe_scene(ScriptedBackend("   "), b"png")


class TestCacheFile:
    def test_round_trip(self, tmp_path):
        rng = np.random.default_rng(8)
        cache = make_cache(rng.standard_normal((12, 6)))
        path = tmp_path / "nominal.cache"
        cache.save(path)
        loaded = EmbeddingCache.load(path)
        assert loaded.n == 12 and loaded.dim == 6
        assert loaded.source_ids == cache.source_ids
        assert np.allclose(loaded.vectors, cache.vectors, atol=1e-6)

    def test_save_is_deterministic(self, tmp_path):
        rng = np.random.default_rng(9)
        cache = make_cache(rng.standard_normal((5, 4)))
        p1, p2 = tmp_path / "a.cache", tmp_path / "b.cache"
        cache.save(p1)
        cache.save(p2)
        assert p1.read_bytes() == p2.read_bytes()
        assert (tmp_path / "a.cache.json").read_text() == (tmp_path / "b.cache.json").read_text()

    def test_bad_magic_rejected(self, tmp_path):
        p = tmp_path / "x.cache"
        p.write_bytes(b"NOPE" + b"\x00" * 16)
        with pytest.raises(ValueError):
            EmbeddingCache.load(p)


def test_monitor_config_validation():
    MonitorConfig(alpha=0.95, tau=0.3)
    with pytest.raises(ValueError):
        MonitorConfig(alpha=1.2)
    with pytest.raises(ValueError):
        MonitorConfig(alpha=0.9, tau=3.0)


def test_cache_rejects_zero_vector():
    with pytest.raises(ValueError):
        make_cache([[1.0, 0.0], [0.0, 0.0]])
