import math

import numpy as np
import pytest
from hypothesis import given, strategies as st

from paits.augment import (
    AugmentationSpec,
    MaskPool,
    add_noise,
    apply_geometric_mask,
    apply_mask,
    augment,
    build_mask_pool,
    geometric_run_means,
    load_mask_pool,
    permute_blocks,
    sample_mask_bernoulli,
    save_mask_pool,
    tstcc_augment,
)
from paits.data import TripletSeries
from paits.oracles import bucket_consistency_violations, mask_statistics


def random_series(rng, n=30, n_features=4, span=10.0):
    return TripletSeries.from_arrays(rng.uniform(0, span, n), rng.normal(size=n), rng.integers(1, n_features + 1, n))


series_st = st.integers(0, 2**31).map(lambda s: random_series(np.random.default_rng(s), n=int(s % 40)))


class TestNoise:
    def test_zero_sigma_identity(self, rng):
        s = random_series(rng)
        assert add_noise(s, 0.0, rng).equals(s)

    def test_half_normal_mean(self):
        n = 10**6
        s = TripletSeries(np.zeros(n), np.zeros(n), np.ones(n, dtype=np.int64))
        out = add_noise(s, 0.1, np.random.default_rng(1))
        # E|N(0, s^2)| = s * sqrt(2 / pi)
        assert abs(np.abs(out.times).mean() - 0.1 * math.sqrt(2 / math.pi)) < 5e-4
        assert abs(np.abs(out.values).mean() - 0.1 * math.sqrt(2 / math.pi)) < 5e-4
        # independent draws for t and v
        assert abs(np.corrcoef(out.times, out.values)[0, 1]) < 0.01

    @given(series_st, st.floats(0, 2))
    def test_length_and_features_preserved(self, s, sigma):
        out = add_noise(s, sigma, np.random.default_rng(0))
        assert len(out) == len(s)
        np.testing.assert_array_equal(out.features, s.features)

    def test_negative_sigma(self, rng):
        with pytest.raises(ValueError):
            add_noise(random_series(rng), -1.0, rng)


class TestBernoulli:
    def test_extremes(self, rng):
        assert sample_mask_bernoulli(100, 0.0, rng).all()
        assert not sample_mask_bernoulli(100, 1.0, rng).any()

    @pytest.mark.parametrize("r", [0.3, 0.5, 0.8])
    def test_rate_within_three_sigma(self, r):
        n = 10**6
        m = sample_mask_bernoulli(n, r, np.random.default_rng(int(r * 10)))
        assert abs((m == 0).mean() - r) < 3 * math.sqrt(r * (1 - r) / n)

    def test_bad_rate(self, rng):
        with pytest.raises(ValueError):
            sample_mask_bernoulli(5, 1.5, rng)


class TestMaskPool:
    def test_stationary_fraction_and_run_length(self):
        pool = build_mask_pool(10**4, 0.5, 3.0, 10, np.random.default_rng(0))
        stats = mask_statistics(pool.masks)
        assert abs(stats.masked_fraction - 0.5) < 0.02
        assert abs(stats.masked_run_mean - 3.0) < 0.15

    def test_run_means_pinned_when_unmasked_would_be_short(self):
        assert geometric_run_means(0.5, 3.0) == (3.0, 3.0)
        lm_m, lm_u = geometric_run_means(0.8, 3.0)
        assert lm_u == 1.0 and lm_m == pytest.approx(4.0)
        assert lm_m / (lm_m + lm_u) == pytest.approx(0.8)

    def test_single_interval_is_bernoulli(self):
        pool = build_mask_pool(1, 0.3, 3.0, 200_000, np.random.default_rng(2))
        assert pool.masks.shape == (200_000, 1)
        assert abs((pool.masks == 0).mean() - 0.3) < 3 * math.sqrt(0.21 / 200_000)

    @pytest.mark.parametrize("r", [0.0, 1.0])
    def test_degenerate_rates(self, r):
        with pytest.raises(ValueError):
            build_mask_pool(5, r, 3.0, 10, np.random.default_rng(0))

    def test_file_round_trip(self, tmp_path):
        pool = build_mask_pool(13, 0.3, 3.0, 7, np.random.default_rng(0))
        path = tmp_path / "pool.bin"
        save_mask_pool(pool, path)
        raw = path.read_bytes()
        assert raw[:8] == b"PAITSMP1"
        assert int.from_bytes(raw[8:12], "little") == 13 and int.from_bytes(raw[12:16], "little") == 7
        assert len(raw) == 16 + math.ceil(13 * 7 / 8)
        np.testing.assert_array_equal(load_mask_pool(path).masks, pool.masks)

    def test_truncated_file(self, tmp_path):
        path = tmp_path / "pool.bin"
        save_mask_pool(build_mask_pool(13, 0.3, 3.0, 7, np.random.default_rng(0)), path)
        path.write_bytes(path.read_bytes()[:-1])
        with pytest.raises(ValueError):
            load_mask_pool(path)


class TestGeometricMask:
    def test_bucket_arithmetic(self, rng):
        s = TripletSeries.from_triplets([(0.5, 1.0, 1), (1.5, 2.0, 1)])
        pool = MaskPool(np.array([[0, 1]], dtype=np.uint8))
        np.testing.assert_array_equal(apply_geometric_mask(s, pool, 1.0, 0.0, rng), [0, 1])

    def test_identity_pool(self, rng):
        s = random_series(rng)
        pool = MaskPool(np.ones((5, 12), dtype=np.uint8))
        assert apply_geometric_mask(s, pool, 1.0, 0.0, rng).all()

    def test_outside_window_errors(self, rng):
        s = TripletSeries.from_triplets([(5.5, 1.0, 1)])
        with pytest.raises(ValueError):
            apply_geometric_mask(s, MaskPool(np.ones((1, 3), dtype=np.uint8)), 1.0, 0.0, rng)

    def test_within_bucket_consistency(self):
        rng = np.random.default_rng(0)
        pool = build_mask_pool(11, 0.5, 3.0, 5000, rng)
        bad = 0
        for _ in range(10**4):
            s = random_series(rng, n=20, n_features=3, span=10.0)
            bad += bucket_consistency_violations(s, apply_geometric_mask(s, pool, 1.0, 0.0, rng), 0.0, 1.0)
        assert bad == 0


class TestApplyMask:
    def test_all_ones_identity(self, rng):
        s = random_series(rng)
        assert apply_mask(s, np.ones(len(s)), (0, 0, 5), ("t", "v", "f")).equals(s)

    def test_substitution_all_elements(self):
        s = TripletSeries.from_triplets([(1.5, 2.2, 3)])
        assert list(apply_mask(s, [0], (0.0, 0.0, 6), ("t", "v", "f"))) == [(0.0, 0.0, 6)]

    def test_substitution_values_only(self):
        s = TripletSeries.from_triplets([(1.5, 2.2, 3)])
        assert list(apply_mask(s, [0], (-100.0, -100.0, 6), ("v",))) == [(1.5, -100.0, 3)]

    def test_length_mismatch(self, rng):
        with pytest.raises(ValueError):
            apply_mask(random_series(rng), [1], (0, 0, 5))

    @given(series_st, st.integers(0, 1000))
    def test_idempotent(self, s, seed):
        m = np.random.default_rng(seed).integers(0, 2, len(s))
        once = apply_mask(s, m, (-100.0, -100.0, 6), ("t", "v", "f"))
        assert apply_mask(once, m, (-100.0, -100.0, 6), ("t", "v", "f")).equals(once)


class TestAugment:
    def test_null_spec_identity(self, rng):
        s = random_series(rng)
        out, m = augment(s, AugmentationSpec(), 0.0, None, rng)
        assert out.equals(s) and m.all()

    def test_mask_applied_after_noise(self):
        s = random_series(np.random.default_rng(3), n=200)
        spec = AugmentationSpec(sigma=0.1, rate=0.5, sampling="random", values=(-100.0, -100.0, 5))
        out, m = augment(s, spec, 0.0, None, np.random.default_rng(9))
        noisy = add_noise(s, 0.1, np.random.default_rng(9))
        kept = m == 1
        np.testing.assert_array_equal(out.times[kept], noisy.times[kept])
        np.testing.assert_array_equal(out.values[kept], noisy.values[kept])
        assert (out.times[~kept] == -100).all() and (out.values[~kept] == -100).all()
        assert (out.features[~kept] == 5).all()

    def test_geometric_high_rate_fraction(self):
        # sigma 0, geometric masking at r = 0.8, replacement (-100, -100, V+1)
        rng = np.random.default_rng(4)
        pool = build_mask_pool(25, 0.8, 3.0, 20_000, rng)
        spec = AugmentationSpec(0.0, 0.8, "geometric", (-100.0, -100.0, 5))
        masks = [augment(random_series(rng, 40, 4, 24.0), spec, 0.0, {0.8: pool}, rng)[1] for _ in range(3000)]
        frac = 1 - np.concatenate(masks).mean()
        assert abs(frac - 0.8) < 0.01

    def test_missing_pool(self, rng):
        spec = AugmentationSpec(0.0, 0.5, "geometric", (0.0, 0.0, 5))
        with pytest.raises(ValueError):
            augment(random_series(rng), spec, 0.0, {}, rng)

    @given(series_st, st.sampled_from([0.0, 0.1]), st.sampled_from([0.0, 0.3, 0.5, 0.8]))
    def test_length_preserved(self, s, sigma, r):
        spec = AugmentationSpec(sigma, r, "random", (0.0, 0.0, 5))
        out, m = augment(s, spec, 0.0, None, np.random.default_rng(0))
        assert len(out) == len(s) == len(m)


class TestTstcc:
    def test_weak_zero_scales_identity(self, rng):
        s = random_series(rng)
        assert tstcc_augment(s, "weak", rng, jitter_sigma=0.0, scale_sigma=0.0).equals(s)

    def test_strong_one_block_is_jitter(self):
        s = random_series(np.random.default_rng(0))
        out = tstcc_augment(s, "strong", np.random.default_rng(1), max_blocks=1)
        rng = np.random.default_rng(1)
        rng.integers(1, 2)  # the block-count draw
        expected = s.values + rng.normal(0.0, 0.1, len(s))
        np.testing.assert_array_equal(out.times, s.times)
        np.testing.assert_allclose(out.values, expected)

    @given(series_st, st.integers(1, 8), st.integers(0, 1000))
    def test_permutation_preserves_pairs(self, s, blocks, seed):
        out = permute_blocks(s, blocks, np.random.default_rng(seed))
        assert sorted(zip(out.features, out.values)) == sorted(zip(s.features, s.values))

    def test_bad_strength(self, rng):
        with pytest.raises(ValueError):
            tstcc_augment(random_series(rng), "medium", rng)
