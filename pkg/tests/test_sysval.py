import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from csilab.codebook import Codebook, generate_rvq, quantize_batch
from csilab.errors import EvaluationFailedError, InvalidInputError, SingularMatrixError
from csilab.sysval import (draw_drops, eval_cosine, eval_sumrate, feedback_channels, paired_bootstrap_ci,
                           pipeline_scores, sum_rate, sumrate_per_drop, unpaired_bootstrap_ci, zf_precoder)

from conftest import crandn


class TestZF:
    def test_identity(self):
        np.testing.assert_allclose(zf_precoder(np.eye(2)), np.eye(2) / np.sqrt(2), atol=1e-15)

    def test_diag_hand_value(self):
        np.testing.assert_allclose(zf_precoder(np.diag([1.0, 2.0])), np.diag([0.89443, 0.44721]), atol=1e-5)

    @given(st.integers(0, 2**32 - 1), st.floats(0.1, 10.0))
    @settings(max_examples=40)
    def test_zf_property(self, seed, power):
        r = np.random.default_rng(seed)
        H = crandn(r, 3, 8)
        V = zf_precoder(H, power)
        G = H @ V
        c = G[0, 0]
        assert np.max(np.abs(G - c * np.eye(3))) < 1e-9 * np.linalg.norm(H)
        assert np.sum(np.abs(V) ** 2) == pytest.approx(power, abs=1e-9)

    def test_rank_deficient(self):
        H = np.array([[1, 2, 3], [2, 4, 6]], complex)
        with pytest.raises(SingularMatrixError):
            zf_precoder(H)

    def test_more_users_than_antennas(self):
        with pytest.raises(SingularMatrixError):
            zf_precoder(np.ones((3, 2)))

    def test_power_positive(self):
        with pytest.raises(InvalidInputError):
            zf_precoder(np.eye(2), 0.0)


class TestSumRate:
    def test_single_user(self):
        assert sum_rate(np.array([[1.0]]), np.array([[1.0]]), 1.0) == pytest.approx(1.0)

    def test_interference_free(self):
        assert sum_rate(np.eye(2), np.eye(2) / np.sqrt(2), 0.1) == pytest.approx(2 * np.log2(6), abs=1e-12)
        assert 2 * np.log2(6) == pytest.approx(5.1699, abs=1e-4)

    def test_zero_precoder(self):
        assert sum_rate(np.eye(3), np.zeros((3, 3)), 0.5) == 0.0

    def test_noise(self):
        with pytest.raises(InvalidInputError):
            sum_rate(np.eye(2), np.eye(2), 0.0)

    def test_monotone_in_noise(self, rng):
        H, V = crandn(rng, 4, 8), crandn(rng, 8, 4)
        rates = [sum_rate(H, V, s) for s in (0.01, 0.1, 1.0, 10.0)]
        assert all(r >= 0 for r in rates)
        assert all(b <= a for a, b in zip(rates, rates[1:]))

    def test_perfect_csi_cross_terms(self, rng):
        H = crandn(rng, 4, 32)
        V = zf_precoder(H)
        G = H @ V
        off = G - np.diag(np.diag(G))
        assert np.max(np.abs(off)) < 1e-10 * np.linalg.norm(H)
        expected = np.sum(np.log2(1 + np.abs(np.diag(G)) ** 2 / 0.1))
        assert sum_rate(H, V, 0.1) == pytest.approx(expected, rel=1e-12)


class TestPipelines:
    def test_identical_codebooks_equal_conventional(self, rng):
        cb = generate_rvq(5, 8, 0)
        H = crandn(rng, 400, 8)
        copy = Codebook(cb.raw.copy())
        a = pipeline_scores(H, cb, cb)
        b = pipeline_scores(H, cb, copy)
        np.testing.assert_array_equal(a, quantize_batch(H, cb)[1])
        np.testing.assert_allclose(a, b, atol=1e-15)
        np.testing.assert_array_equal(feedback_channels(H, cb, cb), feedback_channels(H, cb, copy))

    def test_stats(self, rng):
        cb = generate_rvq(4, 8, 1)
        H = crandn(rng, 300, 8)
        s = eval_cosine(H, cb, cb)
        assert 0 <= s.p5 <= s.median <= 1 and 0 <= s.mean <= 1 and s.count == 300
        assert s.mean == pytest.approx(np.mean(s.scores))

    def test_shape_mismatch(self, rng):
        with pytest.raises(InvalidInputError):
            eval_cosine(crandn(rng, 5, 8), generate_rvq(4, 8, 0), generate_rvq(5, 8, 0))

    def test_single_side_scores_direct(self, rng):
        ue, bs = generate_rvq(4, 6, 0), generate_rvq(4, 6, 1)
        H = crandn(rng, 50, 6)
        idx = quantize_batch(H, ue)[0]
        want = [abs(np.vdot(bs.entries[i], h)) / np.linalg.norm(h) for i, h in zip(idx, H)]
        np.testing.assert_allclose(pipeline_scores(H, ue, bs), want, atol=1e-14)

    def test_empty(self):
        cb = generate_rvq(2, 4, 0)
        with pytest.raises(EvaluationFailedError):
            eval_cosine(np.zeros((0, 4), complex), cb, cb)


class TestSumRateEval:
    def test_drops_distinct_users(self):
        picks = draw_drops(120, 4, 30, seed=1)
        assert picks.shape == (30, 4)
        assert all(len(set(row)) == 4 for row in picks)
        np.testing.assert_array_equal(picks, draw_drops(120, 4, 30, seed=1))

    def test_too_few_samples(self):
        with pytest.raises(InvalidInputError):
            draw_drops(10, 4, 3, 0)

    def test_non_decreasing_in_snr(self, rng):
        H = crandn(rng, 400, 16)
        cb = generate_rvq(6, 16, 0)
        for ue, bs in ((cb, cb), (None, None)):
            pts = eval_sumrate(H, ue, bs, users=4, snr_db=(0, 10, 20), drops=50, seed=3)
            rates = [p.rate for p in pts]
            assert rates == sorted(rates)
            assert all(p.drops_averaged + p.drops_skipped == 50 for p in pts)

    def test_perfect_csi_upper_bounds_feedback(self, rng):
        H = crandn(rng, 400, 16)
        cb = generate_rvq(4, 16, 0)
        perfect = sumrate_per_drop(H, None, None, 4, [20], 100, 0)
        fb = sumrate_per_drop(H, cb, cb, 4, [20], 100, 0)
        ok = ~np.isnan(fb[:, 0])
        assert np.mean(perfect[ok, 0]) > np.mean(fb[ok, 0])

    def test_all_singular(self, rng):
        # every codeword points the same way: every reconstructed drop is rank one
        cb = Codebook.from_vectors(np.tile(crandn(rng, 1, 8), (4, 1)))
        with pytest.raises(EvaluationFailedError):
            eval_sumrate(crandn(rng, 40, 8), cb, cb, users=2, drops=10)

    def test_half_perfect(self, rng):
        with pytest.raises(InvalidInputError):
            eval_sumrate(crandn(rng, 40, 8), generate_rvq(2, 8, 0), None, drops=5)


class TestBootstrap:
    def test_paired_detects_shift(self, rng):
        a = rng.standard_normal(500)
        point, lo, hi = paired_bootstrap_ci(a + 0.1, a, seed=0)
        assert point == pytest.approx(0.1) and lo == pytest.approx(0.1) and hi == pytest.approx(0.1)
        b = a + 0.05 + 0.01 * rng.standard_normal(500)
        point, lo, hi = paired_bootstrap_ci(b, a, seed=0)
        assert lo > 0 and lo < point < hi

    def test_zero_effect_covers_zero(self, rng):
        a, b = rng.standard_normal(400), rng.standard_normal(400)
        _, lo, hi = unpaired_bootstrap_ci(a, b, seed=1)
        assert lo < 0 < hi

    def test_nan_pairs_dropped_and_empty(self):
        point, _, _ = paired_bootstrap_ci([1.0, np.nan, 3.0], [0.0, 1.0, 1.0])
        assert point == pytest.approx(1.5)
        with pytest.raises(EvaluationFailedError):
            paired_bootstrap_ci([np.nan], [1.0])
