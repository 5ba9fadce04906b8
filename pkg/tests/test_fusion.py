import numpy as np
import pytest

from respifusion.core import SignalSource
from respifusion.dsp import SpectralEstimate
from respifusion.errors import NoEstimate, UniformFallback
from respifusion.fusion import (ArbitrationStrategy, FusionInput, baseline_fuse,
                                s2_fuse, sqb_fuse, sqb_weights, weighted_median)


def est(rr, snr, source=SignalSource.TA_FIR):
    return SpectralEstimate(source=source, rr=rr, peak_freq=rr / 60.0, snr=snr)


def brute_weights(snrs, scale=24):
    """Independent evaluation of the weight formula with half-up rounding."""
    total = sum(snrs)
    return [int(np.floor(scale * s / total + 0.5)) for s in snrs]


def brute_weighted_median(values, weights):
    """Oracle: replicate each value by its integer weight, take lower median."""
    expanded = []
    for v, w in zip(values, weights):
        expanded.extend([v] * int(w))
    expanded.sort()
    return expanded[(len(expanded) - 1) // 2]


class TestSqbWeights:
    def test_basic_shares(self):
        assert list(sqb_weights(np.array([1.0, 1.0, 2.0]))) == [6, 6, 12]

    def test_symmetry(self):
        assert list(sqb_weights(np.array([1.0, 1.0, 1.0]))) == [8, 8, 8]

    def test_dominant_source(self):
        assert list(sqb_weights(np.array([0.01, 0.01, 10.0]))) == [0, 0, 24]

    def test_all_round_to_zero_keeps_best(self):
        # three tiny near-equal SNRs with a scale of 1 would all round to 0
        w = sqb_weights(np.array([0.2, 0.5, 0.3]), scale=1)
        assert w.sum() >= 1
        assert w[1] >= 1

    def test_all_zero_uniform_fallback(self):
        with pytest.warns(UniformFallback):
            w = sqb_weights(np.array([0.0, 0.0, 0.0]))
        assert list(w) == [1, 1, 1]

    def test_matches_bruteforce(self):
        rng = np.random.default_rng(0)
        for _ in range(500):
            snrs = rng.uniform(0.0, 20.0, 3)
            if snrs.sum() == 0:
                continue
            assert list(sqb_weights(snrs)) == brute_weights(snrs)


class TestWeightedMedian:
    def test_dominant_weight(self):
        assert weighted_median(np.array([10.0, 12.0, 30.0]), np.array([1, 1, 22])) == 30.0

    def test_equal_weights_plain_median(self):
        assert weighted_median(np.array([8.0, 10.0, 12.0]), np.array([1, 1, 1])) == 10.0

    def test_lower_median_tie(self):
        assert weighted_median(np.array([10.0, 20.0]), np.array([1, 1])) == 10.0

    def test_matches_replication_oracle(self):
        rng = np.random.default_rng(1)
        for _ in range(1000):
            n = rng.integers(1, 6)
            values = rng.uniform(0, 45, n)
            weights = rng.integers(1, 25, n)
            assert weighted_median(values, weights) == brute_weighted_median(values, weights)

    def test_equal_weights_match_numpy_lower_median(self):
        rng = np.random.default_rng(2)
        for _ in range(200):
            n = rng.integers(1, 9)
            v = rng.uniform(0, 45, n)
            got = weighted_median(v, np.ones(n))
            want = np.sort(v)[(n - 1) // 2]
            assert got == want


class TestSqbFuse:
    def test_low_snr_outlier_suppressed(self):
        fin = FusionInput((est(10.0, 5.0), est(10.0, 5.0), est(24.0, 0.1)))
        assert sqb_fuse(fin) == 10.0

    def test_identical_rrs(self):
        fin = FusionInput((est(11.0, 0.3), est(11.0, 9.0), est(11.0, 2.0)))
        assert sqb_fuse(fin) == 11.0

    def test_single_source_passthrough(self):
        assert sqb_fuse(FusionInput((est(14.0, 1.0),))) == 14.0

    def test_output_is_one_of_inputs(self):
        rng = np.random.default_rng(3)
        for _ in range(200):
            rrs = rng.uniform(5, 40, 3)
            snrs = rng.uniform(0.01, 10, 3)
            fin = FusionInput(tuple(est(r, s) for r, s in zip(rrs, snrs)))
            assert sqb_fuse(fin) in rrs

    def test_snr_scaling_invariance(self):
        rng = np.random.default_rng(4)
        for _ in range(100):
            rrs = rng.uniform(5, 40, 3)
            snrs = rng.uniform(0.1, 10, 3)
            f1 = sqb_fuse(FusionInput(tuple(est(r, s) for r, s in zip(rrs, snrs))))
            f2 = sqb_fuse(FusionInput(tuple(est(r, s * 7.7) for r, s in zip(rrs, snrs))))
            assert f1 == f2

    def test_raising_winner_snr_keeps_output(self):
        rrs = np.array([9.0, 11.0, 20.0])
        snrs = np.array([2.0, 5.0, 1.0])
        fin = FusionInput(tuple(est(r, s) for r, s in zip(rrs, snrs)))
        out = sqb_fuse(fin)
        i = int(np.where(rrs == out)[0][0])
        snrs2 = snrs.copy()
        snrs2[i] *= 3.0
        out2 = sqb_fuse(FusionInput(tuple(est(r, s) for r, s in zip(rrs, snrs2))))
        assert out2 == out

    def test_empty_input_raises(self):
        with pytest.raises(NoEstimate):
            FusionInput(())


class TestBaselines:
    def test_median(self):
        fin = FusionInput((est(10.0, 1), est(10.0, 1), est(40.0, 1)))
        assert baseline_fuse(fin, "median") == 10.0

    def test_mean(self):
        fin = FusionInput((est(10.0, 1), est(10.0, 1), est(40.0, 1)))
        assert baseline_fuse(fin, "mean") == 20.0

    def test_single_passthrough(self):
        fin = FusionInput((est(13.0, 1),))
        assert baseline_fuse(fin, "mean") == 13.0
        assert baseline_fuse(fin, "median") == 13.0


class TestS2Fuse:
    def test_breathing_passthrough(self):
        ra = s2_fuse(12.0, 10.4, (False, 0.1))
        assert ra.rr == 10.4
        assert not ra.apnea

    def test_apnea_suppresses_to_zero(self):
        ra = s2_fuse(12.0, 9.8, (True, 0.93))
        assert ra.rr == 0.0
        assert ra.apnea
        assert ra.rr_sqb == 9.8
        assert ra.apnea_posterior == 0.93

    def test_missing_detector_falls_back(self):
        ra = s2_fuse(12.0, 10.0, None)
        assert ra.rr == 10.0
        assert not ra.apnea
        assert "missing-detector" in ra.diagnostics

    def test_hold_last_strategy(self):
        ra = s2_fuse(12.0, 9.8, (True, 0.9),
                     strategy=ArbitrationStrategy.HOLD_LAST, last_rr=10.5)
        assert ra.rr == 10.5

    def test_mark_only_strategy(self):
        ra = s2_fuse(12.0, 9.8, (True, 0.9), strategy=ArbitrationStrategy.MARK_ONLY)
        assert ra.rr == 9.8
        assert ra.apnea
