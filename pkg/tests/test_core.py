import numpy as np
import pytest

from respifusion.core import (RespSignal, SignalSource, WindowingDiagnostics,
                              pool_segments, round_half_up, slide_windows,
                              window_starts)
from respifusion.errors import EmptyInput


def uniform_signal(duration, rate, source=SignalSource.TA_FIR):
    t = np.arange(0.0, duration + 1e-9, 1.0 / rate)
    return RespSignal(source, t, np.sin(t))


def test_respsignal_rejects_unsorted_times():
    with pytest.raises(ValueError):
        RespSignal(SignalSource.TA_FIR, np.array([0.0, 0.5, 0.4]), np.zeros(3))


def test_respsignal_rejects_nonfinite_values():
    with pytest.raises(ValueError):
        RespSignal(SignalSource.TA_FIR, np.array([0.0, 1.0]), np.array([1.0, np.nan]))


def test_window_count_60s_at_fir_rate():
    # oracle: enumerate starts directly and count full windows
    sig = uniform_signal(60.0, 8.7)
    stride = 1.0 / 8.7
    windows = slide_windows(sig, length=12.0, stride=stride)

    expected = 0
    s = sig.times[0]
    while s + 12.0 <= sig.times[-1] + 1e-9:
        expected += 1
        s += stride
    assert len(windows) == expected
    assert abs(expected - 418) <= 1  # 60 s at 8.7 Hz, 12 s window, 1-frame stride


def test_single_window_boundary():
    sig = uniform_signal(12.0, 8.7)
    windows = slide_windows(sig, length=12.0, stride=12.0)
    assert len(windows) == 1
    w = windows[0]
    assert w.start == sig.times[0]
    assert w.end == pytest.approx(w.start + 12.0)
    # half-open [start, start+12): the sample landing on the end is excluded
    assert w.times[-1] < w.end


def test_signal_shorter_than_window_yields_no_windows():
    sig = uniform_signal(10.0, 8.7)
    assert slide_windows(sig, length=12.0, stride=1.0) == []


def test_empty_signal_raises():
    sig = RespSignal(SignalSource.TA_FIR, np.empty(0), np.empty(0))
    with pytest.raises(EmptyInput):
        slide_windows(sig, 12.0, 1.0)


def test_short_windows_skipped_and_counted():
    # 12 s span but only 5 samples: every window is skipped
    t = np.array([0.0, 3.0, 6.0, 9.0, 12.5])
    sig = RespSignal(SignalSource.TA_FIR, t, np.ones(5))
    diag = WindowingDiagnostics()
    windows = slide_windows(sig, length=12.0, stride=12.0, diagnostics=diag)
    assert windows == []
    assert diag.skipped_short == 1


def test_window_count_formula_uniform():
    rng = np.random.default_rng(0)
    for _ in range(20):
        rate = rng.uniform(5.0, 20.0)
        duration = rng.uniform(15.0, 90.0)
        stride = rng.uniform(0.2, 3.0)
        sig = uniform_signal(duration, rate)
        n = len(slide_windows(sig, 12.0, stride))
        dur = sig.times[-1] - sig.times[0]
        assert n == int(np.floor((dur - 12.0) / stride + 1e-9)) + 1


def test_windowing_deterministic():
    sig = uniform_signal(40.0, 8.7)
    a = slide_windows(sig, 12.0, 0.5)
    b = slide_windows(sig, 12.0, 0.5)
    assert [w.start for w in a] == [w.start for w in b]
    assert all(np.array_equal(x.values, y.values) for x, y in zip(a, b))


def test_pool_median_robust_to_outlier():
    t = np.array([1.0, 5.0, 10.0])
    assert pool_segments(t, np.array([10.0, 10.0, 40.0]), 15.0) == [(0, 10.0)]


def test_pool_single_estimate_per_bin():
    t = np.array([2.0, 20.0, 40.0])
    out = pool_segments(t, np.array([11.0, 12.0, 13.0]), 15.0)
    assert out == [(0, 11.0), (1, 12.0), (2, 13.0)]


def test_pool_45s_three_bins():
    t = np.arange(0.0, 45.0, 1.0)
    out = pool_segments(t, np.full(45, 10.0), 15.0)
    assert [k for k, _ in out] == [0, 1, 2]


def test_pool_even_count_median_is_mean_of_central():
    out = pool_segments(np.array([0.0, 1.0]), np.array([10.0, 20.0]), 15.0)
    assert out == [(0, 15.0)]


def test_pool_permutation_invariant_within_bins():
    rng = np.random.default_rng(1)
    t = rng.uniform(0, 45, 30)
    v = rng.uniform(5, 30, 30)
    base = pool_segments(t, v, 15.0)
    for _ in range(5):
        p = rng.permutation(30)
        assert pool_segments(t[p], v[p], 15.0) == base


def test_window_starts_helper():
    starts = window_starts(0.0, 60.0, 12.0, 1.0)
    assert starts[0] == 0.0
    assert starts[-1] == pytest.approx(48.0)


def test_round_half_up():
    assert round_half_up(0.5) == 1
    assert round_half_up(1.49) == 1
    assert round_half_up(-0.5) == 0
