"""Shared domain types, timebase handling and windowing.

Timestamps are plain float seconds since session start; every sequence type
keeps them strictly increasing and finite.
"""

from __future__ import annotations

import enum
import math
from dataclasses import dataclass, field

import numpy as np

from .errors import EmptyInput


class Spectrum(enum.Enum):
    NIR = "nir"
    FIR = "fir"


class SignalSource(enum.Enum):
    TA_FIR = "ta_fir"
    RM_NIR = "rm_nir"
    RM_FIR = "rm_fir"
    REF_THORAX = "ref_thorax"
    REF_ABDOMEN = "ref_abdomen"


#: The three camera-derived respiratory sources, in canonical order.
CAMERA_SOURCES = (SignalSource.TA_FIR, SignalSource.RM_NIR, SignalSource.RM_FIR)


class Task(enum.Enum):
    """Recording protocol task of a session."""

    SPONTANEOUS = "spontaneous_breathing"
    CENTRAL_APNEA = "central_apnea"
    OBSTRUCTIVE_APNEA = "obstructive_apnea"
    CENTRAL_APNEA_BLANKET = "central_apnea_blanket"
    CENTRAL_APNEA_ARBITRARY = "central_apnea_arbitrary"


#: Tasks containing apneic events.
APNEA_TASKS = (
    Task.CENTRAL_APNEA,
    Task.OBSTRUCTIVE_APNEA,
    Task.CENTRAL_APNEA_BLANKET,
    Task.CENTRAL_APNEA_ARBITRARY,
)

#: Tasks whose windows may enter detector training folds; the blanket and
#: arbitrary-duration recordings add no new apnea morphology and would skew
#: the class balance.
DETECTOR_TRAIN_TASKS = (Task.CENTRAL_APNEA, Task.OBSTRUCTIVE_APNEA)


def _check_times(times: np.ndarray) -> None:
    if times.size and not np.all(np.isfinite(times)):
        raise ValueError("timestamps must be finite")
    if times.size and times[0] < 0:
        raise ValueError("timestamps must be non-negative")
    if times.size > 1 and not np.all(np.diff(times) > 0):
        raise ValueError("timestamps must be strictly increasing")


@dataclass(frozen=True)
class FrameSequence:
    """Timestamped single-channel image stream (NIR or FIR)."""

    spectrum: Spectrum
    times: np.ndarray          # seconds, strictly increasing
    frames: np.ndarray         # (n, height, width)
    nominal_rate: float        # Hz, session metadata

    def __post_init__(self):
        times = np.asarray(self.times, dtype=float)
        frames = np.asarray(self.frames)
        if frames.ndim != 3:
            raise ValueError("frames must be a (n, h, w) array")
        if len(times) != len(frames):
            raise ValueError("one timestamp per frame required")
        _check_times(times)
        if self.nominal_rate <= 0:
            raise ValueError("nominal_rate must be positive")
        object.__setattr__(self, "times", times)
        object.__setattr__(self, "frames", frames)

    @property
    def height(self) -> int:
        return self.frames.shape[1]

    @property
    def width(self) -> int:
        return self.frames.shape[2]

    def __len__(self) -> int:
        return len(self.frames)


@dataclass(frozen=True)
class RespSignal:
    """Unevenly sampled scalar respiratory time series."""

    source: SignalSource
    times: np.ndarray
    values: np.ndarray

    def __post_init__(self):
        times = np.asarray(self.times, dtype=float)
        values = np.asarray(self.values, dtype=float)
        if times.shape != values.shape or times.ndim != 1:
            raise ValueError("times and values must be matching 1-D arrays")
        _check_times(times)
        if values.size and not np.all(np.isfinite(values)):
            raise ValueError("signal values must be finite")
        object.__setattr__(self, "times", times)
        object.__setattr__(self, "values", values)

    def __len__(self) -> int:
        return len(self.times)

    @property
    def duration(self) -> float:
        return float(self.times[-1] - self.times[0]) if len(self) else 0.0


@dataclass(frozen=True)
class Window:
    """A [start, start+length) slice of a RespSignal."""

    source: SignalSource
    start: float
    end: float
    times: np.ndarray
    values: np.ndarray

    def __len__(self) -> int:
        return len(self.times)

    @property
    def length(self) -> float:
        return self.end - self.start


@dataclass
class WindowingDiagnostics:
    """Bookkeeping for windows dropped during slicing."""

    skipped_short: int = 0
    skipped_starts: list = field(default_factory=list)

    def merge(self, other: "WindowingDiagnostics") -> None:
        self.skipped_short += other.skipped_short
        self.skipped_starts.extend(other.skipped_starts)


# Tolerance for float comparisons on the time axis.
_TIME_EPS = 1e-9


def window_starts(t_first: float, t_last: float, length: float, stride: float,
                  slack: float = 0.0) -> np.ndarray:
    """Start times of all full windows over [t_first, t_last].

    ``slack`` lets a window end up to one sample period past the last
    sample, so a nominally 12 s recording yields its single 12 s window
    even though the final sample lands just short of t = 12.
    """
    if length <= 0 or stride <= 0:
        raise ValueError("length and stride must be positive")
    span = t_last - t_first + slack
    if span + _TIME_EPS < length:
        return np.empty(0)
    n = int(math.floor((span - length) / stride + _TIME_EPS)) + 1
    return t_first + stride * np.arange(n)


def slide_windows(
    signal: RespSignal,
    length: float = 12.0,
    stride: float | None = None,
    min_samples: int = 8,
    diagnostics: WindowingDiagnostics | None = None,
    starts: np.ndarray | None = None,
) -> list[Window]:
    """Slice a signal into overlapping fixed-length windows.

    Parameters
    ----------
    signal : RespSignal
        Input series; must be non-empty.
    length : float
        Window length in seconds.
    stride : float, optional
        Hop between window starts. Defaults to the signal's median sample
        period (one frame of the slowest camera when applied to FIR data).
    min_samples : int
        Windows with fewer samples are skipped and counted in diagnostics.
    diagnostics : WindowingDiagnostics, optional
        Collects skip counts when provided.
    starts : ndarray, optional
        Explicit window start times; overrides length/stride enumeration so
        several signals can share one windowing.

    Returns
    -------
    list of Window, ordered by start time. The final partial window is
    dropped.
    """
    if len(signal) == 0:
        raise EmptyInput("cannot window an empty signal")
    t = signal.times
    if starts is None:
        period = float(np.median(np.diff(t))) if len(t) > 1 else length
        if stride is None:
            stride = period
        starts = window_starts(t[0], t[-1], length, stride, slack=period)
    windows = []
    for s in np.asarray(starts, dtype=float):
        lo = np.searchsorted(t, s - _TIME_EPS, side="left")
        hi = np.searchsorted(t, s + length - _TIME_EPS, side="left")
        if hi - lo < min_samples:
            if diagnostics is not None:
                diagnostics.skipped_short += 1
                diagnostics.skipped_starts.append(float(s))
            continue
        windows.append(
            Window(
                source=signal.source,
                start=float(s),
                end=float(s + length),
                times=t[lo:hi].copy(),
                values=signal.values[lo:hi].copy(),
            )
        )
    return windows


def pool_segments(
    times: np.ndarray,
    values: np.ndarray,
    segment: float = 15.0,
) -> list[tuple[int, float]]:
    """Median-pool (time, value) estimates into non-overlapping bins.

    Bins are anchored at t = 0 with index floor(t / segment); empty bins are
    omitted. The median of an even count is the mean of the two central
    values.
    """
    times = np.asarray(times, dtype=float)
    values = np.asarray(values, dtype=float)
    if segment <= 0:
        raise ValueError("segment must be positive")
    if times.size == 0:
        return []
    idx = np.floor(times / segment + _TIME_EPS).astype(int)
    pooled = []
    for k in np.unique(idx):
        vals = values[idx == k]
        vals = vals[np.isfinite(vals)]
        if vals.size:
            pooled.append((int(k), float(np.median(vals))))
    return pooled


def round_half_up(x: float) -> int:
    """Round to nearest integer, halves away from floor ambiguity (0.5 -> 1)."""
    return int(math.floor(x + 0.5))
