"""Per-window spectral processing: detrend, band-pass, PSD, RR and SNR.

The respiratory band is fixed at 0.015-0.75 Hz (0.9-45 breaths/min). All
operations work on one 12 s window at a time; the power spectral density
uses the classical normalized Lomb-Scargle periodogram so unevenly sampled
camera streams need no resampling.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np
from scipy import linalg, signal as sps

from .core import SignalSource, Window
from .errors import DegenerateWindow, TooShort

#: Respiratory frequency band in Hz.
BAND_LOW_HZ = 0.015
BAND_HIGH_HZ = 0.75

#: Maximum spacing of the PSD frequency grid in Hz.
PSD_MAX_STEP_HZ = 0.005

#: Smoothness-prior regularization weight.
DETREND_LAMBDA = 300.0

#: Margin parameter of the SNR band, in breaths/min.
SNR_MARGIN_BPM = 2.0

#: Ratio cap when the out-of-band power sum is zero.
SNR_CAP = 1e6

#: Estimates below this rate are flagged implausible but still reported.
IMPLAUSIBLE_RR_BPM = 4.0


@dataclass(frozen=True)
class Psd:
    """Power spectral density on a fixed in-band frequency grid."""

    frequencies: np.ndarray
    power: np.ndarray

    def __post_init__(self):
        f = np.asarray(self.frequencies, dtype=float)
        p = np.asarray(self.power, dtype=float)
        if f.shape != p.shape or f.ndim != 1:
            raise ValueError("frequencies and power must be matching 1-D arrays")
        if f.size > 1 and not np.all(np.diff(f) > 0):
            raise ValueError("frequencies must be strictly increasing")
        if np.any(p < 0):
            raise ValueError("power must be non-negative")
        object.__setattr__(self, "frequencies", f)
        object.__setattr__(self, "power", p)


@dataclass(frozen=True)
class SpectralEstimate:
    """RR / SNR readout of one signal over one window."""

    source: SignalSource
    rr: float          # breaths/min
    peak_freq: float   # Hz
    snr: float

    @property
    def implausible(self) -> bool:
        return self.rr < IMPLAUSIBLE_RR_BPM


def detrend(values: np.ndarray, lam: float = DETREND_LAMBDA) -> np.ndarray:
    """Remove the smoothness-prior trend from a window.

    Computes ``z - (I + lam^2 D2'D2)^-1 z`` with D2 the second-difference
    operator. The system matrix is pentadiagonal, so the solve runs through
    a banded Cholesky (equivalent to the dense solution to machine
    precision, and O(n)).

    Parameters
    ----------
    values : array of window samples (>= 3).
    lam : regularization weight; larger keeps slower trends.

    Returns
    -------
    Stationary residual, same length as the input.
    """
    z = np.asarray(values, dtype=np.float64)
    n = z.size
    if n < 3:
        raise TooShort(f"detrending needs >= 3 samples, got {n}")
    lam2 = lam * lam
    i = np.arange(n, dtype=float)
    # occupancy of the three stencil taps of D2'D2 near the boundaries
    c0 = ((i >= 0) & (i <= n - 3)).astype(float)
    c1 = ((i >= 1) & (i <= n - 2)).astype(float)
    c2 = ((i >= 2) & (i <= n - 1)).astype(float)
    ab = np.zeros((3, n))
    ab[2] = 1.0 + lam2 * (c0 + 4.0 * c1 + c2)            # main diagonal
    ab[1, 1:] = lam2 * (-2.0) * (c0 + c1)[:-1]           # first superdiagonal
    ab[0, 2:] = lam2 * c0[:-2]                           # second superdiagonal
    trend = linalg.solveh_banded(ab, z, lower=False)
    return z - trend


def bandpass(
    times: np.ndarray,
    values: np.ndarray,
    low_hz: float = BAND_LOW_HZ,
    high_hz: float = BAND_HIGH_HZ,
    order: int = 2,
    max_gap_periods: float = 3.0,
) -> tuple[np.ndarray, bool]:
    """Zero-phase Butterworth band-pass designed at the window's mean rate.

    Used for the thermal airflow path only; motion signals skip filtering to
    keep their apnea morphology. Returns ``(values, applied)`` where
    ``applied`` is False when sampling gaps exceed ``max_gap_periods``
    nominal periods (the window is then passed through unfiltered).
    """
    t = np.asarray(times, dtype=float)
    z = np.asarray(values, dtype=np.float64)
    if t.size < 2:
        return z, False
    fs = (t.size - 1) / (t[-1] - t[0])
    period = 1.0 / fs
    if np.max(np.diff(t)) > max_gap_periods * period:
        return z, False
    nyq = fs / 2.0
    if high_hz >= nyq:
        return z, False
    b, a = sps.butter(order, [low_hz / nyq, high_hz / nyq], btype="band")
    # the window is short relative to the low cutoff's settling time;
    # Gustafsson initial conditions keep the edge transient out of the band,
    # and removing the mean first closes its DC leak (the ideal band-pass
    # has zero DC response anyway)
    return sps.filtfilt(b, a, z - z.mean(), method="gust"), True


def psd_grid(
    low_hz: float = BAND_LOW_HZ,
    high_hz: float = BAND_HIGH_HZ,
    max_step: float = PSD_MAX_STEP_HZ,
) -> np.ndarray:
    n = int(math.ceil((high_hz - low_hz) / max_step)) + 1
    return np.linspace(low_hz, high_hz, n)


def lomb_scargle(
    times: np.ndarray,
    values: np.ndarray,
    frequencies: np.ndarray | None = None,
) -> Psd:
    """Classical normalized Lomb-Scargle periodogram on the in-band grid.

    The mean is subtracted internally and power is normalized by twice the
    sample variance, so constant offsets and positive scalings do not move
    the spectrum's shape.
    """
    t = np.asarray(times, dtype=np.float64)
    y = np.asarray(values, dtype=np.float64)
    if t.size < 8:
        raise TooShort(f"periodogram needs >= 8 samples, got {t.size}")
    if frequencies is None:
        frequencies = psd_grid()
    yc = y - y.mean()
    var = float(np.dot(yc, yc)) / (t.size - 1)
    if var == 0.0:
        raise DegenerateWindow("window is constant")
    omega = 2.0 * np.pi * np.asarray(frequencies, dtype=float)[:, None]
    c = np.cos(omega * t[None, :])
    s = np.sin(omega * t[None, :])
    # phase offset tau makes the sine/cosine terms orthogonal; double-angle
    # sums come from the single-angle tables
    sum_s2 = 2.0 * (s * c).sum(axis=1)
    sum_c2 = (c * c - s * s).sum(axis=1)
    tau_w = 0.5 * np.arctan2(sum_s2, sum_c2)
    ct, st = np.cos(tau_w), np.sin(tau_w)
    yc_c = c @ yc
    yc_s = s @ yc
    cc = (c * c).sum(axis=1)
    ss = t.size - cc
    cs = 0.5 * sum_s2
    c_num = (ct * yc_c + st * yc_s) ** 2
    s_num = (ct * yc_s - st * yc_c) ** 2
    c_den = ct * ct * cc + 2.0 * ct * st * cs + st * st * ss
    s_den = ct * ct * ss - 2.0 * ct * st * cs + st * st * cc
    power = (c_num / c_den + np.divide(s_num, s_den, out=np.zeros_like(s_num),
                                       where=s_den > 1e-12)) / (2.0 * var)
    return Psd(np.asarray(frequencies, dtype=float), power)


def estimate_rr(psd: Psd, source: SignalSource = SignalSource.TA_FIR) -> SpectralEstimate:
    """Peak-pick the PSD; ties resolve toward the lower frequency."""
    i = int(np.argmax(psd.power))
    peak = float(psd.frequencies[i])
    est = SpectralEstimate(source=source, rr=60.0 * peak, peak_freq=peak, snr=0.0)
    return est


def compute_snr(psd: Psd, peak_freq: float, margin_bpm: float = SNR_MARGIN_BPM,
                cap: float = SNR_CAP) -> float:
    """In-band to out-of-band power ratio around the spectral peak.

    The signal band spans ``peak +/- margin/2`` (margin given in
    breaths/min); everything else on the evaluated grid counts as noise.
    A zero noise sum returns the configured cap.
    """
    half = (margin_bpm / 2.0) / 60.0
    inside = np.abs(psd.frequencies - peak_freq) <= half + 1e-12
    sig = float(psd.power[inside].sum())
    noise = float(psd.power[~inside].sum())
    if noise <= 0.0:
        return cap
    return min(sig / noise, cap)


def analyze_window(window: Window, apply_bandpass: bool | None = None,
                   lam: float = DETREND_LAMBDA,
                   frequencies: np.ndarray | None = None,
                   snr_margin_bpm: float = SNR_MARGIN_BPM):
    """Full spectral path for one window: detrend, optional band-pass, PSD.

    ``apply_bandpass`` defaults to True for the thermal airflow and the
    reference belts, False for motion signals.

    Returns ``(SpectralEstimate, processed_values)``; the processed values
    feed the apnea feature extractor so both consumers see one signal.
    """
    if apply_bandpass is None:
        apply_bandpass = window.source not in (SignalSource.RM_NIR, SignalSource.RM_FIR)
    raw_std = float(np.std(window.values))
    values = detrend(window.values, lam)
    if apply_bandpass:
        values, _ = bandpass(window.times, values)
    # flat windows leave only float residue after detrending; refuse to
    # peak-pick numerical noise
    if raw_std == 0.0 or float(np.std(values)) <= 1e-8 * raw_std:
        raise DegenerateWindow("window has no spectral content")
    psd = lomb_scargle(window.times, values, frequencies)
    est = estimate_rr(psd, window.source)
    snr = compute_snr(psd, est.peak_freq, snr_margin_bpm)
    return SpectralEstimate(window.source, est.rr, est.peak_freq, snr), values
