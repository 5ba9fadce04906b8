"""Respiratory signal extraction from ROI'd frame sequences.

Three signals come out of here: the thermal airflow trace (nostril-ROI
intensity average of normalized FIR frames) and two respiratory-motion
traces (cell-averaged vertical flow velocities over the chest ROI in NIR
and FIR, with noisy velocity profiles rejected per 12 s window).
"""

from __future__ import annotations

import warnings
from dataclasses import dataclass

import numpy as np
from scipy import ndimage

from .core import FrameSequence, RespSignal, SignalSource, Spectrum
from .errors import DegenerateFrame, EmptySignal
from .flow import FlowParams, expand_frame, flow_from_expansions, vertical_velocities
from .roi import Roi, RoiTrack

#: Chest ROI cell grid: rows x cols velocity profiles.
GRID_ROWS = 5
GRID_COLS = 7
N_PROFILES = GRID_ROWS * GRID_COLS

#: Window over which profile rejection statistics are computed (seconds).
PROFILE_WINDOW_S = 12.0


def preprocess_nir(frame: np.ndarray) -> np.ndarray:
    """3x3 median filter with replicate borders."""
    frame = np.asarray(frame, dtype=np.float64)
    if frame.shape[0] < 3 or frame.shape[1] < 3:
        raise ValueError("frame must be at least 3x3")
    return ndimage.median_filter(frame, size=3, mode="nearest")


def preprocess_fir(frame: np.ndarray) -> np.ndarray:
    """Min-max normalize a frame to [0, 1]; constant frames become zeros."""
    frame = np.asarray(frame, dtype=np.float64)
    lo = frame.min()
    hi = frame.max()
    if hi == lo:
        warnings.warn("constant FIR frame normalized to zeros", DegenerateFrame)
        return np.zeros_like(frame)
    return (frame - lo) / (hi - lo)


def roi_mean(frame: np.ndarray, roi: Roi) -> float:
    rows, cols = roi.pixel_slices(frame.shape[0], frame.shape[1])
    return float(frame[rows, cols].mean())


def extract_ta(fir: FrameSequence, track: RoiTrack, preprocess: bool = True) -> RespSignal:
    """Thermal airflow: spatial mean over the nostril ROI per FIR frame.

    Frames without a usable ROI contribute no sample (gap). ``preprocess``
    can be disabled for raw-intensity tests.
    """
    if fir.spectrum is not Spectrum.FIR:
        raise ValueError("thermal airflow requires the FIR sequence")
    times = []
    values = []
    for t, frame in zip(fir.times, fir.frames):
        rois = track.at(t)
        if rois is None:
            continue
        img = preprocess_fir(frame) if preprocess else np.asarray(frame, dtype=np.float64)
        times.append(t)
        values.append(roi_mean(img, rois.nostril_fir))
    if not times:
        raise EmptySignal("no FIR frame had a valid nostril ROI")
    return RespSignal(SignalSource.TA_FIR, np.asarray(times), np.asarray(values))


def cell_means(field: np.ndarray, rows: int = GRID_ROWS, cols: int = GRID_COLS) -> np.ndarray:
    """Average a 2-D field over a rows x cols grid (remainder to last cells)."""
    h, w = field.shape
    rh = max(h // rows, 1)
    cw = max(w // cols, 1)
    out = np.empty(rows * cols)
    for r in range(rows):
        y0 = min(r * rh, h - 1)
        y1 = h if r == rows - 1 else min((r + 1) * rh, h)
        for c in range(cols):
            x0 = min(c * cw, w - 1)
            x1 = w if c == cols - 1 else min((c + 1) * cw, w)
            out[r * cols + c] = field[y0:max(y1, y0 + 1), x0:max(x1, x0 + 1)].mean()
    return out


@dataclass(frozen=True)
class VelocityProfileSet:
    """Cell-averaged vertical velocity profiles for a stretch of frame pairs."""

    times: np.ndarray            # (n,) later-frame timestamps
    profiles: np.ndarray         # (n, N_PROFILES) px/s

    def __post_init__(self):
        if self.profiles.ndim != 2 or self.profiles.shape[1] != N_PROFILES:
            raise ValueError(f"profiles must be (n, {N_PROFILES})")


@dataclass(frozen=True)
class ProfileStats:
    sigma: np.ndarray            # (N_PROFILES,) per-profile std over the window
    threshold: float
    retained: np.ndarray         # (N_PROFILES,) bool mask


def profile_rejection(profiles: np.ndarray) -> ProfileStats:
    """Retain velocity profiles whose std stays within median + 2*IQR.

    The comparison is inclusive so a set of identical profiles (IQR = 0) is
    fully retained; the median profile therefore always survives.
    """
    if profiles.shape[0] < 2:
        sigma = np.zeros(profiles.shape[1])
    else:
        sigma = profiles.std(axis=0, ddof=1)
    q75, q25 = np.percentile(sigma, [75, 25])
    threshold = float(np.median(sigma) + 2.0 * (q75 - q25))
    retained = sigma <= threshold + 1e-15
    return ProfileStats(sigma=sigma, threshold=threshold, retained=retained)


def reduce_profiles(pset: VelocityProfileSet, window_s: float = PROFILE_WINDOW_S):
    """Collapse profiles to one series, re-running rejection per 12 s block.

    Returns (values, stats per block). Blocks are anchored at the first
    profile timestamp; a partial tail block is processed as-is.
    """
    t = pset.times
    values = np.empty(len(t))
    stats = []
    block = np.floor((t - t[0]) / window_s + 1e-9).astype(int)
    for b in np.unique(block):
        sel = block == b
        st = profile_rejection(pset.profiles[sel])
        stats.append(st)
        values[sel] = pset.profiles[sel][:, st.retained].mean(axis=1)
    return values, stats


def chest_velocity_profiles(
    frames: FrameSequence,
    track: RoiTrack,
    params: FlowParams = FlowParams(),
) -> VelocityProfileSet:
    """Per-frame-pair cell velocities over the chest ROI of one spectrum.

    Each frame's expansion pyramid is computed once and reused for both
    pairs it belongs to.
    """
    nir = frames.spectrum is Spectrum.NIR
    times = []
    rows = []
    prev_exp = None
    prev_t = None
    prev_rect = None
    for t, raw in zip(frames.times, frames.frames):
        rois = track.at(t)
        if rois is None:
            prev_exp = None
            continue
        roi = rois.chest_nir if nir else rois.chest_fir
        rect = roi.pixel_slices(frames.height, frames.width)
        img = preprocess_nir(raw) if nir else preprocess_fir(raw)
        exp = expand_frame(img[rect], params)
        if prev_exp is not None and rect == prev_rect:
            field = flow_from_expansions(prev_exp, exp, params, prev_t, t)
            vel = vertical_velocities(field, t - prev_t)
            times.append(t)
            rows.append(cell_means(vel))
        prev_exp, prev_t, prev_rect = exp, t, rect
    if not times:
        raise EmptySignal("no consecutive frame pair had a valid chest ROI")
    return VelocityProfileSet(np.asarray(times), np.asarray(rows))


def extract_rm(
    frames: FrameSequence,
    track: RoiTrack,
    params: FlowParams = FlowParams(),
    window_s: float = PROFILE_WINDOW_S,
) -> RespSignal:
    """Respiratory motion: profile-rejected mean vertical chest velocity.

    Works for either spectrum; the sample timestamp is the later frame of
    each flow pair. Frames whose ROI is missing break the pair chain and
    leave a gap.
    """
    pset = chest_velocity_profiles(frames, track, params)
    values, _ = reduce_profiles(pset, window_s)
    source = SignalSource.RM_NIR if frames.spectrum is Spectrum.NIR else SignalSource.RM_FIR
    return RespSignal(source, pset.times, values)
