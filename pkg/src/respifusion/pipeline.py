"""End-to-end orchestration: frames -> signals -> windows -> fusion rows.

One shared windowing (start times strided at the slowest camera's frame
period by default) drives the spectral estimates, the apnea features and the
fusion, so every consumer sees the same 12 s epochs.
"""

from __future__ import annotations

import dataclasses
import json
import warnings
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from . import apnea as apnea_mod
from . import dsp
from .core import (CAMERA_SOURCES, RespSignal, SignalSource, Task, Window,
                   window_starts)
from .dataset import SessionData
from .errors import DegenerateWindow, EmptySignal, NoEstimate, TooShort
from .flow import FlowParams
from .fusion import ArbitrationStrategy, FusionInput, RaEstimate, s2_fuse, sqb_fuse
from .roi import ChestGeometry, RoiTrack, hold_and_retrigger
from .signals import extract_rm, extract_ta
from .sim import GroundTruth


@dataclass
class PipelineConfig:
    """Declarative knobs for the whole pipeline; JSON round-trippable."""

    window_s: float = 12.0
    stride_s: float | None = None          # None -> slowest camera frame period
    min_window_samples: int = 8
    pool_s: float = 15.0
    detrend_lambda: float = dsp.DETREND_LAMBDA
    band_low_hz: float = dsp.BAND_LOW_HZ
    band_high_hz: float = dsp.BAND_HIGH_HZ
    psd_max_step_hz: float = dsp.PSD_MAX_STEP_HZ
    snr_margin_bpm: float = dsp.SNR_MARGIN_BPM
    fusion_scale: int = 24
    arbitration: str = "suppress-to-zero"
    apnea_threshold: float = 0.5
    retrigger_s: float = 10.0
    chest_offset_frac: float = 0.15
    chest_width_frac: float = 0.6
    chest_height_frac: float = 0.35
    flow_pyramid_levels: int = 2
    flow_window_size: int = 9
    flow_poly_n: int = 5
    flow_poly_sigma: float = 1.1
    flow_iterations: int = 3
    svm_kernel: str = "rbf"
    svm_c: float = 1.0
    svm_gamma: float | None = None
    seed: int = 0

    def geometry(self) -> ChestGeometry:
        return ChestGeometry(self.chest_offset_frac, self.chest_width_frac,
                             self.chest_height_frac)

    def flow_params(self) -> FlowParams:
        return FlowParams(self.flow_pyramid_levels, self.flow_window_size,
                          self.flow_poly_n, self.flow_poly_sigma, self.flow_iterations)

    def strategy(self) -> ArbitrationStrategy:
        return ArbitrationStrategy(self.arbitration)

    def frequencies(self) -> np.ndarray:
        return dsp.psd_grid(self.band_low_hz, self.band_high_hz, self.psd_max_step_hz)

    def to_dict(self) -> dict:
        return dataclasses.asdict(self)

    @classmethod
    def from_dict(cls, d: dict) -> "PipelineConfig":
        known = {f.name for f in dataclasses.fields(cls)}
        unknown = set(d) - known
        if unknown:
            raise ValueError(f"unknown config keys: {sorted(unknown)}")
        return cls(**d)

    @classmethod
    def from_file(cls, path: str | Path) -> "PipelineConfig":
        return cls.from_dict(json.loads(Path(path).read_text()))


def extract_signals(session: SessionData, config: PipelineConfig):
    """Run ROI tracking and signal extraction over the loaded streams.

    Returns ``(signals, track, diagnostics)``; missing spectra or extraction
    failures shrink the signal dict instead of aborting.
    """
    diagnostics: list[str] = []
    track = hold_and_retrigger(
        session.landmarks, session.nir_dims, session.fir_dims,
        session.calibration, config.geometry(), config.retrigger_s)
    signals: dict[SignalSource, RespSignal] = {}
    flow_params = config.flow_params()
    if session.frames_fir is not None:
        try:
            signals[SignalSource.TA_FIR] = extract_ta(session.frames_fir, track)
        except EmptySignal as exc:
            diagnostics.append(f"ta_fir: {exc}")
        try:
            signals[SignalSource.RM_FIR] = extract_rm(
                session.frames_fir, track, flow_params, config.window_s)
        except EmptySignal as exc:
            diagnostics.append(f"rm_fir: {exc}")
    else:
        diagnostics.append("degraded: fir stream missing")
    if session.frames_nir is not None:
        try:
            signals[SignalSource.RM_NIR] = extract_rm(
                session.frames_nir, track, flow_params, config.window_s)
        except EmptySignal as exc:
            diagnostics.append(f"rm_nir: {exc}")
    else:
        diagnostics.append("degraded: nir stream missing")
    return signals, track, diagnostics


@dataclass
class WindowRecord:
    """Everything computed for one shared analysis window."""

    start: float
    end: float
    estimates: dict = field(default_factory=dict)     # source -> SpectralEstimate
    features: np.ndarray | None = None                # 12-vector, NaN for missing
    rr_ref: float = float("nan")


def _window_of(signal: RespSignal, start: float, end: float, min_samples: int):
    lo = int(np.searchsorted(signal.times, start - 1e-9, side="left"))
    hi = int(np.searchsorted(signal.times, end - 1e-9, side="left"))
    if hi - lo < min_samples:
        return None
    return Window(signal.source, start, end, signal.times[lo:hi], signal.values[lo:hi])


def default_stride(signals: dict, config: PipelineConfig) -> float:
    if config.stride_s is not None:
        return config.stride_s
    periods = [float(np.median(np.diff(s.times)))
               for s in signals.values() if len(s) > 1]
    if not periods:
        raise EmptySignal("no usable signal to derive the stride from")
    return max(periods)


def analyze_windows(
    signals: dict[SignalSource, RespSignal],
    config: PipelineConfig,
    reference: RespSignal | None = None,
    starts: np.ndarray | None = None,
) -> list[WindowRecord]:
    """Shared-windowing spectral analysis and feature extraction.

    Window starts span the overlap of all available camera signals unless
    given explicitly. Per window and source, the spectral estimate may be
    absent (too few samples or no spectral content); features degrade to
    NaN blocks only when the samples themselves are missing.
    """
    cam = {s: sig for s, sig in signals.items() if s in CAMERA_SOURCES}
    if not cam:
        raise EmptySignal("no camera-derived signal available")
    cam_period = max(float(np.median(np.diff(s.times)))
                     for s in cam.values() if len(s) > 1)
    if starts is None:
        t0 = max(sig.times[0] for sig in cam.values())
        t1 = min(sig.times[-1] for sig in cam.values())
        starts = window_starts(t0, t1, config.window_s, default_stride(cam, config),
                               slack=cam_period)
    freqs = config.frequencies()
    if reference is not None and len(reference) > 1:
        # the smoothness-prior lambda is calibrated for the camera cadence,
        # so a faster reference belt is resampled onto it before running the
        # identical spectral path
        ref_period = float(np.median(np.diff(reference.times)))
        if ref_period < 0.5 * cam_period:
            grid = np.arange(reference.times[0], reference.times[-1], cam_period)
            reference = RespSignal(reference.source, grid,
                                   np.interp(grid, reference.times, reference.values))

    records = []
    for s in np.asarray(starts, dtype=float):
        rec = WindowRecord(start=float(s), end=float(s + config.window_s))
        values_map: dict[SignalSource, np.ndarray | None] = {}
        est_map: dict[SignalSource, dsp.SpectralEstimate | None] = {}
        for source in CAMERA_SOURCES:
            sig = cam.get(source)
            win = _window_of(sig, rec.start, rec.end, config.min_window_samples) if sig else None
            if win is None:
                values_map[source] = None
                est_map[source] = None
                continue
            try:
                est, processed = dsp.analyze_window(
                    win, lam=config.detrend_lambda, frequencies=freqs,
                    snr_margin_bpm=config.snr_margin_bpm)
                rec.estimates[source] = est
                values_map[source] = processed
                est_map[source] = est
            except (DegenerateWindow, TooShort):
                # flat window: no rate estimate, but the silence itself is a
                # feature (zero variance, zero SNR)
                values_map[source] = win.values
                est_map[source] = dsp.SpectralEstimate(source, float("nan"), float("nan"), 0.0)
        rec.features = apnea_mod.extract_features(values_map, est_map)
        if reference is not None:
            ref_win = _window_of(reference, rec.start, rec.end, config.min_window_samples)
            if ref_win is not None:
                try:
                    ref_est, _ = dsp.analyze_window(
                        ref_win, apply_bandpass=True, lam=config.detrend_lambda,
                        frequencies=freqs, snr_margin_bpm=config.snr_margin_bpm)
                    rec.rr_ref = ref_est.rr
                except (DegenerateWindow, TooShort):
                    pass
        records.append(rec)
    return records


@dataclass
class WindowRow:
    """One emitted row of the per-window output table."""

    timestamp: float
    rr: dict                        # source -> rr or nan
    snr: dict                       # source -> snr or nan
    rr_sqb: float
    apnea_posterior: float | None
    apnea_flag: bool
    rr_final: float
    rr_ref: float
    rr_truth: float
    apnea_truth: int | None
    diagnostics: tuple = ()


def fuse_windows(
    records: list[WindowRecord],
    config: PipelineConfig,
    model: apnea_mod.SvmEnsemble | None = None,
    truth: GroundTruth | None = None,
    apnea_intervals: list[tuple[float, float]] | None = None,
) -> list[WindowRow]:
    """Fuse per-window estimates and apnea decisions into output rows."""
    decisions: list[tuple[bool, float] | None]
    if model is not None and records:
        feats = np.vstack([r.features for r in records])
        labels, posteriors, _ = model.classify(feats)
        decisions = [(bool(l), float(p)) for l, p in zip(labels, posteriors)]
    else:
        decisions = [None] * len(records)

    rows = []
    last_rr = None
    strategy = config.strategy()
    for rec, decision in zip(records, decisions):
        valid = tuple(rec.estimates[s] for s in CAMERA_SOURCES
                      if s in rec.estimates and np.isfinite(rec.estimates[s].rr))
        diags: list[str] = []
        if valid:
            with warnings.catch_warnings():
                warnings.simplefilter("ignore")
                rr_sqb = sqb_fuse(FusionInput(valid), config.fusion_scale)
            if any(e.implausible for e in valid):
                diags.append("implausible-source-rr")
        else:
            rr_sqb = float("nan")
            diags.append("no-estimate")
        ra: RaEstimate = s2_fuse(rec.end, rr_sqb, decision,
                                 per_source=rec.estimates, strategy=strategy,
                                 last_rr=last_rr)
        if np.isfinite(ra.rr):
            last_rr = ra.rr
        rr_truth = float(truth.rr_at(np.array([rec.end]))[0]) if truth is not None else float("nan")
        apnea_truth = None
        if apnea_intervals is not None:
            apnea_truth = apnea_mod.overlap_label(rec.start, rec.end, apnea_intervals)
        rows.append(WindowRow(
            timestamp=rec.end,
            rr={s: (rec.estimates[s].rr if s in rec.estimates else float("nan"))
                for s in CAMERA_SOURCES},
            snr={s: (rec.estimates[s].snr if s in rec.estimates else float("nan"))
                 for s in CAMERA_SOURCES},
            rr_sqb=rr_sqb,
            apnea_posterior=ra.apnea_posterior,
            apnea_flag=ra.apnea,
            rr_final=ra.rr,
            rr_ref=rec.rr_ref,
            rr_truth=rr_truth,
            apnea_truth=apnea_truth,
            diagnostics=tuple(diags) + ra.diagnostics,
        ))
    return rows


@dataclass
class SessionResult:
    subject: str
    task: Task
    rows: list[WindowRow]
    diagnostics: list[str]
    degraded: bool
    sex: str | None = None


def run_session(
    session: SessionData,
    config: PipelineConfig,
    model: apnea_mod.SvmEnsemble | None = None,
    signals: dict[SignalSource, RespSignal] | None = None,
) -> SessionResult:
    """Full pipeline over one loaded session."""
    diagnostics: list[str] = []
    if signals is None:
        signals, _, diagnostics = extract_signals(session, config)
    records = analyze_windows(signals, config,
                              reference=session.reference.get(SignalSource.REF_THORAX))
    rows = fuse_windows(records, config, model=model, truth=session.truth,
                        apnea_intervals=session.annotations.intervals())
    return SessionResult(
        subject=session.annotations.subject,
        task=session.annotations.task,
        rows=rows,
        diagnostics=diagnostics,
        degraded=session.degraded,
        sex=session.sex,
    )


def labeled_windows(
    records: list[WindowRecord],
    intervals: list[tuple[float, float]],
    subject: str,
    task: Task,
) -> list[apnea_mod.LabeledWindow]:
    """Feature vectors plus half-overlap labels for detector training."""
    return [
        apnea_mod.LabeledWindow(
            features=rec.features,
            label=apnea_mod.overlap_label(rec.start, rec.end, intervals),
            subject=subject,
            task=task,
            start=rec.start,
            end=rec.end,
        )
        for rec in records
    ]


def train_detector(
    windows: list[apnea_mod.LabeledWindow],
    config: PipelineConfig,
) -> apnea_mod.SvmEnsemble:
    from .svm import SvmConfig

    usable = [w for w in windows if w.task in apnea_mod.DETECTOR_TRAIN_TASKS]
    if not usable:
        raise NoEstimate("no training windows from detector-train tasks")
    feats = np.vstack([w.features for w in usable])
    labels = np.array([w.label for w in usable])
    ens = apnea_mod.SvmEnsemble(
        threshold=config.apnea_threshold,
        svm_config=SvmConfig(kernel=config.svm_kernel, c=config.svm_c,
                             gamma=config.svm_gamma),
    )
    return ens.fit(feats, labels, seed=config.seed)
