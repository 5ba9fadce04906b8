"""Synthetic session generator with exact ground truth.

Reproduces the five protocol tasks (spontaneous breathing plus four apnea
variants) at both the signal level and the frame level: ``synth_signals``
emits the three camera-derived respiratory signals and the two reference
effort belts directly, while ``synth_frames`` renders NIR/FIR image streams
(textured moving chest band, temperature-oscillating nostril patch) so the
full ROI/flow/extraction path can be exercised end to end.

Same seed, same session, bit for bit.
"""

from __future__ import annotations

import enum
import math
from dataclasses import dataclass, field, replace

import numpy as np
from scipy import ndimage

from .core import FrameSequence, RespSignal, SignalSource, Spectrum, Task
from .roi import AffineTransform, ChestGeometry, LandmarkFrame, derive_rois

#: Relative amplitude of the second harmonic in the breathing waveform.
SECOND_HARMONIC = 0.3

#: Residual motion level during obstructive events (airway blocked, torso
#: still working).
OBSTRUCTIVE_RM_LEVEL = 0.9

#: Envelope ramp half-width at apnea edges, seconds.
EDGE_RAMP_S = 0.3

#: Amplitude attenuation of the NIR motion channel under a blanket.
BLANKET_RM_NIR_GAIN = 0.3


class ApneaKind(enum.Enum):
    CENTRAL = "central"
    OBSTRUCTIVE = "obstructive"


@dataclass(frozen=True)
class ApneaEvent:
    start: float
    duration: float
    kind: ApneaKind

    @property
    def end(self) -> float:
        return self.start + self.duration


@dataclass(frozen=True)
class ArtifactEvent:
    """Extra noise injected into one source over an interval."""

    start: float
    duration: float
    source: SignalSource
    snr_db: float = -10.0

    @property
    def end(self) -> float:
        return self.start + self.duration


@dataclass(frozen=True)
class SessionSpec:
    task: Task
    seed: int = 0
    duration_s: float = 180.0
    rr_bpm: float = 10.0
    rr_wander_bpm: float = 0.0
    apnea_events: tuple[ApneaEvent, ...] = ()
    artifacts: tuple[ArtifactEvent, ...] = ()
    noise: float = 0.1                      # additive noise std per channel
    nir_rate: float = 15.0
    fir_rate: float = 8.7
    ref_rate: float = 50.0
    jitter: float = 0.1                     # fractional frame-interval jitter
    # frame rendering
    nir_dims: tuple[int, int] = (336, 190)  # (width, height)
    fir_dims: tuple[int, int] = (160, 120)
    motion_amp_px: float = 2.0              # chest displacement in NIR px
    ta_mod: float = 0.15                    # nostril intensity modulation
    frame_noise: float = 0.0                # per-pixel noise std
    geometry: ChestGeometry = ChestGeometry()

    def __post_init__(self):
        for ev in self.apnea_events:
            if ev.duration <= 10.0:
                raise ValueError("apneic events last more than 10 s by definition")
            if self.task in (Task.CENTRAL_APNEA, Task.CENTRAL_APNEA_BLANKET,
                             Task.CENTRAL_APNEA_ARBITRARY) and ev.kind is not ApneaKind.CENTRAL:
                raise ValueError("central tasks only contain central events")
            if self.task is Task.OBSTRUCTIVE_APNEA and ev.kind is not ApneaKind.OBSTRUCTIVE:
                raise ValueError("obstructive task only contains obstructive events")
        if self.task is Task.SPONTANEOUS and self.apnea_events:
            raise ValueError("spontaneous breathing has no apneic events")


@dataclass(frozen=True)
class GroundTruth:
    times: np.ndarray              # fine grid
    rr: np.ndarray                 # breaths/min, 0 inside apneas
    apnea_events: tuple[ApneaEvent, ...]

    def rr_at(self, t: np.ndarray) -> np.ndarray:
        return np.interp(np.asarray(t, dtype=float), self.times, self.rr)

    def intervals(self) -> list[tuple[float, float]]:
        return [(ev.start, ev.end) for ev in self.apnea_events]

    @property
    def apnea_fraction(self) -> float:
        total = float(self.times[-1] - self.times[0])
        return sum(ev.duration for ev in self.apnea_events) / total


@dataclass(frozen=True)
class SimulatedSignals:
    spec: SessionSpec
    signals: dict
    truth: GroundTruth


@dataclass(frozen=True)
class SimulatedFrames:
    spec: SessionSpec
    nir: FrameSequence
    fir: FrameSequence
    landmarks: list[LandmarkFrame]
    calibration: AffineTransform
    truth: GroundTruth


def make_session(task: Task, seed: int = 0, noise: float = 0.1, **overrides) -> SessionSpec:
    """Protocol-faithful session spec for one task.

    Apnea tasks: 3 min at 10 breaths/min with three 20 s events (two
    subject-dependent ones for the arbitrary-duration task). Spontaneous:
    4.5 min of freely wandering RR with head turns that degrade the thermal
    channel.
    """
    rng = np.random.default_rng([seed, 99])
    if task is Task.SPONTANEOUS:
        spec = SessionSpec(
            task=task, seed=seed, duration_s=270.0,
            rr_bpm=float(rng.uniform(11.0, 18.0)), rr_wander_bpm=1.5,
            artifacts=(
                ArtifactEvent(30.0, 120.0, SignalSource.TA_FIR),
                ArtifactEvent(150.0, 120.0, SignalSource.TA_FIR),
            ),
            noise=noise,
        )
    elif task is Task.CENTRAL_APNEA_ARBITRARY:
        d1, d2 = rng.uniform(15.0, 40.0, size=2)
        events = (ApneaEvent(40.0, float(d1), ApneaKind.CENTRAL),
                  ApneaEvent(110.0, float(d2), ApneaKind.CENTRAL))
        spec = SessionSpec(task=task, seed=seed, duration_s=180.0, rr_bpm=10.0,
                           apnea_events=events, noise=noise)
    else:
        kind = ApneaKind.OBSTRUCTIVE if task is Task.OBSTRUCTIVE_APNEA else ApneaKind.CENTRAL
        events = tuple(ApneaEvent(s, 20.0, kind) for s in (35.0, 95.0, 155.0))
        spec = SessionSpec(task=task, seed=seed, duration_s=180.0, rr_bpm=10.0,
                           apnea_events=events, noise=noise)
    return replace(spec, **overrides) if overrides else spec


def _rng(spec: SessionSpec, salt: int) -> np.random.Generator:
    return np.random.default_rng([spec.seed, salt])


def _sample_times(spec: SessionSpec, rate: float, salt: int) -> np.ndarray:
    n = int(math.floor(spec.duration_s * rate)) + 1
    dts = (1.0 / rate) * (1.0 + spec.jitter * _rng(spec, salt).uniform(-1.0, 1.0, n))
    t = np.cumsum(dts) - dts[0]
    return t[t <= spec.duration_s + 1e-9]


def _rr_profile(spec: SessionSpec, t: np.ndarray) -> np.ndarray:
    rr = np.full_like(t, spec.rr_bpm)
    if spec.rr_wander_bpm > 0:
        r = _rng(spec, 4)
        p1, p2 = r.uniform(40.0, 60.0), r.uniform(80.0, 120.0)
        ph1, ph2 = r.uniform(0, 2 * np.pi, 2)
        rr = rr + spec.rr_wander_bpm * (
            0.7 * np.sin(2 * np.pi * t / p1 + ph1) + 0.3 * np.sin(2 * np.pi * t / p2 + ph2))
    return rr


def _suppression(t: np.ndarray, events, ramp: float = EDGE_RAMP_S) -> np.ndarray:
    """Smooth 0..1 indicator of apnea (1 inside events, ramped edges)."""
    s = np.zeros_like(t)
    for ev in events:
        rise = np.clip((t - ev.start + ramp) / (2 * ramp), 0.0, 1.0)
        fall = np.clip((ev.end + ramp - t) / (2 * ramp), 0.0, 1.0)
        s = np.maximum(s, np.minimum(rise, fall))
    return s


_SUPPRESSED_LEVEL = {  # residual level per (apnea kind, source)
    ApneaKind.CENTRAL: {
        SignalSource.TA_FIR: 0.0, SignalSource.RM_NIR: 0.0, SignalSource.RM_FIR: 0.0,
        SignalSource.REF_THORAX: 0.0, SignalSource.REF_ABDOMEN: 0.0,
    },
    ApneaKind.OBSTRUCTIVE: {
        SignalSource.TA_FIR: 0.0,
        SignalSource.RM_NIR: OBSTRUCTIVE_RM_LEVEL, SignalSource.RM_FIR: OBSTRUCTIVE_RM_LEVEL,
        SignalSource.REF_THORAX: OBSTRUCTIVE_RM_LEVEL, SignalSource.REF_ABDOMEN: OBSTRUCTIVE_RM_LEVEL,
    },
}


def _envelope(spec: SessionSpec, source: SignalSource, t: np.ndarray) -> np.ndarray:
    env = np.ones_like(t)
    for kind in ApneaKind:
        events = [ev for ev in spec.apnea_events if ev.kind is kind]
        if events:
            level = _SUPPRESSED_LEVEL[kind][source]
            env = env * (1.0 - (1.0 - level) * _suppression(t, events))
    return env


def _pink(n: int, rng: np.random.Generator) -> np.ndarray:
    white = rng.standard_normal(n)
    spec = np.fft.rfft(white)
    f = np.arange(len(spec), dtype=float)
    f[0] = 1.0
    shaped = np.fft.irfft(spec / np.sqrt(f), n=n)
    sd = shaped.std()
    return shaped / sd if sd > 0 else shaped


def _noise(spec: SessionSpec, source: SignalSource, t: np.ndarray, salt: int) -> np.ndarray:
    total = np.zeros_like(t)
    if spec.noise > 0:
        r = _rng(spec, salt)
        total = spec.noise * math.sqrt(0.5) * (r.standard_normal(len(t)) + _pink(len(t), r))
    sig_rms = math.sqrt((1.0 + SECOND_HARMONIC**2) / 2.0)
    for k, art in enumerate(spec.artifacts):
        if art.source is not source:
            continue
        extra = sig_rms * 10.0 ** (-art.snr_db / 20.0)
        mask = (t >= art.start) & (t < art.end)
        total = total + extra * mask * _rng(spec, salt + 1000 + k).standard_normal(len(t))
    return total


def _phase(spec: SessionSpec, t: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
    """Breathing phase (cycles) and instantaneous rate at times t."""
    grid = np.arange(0.0, spec.duration_s + 0.01, 0.01)
    rr = _rr_profile(spec, grid)
    phase = np.concatenate([[0.0], np.cumsum((rr[:-1] + rr[1:]) / 2.0 / 60.0 * np.diff(grid))])
    return np.interp(t, grid, phase), np.interp(t, grid, rr)


def _waveform(phase: np.ndarray) -> np.ndarray:
    return np.sin(2 * np.pi * phase) + SECOND_HARMONIC * np.sin(4 * np.pi * phase)


def _waveform_rate(phase: np.ndarray, rr: np.ndarray) -> np.ndarray:
    # analytic derivative of the displacement waveform (envelope handled
    # outside so apnea edges stay clean)
    omega = 2 * np.pi * rr / 60.0
    return omega * (np.cos(2 * np.pi * phase) + 2 * SECOND_HARMONIC * np.cos(4 * np.pi * phase))


def synth_signals(spec: SessionSpec) -> SimulatedSignals:
    """Generate the five respiratory signals and the session ground truth.

    Thermal airflow and the effort belts are displacement-like; the motion
    channels are velocity-like (what dense flow measures). Central events
    silence every channel, obstructive events silence only the airflow.
    """
    channels = {
        SignalSource.TA_FIR: (spec.fir_rate, 2, False),
        SignalSource.RM_NIR: (spec.nir_rate, 1, True),
        SignalSource.RM_FIR: (spec.fir_rate, 2, True),
        SignalSource.REF_THORAX: (spec.ref_rate, 3, False),
        SignalSource.REF_ABDOMEN: (spec.ref_rate, 3, False),
    }
    signals = {}
    for i, (source, (rate, time_salt, velocity_like)) in enumerate(channels.items()):
        t = _sample_times(spec, rate, time_salt)
        phase, rr = _phase(spec, t)
        wave = _waveform_rate(phase, rr) / (2 * np.pi * spec.rr_bpm / 60.0) if velocity_like \
            else _waveform(phase)
        env = _envelope(spec, source, t)
        gain = BLANKET_RM_NIR_GAIN if (
            spec.task is Task.CENTRAL_APNEA_BLANKET and source is SignalSource.RM_NIR) else 1.0
        noise_gain = 3.0 if (
            spec.task is Task.CENTRAL_APNEA_BLANKET and source is SignalSource.RM_NIR) else 1.0
        values = gain * env * wave + noise_gain * _noise(spec, source, t, 10 + i)
        signals[source] = RespSignal(source, t, values)

    grid = np.arange(0.0, spec.duration_s + 0.05, 0.05)
    rr = _rr_profile(spec, grid)
    for ev in spec.apnea_events:
        rr[(grid >= ev.start) & (grid < ev.end)] = 0.0
    truth = GroundTruth(times=grid, rr=rr, apnea_events=spec.apnea_events)
    return SimulatedSignals(spec=spec, signals=signals, truth=truth)


def _texture(rng: np.random.Generator, h: int, w: int, smooth: float,
             lo: float, hi: float) -> np.ndarray:
    tex = ndimage.gaussian_filter(rng.random((h, w)), smooth, mode="wrap")
    tex = (tex - tex.min()) / max(tex.max() - tex.min(), 1e-12)
    return lo + (hi - lo) * tex


def _feather(n: int, width: int) -> np.ndarray:
    alpha = np.ones(n)
    ramp = np.linspace(0.0, 1.0, width + 2)[1:-1]
    alpha[:width] = ramp
    alpha[n - width:] = ramp[::-1]
    return alpha


def synth_frames(spec: SessionSpec) -> SimulatedFrames:
    """Render NIR and FIR streams with a breathing chest band and nostrils.

    The chest band translates vertically with the breathing displacement;
    the FIR nostril patch oscillates in intensity with the airflow
    temperature cycle. Landmarks are emitted per NIR frame and the affine
    calibration maps the full NIR frame onto the full FIR frame.
    """
    nir_w, nir_h = spec.nir_dims
    fir_w, fir_h = spec.fir_dims
    calibration = AffineTransform(fir_w / nir_w, fir_h / nir_h, 0.0, 0.0)

    nose = (0.5 * nir_w, 0.30 * nir_h)
    chin_y = 0.45 * nir_h
    lm_proto = LandmarkFrame(timestamp=0.0, nose=nose, chin_y=chin_y, valid=True)
    rois = derive_rois(lm_proto, spec.nir_dims, spec.fir_dims, calibration, spec.geometry)

    t_nir = _sample_times(spec, spec.nir_rate, 1)
    t_fir = _sample_times(spec, spec.fir_rate, 2)

    def motion_displacement(t):
        phase, rr = _phase(spec, t)
        env = _envelope(spec, SignalSource.RM_NIR, t)
        return spec.motion_amp_px * env * _waveform(phase)

    def render_stream(times, dims, chest_roi, spectrum, salt):
        w, h = dims
        scale_y = h / nir_h
        rng = _rng(spec, 20 + salt)
        bg = _texture(rng, h, w, 2.0, 0.10, 0.70)
        bg[0, 0], bg[0, 1] = 0.02, 0.98  # static extremes pin the FIR normalization
        rows, _ = chest_roi.pixel_slices(h, w)
        pad = 8
        y0 = max(rows.start - pad, 0)
        y1 = min(rows.stop + pad, h)
        contrast = 0.95
        noise_std = spec.frame_noise
        if spectrum is Spectrum.NIR and spec.task is Task.CENTRAL_APNEA_BLANKET:
            contrast = 0.35       # blanket hides most chest texture in NIR
            noise_std *= 3.0
        band_tex = _texture(rng, (y1 - y0) + 2 * pad, w, 1.0, 0.15, contrast)
        alpha = _feather(y1 - y0, 6)[:, None]
        disp = motion_displacement(times) * scale_y
        if spectrum is Spectrum.FIR:
            phase, _ = _phase(spec, times)
            env_ta = _envelope(spec, SignalSource.TA_FIR, times)
            nostril_level = 0.55 + spec.ta_mod * env_ta * _waveform(phase)
            nr, nc = rois.nostril_fir.pixel_slices(h, w)
        noise_rng = _rng(spec, 40 + salt)

        frames = np.empty((len(times), h, w), dtype=np.float32)
        band_rows = np.arange(y1 - y0, dtype=float)
        band_cols = np.arange(w, dtype=float)
        cgrid, rgrid = np.meshgrid(band_cols, band_rows)
        for k in range(len(times)):
            frame = bg.copy()
            shifted = ndimage.map_coordinates(
                band_tex, [rgrid + pad - disp[k], cgrid], order=1, mode="nearest")
            frame[y0:y1] = (1 - alpha) * frame[y0:y1] + alpha * shifted
            if spectrum is Spectrum.FIR:
                frame[nr, nc] = nostril_level[k]
            if noise_std > 0:
                frame = frame + noise_std * noise_rng.standard_normal((h, w))
            frames[k] = frame
        rate = spec.nir_rate if spectrum is Spectrum.NIR else spec.fir_rate
        return FrameSequence(spectrum, times, frames, nominal_rate=rate)

    nir = render_stream(t_nir, spec.nir_dims, rois.chest_nir, Spectrum.NIR, 0)
    fir = render_stream(t_fir, spec.fir_dims, rois.chest_fir, Spectrum.FIR, 1)
    landmarks = [LandmarkFrame(timestamp=float(t), nose=nose, chin_y=chin_y, valid=True)
                 for t in t_nir]
    truth = synth_signals(spec).truth
    return SimulatedFrames(spec=spec, nir=nir, fir=fir, landmarks=landmarks,
                           calibration=calibration, truth=truth)
