"""On-disk session format shared by real recordings and the simulator.

Layout of one session directory::

    nir/frame_000000.pgm ...      16-bit binary portable graymaps
    nir/timestamps.csv            index,filename,t_seconds
    fir/frame_000000.pgm ...
    fir/timestamps.csv
    landmarks.csv                 t_seconds,nose_x,nose_y,chin_y,valid
    reference.csv                 t_seconds,thorax,abdomen
    annotations.csv               subject,task,kind,start_s,end_s
    calibration.txt               sx sy tx ty
    session.json                  rates, dims, optional sex metadata
    ground_truth.csv              t_seconds,rr_bpm (simulator sessions only)

``annotations.csv`` uses one row per apneic event; apnea-free sessions carry
a single ``kind=none`` row spanning the recording so subject and task stay
discoverable. Either frame directory may be absent, in which case the
pipeline degrades to the remaining sources.
"""

from __future__ import annotations

import csv
import json
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from .core import FrameSequence, RespSignal, SignalSource, Spectrum, Task
from .errors import DatasetError
from .roi import AffineTransform, LandmarkFrame, load_calibration, save_calibration
from .sim import ApneaEvent, ApneaKind, GroundTruth, SimulatedFrames, SimulatedSignals

PGM_MAXVAL = 65535


def write_pgm(path: Path, frame: np.ndarray) -> None:
    """Store a float frame as a 16-bit binary PGM (values clipped to [0, 1])."""
    data = np.clip(np.asarray(frame, dtype=np.float64), 0.0, 1.0)
    counts = np.round(data * PGM_MAXVAL).astype(">u2")
    h, w = counts.shape
    with open(path, "wb") as fh:
        fh.write(f"P5\n{w} {h}\n{PGM_MAXVAL}\n".encode("ascii"))
        fh.write(counts.tobytes())


def read_pgm(path: Path) -> np.ndarray:
    with open(path, "rb") as fh:
        magic = fh.readline().strip()
        if magic != b"P5":
            raise DatasetError(f"{path}: not a binary PGM")
        fields: list[int] = []
        while len(fields) < 3:
            line = fh.readline()
            if not line:
                raise DatasetError(f"{path}: truncated PGM header")
            if line.startswith(b"#"):
                continue
            fields.extend(int(tok) for tok in line.split())
        w, h, maxval = fields[:3]
        dtype = ">u2" if maxval > 255 else "u1"
        raw = np.frombuffer(fh.read(), dtype=dtype, count=w * h)
        if raw.size != w * h:
            raise DatasetError(f"{path}: truncated PGM payload")
    return raw.reshape(h, w).astype(np.float64) / maxval


@dataclass
class SessionAnnotations:
    subject: str
    task: Task
    events: list[ApneaEvent] = field(default_factory=list)

    def intervals(self) -> list[tuple[float, float]]:
        return [(ev.start, ev.end) for ev in self.events]


@dataclass
class SessionData:
    path: Path
    frames_nir: FrameSequence | None
    frames_fir: FrameSequence | None
    landmarks: list[LandmarkFrame]
    reference: dict[SignalSource, RespSignal]
    annotations: SessionAnnotations
    calibration: AffineTransform
    nir_dims: tuple[int, int]
    fir_dims: tuple[int, int]
    sex: str | None = None
    truth: GroundTruth | None = None

    @property
    def degraded(self) -> bool:
        return self.frames_nir is None or self.frames_fir is None


def _write_frames(dirpath: Path, frames: FrameSequence) -> None:
    dirpath.mkdir(parents=True, exist_ok=True)
    with open(dirpath / "timestamps.csv", "w", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(["index", "filename", "t_seconds"])
        for i, t in enumerate(frames.times):
            name = f"frame_{i:06d}.pgm"
            writer.writerow([i, name, f"{t:.6f}"])
            write_pgm(dirpath / name, frames.frames[i])


def _read_frames(dirpath: Path, spectrum: Spectrum, nominal_rate: float) -> FrameSequence:
    ts_path = dirpath / "timestamps.csv"
    if not ts_path.exists():
        raise DatasetError(f"{dirpath}: missing timestamps.csv")
    times = []
    frames = []
    with open(ts_path, newline="") as fh:
        for row in csv.DictReader(fh):
            times.append(float(row["t_seconds"]))
            fpath = dirpath / row["filename"]
            if not fpath.exists():
                raise DatasetError(f"{dirpath}: referenced frame {row['filename']} missing")
            frames.append(read_pgm(fpath))
    if not times:
        raise DatasetError(f"{dirpath}: empty frame list")
    try:
        return FrameSequence(spectrum, np.asarray(times), np.stack(frames), nominal_rate)
    except ValueError as exc:
        raise DatasetError(f"{dirpath}: {exc}") from exc


def write_session(
    out_dir: str | Path,
    sim_frames: SimulatedFrames,
    sim_signals: SimulatedSignals,
    subject: str,
    sex: str | None = None,
) -> Path:
    """Write a simulated session in the interchange layout."""
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    spec = sim_frames.spec
    _write_frames(out / "nir", sim_frames.nir)
    _write_frames(out / "fir", sim_frames.fir)

    with open(out / "landmarks.csv", "w", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(["t_seconds", "nose_x", "nose_y", "chin_y", "valid"])
        for lm in sim_frames.landmarks:
            writer.writerow([f"{lm.timestamp:.6f}", f"{lm.nose[0]:.3f}",
                             f"{lm.nose[1]:.3f}", f"{lm.chin_y:.3f}", int(lm.valid)])

    thorax = sim_signals.signals[SignalSource.REF_THORAX]
    abdomen = sim_signals.signals[SignalSource.REF_ABDOMEN]
    with open(out / "reference.csv", "w", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(["t_seconds", "thorax", "abdomen"])
        for t, v_t, v_a in zip(thorax.times, thorax.values, abdomen.values):
            writer.writerow([f"{t:.6f}", f"{v_t:.9f}", f"{v_a:.9f}"])

    with open(out / "annotations.csv", "w", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(["subject", "task", "kind", "start_s", "end_s"])
        if spec.apnea_events:
            for ev in spec.apnea_events:
                writer.writerow([subject, spec.task.value, ev.kind.value,
                                 f"{ev.start:.3f}", f"{ev.end:.3f}"])
        else:
            writer.writerow([subject, spec.task.value, "none", "0.000",
                             f"{spec.duration_s:.3f}"])

    save_calibration(out / "calibration.txt", sim_frames.calibration)

    truth = sim_signals.truth
    with open(out / "ground_truth.csv", "w", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(["t_seconds", "rr_bpm"])
        for t, rr in zip(truth.times, truth.rr):
            writer.writerow([f"{t:.6f}", f"{rr:.6f}"])

    meta = {
        "nir_rate": spec.nir_rate,
        "fir_rate": spec.fir_rate,
        "nir_dims": list(spec.nir_dims),
        "fir_dims": list(spec.fir_dims),
    }
    if sex:
        meta["sex"] = sex
    (out / "session.json").write_text(json.dumps(meta, indent=1))
    return out


def _load_annotations(path: Path) -> SessionAnnotations:
    if not path.exists():
        raise DatasetError(f"missing {path}")
    subject = None
    task = None
    events = []
    with open(path, newline="") as fh:
        for row in csv.DictReader(fh):
            subject = row["subject"]
            task = Task(row["task"])
            if row["kind"] != "none":
                start = float(row["start_s"])
                end = float(row["end_s"])
                events.append(ApneaEvent(start, end - start, ApneaKind(row["kind"])))
    if subject is None or task is None:
        raise DatasetError(f"{path}: no annotation rows")
    return SessionAnnotations(subject=subject, task=task, events=events)


def load_session(session_dir: str | Path) -> SessionData:
    """Load and validate one session directory.

    A missing nir/ or fir/ subdirectory is tolerated (degraded mode); every
    other part of the layout is required.
    """
    root = Path(session_dir)
    if not root.is_dir():
        raise DatasetError(f"{root}: not a directory")
    meta = {}
    meta_path = root / "session.json"
    if meta_path.exists():
        meta = json.loads(meta_path.read_text())

    frames_nir = frames_fir = None
    if (root / "nir").is_dir():
        frames_nir = _read_frames(root / "nir", Spectrum.NIR, float(meta.get("nir_rate", 15.0)))
    if (root / "fir").is_dir():
        frames_fir = _read_frames(root / "fir", Spectrum.FIR, float(meta.get("fir_rate", 8.7)))
    if frames_nir is None and frames_fir is None:
        raise DatasetError(f"{root}: neither nir/ nor fir/ present")

    lm_path = root / "landmarks.csv"
    if not lm_path.exists():
        raise DatasetError(f"{root}: missing landmarks.csv")
    landmarks = []
    with open(lm_path, newline="") as fh:
        for row in csv.DictReader(fh):
            landmarks.append(LandmarkFrame(
                timestamp=float(row["t_seconds"]),
                nose=(float(row["nose_x"]), float(row["nose_y"])),
                chin_y=float(row["chin_y"]),
                valid=bool(int(row["valid"])),
            ))
    if not landmarks:
        raise DatasetError(f"{root}: empty landmark track")

    ref_path = root / "reference.csv"
    reference: dict[SignalSource, RespSignal] = {}
    if ref_path.exists():
        t, thorax, abdomen = [], [], []
        with open(ref_path, newline="") as fh:
            for row in csv.DictReader(fh):
                t.append(float(row["t_seconds"]))
                thorax.append(float(row["thorax"]))
                abdomen.append(float(row["abdomen"]))
        if t:
            t_arr = np.asarray(t)
            try:
                reference[SignalSource.REF_THORAX] = RespSignal(
                    SignalSource.REF_THORAX, t_arr, np.asarray(thorax))
                reference[SignalSource.REF_ABDOMEN] = RespSignal(
                    SignalSource.REF_ABDOMEN, t_arr, np.asarray(abdomen))
            except ValueError as exc:
                raise DatasetError(f"{ref_path}: {exc}") from exc

    annotations = _load_annotations(root / "annotations.csv")
    cal_path = root / "calibration.txt"
    if not cal_path.exists():
        raise DatasetError(f"{root}: missing calibration.txt")
    calibration = load_calibration(cal_path)

    truth = None
    gt_path = root / "ground_truth.csv"
    if gt_path.exists():
        tt, rr = [], []
        with open(gt_path, newline="") as fh:
            for row in csv.DictReader(fh):
                tt.append(float(row["t_seconds"]))
                rr.append(float(row["rr_bpm"]))
        truth = GroundTruth(times=np.asarray(tt), rr=np.asarray(rr),
                            apnea_events=tuple(annotations.events))

    def dims_of(frames, key, default):
        if frames is not None:
            return (frames.width, frames.height)
        return tuple(meta.get(key, default))

    return SessionData(
        path=root,
        frames_nir=frames_nir,
        frames_fir=frames_fir,
        landmarks=landmarks,
        reference=reference,
        annotations=annotations,
        calibration=calibration,
        nir_dims=dims_of(frames_nir, "nir_dims", (336, 190)),
        fir_dims=dims_of(frames_fir, "fir_dims", (160, 120)),
        sex=meta.get("sex"),
        truth=truth,
    )
