"""Affine NIR-to-FIR registration and nostril/chest ROI derivation.

Landmark detection itself happens upstream; this module consumes a stream of
per-frame nose/chin landmarks (from file or from the simulator), derives the
nostril and chest rectangles in NIR coordinates, and projects them into the
FIR frame through a per-session affine calibration.
"""

from __future__ import annotations

import math
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from .core import Spectrum, round_half_up
from .errors import EmptyTrack, NoRoi, OutOfFrame

#: Nostril rectangle size in NIR pixels (width, height).
NOSTRIL_W = 15.0
NOSTRIL_H = 20.0

#: Default landmark re-trigger interval in seconds.
RETRIGGER_S = 10.0


@dataclass(frozen=True)
class AffineTransform:
    """Axis-aligned affine map from NIR to FIR pixel coordinates."""

    sx: float
    sy: float
    tx: float
    ty: float

    def __post_init__(self):
        vals = (self.sx, self.sy, self.tx, self.ty)
        if not all(math.isfinite(v) for v in vals):
            raise ValueError("transform parameters must be finite")
        if self.sx <= 0 or self.sy <= 0:
            raise ValueError("scale factors must be positive")

    def inverse(self) -> "AffineTransform":
        return AffineTransform(1.0 / self.sx, 1.0 / self.sy, -self.tx / self.sx, -self.ty / self.sy)

    @classmethod
    def identity(cls) -> "AffineTransform":
        return cls(1.0, 1.0, 0.0, 0.0)


def project_point(
    transform: AffineTransform,
    point: tuple[float, float],
    bounds: tuple[int, int] | None = None,
) -> tuple[float, float]:
    """Map an NIR pixel (x, y) into FIR coordinates.

    When ``bounds`` (width, height) is given, a projected point outside them
    raises OutOfFrame; the caller decides whether to clamp or drop.
    """
    x, y = point
    px = transform.sx * x + transform.tx
    py = transform.sy * y + transform.ty
    if bounds is not None:
        w, h = bounds
        if not (0.0 <= px <= w and 0.0 <= py <= h):
            raise OutOfFrame(f"projected point ({px:.2f}, {py:.2f}) outside {w}x{h}")
    return px, py


@dataclass(frozen=True)
class LandmarkFrame:
    """One frame of the external facial-landmark track (NIR coordinates)."""

    timestamp: float
    nose: tuple[float, float]
    chin_y: float
    valid: bool = True


@dataclass(frozen=True)
class Roi:
    """Rectangle in one spectrum; coordinates stay real until pixel sampling."""

    x: float
    y: float
    w: float
    h: float
    spectrum: Spectrum

    def pixel_slices(self, frame_h: int, frame_w: int) -> tuple[slice, slice]:
        """Integer (row, col) slices, rounded half-up and clipped to the frame."""
        x0 = round_half_up(self.x)
        y0 = round_half_up(self.y)
        w = max(1, round_half_up(self.w))
        h = max(1, round_half_up(self.h))
        x0 = min(max(x0, 0), max(frame_w - w, 0))
        y0 = min(max(y0, 0), max(frame_h - h, 0))
        return slice(y0, min(y0 + h, frame_h)), slice(x0, min(x0 + w, frame_w))


@dataclass(frozen=True)
class ChestGeometry:
    """Frame-size-relative chest box placement below the chin.

    These fractions are configuration, not measured constants: the chest box
    starts ``offset_frac * frame_height`` below the chin ordinate, spans
    ``width_frac`` of the frame width (horizontally centered) and
    ``height_frac`` of the frame height.
    """

    offset_frac: float = 0.15
    width_frac: float = 0.6
    height_frac: float = 0.35


@dataclass(frozen=True)
class RoiSet:
    nostril_nir: Roi
    nostril_fir: Roi
    chest_nir: Roi
    chest_fir: Roi


def clamp_roi(roi: Roi, frame_w: int, frame_h: int) -> Roi:
    """Translate a box back inside the frame, shrinking it only if oversized."""
    w = min(roi.w, float(frame_w))
    h = min(roi.h, float(frame_h))
    x = min(max(roi.x, 0.0), frame_w - w)
    y = min(max(roi.y, 0.0), frame_h - h)
    return Roi(x, y, max(w, 1.0), max(h, 1.0), roi.spectrum)


def _project_roi(roi: Roi, transform: AffineTransform, fir_dims: tuple[int, int]) -> Roi:
    x0, y0 = project_point(transform, (roi.x, roi.y))
    x1, y1 = project_point(transform, (roi.x + roi.w, roi.y + roi.h))
    fir_w, fir_h = fir_dims
    return clamp_roi(Roi(x0, y0, x1 - x0, y1 - y0, Spectrum.FIR), fir_w, fir_h)


def derive_rois(
    lm: LandmarkFrame,
    nir_dims: tuple[int, int],
    fir_dims: tuple[int, int],
    transform: AffineTransform,
    geometry: ChestGeometry = ChestGeometry(),
) -> RoiSet:
    """Derive nostril and chest boxes in both spectra from one landmark frame.

    The nostril box is 15 x 20 NIR pixels centered on the nose landmark; the
    chest box hangs below the chin ordinate using the configured geometry.
    FIR boxes are affine projections of the NIR boxes, clamped to the FIR
    frame.
    """
    if not lm.valid:
        raise NoRoi(f"invalid landmark frame at t={lm.timestamp:.3f}")
    nir_w, nir_h = nir_dims
    nose_x, nose_y = lm.nose
    nostril = Roi(nose_x - NOSTRIL_W / 2.0, nose_y - NOSTRIL_H / 2.0,
                  NOSTRIL_W, NOSTRIL_H, Spectrum.NIR)
    chest_w = geometry.width_frac * nir_w
    chest = Roi(
        (nir_w - chest_w) / 2.0,
        lm.chin_y + geometry.offset_frac * nir_h,
        chest_w,
        geometry.height_frac * nir_h,
        Spectrum.NIR,
    )
    nostril = clamp_roi(nostril, nir_w, nir_h)
    chest = clamp_roi(chest, nir_w, nir_h)
    return RoiSet(
        nostril_nir=nostril,
        nostril_fir=_project_roi(nostril, transform, fir_dims),
        chest_nir=chest,
        chest_fir=_project_roi(chest, transform, fir_dims),
    )


class RoiTrack:
    """Per-frame ROI sets with hold-and-retrigger gap semantics.

    Entries live at the landmark timestamps; ``at(t)`` returns the entry in
    force at time t (the most recent one, as long as its source landmark is
    not older than the retrigger interval) or None inside a gap.
    """

    def __init__(self, times: np.ndarray, entries: list[RoiSet | None],
                 valid_ages: np.ndarray, retrigger_s: float = RETRIGGER_S):
        self.times = np.asarray(times, dtype=float)
        self.entries = entries
        # age of the underlying valid landmark at each entry time
        self.valid_ages = np.asarray(valid_ages, dtype=float)
        self.retrigger_s = retrigger_s

    def __len__(self) -> int:
        return len(self.entries)

    def at(self, t: float) -> RoiSet | None:
        i = int(np.searchsorted(self.times, t + 1e-9, side="right")) - 1
        if i < 0:
            return None
        entry = self.entries[i]
        if entry is None:
            return None
        age = (t - self.times[i]) + self.valid_ages[i]
        if age > self.retrigger_s + 1e-9:
            return None
        return entry

    @property
    def n_gaps(self) -> int:
        return sum(1 for e in self.entries if e is None)


def hold_and_retrigger(
    track: list[LandmarkFrame],
    nir_dims: tuple[int, int],
    fir_dims: tuple[int, int],
    transform: AffineTransform,
    geometry: ChestGeometry = ChestGeometry(),
    retrigger_s: float = RETRIGGER_S,
) -> RoiTrack:
    """Build an ROI track from a landmark stream with hold/timeout semantics.

    Valid landmark frames re-derive the ROIs; invalid frames inherit the last
    valid ROI until it is older than ``retrigger_s``, after which the track
    records a gap.
    """
    if retrigger_s <= 0:
        raise ValueError("retrigger_s must be positive")
    if not any(lm.valid for lm in track):
        raise EmptyTrack("landmark track contains no valid frame")
    times = []
    entries: list[RoiSet | None] = []
    ages = []
    last_set: RoiSet | None = None
    last_valid_t = -math.inf
    for lm in sorted(track, key=lambda f: f.timestamp):
        times.append(lm.timestamp)
        if lm.valid:
            last_set = derive_rois(lm, nir_dims, fir_dims, transform, geometry)
            last_valid_t = lm.timestamp
            entries.append(last_set)
            ages.append(0.0)
        elif last_set is not None and lm.timestamp - last_valid_t <= retrigger_s + 1e-9:
            entries.append(last_set)
            ages.append(lm.timestamp - last_valid_t)
        else:
            entries.append(None)
            ages.append(math.inf)
    return RoiTrack(np.asarray(times), entries, np.asarray(ages), retrigger_s)


def load_calibration(path: str | Path) -> AffineTransform:
    """Read a calibration file: four reals sx, sy, tx, ty.

    Values may be separated by whitespace or newlines; lines starting with
    '#' are comments.
    """
    text = Path(path).read_text()
    tokens: list[float] = []
    for line in text.splitlines():
        line = line.split("#", 1)[0].strip()
        if line:
            tokens.extend(float(tok) for tok in line.split())
    if len(tokens) != 4:
        raise ValueError(f"calibration file must hold exactly 4 values, got {len(tokens)}")
    return AffineTransform(*tokens)


def save_calibration(path: str | Path, transform: AffineTransform) -> None:
    Path(path).write_text(
        "# affine NIR->FIR calibration: sx sy tx ty\n"
        f"{transform.sx!r} {transform.sy!r} {transform.tx!r} {transform.ty!r}\n"
    )
