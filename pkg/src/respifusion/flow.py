"""Dense optical flow over chest-ROI patches.

Implements the two-frame polynomial-expansion method (Farneback): each
neighbourhood is approximated by a quadratic polynomial via Gaussian-weighted
least squares, and the displacement field is solved from the expansion
coefficients of the two frames, coarse-to-fine with iterative warping.
Only the small single-channel ROI patches ever reach this module, so the
whole thing stays in vectorized numpy/scipy.

For frame sequences, ``expand_frame``/``flow_from_expansions`` reuse each
frame's expansion pyramid across the two pairs it participates in.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np
from scipy import ndimage

from .errors import InvalidTimestep, PatchTooSmall


@dataclass(frozen=True)
class FlowParams:
    """Tuning knobs for the polynomial-expansion flow.

    Defaults target small chest patches with sub-3 px breathing motion:
    a shallow pyramid and a compact expansion neighbourhood.
    """

    pyramid_levels: int = 2
    window_size: int = 9
    poly_n: int = 5
    poly_sigma: float = 1.1
    iterations: int = 3

    def __post_init__(self):
        if self.pyramid_levels < 1 or self.window_size < 1 or self.iterations < 1:
            raise ValueError("pyramid_levels, window_size and iterations must be >= 1")
        if self.poly_n < 3 or self.poly_n % 2 == 0:
            raise ValueError("poly_n must be odd and >= 3")
        if self.poly_sigma <= 0:
            raise ValueError("poly_sigma must be positive")


@dataclass(frozen=True)
class FlowField:
    """Per-pixel displacement (vx, vy) in px/frame for one frame pair."""

    flow: np.ndarray          # (h, w, 2), [..., 0]=vx (cols), [..., 1]=vy (rows)
    t_prev: float
    t_curr: float

    @property
    def vx(self) -> np.ndarray:
        return self.flow[..., 0]

    @property
    def vy(self) -> np.ndarray:
        return self.flow[..., 1]


def _poly_expand(frame: np.ndarray, n: int, sigma: float) -> np.ndarray:
    """Quadratic expansion f ~ x'Ax + b'x + c per pixel.

    Returns a (5, h, w) stack (a11, a12, a22, b1, b2) with x = (col, row);
    a12 is the off-diagonal of A. Borders use replicate padding.
    """
    half = n // 2
    k = np.arange(-half, half + 1, dtype=float)
    g = np.exp(-(k**2) / (2.0 * sigma**2))
    g /= g.sum()
    gk = g * k
    gk2 = g * k**2

    s2 = float(np.sum(gk2))
    s4 = float(np.sum(g * k**4))
    # moment block coupling (1, x^2, y^2); x, y, xy decouple
    block = np.array([[1.0, s2, s2], [s2, s4, s2 * s2], [s2, s2 * s2, s4]])
    binv = np.linalg.inv(block)

    f = np.asarray(frame, dtype=np.float64)
    tx_g = ndimage.correlate1d(f, g, axis=1, mode="nearest")
    tx_gk = ndimage.correlate1d(f, gk, axis=1, mode="nearest")
    tx_gk2 = ndimage.correlate1d(f, gk2, axis=1, mode="nearest")

    def corr_y(img, wy):
        return ndimage.correlate1d(img, wy, axis=0, mode="nearest")

    m00 = corr_y(tx_g, g)
    m01 = corr_y(tx_g, gk)
    m02 = corr_y(tx_g, gk2)
    m10 = corr_y(tx_gk, g)
    m11 = corr_y(tx_gk, gk)
    m20 = corr_y(tx_gk2, g)

    out = np.empty((5,) + f.shape)
    out[0] = binv[1, 0] * m00 + binv[1, 1] * m20 + binv[1, 2] * m02   # x^2 coeff
    out[1] = 0.5 * m11 / (s2 * s2)                                     # xy coeff / 2
    out[2] = binv[2, 0] * m00 + binv[2, 1] * m20 + binv[2, 2] * m02   # y^2 coeff
    out[3] = m10 / s2                                                  # x coeff
    out[4] = m01 / s2                                                  # y coeff
    return out


def _warp_stack(fields: np.ndarray, y: np.ndarray, x: np.ndarray) -> np.ndarray:
    """Bilinear sample a (k, h, w) stack at float (y, x), clamped at borders."""
    h, w = fields.shape[1:]
    y0 = np.floor(y).astype(np.intp)
    x0 = np.floor(x).astype(np.intp)
    fy = y - y0
    fx = x - x0
    y0c = np.clip(y0, 0, h - 1)
    y1c = np.clip(y0 + 1, 0, h - 1)
    x0c = np.clip(x0, 0, w - 1)
    x1c = np.clip(x0 + 1, 0, w - 1)
    w00 = (1 - fy) * (1 - fx)
    w01 = (1 - fy) * fx
    w10 = fy * (1 - fx)
    w11 = fy * fx
    return (fields[:, y0c, x0c] * w00 + fields[:, y0c, x1c] * w01 +
            fields[:, y1c, x0c] * w10 + fields[:, y1c, x1c] * w11)


def _flow_step(exp1: np.ndarray, exp2: np.ndarray, flow: np.ndarray,
               window_size: int, rows: np.ndarray, cols: np.ndarray) -> np.ndarray:
    """One displacement update given expansion stacks of both frames."""
    dx, dy = flow[..., 0], flow[..., 1]
    if flow.any():
        warped = _warp_stack(exp2, rows + dy, cols + dx)
    else:
        warped = exp2
    a11 = 0.5 * (exp1[0] + warped[0])
    a12 = 0.5 * (exp1[1] + warped[1])
    a22 = 0.5 * (exp1[2] + warped[2])
    # delta-b folds the prior displacement back in, so the solve below
    # yields the total displacement rather than an increment
    db1 = -0.5 * (warped[3] - exp1[3]) + a11 * dx + a12 * dy
    db2 = -0.5 * (warped[4] - exp1[4]) + a12 * dx + a22 * dy

    acc = np.empty((5,) + a11.shape)
    acc[0] = a11 * a11 + a12 * a12
    acc[1] = a12 * (a11 + a22)
    acc[2] = a12 * a12 + a22 * a22
    acc[3] = a11 * db1 + a12 * db2
    acc[4] = a12 * db1 + a22 * db2
    for i in range(5):
        ndimage.uniform_filter1d(acc[i], window_size, axis=0, mode="nearest", output=acc[i])
        ndimage.uniform_filter1d(acc[i], window_size, axis=1, mode="nearest", output=acc[i])
    g11, g12, g22, h1, h2 = acc

    ridge = 1e-6 * float(np.mean(g11 + g22)) + 1e-30
    g11 = g11 + ridge
    g22 = g22 + ridge
    det = g11 * g22 - g12 * g12
    out = np.empty_like(flow)
    out[..., 0] = (g22 * h1 - g12 * h2) / det
    out[..., 1] = (g11 * h2 - g12 * h1) / det
    return out


def _downsample(frame: np.ndarray) -> np.ndarray:
    return ndimage.gaussian_filter(frame, 1.0, mode="nearest")[::2, ::2]


@dataclass(frozen=True)
class FrameExpansion:
    """Per-level polynomial expansions of one frame (coarse last)."""

    shape: tuple[int, int]
    levels: tuple[np.ndarray, ...]


def expand_frame(frame: np.ndarray, params: FlowParams = FlowParams()) -> FrameExpansion:
    """Build the expansion pyramid of a frame once, for reuse across pairs."""
    frame = np.asarray(frame, dtype=np.float64)
    if frame.ndim != 2:
        raise ValueError("frame must be 2-D")
    if min(frame.shape) < params.poly_n:
        raise PatchTooSmall(f"patch {frame.shape} smaller than poly_n={params.poly_n}")
    pyr = [frame]
    for _ in range(params.pyramid_levels - 1):
        if min(pyr[-1].shape) // 2 < params.poly_n + 2:
            break
        pyr.append(_downsample(pyr[-1]))
    return FrameExpansion(
        shape=frame.shape,
        levels=tuple(_poly_expand(p, params.poly_n, params.poly_sigma) for p in pyr),
    )


def flow_from_expansions(exp_prev: FrameExpansion, exp_curr: FrameExpansion,
                         params: FlowParams = FlowParams(),
                         t_prev: float = 0.0, t_curr: float = 1.0) -> FlowField:
    if exp_prev.shape != exp_curr.shape or len(exp_prev.levels) != len(exp_curr.levels):
        raise ValueError("expansions must come from identically shaped frames")
    n_levels = len(exp_prev.levels)
    flow = np.zeros(exp_prev.levels[-1].shape[1:] + (2,))
    for level in range(n_levels - 1, -1, -1):
        e1 = exp_prev.levels[level]
        e2 = exp_curr.levels[level]
        shape = e1.shape[1:]
        if flow.shape[:2] != shape:
            zy = shape[0] / flow.shape[0]
            zx = shape[1] / flow.shape[1]
            fx = ndimage.zoom(flow[..., 0], (zy, zx), order=1) * zx
            fy = ndimage.zoom(flow[..., 1], (zy, zx), order=1) * zy
            flow = np.stack([fx, fy], axis=-1)
        rows, cols = np.mgrid[0:shape[0], 0:shape[1]].astype(float)
        for _ in range(params.iterations):
            flow = _flow_step(e1, e2, flow, params.window_size, rows, cols)
    return FlowField(flow=flow, t_prev=t_prev, t_curr=t_curr)


def dense_flow(prev: np.ndarray, curr: np.ndarray, params: FlowParams = FlowParams(),
               t_prev: float = 0.0, t_curr: float = 1.0) -> FlowField:
    """Estimate the dense displacement field from ``prev`` to ``curr``.

    Parameters
    ----------
    prev, curr : ndarray
        Single-channel patches of identical shape, each dimension at least
        ``params.poly_n``. FIR input is expected min-max normalized upstream.
    params : FlowParams
    t_prev, t_curr : float
        Timestamps carried through to the returned field.

    Returns
    -------
    FlowField with vy positive downward (image row direction).
    """
    prev = np.asarray(prev, dtype=np.float64)
    curr = np.asarray(curr, dtype=np.float64)
    if prev.shape != curr.shape or prev.ndim != 2:
        raise ValueError("patches must be two identically shaped 2-D arrays")
    return flow_from_expansions(expand_frame(prev, params), expand_frame(curr, params),
                                params, t_prev, t_curr)


def vertical_velocities(field: FlowField, dt: float) -> np.ndarray:
    """Convert per-frame vertical displacements to px/s."""
    if dt <= 0:
        raise InvalidTimestep(f"dt must be positive, got {dt}")
    return field.vy / dt
