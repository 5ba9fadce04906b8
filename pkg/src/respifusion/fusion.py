"""RR fusion: SNR-weighted median of per-source estimates, baseline mean and
median fusers, and the final apnea-aware arbitration stage."""

from __future__ import annotations

import enum
import warnings
from dataclasses import dataclass, field

import numpy as np

from .core import SignalSource, round_half_up
from .dsp import SpectralEstimate
from .errors import NoEstimate, UniformFallback

#: Integer weight budget distributed across sources by relative SNR.
WEIGHT_SCALE = 24


class ArbitrationStrategy(enum.Enum):
    """How a positive apnea decision modifies the fused RR."""

    SUPPRESS_TO_ZERO = "suppress-to-zero"
    HOLD_LAST = "hold-last"
    MARK_ONLY = "mark-only"


@dataclass(frozen=True)
class FusionInput:
    """Valid per-source spectral estimates for one window (1 to 3 of them)."""

    estimates: tuple[SpectralEstimate, ...]

    def __post_init__(self):
        if not self.estimates:
            raise NoEstimate("fusion needs at least one valid source estimate")
        if any(not np.isfinite(e.snr) for e in self.estimates):
            raise ValueError("SNRs must be finite")


@dataclass(frozen=True)
class RaEstimate:
    """Final respiratory-activity readout for one window."""

    timestamp: float
    rr: float                       # breaths/min, 0 during suppressed apnea
    apnea: bool
    apnea_posterior: float | None
    rr_sqb: float
    per_source: dict = field(default_factory=dict)
    diagnostics: tuple[str, ...] = ()


def sqb_weights(snrs: np.ndarray, scale: int = WEIGHT_SCALE) -> np.ndarray:
    """Integer fusion weights proportional to each source's SNR share.

    ``w_i = round(scale * snr_i / sum(snr))``. Weights that round to zero
    drop their source from the median; if every weight rounds to zero the
    strongest source keeps weight 1, and an all-zero SNR vector falls back
    to uniform weights with a warning.
    """
    snrs = np.asarray(snrs, dtype=float)
    if np.any(snrs < 0):
        raise ValueError("SNRs must be non-negative")
    total = snrs.sum()
    if total <= 0.0:
        warnings.warn("all SNRs zero; using uniform fusion weights", UniformFallback)
        return np.ones(len(snrs), dtype=int)
    w = np.array([round_half_up(scale * s / total) for s in snrs], dtype=int)
    if w.sum() == 0:
        w[int(np.argmax(snrs))] = 1
    return w


def weighted_median(values: np.ndarray, weights: np.ndarray) -> float:
    """Lower weighted median: smallest v whose cumulative weight reaches half.

    Equivalent to replicating each value ``weights[i]`` times and taking the
    lower median of the multiset.
    """
    values = np.asarray(values, dtype=float)
    weights = np.asarray(weights, dtype=float)
    if values.shape != weights.shape:
        raise ValueError("values and weights must have matching shapes")
    total = weights.sum()
    if total < 1:
        raise ValueError("total weight must be >= 1")
    order = np.argsort(values, kind="stable")
    cum = np.cumsum(weights[order])
    i = int(np.searchsorted(cum, total / 2.0, side="left"))
    return float(values[order][i])


def sqb_fuse(fin: FusionInput, scale: int = WEIGHT_SCALE) -> float:
    """Signal-quality-based RR: SNR-weighted median of the source RRs."""
    if len(fin.estimates) == 1:
        return fin.estimates[0].rr
    rrs = np.array([e.rr for e in fin.estimates])
    snrs = np.array([e.snr for e in fin.estimates])
    w = sqb_weights(snrs, scale)
    keep = w > 0
    return weighted_median(rrs[keep], w[keep])


def baseline_fuse(fin: FusionInput, mode: str = "median") -> float:
    """Unweighted mean/median fusion baselines."""
    rrs = np.array([e.rr for e in fin.estimates])
    if mode == "mean":
        return float(rrs.mean())
    if mode == "median":
        return float(np.median(rrs))
    raise ValueError(f"unknown baseline mode {mode!r}")


def s2_fuse(
    timestamp: float,
    rr_sqb: float,
    apnea_decision: tuple[bool, float] | None,
    per_source: dict | None = None,
    strategy: ArbitrationStrategy = ArbitrationStrategy.SUPPRESS_TO_ZERO,
    last_rr: float | None = None,
) -> RaEstimate:
    """Combine the fused RR with the apnea decision into the final readout.

    A positive apnea decision suppresses the RR to zero by default
    (breathing has stopped, so the spectral estimate is meaningless);
    ``hold-last`` repeats the previous output instead and ``mark-only``
    leaves the RR untouched. A missing detector output falls back to the
    fused RR with a diagnostic.
    """
    diags: list[str] = []
    if apnea_decision is None:
        diags.append("missing-detector")
        label, posterior = False, None
    else:
        label, posterior = apnea_decision
    rr = rr_sqb
    if label:
        if strategy is ArbitrationStrategy.SUPPRESS_TO_ZERO:
            rr = 0.0
        elif strategy is ArbitrationStrategy.HOLD_LAST:
            rr = last_rr if last_rr is not None else 0.0
    return RaEstimate(
        timestamp=timestamp,
        rr=rr,
        apnea=bool(label),
        apnea_posterior=posterior,
        rr_sqb=rr_sqb,
        per_source=per_source or {},
        diagnostics=tuple(diags),
    )
