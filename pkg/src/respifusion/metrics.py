"""Agreement and classification metrics for the evaluation harness.

Estimates and reference are compared after 15 s median pooling; agreement
uses RMSE, repeated-measures Bland-Altman limits, and Pearson correlation
with a Fisher-z confidence interval. Apnea classification is scored with
the apnea class as positive.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from .errors import InsufficientData, NoPairs, Undefined


def rmse(estimates: np.ndarray, reference: np.ndarray) -> float:
    """Root mean square of paired differences."""
    a = np.asarray(estimates, dtype=float)
    b = np.asarray(reference, dtype=float)
    if a.shape != b.shape:
        raise ValueError("paired inputs must have identical shapes")
    if a.size == 0:
        raise NoPairs("no paired segments to compare")
    return float(np.sqrt(np.mean((a - b) ** 2)))


@dataclass(frozen=True)
class BlandAltman:
    bias: float
    loa_low: float
    loa_high: float
    sd: float


def bland_altman_repeated(differences_by_subject: dict[str, np.ndarray]) -> BlandAltman:
    """Bias and limits of agreement with repeated measurements per subject.

    The variance of a single difference combines the within-subject mean
    square with the between-subject component from a one-way analysis of
    variance of the differences:

        sd^2 = (MSB - MSW) / m_bar + MSW,

    with m_bar the effective replicate count for unbalanced groups. Limits
    of agreement are bias +/- 1.96 sd.

    Parameters
    ----------
    differences_by_subject : mapping subject -> array of paired differences
        (estimate minus reference), one entry per pooled segment.
    """
    groups = {k: np.asarray(v, dtype=float) for k, v in differences_by_subject.items()
              if len(np.asarray(v)) > 0}
    n_subj = len(groups)
    sizes = np.array([len(v) for v in groups.values()], dtype=float)
    if n_subj < 2 or np.any(sizes < 2):
        raise InsufficientData("need >= 2 subjects with >= 2 differences each")
    total_n = sizes.sum()
    all_d = np.concatenate(list(groups.values()))
    bias = float(all_d.mean())

    means = np.array([v.mean() for v in groups.values()])
    ss_between = float(np.sum(sizes * (means - bias) ** 2))
    ss_within = float(sum(np.sum((v - v.mean()) ** 2) for v in groups.values()))
    msb = ss_between / (n_subj - 1)
    msw = ss_within / (total_n - n_subj)
    m_bar = (total_n - np.sum(sizes**2) / total_n) / (n_subj - 1)
    var_between = max((msb - msw) / m_bar, 0.0)
    sd = math.sqrt(var_between + msw)
    return BlandAltman(bias=bias, loa_low=bias - 1.96 * sd, loa_high=bias + 1.96 * sd, sd=sd)


def pearson_ci(x: np.ndarray, y: np.ndarray, confidence: float = 0.95):
    """Pearson r with a Fisher-z confidence interval.

    Returns ``(r, ci_low, ci_high)``. Raises Undefined when either input has
    zero variance.
    """
    x = np.asarray(x, dtype=float)
    y = np.asarray(y, dtype=float)
    n = x.size
    if n < 4:
        raise InsufficientData("Pearson CI needs n >= 4")
    sx = x.std()
    sy = y.std()
    if sx == 0 or sy == 0:
        raise Undefined("correlation undefined for zero-variance input")
    r = float(np.mean((x - x.mean()) * (y - y.mean())) / (sx * sy))
    r = max(min(r, 1.0), -1.0)
    if abs(r) == 1.0:
        return r, r, r
    # normal quantile for the two-sided confidence level
    z_crit = math.sqrt(2.0) * _erfinv(confidence)
    z = math.atanh(r)
    half = z_crit / math.sqrt(n - 3)
    return r, math.tanh(z - half), math.tanh(z + half)


def _erfinv(p: float) -> float:
    from scipy.special import erfinv

    return float(erfinv(p))


@dataclass(frozen=True)
class ClassificationMetrics:
    f1: float | None
    sensitivity: float | None
    specificity: float | None
    tp: int
    fp: int
    fn: int
    tn: int


def classification_metrics(predicted: np.ndarray, truth: np.ndarray) -> ClassificationMetrics:
    """F1, sensitivity and specificity with apnea (1) as the positive class.

    Undefined entries (no positives in truth, or empty prediction set for
    precision) are reported as None rather than zero.
    """
    p = np.asarray(predicted).astype(int)
    t = np.asarray(truth).astype(int)
    if p.shape != t.shape:
        raise ValueError("predicted and truth must align")
    tp = int(np.sum((p == 1) & (t == 1)))
    fp = int(np.sum((p == 1) & (t == 0)))
    fn = int(np.sum((p == 0) & (t == 1)))
    tn = int(np.sum((p == 0) & (t == 0)))
    sens = tp / (tp + fn) if (tp + fn) > 0 else None
    spec = tn / (tn + fp) if (tn + fp) > 0 else None
    if tp + fn == 0:
        f1 = None
    else:
        f1 = 2 * tp / (2 * tp + fp + fn) if (2 * tp + fp + fn) > 0 else None
    return ClassificationMetrics(f1=f1, sensitivity=sens, specificity=spec,
                                 tp=tp, fp=fp, fn=fn, tn=tn)
