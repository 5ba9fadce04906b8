"""Window-level apnea detection: features, standardization, and an SVM
expert/aggregator ensemble with a leave-one-subject-out harness.

Each of the three respiratory signals contributes four features per 12 s
window (mean crossings, variance, standard deviation, SNR). One SVM expert
per signal maps its own feature block to an apnea posterior; an aggregator
SVM combines the three posteriors into the final decision.
"""

from __future__ import annotations

import json
import warnings
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from .core import APNEA_TASKS, CAMERA_SOURCES, DETECTOR_TRAIN_TASKS, SignalSource, Task
from .dsp import SpectralEstimate
from .errors import CannotSplit, NotTrained, SingleClassFold, TooShort, ZeroVarianceFeature
from .svm import KernelSvm, SvmConfig

#: Feature layout: four per camera source, sources in canonical order.
PER_SOURCE_FEATURES = ("mean_crossings", "variance", "std", "snr")
FEATURE_NAMES = tuple(
    f"{src.value}_{feat}" for src in CAMERA_SOURCES for feat in PER_SOURCE_FEATURES
)
N_FEATURES = len(FEATURE_NAMES)

#: Label conventions.
BREATHING, APNEA = 0, 1

#: Internal stacking folds used to train the aggregator without leakage.
STACK_FOLDS = 5

MODEL_FORMAT_VERSION = 1


def mean_crossings(values: np.ndarray) -> int:
    """Count sign changes of (x - mean), zeros grouped with the positives."""
    v = np.asarray(values, dtype=float)
    if v.size < 2:
        return 0
    s = (v - v.mean()) >= 0
    return int(np.sum(s[1:] != s[:-1]))


def window_features(values: np.ndarray, snr: float) -> np.ndarray:
    """Feature block for one signal window: crossings, variance, std, SNR."""
    v = np.asarray(values, dtype=float)
    if v.size < 2:
        raise TooShort("feature extraction needs >= 2 samples")
    var = float(v.var(ddof=1))
    return np.array([mean_crossings(v), var, np.sqrt(var), snr])


def extract_features(
    window_values: dict[SignalSource, np.ndarray | None],
    estimates: dict[SignalSource, SpectralEstimate | None],
) -> np.ndarray:
    """Assemble the 12-feature vector for one analysis window.

    A missing source leaves NaNs in its block; the scaler imputes those with
    the training means at transform time.
    """
    out = np.full(N_FEATURES, np.nan)
    for i, src in enumerate(CAMERA_SOURCES):
        values = window_values.get(src)
        est = estimates.get(src)
        if values is not None and est is not None:
            out[4 * i: 4 * i + 4] = window_features(values, est.snr)
    return out


@dataclass
class Scaler:
    """Per-feature standardization learned on training data only."""

    mean: np.ndarray | None = None
    std: np.ndarray | None = None

    def fit(self, x: np.ndarray) -> "Scaler":
        x = np.asarray(x, dtype=float)
        if x.shape[0] < 2:
            raise TooShort("scaler needs >= 2 training vectors")
        self.mean = x.mean(axis=0)
        std = x.std(axis=0)
        if np.any(std == 0):
            warnings.warn("zero-variance feature(s); scale forced to 1", ZeroVarianceFeature)
            std = np.where(std == 0, 1.0, std)
        self.std = std
        return self

    def transform(self, x: np.ndarray) -> np.ndarray:
        if self.mean is None:
            raise NotTrained("scaler not fitted")
        x = np.atleast_2d(np.asarray(x, dtype=float))
        out = (x - self.mean) / self.std
        # missing feature blocks fall back to the training mean
        return np.where(np.isnan(out), 0.0, out)


@dataclass
class LabeledWindow:
    features: np.ndarray
    label: int
    subject: str
    task: Task
    start: float = 0.0
    end: float = 0.0


def overlap_label(start: float, end: float, intervals: list[tuple[float, float]],
                  min_fraction: float = 0.5) -> int:
    """Apnea label when at least half the window overlaps an annotated event."""
    covered = 0.0
    for a, b in intervals:
        covered += max(0.0, min(end, b) - max(start, a))
    return APNEA if covered >= min_fraction * (end - start) else BREATHING


@dataclass
class SvmExpert:
    """One per-signal posterior model over its 4-feature block."""

    source: SignalSource
    block: slice
    model: KernelSvm

    def posterior(self, x_scaled: np.ndarray) -> np.ndarray:
        return self.model.posterior(np.atleast_2d(x_scaled)[:, self.block])


def _stratified_folds(labels: np.ndarray, k: int, rng: np.random.Generator):
    """Deterministic stratified k-fold assignment (fold index per sample)."""
    assign = np.empty(len(labels), dtype=int)
    for cls in np.unique(labels):
        idx = np.flatnonzero(labels == cls)
        rng.shuffle(idx)
        assign[idx] = np.arange(len(idx)) % k
    return assign


@dataclass
class SvmEnsemble:
    """Three per-signal experts plus an aggregator over their posteriors."""

    scaler: Scaler = field(default_factory=Scaler)
    experts: list[SvmExpert] = field(default_factory=list)
    aggregator: KernelSvm | None = None
    threshold: float = 0.5
    svm_config: SvmConfig = field(default_factory=SvmConfig)

    @property
    def trained(self) -> bool:
        return self.aggregator is not None

    def fit(self, features: np.ndarray, labels: np.ndarray, seed: int = 0) -> "SvmEnsemble":
        """Train experts on their blocks and the aggregator on stacked
        out-of-fold expert posteriors (in-sample posteriors would leak)."""
        x = np.asarray(features, dtype=float)
        y = np.asarray(labels, dtype=int)
        if x.shape[0] == 0:
            raise SingleClassFold("empty training set")
        classes, counts = np.unique(y, return_counts=True)
        if classes.size != 2:
            raise SingleClassFold("training fold must contain both classes")
        self.scaler = Scaler().fit(x)
        xs = self.scaler.transform(x)

        rng = np.random.default_rng(seed)
        k = int(min(STACK_FOLDS, counts.min()))
        if k < 2:
            raise SingleClassFold("a class has fewer than 2 training windows")
        assign = _stratified_folds(y, k, rng)
        stacked = np.zeros((len(y), len(CAMERA_SOURCES)))
        for fold in range(k):
            tr = assign != fold
            va = ~tr
            for i in range(len(CAMERA_SOURCES)):
                block = slice(4 * i, 4 * i + 4)
                m = KernelSvm(self._cfg()).fit(xs[tr][:, block], y[tr])
                stacked[va, i] = m.posterior(xs[va][:, block])

        self.experts = []
        for i, src in enumerate(CAMERA_SOURCES):
            block = slice(4 * i, 4 * i + 4)
            model = KernelSvm(self._cfg()).fit(xs[:, block], y)
            self.experts.append(SvmExpert(source=src, block=block, model=model))
        self.aggregator = KernelSvm(self._cfg()).fit(stacked, y)
        return self

    def _cfg(self) -> SvmConfig:
        c = self.svm_config
        return SvmConfig(kernel=c.kernel, c=c.c, gamma=c.gamma, tol=c.tol,
                         class_weight=c.class_weight, max_passes=c.max_passes)

    def expert_posteriors(self, features: np.ndarray) -> np.ndarray:
        if not self.trained:
            raise NotTrained("ensemble not trained")
        xs = self.scaler.transform(features)
        return np.column_stack([e.posterior(xs) for e in self.experts])

    def classify(self, features: np.ndarray):
        """Labels and aggregator posteriors for a batch of feature vectors.

        Returns ``(labels, posteriors, expert_posteriors)``.
        """
        post_experts = self.expert_posteriors(features)
        posterior = self.aggregator.posterior(post_experts)
        labels = np.where(posterior >= self.threshold, APNEA, BREATHING)
        return labels, posterior, post_experts


def loso_split(windows: list[LabeledWindow]):
    """Leave-one-subject-out folds over labeled windows.

    Training folds hold only central/obstructive-task windows of the other
    subjects; the test fold holds every apnea-task window of the held-out
    subject.
    """
    subjects = sorted({w.subject for w in windows})
    if len(subjects) < 2:
        raise CannotSplit("need >= 2 subjects for leave-one-subject-out")
    folds = []
    for subject in subjects:
        train = [i for i, w in enumerate(windows)
                 if w.subject != subject and w.task in DETECTOR_TRAIN_TASKS]
        test = [i for i, w in enumerate(windows)
                if w.subject == subject and w.task in APNEA_TASKS]
        folds.append((subject, train, test))
    return folds


def _svm_to_dict(model: KernelSvm) -> dict:
    return {
        "kernel": model.config.kernel,
        "c": model.config.c,
        "gamma": model.gamma_,
        "class_weight": model.config.class_weight,
        "classes": np.asarray(model.classes_).tolist(),
        "support_vectors": model.support_vectors.tolist(),
        "dual_coef": model.dual_coef.tolist(),
        "bias": model.bias,
        "platt": [model.platt_a, model.platt_b],
    }


def _svm_from_dict(d: dict) -> KernelSvm:
    model = KernelSvm(SvmConfig(kernel=d["kernel"], c=d["c"], gamma=d["gamma"],
                                class_weight=d["class_weight"]))
    model.gamma_ = float(d["gamma"])
    model.classes_ = np.asarray(d["classes"])
    model.support_vectors = np.asarray(d["support_vectors"], dtype=float)
    model.dual_coef = np.asarray(d["dual_coef"], dtype=float)
    model.bias = float(d["bias"])
    model.platt_a, model.platt_b = (float(v) for v in d["platt"])
    return model


def save_ensemble(path: str | Path, ensemble: SvmEnsemble) -> None:
    """Write a trained ensemble to the versioned JSON model format."""
    if not ensemble.trained:
        raise NotTrained("cannot serialize an untrained ensemble")
    doc = {
        "format_version": MODEL_FORMAT_VERSION,
        "threshold": ensemble.threshold,
        "feature_names": list(FEATURE_NAMES),
        "scaler": {"mean": ensemble.scaler.mean.tolist(),
                   "std": ensemble.scaler.std.tolist()},
        "experts": {e.source.value: _svm_to_dict(e.model) for e in ensemble.experts},
        "aggregator": _svm_to_dict(ensemble.aggregator),
    }
    Path(path).write_text(json.dumps(doc))


def load_ensemble(path: str | Path) -> SvmEnsemble:
    doc = json.loads(Path(path).read_text())
    version = doc.get("format_version")
    if version != MODEL_FORMAT_VERSION:
        raise ValueError(f"unsupported model format version {version!r}")
    ens = SvmEnsemble(threshold=float(doc["threshold"]))
    ens.scaler = Scaler(mean=np.asarray(doc["scaler"]["mean"], dtype=float),
                        std=np.asarray(doc["scaler"]["std"], dtype=float))
    ens.experts = []
    for i, src in enumerate(CAMERA_SOURCES):
        model = _svm_from_dict(doc["experts"][src.value])
        ens.experts.append(SvmExpert(source=src, block=slice(4 * i, 4 * i + 4), model=model))
    ens.aggregator = _svm_from_dict(doc["aggregator"])
    return ens
