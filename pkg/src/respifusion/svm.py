"""Soft-margin kernel SVM trained by sequential minimal optimization, with a
Platt sigmoid mapping decision values to posteriors.

The classifier is deliberately small: binary labels, RBF or linear kernel,
per-class penalty weighting, and a maximal-violating-pair SMO loop with a
fully cached kernel matrix (training folds here hold a few thousand windows
at most).
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .errors import NotTrained, SingleClassFold

#: KKT violation tolerance at which SMO stops.
KKT_TOL = 1e-3

_MAX_PASSES_FACTOR = 200


def rbf_kernel(a: np.ndarray, b: np.ndarray, gamma: float) -> np.ndarray:
    aa = (a * a).sum(axis=1)[:, None]
    bb = (b * b).sum(axis=1)[None, :]
    d2 = np.maximum(aa + bb - 2.0 * (a @ b.T), 0.0)
    return np.exp(-gamma * d2)


def linear_kernel(a: np.ndarray, b: np.ndarray, gamma: float) -> np.ndarray:
    return a @ b.T


_KERNELS = {"rbf": rbf_kernel, "linear": linear_kernel}


def scale_gamma(x: np.ndarray) -> float:
    """Default RBF width: 1 / (n_features * overall feature variance)."""
    v = float(x.var())
    if v <= 0:
        v = 1.0
    return 1.0 / (x.shape[1] * v)


@dataclass
class SvmConfig:
    kernel: str = "rbf"
    c: float = 1.0
    gamma: float | None = None      # None -> scale heuristic
    tol: float = KKT_TOL
    class_weight: str | None = "balanced"
    max_passes: int | None = None


@dataclass
class KernelSvm:
    """Binary SVM; labels are {-1, +1} internally, any two labels externally."""

    config: SvmConfig = field(default_factory=SvmConfig)
    support_vectors: np.ndarray | None = None
    dual_coef: np.ndarray | None = None      # alpha_i * y_i over support vectors
    bias: float = 0.0
    gamma_: float = 1.0
    classes_: np.ndarray | None = None
    platt_a: float | None = None
    platt_b: float | None = None

    @property
    def trained(self) -> bool:
        return self.support_vectors is not None

    def fit(self, x: np.ndarray, labels: np.ndarray) -> "KernelSvm":
        x = np.asarray(x, dtype=np.float64)
        labels = np.asarray(labels)
        classes = np.unique(labels)
        if classes.size != 2:
            raise SingleClassFold(f"need exactly 2 classes, got {classes.size}")
        self.classes_ = classes
        y = np.where(labels == classes[1], 1.0, -1.0)
        n = len(y)

        self.gamma_ = self.config.gamma if self.config.gamma is not None else scale_gamma(x)
        kernel = _KERNELS[self.config.kernel]
        k = kernel(x, x, self.gamma_)

        c = np.full(n, self.config.c)
        if self.config.class_weight == "balanced":
            for cls, sign in ((classes[0], -1.0), (classes[1], 1.0)):
                n_cls = int(np.sum(y == sign))
                c[y == sign] *= n / (2.0 * n_cls)

        alpha, bias = _smo(k, y, c, self.config.tol,
                           self.config.max_passes or _MAX_PASSES_FACTOR * n)
        sv = alpha > 1e-12
        self.support_vectors = x[sv]
        self.dual_coef = alpha[sv] * y[sv]
        self.bias = bias

        # posterior calibration on the training decision values
        f = k[:, sv] @ self.dual_coef + self.bias
        self.platt_a, self.platt_b = _fit_platt(f, y > 0)
        return self

    def decision_function(self, x: np.ndarray) -> np.ndarray:
        if not self.trained:
            raise NotTrained("fit the SVM before calling decision_function")
        x = np.atleast_2d(np.asarray(x, dtype=np.float64))
        k = _KERNELS[self.config.kernel](x, self.support_vectors, self.gamma_)
        return k @ self.dual_coef + self.bias

    def predict(self, x: np.ndarray) -> np.ndarray:
        f = self.decision_function(x)
        return np.where(f >= 0, self.classes_[1], self.classes_[0])

    def posterior(self, x: np.ndarray) -> np.ndarray:
        """P(class = classes_[1] | x) through the fitted sigmoid."""
        if self.platt_a is None:
            raise NotTrained("posterior calibration missing")
        f = self.decision_function(x)
        return _sigmoid_posterior(f, self.platt_a, self.platt_b)


def _smo(k: np.ndarray, y: np.ndarray, c: np.ndarray, tol: float, max_passes: int):
    """Maximal-violating-pair SMO on a cached kernel matrix.

    Minimizes 0.5 a'Qa - e'a subject to 0 <= a_i <= C_i, y'a = 0, where
    Q = (y y') * K. Returns (alpha, bias).
    """
    n = len(y)
    alpha = np.zeros(n)
    grad = -np.ones(n)          # Q alpha - e
    q_diag = np.diag(k).copy()

    for _ in range(max_passes):
        neg_yg = -y * grad
        up = np.where(y > 0, alpha < c - 1e-12, alpha > 1e-12)
        low = np.where(y > 0, alpha > 1e-12, alpha < c - 1e-12)
        if not up.any() or not low.any():
            break
        i = int(np.argmax(np.where(up, neg_yg, -np.inf)))
        j = int(np.argmin(np.where(low, neg_yg, np.inf)))
        m_up = neg_yg[i]
        m_low = neg_yg[j]
        if m_up - m_low <= tol:
            break

        a = q_diag[i] + q_diag[j] - 2.0 * y[i] * y[j] * k[i, j]
        a = max(a, 1e-12)
        delta = (m_up - m_low) / a
        # step bounds keeping both coordinates in their boxes
        if y[i] > 0:
            lo_i, hi_i = -alpha[i], c[i] - alpha[i]
        else:
            lo_i, hi_i = alpha[i] - c[i], alpha[i]
        if y[j] > 0:
            lo_j, hi_j = alpha[j] - c[j], alpha[j]
        else:
            lo_j, hi_j = -alpha[j], c[j] - alpha[j]
        delta = min(delta, hi_i, hi_j)
        delta = max(delta, lo_i, lo_j, 0.0)
        if delta <= 0.0:
            break
        d_ai = y[i] * delta
        d_aj = -y[j] * delta
        alpha[i] += d_ai
        alpha[j] += d_aj
        grad += (y * k[:, i]) * (y[i] * d_ai) + (y * k[:, j]) * (y[j] * d_aj)

    # bias from free support vectors, midpoint fallback
    f = (alpha * y) @ k
    free = (alpha > 1e-8) & (alpha < c - 1e-8)
    if free.any():
        bias = float(np.mean(y[free] - f[free]))
    else:
        neg_yg = -y * grad
        up = np.where(y > 0, alpha < c - 1e-12, alpha > 1e-12)
        low = np.where(y > 0, alpha > 1e-12, alpha < c - 1e-12)
        hi = np.max(np.where(up, neg_yg, -np.inf)) if up.any() else 0.0
        lo = np.min(np.where(low, neg_yg, np.inf)) if low.any() else 0.0
        bias = float((hi + lo) / 2.0)
    return alpha, bias


def _sigmoid_posterior(f: np.ndarray, a: float, b: float) -> np.ndarray:
    z = a * np.asarray(f, dtype=float) + b
    # numerically safe 1 / (1 + exp(z))
    out = np.empty_like(z, dtype=float)
    pos = z >= 0
    out[pos] = np.exp(-z[pos]) / (1.0 + np.exp(-z[pos]))
    out[~pos] = 1.0 / (1.0 + np.exp(z[~pos]))
    return np.clip(out, 1e-12, 1.0 - 1e-12)


def _fit_platt(f: np.ndarray, positive: np.ndarray, max_iter: int = 100):
    """Regularized ML fit of the posterior sigmoid (Newton with backtracking)."""
    f = np.asarray(f, dtype=np.float64)
    n_pos = int(positive.sum())
    n_neg = len(f) - n_pos
    t = np.where(positive, (n_pos + 1.0) / (n_pos + 2.0), 1.0 / (n_neg + 2.0))

    a = 0.0
    b = float(np.log((n_neg + 1.0) / (n_pos + 1.0)))
    sigma = 1e-12

    def objective(a_, b_):
        z = f * a_ + b_
        # log(1 + exp(-|z|)) + max(z, 0) is the stable softplus of z
        soft = np.maximum(z, 0.0) + np.log1p(np.exp(-np.abs(z)))
        return float(np.sum(t * z + soft - z))

    val = objective(a, b)
    for _ in range(max_iter):
        z = f * a + b
        p = _sigmoid_posterior(f, a, b)
        d1 = t - p
        d2 = p * (1.0 - p)
        g_a = float(np.sum(f * d1))
        g_b = float(np.sum(d1))
        if abs(g_a) < 1e-5 and abs(g_b) < 1e-5:
            break
        h_aa = float(np.sum(f * f * d2)) + sigma
        h_bb = float(np.sum(d2)) + sigma
        h_ab = float(np.sum(f * d2))
        det = h_aa * h_bb - h_ab * h_ab
        step_a = -(h_bb * g_a - h_ab * g_b) / det
        step_b = -(h_aa * g_b - h_ab * g_a) / det
        stepsize = 1.0
        while stepsize >= 1e-10:
            na, nb = a + stepsize * step_a, b + stepsize * step_b
            nv = objective(na, nb)
            if nv < val + 1e-4 * stepsize * (g_a * step_a + g_b * step_b):
                a, b, val = na, nb, nv
                break
            stepsize /= 2.0
        else:
            break
    return a, b
