"""Training losses: reweighted cross-entropy and per-class covariance alignment.

Label drift between consecutive domains is absorbed by per-class
importance weights (ratio of next-domain to current-domain priors)
before the feature statistics are compared, so the covariance term only
ever penalizes conditional shift.
"""
from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from . import tensor as T
from .tensor import Tensor


def estimate_class_priors(labels, n_classes: int, smoothing: float = 1.0) -> np.ndarray:
    """(count_y + smoothing) / (n + smoothing * n_classes); positive when smoothed."""
    labels = np.asarray(labels)
    if labels.size == 0:
        raise ValueError("cannot estimate priors from an empty dataset")
    counts = np.bincount(labels, minlength=n_classes).astype(np.float64)
    return (counts + smoothing) / (labels.size + smoothing * n_classes)


def importance_weights(priors_t: np.ndarray, priors_next: np.ndarray) -> np.ndarray:
    priors_t = np.asarray(priors_t, dtype=np.float64)
    priors_next = np.asarray(priors_next, dtype=np.float64)
    if np.any(priors_t <= 0):
        raise ValueError("current-domain priors must be strictly positive")
    return priors_next / priors_t


def per_sample_weights(class_weights: np.ndarray, labels) -> np.ndarray:
    return np.asarray(class_weights, dtype=np.float64)[np.asarray(labels)]


def cross_entropy_terms(logits: Tensor, labels, n_output: int) -> Tensor:
    """Per-sample cross-entropy, shape (n,).

    Multiclass logits get a softmax; a single-logit binary head gets the
    logistic loss softplus(logit) - y*logit.
    """
    labels = np.asarray(labels, dtype=np.int64)
    if n_output == 1:
        if labels.min() < 0 or labels.max() > 1:
            raise ValueError("binary labels must be 0/1")
        x = T.reshape(logits, (logits.shape[0],))
        return T.sub(T.softplus(x), T.mul(x, Tensor(labels.astype(np.float64))))
    if labels.min() < 0 or labels.max() >= n_output:
        raise ValueError("label out of range for %d classes" % n_output)
    ls = T.log_softmax(logits, axis=1)
    return T.scale(T.take_per_row(ls, labels), -1.0)


def weighted_cls_loss(logits_f: Tensor, labels_t, weights_t: np.ndarray,
                      logits_g: Tensor, labels_next, n_output: int) -> Tensor:
    """Weighted-mean CE on the current domain plus plain-mean CE on the next."""
    weights_t = np.asarray(weights_t, dtype=np.float64)
    if np.any(weights_t <= 0):
        raise ValueError("per-sample weights must be positive")
    ce_f = cross_entropy_terms(logits_f, labels_t, n_output)
    ce_g = cross_entropy_terms(logits_g, labels_next, n_output)
    wsum = float(weights_t.sum())
    first = T.scale(T.reduce_sum(T.mul(ce_f, Tensor(weights_t))), 1.0 / wsum)
    return T.add(first, T.reduce_mean(ce_g))


def weighted_covariance(z: Tensor, weights: np.ndarray) -> Tensor:
    """Weighted sample covariance of the rows of z.

    Uses the weighted mean and an effective-count correction
    (sum(w) - sum(w^2)/sum(w)) chosen so that unit weights reproduce the
    plain unbiased sample covariance.
    """
    w = np.asarray(weights, dtype=np.float64)
    if z.shape[0] != w.shape[0]:
        raise ValueError("one weight per row required")
    if z.shape[0] < 2:
        raise ValueError("covariance needs at least two rows")
    wsum = float(w.sum())
    denom = wsum - float((w ** 2).sum()) / wsum
    if denom <= 0:
        raise ValueError("weights leave no effective degrees of freedom")
    zw = T.scale_rows(z, Tensor(w))
    second = T.matmul(T.transpose(z), zw)
    colsum = T.reduce_sum(zw, axis=0, keepdims=True)  # (1, d)
    outer = T.scale(T.matmul(T.transpose(colsum), colsum), 1.0 / wsum)
    return T.scale(T.sub(second, outer), 1.0 / denom)


def coral_inv_loss(zhat_t: Tensor, labels_t, weights_t, z_next: Tensor, labels_next,
                   n_classes: int):
    """Per-class squared Frobenius gap between the two sides' covariances.

    Classes with fewer than two samples on either side have no covariance
    and are skipped; returns (scalar loss, skip count).
    """
    labels_t = np.asarray(labels_t)
    labels_next = np.asarray(labels_next)
    weights_t = np.asarray(weights_t, dtype=np.float64)
    d = zhat_t.shape[1]
    norm = 1.0 / (4.0 * d * d)
    total = None
    skipped = 0
    for y in range(n_classes):
        idx_t = np.flatnonzero(labels_t == y)
        idx_n = np.flatnonzero(labels_next == y)
        if idx_t.size < 2 or idx_n.size < 2:
            skipped += 1
            continue
        c_t = weighted_covariance(T.take_rows(zhat_t, idx_t), weights_t[idx_t])
        c_n = weighted_covariance(T.take_rows(z_next, idx_n), np.ones(idx_n.size))
        term = T.scale(T.frobenius_norm_squared(T.sub(c_t, c_n)), norm)
        total = term if total is None else T.add(total, term)
    if total is None:
        total = Tensor(np.asarray(0.0))
    return total, skipped


@dataclass
class LossBreakdown:
    l_cls: float
    l_inv: float
    total: float
    alpha: float
    per_step: list[tuple[int, float, float]] = field(default_factory=list)
    skipped_classes: int = 0

    def to_dict(self) -> dict:
        return {"l_cls": self.l_cls, "l_inv": self.l_inv, "total": self.total,
                "alpha": self.alpha, "skipped_classes": self.skipped_classes,
                "per_step": [[t, c, i] for t, c, i in self.per_step]}


def combine_losses(cls_terms, inv_terms, alpha: float, skipped_classes: int = 0):
    """total = sum_t (L_cls^t + alpha * L_inv^t); alpha rides on the invariance term."""
    if alpha < 0:
        raise ValueError("alpha must be nonnegative")
    if len(cls_terms) != len(inv_terms) or not cls_terms:
        raise ValueError("need matching nonempty loss term lists")
    total = None
    per_step = []
    for t, (c, i) in enumerate(zip(cls_terms, inv_terms), start=1):
        term = T.add(c, T.scale(i, alpha)) if alpha != 0 else c
        total = term if total is None else T.add(total, term)
        per_step.append((t, c.item(), i.item()))
    breakdown = LossBreakdown(
        l_cls=sum(c for _, c, _ in per_step),
        l_inv=sum(i for _, _, i in per_step),
        total=total.item(),
        alpha=alpha,
        per_step=per_step,
        skipped_classes=skipped_classes,
    )
    return total, breakdown
