"""Composite unlearning loss: hard, confusion and distillation terms.

Total objective over a remain batch D_r and a forget batch D_f:

    L = (L_r - L_f) + mu_c * L_c + mu_d * L_d

All terms are per-batch means so the weights keep their meaning regardless
of batch and dataset sizes. Every term comes with its analytic gradient on
the student logits; `nn.backward` turns those into parameter gradients.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from .errors import DomainError, ShapeError
from .nn import softmax_t

_VAR_FLOOR = 1e-12  # below this the root-variance gradient is treated as 0


@dataclass(frozen=True)
class LossWeights:
    """Weights and temperature knobs of the composite loss."""

    mu_c: float = 0.25
    mu_d: float = 1.0
    temperature: float = 3.0            # initial distillation temperature T0
    temp_adjust: float = 1.0 / math.e   # adjustment factor for the adaptive rule
    adaptive_temp: bool = False
    forget_clamp: bool = True

    def __post_init__(self):
        if self.mu_c < 0 or self.mu_d < 0:
            raise DomainError("loss weights must be non-negative")
        if not self.temperature > 0 or not self.temp_adjust > 0:
            raise DomainError("temperature parameters must be positive")


@dataclass(frozen=True)
class SoftTargets:
    """Teacher probabilities used as labels for the student; constants."""

    probabilities: np.ndarray
    temperature: float

    def __len__(self) -> int:
        return self.probabilities.shape[0]


@dataclass(frozen=True)
class TotalLoss:
    """Value, per-term breakdown and logit gradients of one evaluation."""

    total: float
    hard: float
    remain_ce: float
    forget_ce: float
    confusion: float
    distillation: float
    temperature: float
    grad_remain: np.ndarray
    grad_forget: np.ndarray | None


def _check_labels(logits: np.ndarray, labels: np.ndarray) -> np.ndarray:
    labels = np.asarray(labels)
    if labels.ndim != 1 or labels.shape[0] != logits.shape[0]:
        raise ShapeError(f"labels shape {labels.shape} does not match logits {logits.shape}")
    num_classes = logits.shape[1]
    if labels.size and (labels.min() < 0 or labels.max() >= num_classes):
        raise DomainError(f"label out of range [0, {num_classes})")
    return labels.astype(np.int64)


def _log_softmax(logits: np.ndarray) -> np.ndarray:
    z = logits - logits.max(axis=1, keepdims=True)
    return z - np.log(np.exp(z).sum(axis=1, keepdims=True))


def cross_entropy_with_grad(logits: np.ndarray, labels: np.ndarray) -> tuple[float, np.ndarray]:
    """Mean cross-entropy at T=1 and its gradient on the logits."""
    logits = np.asarray(logits, dtype=np.float64)
    labels = _check_labels(logits, labels)
    n = logits.shape[0]
    if n == 0:
        raise ShapeError("cross entropy needs at least one example")
    logp = _log_softmax(logits)
    value = float(-logp[np.arange(n), labels].mean())
    grad = np.exp(logp)
    grad[np.arange(n), labels] -= 1.0
    return value, grad / n


def hard_loss(
    student_logits_r: np.ndarray,
    labels_r: np.ndarray,
    student_logits_f: np.ndarray | None = None,
    labels_f: np.ndarray | None = None,
    clamp: bool = True,
) -> tuple[float, float, float]:
    """L_h = L_r - L_f with the forget term optionally clamped at ln(alpha).

    Returns (L_h, L_r, L_f); an absent forget batch gives L_f = 0.
    """
    (l_h, l_r, l_f), _, _ = _hard_loss_full(
        student_logits_r, labels_r, student_logits_f, labels_f, clamp)
    return l_h, l_r, l_f


def _hard_loss_full(student_logits_r, labels_r, student_logits_f, labels_f, clamp):
    """Hard-loss values plus gradients on both logit batches."""
    l_r, grad_r = cross_entropy_with_grad(student_logits_r, labels_r)
    if student_logits_f is None or len(student_logits_f) == 0:
        return (l_r, l_r, 0.0), grad_r, None
    logits_f = np.asarray(student_logits_f, dtype=np.float64)
    labels_f = _check_labels(logits_f, labels_f)
    n_f = logits_f.shape[0]
    logp = _log_softmax(logits_f)
    ce = -logp[np.arange(n_f), labels_f]
    grad_f = np.exp(logp)
    grad_f[np.arange(n_f), labels_f] -= 1.0
    if clamp:
        cap = math.log(logits_f.shape[1])
        active = ce < cap  # clamped samples contribute no gradient
        ce = np.minimum(ce, cap)
        grad_f[~active] = 0.0
    l_f = float(ce.mean())
    # gradient of L_h on the forget side is -dL_f/dz
    return (l_r - l_f, l_r, l_f), grad_r, -grad_f / n_f


def confusion_loss(student_logits_f: np.ndarray) -> float:
    """Mean root-variance of the forget-batch probability vectors.

    Zero iff every prediction is exactly uniform; maximal for one-hot.
    """
    value, _ = confusion_loss_with_grad(student_logits_f)
    return value


def confusion_loss_with_grad(student_logits_f: np.ndarray) -> tuple[float, np.ndarray]:
    logits = np.asarray(student_logits_f, dtype=np.float64)
    if logits.ndim != 2 or logits.shape[0] == 0:
        raise DomainError("confusion loss needs a nonempty forget batch")
    n, num_classes = logits.shape
    p = softmax_t(logits, 1.0)
    mean = p.mean(axis=1, keepdims=True)           # = 1/alpha on softmax rows
    var = ((p - mean) ** 2).mean(axis=1)           # population variance
    root = np.sqrt(var)
    value = float(root.mean())
    # d sqrt(var)/dp_k = (p_k - mean) / (alpha * sqrt(var)); 0 at uniform rows
    safe = np.where(root > _VAR_FLOOR, root, 1.0)
    g_p = np.where(root[:, None] > _VAR_FLOOR,
                   (p - mean) / (num_classes * safe[:, None]), 0.0)
    # chain through softmax: dL/dz = p * (g - sum_j g_j p_j)
    inner = (g_p * p).sum(axis=1, keepdims=True)
    grad = p * (g_p - inner) / n
    return value, grad


def soft_targets(teacher_logits_r: np.ndarray, temperature: float) -> SoftTargets:
    """Row-wise temperature softmax of the teacher logits (no gradient flows)."""
    probs = softmax_t(np.asarray(teacher_logits_r, dtype=np.float64), temperature)
    probs = np.atleast_2d(probs)
    probs.setflags(write=False)
    return SoftTargets(probs, float(temperature))


def distillation_loss(targets: SoftTargets, student_logits_r: np.ndarray,
                      temperature: float) -> float:
    """Mean cross-entropy between teacher soft targets and the tempered student."""
    value, _ = distillation_loss_with_grad(targets, student_logits_r, temperature)
    return value


def distillation_loss_with_grad(
    targets: SoftTargets,
    student_logits_r: np.ndarray,
    temperature: float,
) -> tuple[float, np.ndarray]:
    if not temperature > 0:
        raise DomainError(f"temperature must be positive, got {temperature}")
    logits = np.asarray(student_logits_r, dtype=np.float64)
    p_t = targets.probabilities
    if logits.shape != p_t.shape:
        raise ShapeError(f"student logits {logits.shape} vs targets {p_t.shape}")
    n = logits.shape[0]
    logp_s = _log_softmax(logits / temperature)
    value = float(-(p_t * logp_s).sum(axis=1).mean())
    # d/dz of mean -sum p_t log softmax(z/T): (p_s - p_t) / (T * n); no T^2 rescale
    grad = (np.exp(logp_s) - p_t) / (temperature * n)
    return value, grad


def adaptive_temperature(t0: float, adjust: float, size_r: int, size_f: int) -> float:
    """T = adjust * T0 * exp(|D_r| / (|D_r| + |D_f|)).

    With the default adjust = 1/e an empty forget set reproduces T = T0.
    """
    if size_r + size_f <= 0:
        raise DomainError("remain and forget sets cannot both be empty")
    if size_r < 0 or size_f < 0:
        raise DomainError("set sizes must be non-negative")
    if not t0 > 0 or not adjust > 0:
        raise DomainError("temperature parameters must be positive")
    return adjust * t0 * math.exp(size_r / (size_r + size_f))


def total_loss(
    teacher_logits_r: np.ndarray | None,
    student_logits_r: np.ndarray,
    labels_r: np.ndarray,
    student_logits_f: np.ndarray | None,
    labels_f: np.ndarray | None,
    weights: LossWeights,
) -> TotalLoss:
    """Composite loss and its analytic gradient on both student logit batches.

    With an empty forget batch the confusion and forget terms drop and the
    objective reduces to L_r + mu_d * L_d. Terms with zero weight are skipped
    entirely (not computed and multiplied by zero), so the mu_c = mu_d = 0
    path is numerically identical to plain cross-entropy training.
    """
    logits_r = np.asarray(student_logits_r, dtype=np.float64)
    if logits_r.ndim != 2 or logits_r.shape[0] == 0:
        raise ShapeError("remain batch must be nonempty")
    has_forget = student_logits_f is not None and len(student_logits_f) > 0

    size_r = logits_r.shape[0]
    size_f = len(student_logits_f) if has_forget else 0
    if weights.adaptive_temp:
        temp = adaptive_temperature(weights.temperature, weights.temp_adjust,
                                    size_r, size_f)
        if temp <= 1.0:
            temp = 1.0  # soft labels degrade into hard labels
    else:
        temp = weights.temperature

    (l_h, l_r, l_f), grad_r, grad_f = _hard_loss_full(
        logits_r, labels_r,
        student_logits_f if has_forget else None,
        labels_f if has_forget else None,
        weights.forget_clamp)

    l_d = 0.0
    if weights.mu_d > 0.0:
        if teacher_logits_r is None:
            raise DomainError("mu_d > 0 requires teacher logits on the remain batch")
        targets = soft_targets(teacher_logits_r, temp)
        l_d, grad_d = distillation_loss_with_grad(targets, logits_r, temp)
        grad_r = grad_r + weights.mu_d * grad_d

    l_c = 0.0
    if has_forget and weights.mu_c > 0.0:
        l_c, grad_c = confusion_loss_with_grad(student_logits_f)
        grad_f = grad_f + weights.mu_c * grad_c

    if has_forget:
        total = l_h + weights.mu_c * l_c + weights.mu_d * l_d
    else:
        total = l_r + weights.mu_d * l_d

    return TotalLoss(total=float(total), hard=float(l_h), remain_ce=float(l_r),
                     forget_ce=float(l_f), confusion=float(l_c),
                     distillation=float(l_d), temperature=float(temp),
                     grad_remain=grad_r, grad_forget=grad_f)
