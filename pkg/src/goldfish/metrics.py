"""Evaluation battery: accuracy, backdoor success, L2, JSD, Welch's t-test.

The t distribution CDF is computed in-repo through the regularized
incomplete beta function (continued fraction, absolute error < 1e-8), so
the package needs no external statistics dependency.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np

from .data import BackdoorSpec, LabeledDataset, stamp_trigger
from .errors import DataError, DomainError, ShapeError
from .nn import NetworkSpec, ParameterVector, predict_logits, softmax_t

LN2 = math.log(2.0)

CSV_HEADER = "round,acc,backdoor,l_r,l_f,l_c,l_d,l_total,jsd,l2,p_value,seconds"


@dataclass(frozen=True)
class MetricsRecord:
    """One row of the per-round evaluation log."""

    round: int
    accuracy: float
    backdoor: float
    l_r: float
    l_f: float
    l_c: float
    l_d: float
    l_total: float
    jsd: float
    l2: float
    p_value: float
    seconds: float
    trained_ids: frozenset | None = field(default=None, repr=False, compare=False)

    def __post_init__(self):
        if not 0.0 <= self.accuracy <= 100.0 or not 0.0 <= self.backdoor <= 100.0:
            raise DomainError("percentages must lie in [0, 100]")
        if not -1e-12 <= self.jsd <= LN2 + 1e-9:
            raise DomainError(f"jsd {self.jsd} outside [0, ln 2]")
        if not 0.0 <= self.p_value <= 1.0:
            raise DomainError("p-value must lie in [0, 1]")

    def csv_row(self) -> str:
        vals = [self.accuracy, self.backdoor, self.l_r, self.l_f, self.l_c,
                self.l_d, self.l_total, self.jsd, self.l2, self.p_value,
                self.seconds]
        return f"{self.round}," + ",".join(f"{v:.6f}" for v in vals)


def accuracy(spec: NetworkSpec, params: ParameterVector, test: LabeledDataset) -> float:
    """Percent of test examples whose argmax prediction matches the label."""
    if len(test) == 0:
        raise DataError("accuracy needs a nonempty test set")
    pred = predict_logits(spec, params, test.features).argmax(axis=1)
    return 100.0 * float((pred == test.labels).mean())


def per_class_error(spec: NetworkSpec, params: ParameterVector,
                    test: LabeledDataset) -> np.ndarray:
    """Errors as percent of the whole test set, one entry per true class.

    accuracy + sum(per_class_error) == 100 identically.
    """
    if len(test) == 0:
        raise DataError("per-class error needs a nonempty test set")
    pred = predict_logits(spec, params, test.features).argmax(axis=1)
    wrong = pred != test.labels
    counts = np.bincount(test.labels[wrong], minlength=test.num_classes)
    return 100.0 * counts / len(test)


def nontarget_subset(test: LabeledDataset, target_label: int) -> LabeledDataset:
    """Test rows whose true label differs from the backdoor target."""
    keep = np.nonzero(test.labels != target_label)[0]
    if keep.size == 0:
        raise DataError("no non-target examples available")
    return test.take(keep)


def backdoor_success_rate(spec: NetworkSpec, params: ParameterVector,
                          clean_nontarget_test: LabeledDataset,
                          bspec: BackdoorSpec) -> float:
    """Stamp the trigger on every row and report percent predicted as target.

    The test set must already exclude true-target-class examples (use
    `nontarget_subset`), otherwise base-rate correct predictions would be
    counted as attack successes.
    """
    if len(clean_nontarget_test) == 0:
        raise DataError("backdoor evaluation needs a nonempty test set")
    if np.any(clean_nontarget_test.labels == bspec.target_label):
        raise DataError("test set must exclude the backdoor target class")
    triggered = stamp_trigger(clean_nontarget_test.features, bspec)
    pred = predict_logits(spec, params, triggered).argmax(axis=1)
    return 100.0 * float((pred == bspec.target_label).mean())


def l2_distance(a, b) -> float:
    """Euclidean norm of (a - b); accepts ParameterVector or plain vectors."""
    va = a.values if isinstance(a, ParameterVector) else np.asarray(a, dtype=np.float64)
    vb = b.values if isinstance(b, ParameterVector) else np.asarray(b, dtype=np.float64)
    if va.shape != vb.shape:
        raise ShapeError(f"length mismatch: {va.shape} vs {vb.shape}")
    return float(np.linalg.norm(va - vb))


def mean_prediction(spec: NetworkSpec, params: ParameterVector,
                    data: LabeledDataset) -> np.ndarray:
    """Mean predicted class distribution over the dataset (T=1)."""
    if len(data) == 0:
        raise DataError("mean prediction needs a nonempty dataset")
    probs = softmax_t(predict_logits(spec, params, data.features), 1.0)
    return probs.mean(axis=0)


def max_confidence_samples(spec: NetworkSpec, params: ParameterVector,
                           data: LabeledDataset) -> np.ndarray:
    """Per-example maximum softmax confidence; the t-test sample population."""
    probs = softmax_t(predict_logits(spec, params, data.features), 1.0)
    return probs.max(axis=1)


def _check_distribution(p: np.ndarray, name: str) -> np.ndarray:
    p = np.asarray(p, dtype=np.float64)
    if p.ndim != 1:
        raise ShapeError(f"{name} must be a vector")
    if np.any(p < -1e-12):
        raise DomainError(f"{name} has negative entries")
    if abs(p.sum() - 1.0) > 1e-9:
        raise DomainError(f"{name} sums to {p.sum()}, expected 1")
    return np.clip(p, 0.0, None)


def jsd(p, q) -> float:
    """Jensen-Shannon divergence in natural log; symmetric, bounded by ln 2."""
    p = _check_distribution(p, "p")
    q = _check_distribution(q, "q")
    if p.shape != q.shape:
        raise ShapeError("distributions must have equal length")
    m = 0.5 * (p + q)

    def kl(a: np.ndarray) -> float:
        mask = a > 0.0
        return float(np.sum(a[mask] * np.log(a[mask] / m[mask])))

    return 0.5 * kl(p) + 0.5 * kl(q)


def _betacf(a: float, b: float, x: float) -> float:
    """Continued fraction for the incomplete beta (modified Lentz)."""
    tiny = 1e-300
    qab, qap, qam = a + b, a + 1.0, a - 1.0
    c = 1.0
    d = 1.0 - qab * x / qap
    if abs(d) < tiny:
        d = tiny
    d = 1.0 / d
    h = d
    for m in range(1, 300):
        m2 = 2 * m
        aa = m * (b - m) * x / ((qam + m2) * (a + m2))
        d = 1.0 + aa * d
        if abs(d) < tiny:
            d = tiny
        c = 1.0 + aa / c
        if abs(c) < tiny:
            c = tiny
        d = 1.0 / d
        h *= d * c
        aa = -(a + m) * (qab + m) * x / ((a + m2) * (qap + m2))
        d = 1.0 + aa * d
        if abs(d) < tiny:
            d = tiny
        c = 1.0 + aa / c
        if abs(c) < tiny:
            c = tiny
        d = 1.0 / d
        delta = d * c
        h *= delta
        if abs(delta - 1.0) < 1e-12:
            return h
    raise DomainError("incomplete beta continued fraction did not converge")


def regularized_incomplete_beta(a: float, b: float, x: float) -> float:
    """I_x(a, b), absolute error below 1e-8 over the t-test parameter range."""
    if a <= 0 or b <= 0:
        raise DomainError("beta parameters must be positive")
    if x < 0.0 or x > 1.0:
        raise DomainError(f"x must lie in [0, 1], got {x}")
    if x == 0.0 or x == 1.0:
        return x
    ln_front = (math.lgamma(a + b) - math.lgamma(a) - math.lgamma(b)
                + a * math.log(x) + b * math.log1p(-x))
    front = math.exp(ln_front)
    if x < (a + 1.0) / (a + b + 2.0):
        return front * _betacf(a, b, x) / a
    return 1.0 - front * _betacf(b, a, 1.0 - x) / b


def welch_t_test(sample_a, sample_b) -> float:
    """Two-sided Welch's t-test p-value (degrees of freedom per Welch-Satterthwaite)."""
    a = np.asarray(sample_a, dtype=np.float64)
    b = np.asarray(sample_b, dtype=np.float64)
    if a.size < 2 or b.size < 2:
        raise DataError("both samples need at least two observations")
    va, vb = a.var(ddof=1), b.var(ddof=1)
    na, nb = a.size, b.size
    if va == 0.0 and vb == 0.0:
        return 1.0 if a.mean() == b.mean() else 0.0  # degenerate guard
    se2 = va / na + vb / nb
    t = (a.mean() - b.mean()) / math.sqrt(se2)
    df = se2 ** 2 / ((va / na) ** 2 / (na - 1) + (vb / nb) ** 2 / (nb - 1))
    # two-sided p = I_{df/(df+t^2)}(df/2, 1/2)
    x = df / (df + t * t)
    return regularized_incomplete_beta(df / 2.0, 0.5, x)


def emit_csv(records, path) -> None:
    """Write the fixed-schema per-round CSV; floats at 6 decimals."""
    lines = [CSV_HEADER] + [r.csv_row() for r in records]
    with open(path, "w", newline="") as f:
        f.write("\n".join(lines) + "\n")
