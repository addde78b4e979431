"""Linear probes, relative accuracy gaps and per-class generalization gaps."""

from __future__ import annotations

import csv
import json
import warnings
from dataclasses import asdict, dataclass, field
from fractions import Fraction

import numpy as np

from .datagen import Dataset
from .errors import ConfigError
from .features import FeatureMap

TABLE_COLUMNS = ("method", "acc", "gap_freq", "gap_rare")


@dataclass
class ProbeConfig:
    """Full-batch gradient descent on the multinomial logistic loss.

    The step is ``1 / L`` with ``L`` the smoothness bound of the (scaled)
    problem unless ``learning_rate`` is given.
    """

    max_steps: int = 3000
    grad_tol: float = 1e-6
    learning_rate: float | None = None
    l2: float = 0.0
    standardize: bool = True

    def validate(self):
        if self.max_steps < 0 or not self.grad_tol > 0 or self.l2 < 0:
            raise ConfigError("probe needs max_steps >= 0, grad_tol > 0, l2 >= 0")
        if self.learning_rate is not None and not self.learning_rate > 0:
            raise ConfigError("learning_rate must be positive")


@dataclass
class ProbeResult:
    head: np.ndarray
    bias: np.ndarray
    top1_accuracy: float
    per_class_accuracy: np.ndarray
    steps: int = 0
    grad_norm: float = float("nan")

    def predict(self, features):
        return np.argmax(np.asarray(features) @ self.head.T + self.bias, axis=1)

    def to_dict(self):
        return {
            "top1_accuracy": self.top1_accuracy,
            "per_class_accuracy": [float(a) for a in self.per_class_accuracy],
            "steps": self.steps,
            "grad_norm": self.grad_norm,
        }


def _softmax(S):
    S = S - S.max(axis=1, keepdims=True)
    E = np.exp(S)
    return E / E.sum(axis=1, keepdims=True)


def fit_logistic(Z, y, C, cfg: ProbeConfig):
    """Multinomial logistic regression from a zero start. Returns ``(head, bias, steps, grad_norm)``."""
    n, m = Z.shape
    Y = np.zeros((n, C))
    Y[np.arange(n), y] = 1.0
    Za = np.hstack([Z, np.ones((n, 1))])
    if cfg.learning_rate is None:
        # the softmax Hessian is bounded by (1/2) Za^T Za / n in each class block
        L = 0.5 * np.linalg.norm(Za, 2) ** 2 / n + cfg.l2
        lr = 1.0 / L
    else:
        lr = cfg.learning_rate
    theta = np.zeros((C, m + 1))
    gnorm = float("inf")
    step = 0
    for step in range(1, cfg.max_steps + 1):
        P = _softmax(Za @ theta.T)
        grad = (P - Y).T @ Za / n
        if cfg.l2:
            grad[:, :m] += cfg.l2 * theta[:, :m]
        gnorm = float(np.linalg.norm(grad))
        if gnorm <= cfg.grad_tol:
            break
        theta -= lr * grad
    return theta[:, :m], theta[:, m], step, gnorm


def _scaling(Z):
    mu = Z.mean(axis=0)
    s = np.sqrt(np.mean(np.sum((Z - mu) ** 2, axis=1)))
    return mu, (s if s > 0 else 1.0)


def _accuracies(pred, labels, C):
    correct = pred == labels
    per = np.array([correct[labels == c].mean() if np.any(labels == c) else np.nan for c in range(C)])
    return float(correct.mean()) if labels.size else float("nan"), per


def train_probe(fm: FeatureMap, train: Dataset, test: Dataset, cfg: ProbeConfig | None = None) -> ProbeResult:
    """Fit a C-way linear head on ``z = W x`` of ``train`` and score it on ``test``.

    Features are centered and divided by one global scale (rotations of the
    features therefore leave the predictions unchanged); the returned head acts
    on unscaled features.
    """
    cfg = cfg or ProbeConfig()
    cfg.validate()
    C = max(train.class_count, test.class_count)
    counts = np.bincount(train.labels, minlength=C)
    if counts.min() != counts.max():
        warnings.warn("probe training set is not class-balanced", stacklevel=2)
    Z = fm.transform(train.inputs)
    mu, s = _scaling(Z) if cfg.standardize else (np.zeros(Z.shape[1]), 1.0)
    head, bias, steps, gnorm = fit_logistic((Z - mu) / s, train.labels, C, cfg)
    head = head / s
    bias = bias - head @ mu
    pred = np.argmax(fm.transform(test.inputs) @ head.T + bias, axis=1)
    acc, per = _accuracies(pred, test.labels, C)
    return ProbeResult(head, bias, acc, per, steps, gnorm)


def split_alternating(ds: Dataset):
    """Even-indexed rows of every class for training, odd-indexed for testing."""
    tr, te = [], []
    for c in range(ds.class_count):
        idx = np.flatnonzero(ds.labels == c)
        tr.append(idx[0::2])
        te.append(idx[1::2])
    return ds.subset(np.concatenate(tr)), ds.subset(np.concatenate(te))


def restrict_classes(ds: Dataset, classes) -> Dataset:
    """Rows of the listed classes, relabeled ``0..k-1`` in the listed order."""
    classes = list(classes)
    remap = np.full(ds.class_count, -1)
    remap[classes] = np.arange(len(classes))
    keep = np.flatnonzero(remap[ds.labels] >= 0)
    sub = ds.subset(keep)
    return Dataset(sub.inputs, remap[sub.labels], len(classes), dict(ds.provenance, restricted_to=classes))


def rare_class_probe(fm, rare_balanced: Dataset, cfg=None, test: Dataset | None = None, rare_classes=None):
    """Probe on rare classes only; without ``test`` the rows are split alternately per class."""
    if rare_classes is not None:
        rare_balanced = restrict_classes(rare_balanced, rare_classes)
        if test is not None:
            test = restrict_classes(test, rare_classes)
    if test is None:
        rare_balanced, test = split_alternating(rare_balanced)
    return train_probe(fm, rare_balanced, test, cfg)


# ---------------------------------------------------------------------------
# relative gap


@dataclass
class GapReport:
    a_balanced: float
    a_imbalanced: float
    delta: float
    n: int | None = None
    r: float | None = None
    delta_exact: str = ""


def _exact(v):
    if isinstance(v, (Fraction, int)):
        return Fraction(v)
    if isinstance(v, str):
        return Fraction(v)
    # decimal reading of the float, so 54.3 means 543/10
    return Fraction(repr(float(v)))


def relative_gap(a_bal, a_imb, n=None, r=None) -> GapReport:
    """``(a_bal - a_imb) / a_bal`` in rational arithmetic, rounded once to float."""
    fb, fi = _exact(a_bal), _exact(a_imb)
    if fb == 0:
        raise ConfigError("balanced accuracy must be non-zero")
    q = (fb - fi) / fb
    return GapReport(float(a_bal), float(a_imb), float(q), n, r, f"{q.numerator}/{q.denominator}")


# ---------------------------------------------------------------------------
# generalization gaps


@dataclass
class GenGapReport:
    train_loss: np.ndarray
    val_loss: np.ndarray
    gap: np.ndarray
    gap_se: np.ndarray
    groups: dict
    group_gap: dict = field(default_factory=dict)

    def to_dict(self):
        d = asdict(self)
        for k in ("train_loss", "val_loss", "gap", "gap_se"):
            d[k] = [float(v) for v in d[k]]
        d["groups"] = {k: [int(c) for c in v] for k, v in self.groups.items()}
        return d


def default_groups(counts):
    """Classes with count at least the median count are frequent, the rest rare."""
    counts = np.asarray(counts)
    med = np.median(counts)
    return {
        "frequent": [int(c) for c in np.flatnonzero(counts >= med)],
        "rare": [int(c) for c in np.flatnonzero(counts < med)],
    }


def _class_means(losses, se, labels, C):
    mean = np.full(C, np.nan)
    err = np.full(C, np.nan)
    for c in range(C):
        sel = labels == c
        k = int(sel.sum())
        if k:
            mean[c] = losses[sel].mean()
            err[c] = np.sqrt(np.sum(np.asarray(se)[sel] ** 2)) / k
    return mean, err


def generalization_gap(obj, params, train: Dataset, heldout: Dataset, class_groups=None, draws=64, seed=0):
    """Per-class held-out minus training loss, each row's loss averaged over ``draws`` perturbations.

    ``obj`` needs ``example_losses(params, inputs, rng, draws)`` returning the
    per-row means and standard errors. Train and held-out rows use independent
    streams spawned from ``seed``.
    """
    C = train.class_count
    groups = default_groups(train.class_counts()) if class_groups is None else {
        k: [int(c) for c in v] for k, v in class_groups.items()
    }
    for name, members in groups.items():
        if not members:
            raise ConfigError(f"class group {name!r} is empty")
    s_tr, s_va = np.random.SeedSequence(seed).spawn(2)
    l_tr, e_tr = obj.example_losses(params, train.inputs, np.random.default_rng(s_tr), draws)
    l_va, e_va = obj.example_losses(params, heldout.inputs, np.random.default_rng(s_va), draws)
    tr, tr_se = _class_means(l_tr, e_tr, train.labels, C)
    va, va_se = _class_means(l_va, e_va, heldout.labels, C)
    gap = va - tr
    gap_se = np.sqrt(tr_se**2 + va_se**2)
    group_gap = {k: float(np.mean(gap[v])) for k, v in groups.items()}
    return GenGapReport(tr, va, gap, gap_se, groups, group_gap)


def write_report_json(obj, path):
    payload = obj.to_dict() if hasattr(obj, "to_dict") else asdict(obj)
    with open(path, "w") as fh:
        json.dump(payload, fh, indent=2, sort_keys=True)
        fh.write("\n")


def write_table_csv(rows, path):
    """Rows of ``{method, acc, gap_freq, gap_rare}``; missing entries are left blank."""
    with open(path, "w", newline="") as fh:
        w = csv.DictWriter(fh, fieldnames=TABLE_COLUMNS, lineterminator="\n")
        w.writeheader()
        for r in rows:
            w.writerow({k: ("" if r.get(k) is None else r[k]) for k in TABLE_COLUMNS})
