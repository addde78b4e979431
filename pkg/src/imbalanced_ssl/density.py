"""Inverse-density example weights from a Gaussian KDE on representations."""

from __future__ import annotations

import csv
from dataclasses import dataclass

import numpy as np

from . import kernels
from .errors import ConfigError

MEDIAN_HEURISTIC = "median-heuristic"
MEDIAN_SUBSAMPLE = 1024

# defaults used by the CLI presets
ALPHA_PRESETS = {"cifar10-lt": 1.2, "imagenet-lt": 0.5}


@dataclass
class KdeConfig:
    bandwidth_h: float | str = MEDIAN_HEURISTIC
    alpha: float = 1.2
    standardize: bool = True

    def validate(self):
        if not self.alpha >= 0:
            raise ConfigError(f"alpha must be non-negative, got {self.alpha}")
        if isinstance(self.bandwidth_h, str):
            if self.bandwidth_h != MEDIAN_HEURISTIC:
                raise ConfigError(f"bandwidth must be a positive number or {MEDIAN_HEURISTIC!r}")
        elif not self.bandwidth_h > 0:
            raise ConfigError(f"bandwidth must be positive, got {self.bandwidth_h}")


@dataclass
class WeightVector:
    weights: np.ndarray
    normalization: str = "mean-one"

    def __len__(self):
        return len(self.weights)


def _prepare(features, standardize):
    F = np.asarray(features, dtype=np.float64)
    if F.ndim != 2 or F.shape[0] < 1 or F.shape[1] < 1:
        raise ConfigError("features must be a non-empty n x m matrix")
    if standardize:
        # rigid motions of the features must not change the weights, so
        # standardize by a single global scale rather than per dimension
        F = F - F.mean(axis=0)
        scale = np.sqrt(np.mean(np.sum(F * F, axis=1)))
        if scale > 0:
            F = F / scale
    return F


def median_bandwidth(F, subsample=MEDIAN_SUBSAMPLE):
    """Median pairwise distance over the first ``min(n, subsample)`` rows."""
    S = F[:subsample]
    sq = np.sum(S * S, axis=1)
    d2 = np.maximum(sq[:, None] + sq[None, :] - 2.0 * S @ S.T, 0.0)
    iu = np.triu_indices(S.shape[0], k=1)
    if iu[0].size == 0:
        return 1.0
    return float(np.median(np.sqrt(d2[iu])))


def resolve_bandwidth(F, cfg: KdeConfig):
    h = median_bandwidth(F) if cfg.bandwidth_h == MEDIAN_HEURISTIC else float(cfg.bandwidth_h)
    if not h > 0:
        raise ConfigError("bandwidth resolved to zero (all sampled features coincide)")
    return h


def estimate_density(features, cfg: KdeConfig):
    """``(1/n) sum_j exp(-|f_i - f_j|^2 / (2 h^2))``, self term included.

    The Gaussian normalizing constant is dropped; it cancels once weights are
    rescaled to mean one.
    """
    cfg.validate()
    F = _prepare(features, cfg.standardize)
    h = resolve_bandwidth(F, cfg)
    return kernels.kde_row_sums(F, h) / F.shape[0]


def compute_weights(features, cfg: KdeConfig) -> WeightVector:
    density = estimate_density(features, cfg)
    if cfg.alpha == 0:
        return WeightVector(np.ones_like(density))
    raw = density ** (-cfg.alpha)
    return WeightVector(raw / raw.mean())


def raw_weights(features, cfg: KdeConfig):
    """Unnormalized ``density ** -alpha``."""
    return estimate_density(features, cfg) ** (-cfg.alpha)


def export_weights_csv(wv: WeightVector, path):
    with open(path, "w", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(["index", "weight"])
        for i, w in enumerate(wv.weights):
            writer.writerow([i, "%.17g" % w])
