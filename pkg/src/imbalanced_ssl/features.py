"""Linear feature maps and their CSV + manifest serialization."""

from __future__ import annotations

import json
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from .datagen import SCHEMA_VERSION, _jsonable, content_hash, manifest_path, write_matrix_csv
from .errors import ConfigError, DatasetFormatError

KINDS = ("supervised", "ssl_spectral", "ssl_trained", "random", "identity")


@dataclass
class FeatureMap:
    """Features ``z = W x``; rows of ``W`` are feature directions."""

    W: np.ndarray
    kind: str = "supervised"
    meta: dict = field(default_factory=dict)

    def __post_init__(self):
        self.W = np.atleast_2d(np.asarray(self.W, dtype=np.float64))
        if self.W.shape[0] < 1:
            raise ConfigError("a feature map needs at least one row")
        if not np.all(np.isfinite(self.W)):
            raise ConfigError("feature map has non-finite entries")
        if self.kind not in KINDS:
            raise ConfigError(f"unknown feature map kind {self.kind!r}")

    @property
    def m(self):
        return self.W.shape[0]

    @property
    def d(self):
        return self.W.shape[1]

    def transform(self, inputs):
        inputs = np.asarray(inputs, dtype=np.float64)
        if inputs.shape[-1] != self.d:
            raise ConfigError(f"inputs have dimension {inputs.shape[-1]}, feature map expects {self.d}")
        return inputs @ self.W.T

    @classmethod
    def identity(cls, d):
        return cls(np.eye(d), "identity")

    @classmethod
    def random(cls, m, d, seed):
        rng = np.random.default_rng(seed)
        return cls(rng.standard_normal((m, d)) / np.sqrt(d), "random", {"seed": seed})


def save_feature_map(fm: FeatureMap, path) -> None:
    path = Path(path)
    write_matrix_csv(path, fm.W, [f"x{k}" for k in range(fm.d)])
    manifest = {
        "schema_version": SCHEMA_VERSION,
        "kind": fm.kind,
        "config": _jsonable(fm.meta),
        "m": fm.m,
        "d": fm.d,
        "sha256": content_hash(fm.W, np.zeros(0)),
    }
    manifest_path(path).write_text(json.dumps(manifest, indent=2, sort_keys=True) + "\n")


def load_feature_map(path) -> FeatureMap:
    path = Path(path)
    try:
        manifest = json.loads(manifest_path(path).read_text())
        W = np.loadtxt(path, delimiter=",", skiprows=1, ndmin=2)
    except (OSError, ValueError) as exc:
        raise DatasetFormatError(f"cannot read feature map {path}: {exc}") from exc
    if W.shape != (manifest.get("m"), manifest.get("d")):
        raise DatasetFormatError(f"matrix shape {W.shape} does not match manifest")
    if content_hash(W, np.zeros(0)) != manifest.get("sha256"):
        raise DatasetFormatError("content hash mismatch")
    return FeatureMap(W, manifest["kind"], manifest.get("config", {}))
