"""Synthetic datasets: the three-class toy model, long-tailed count profiles,
the two-block semi-synthetic construction, and CSV persistence."""

from __future__ import annotations

import hashlib
import json
import math
from dataclasses import asdict, dataclass, field
from pathlib import Path

import numpy as np

from .errors import ConfigError, DatasetFormatError

SCHEMA_VERSION = 1


@dataclass
class Dataset:
    """Inputs with integer labels in ``[0, class_count)``.

    ``noise`` holds the unscaled standard-normal draws behind each row when the
    generator retains them (the toy model does); ``q`` holds the toy model's
    binary offsets.
    """

    inputs: np.ndarray
    labels: np.ndarray
    class_count: int
    provenance: dict = field(default_factory=dict)
    noise: np.ndarray | None = None
    q: np.ndarray | None = None

    def __post_init__(self):
        self.inputs = np.asarray(self.inputs, dtype=np.float64)
        self.labels = np.asarray(self.labels, dtype=np.int64)
        if self.inputs.ndim != 2:
            raise ConfigError("inputs must be a 2-d array")
        if self.labels.shape != (self.inputs.shape[0],):
            raise ConfigError("labels must have one entry per input row")
        if self.labels.size and (self.labels.min() < 0 or self.labels.max() >= self.class_count):
            raise ConfigError(f"labels must lie in [0, {self.class_count})")
        if not np.all(np.isfinite(self.inputs)):
            raise ConfigError("inputs contain non-finite values")

    @property
    def n(self):
        return self.inputs.shape[0]

    @property
    def d(self):
        return self.inputs.shape[1]

    def class_counts(self):
        return np.bincount(self.labels, minlength=self.class_count)

    def subset(self, index):
        index = np.asarray(index)
        return Dataset(
            self.inputs[index],
            self.labels[index],
            self.class_count,
            dict(self.provenance),
            None if self.noise is None else self.noise[index],
            None if self.q is None else self.q[index],
        )


# ---------------------------------------------------------------------------
# toy distribution


@dataclass
class ToyConfig:
    """Parameters of the three-class toy model.

    ``tau`` and ``rho_noise`` default to ``d**(1/5)`` and ``d**(-1/5)``.
    ``q_override`` pins the binary offset (0 or 1) for every frequent row, and
    ``degenerate=True`` permits ``rho_noise == 0``; both exist for exact tests.
    """

    d: int
    n1: int
    n2: int
    n3: int
    seed: int = 0
    tau: float | None = None
    rho_noise: float | None = None
    q_override: int | None = None
    degenerate: bool = False

    def __post_init__(self):
        if self.tau is None:
            self.tau = float(self.d) ** 0.2
        if self.rho_noise is None:
            self.rho_noise = float(self.d) ** -0.2
        self.validate()

    def validate(self):
        if int(self.d) != self.d or self.d < 3:
            raise ConfigError(f"d must be an integer >= 3, got {self.d}")
        for name in ("n1", "n2", "n3"):
            v = getattr(self, name)
            if int(v) != v or v < 0:
                raise ConfigError(f"{name} must be a non-negative integer, got {v}")
        if not self.tau > 0:
            raise ConfigError(f"tau must be positive, got {self.tau}")
        if self.degenerate:
            if not self.rho_noise >= 0:
                raise ConfigError(f"rho_noise must be non-negative, got {self.rho_noise}")
        elif not self.rho_noise > 0:
            raise ConfigError(f"rho_noise must be positive, got {self.rho_noise}")
        if self.q_override not in (None, 0, 1):
            raise ConfigError("q_override must be None, 0 or 1")
        if not 0 <= self.seed < 2**64:
            raise ConfigError("seed must be a 64-bit unsigned integer")

    @classmethod
    def theorem_defaults(cls, d, n1=2000, n2=2000, seed=0):
        return cls(d=d, n1=n1, n2=n2, n3=math.ceil(d**0.2 - 1e-12), seed=seed)


def gen_toy(cfg: ToyConfig) -> Dataset:
    """Sample the toy model; rows are grouped by class (1, 2, then 3).

    Random stream, per class in order: for classes 1 and 2 the offsets ``q``
    (``integers(0, 2, n_k)``) and then the ``(n_k, d)`` Gaussian block; for
    class 3 only the Gaussian block.
    """
    cfg.validate()
    d, tau, rho = cfg.d, cfg.tau, cfg.rho_noise
    rng = np.random.default_rng(cfg.seed)
    blocks, labels, noises, qs = [], [], [], []
    for label, count in enumerate((cfg.n1, cfg.n2, cfg.n3)):
        if label < 2:
            q = rng.integers(0, 2, size=count).astype(np.int64)
            if cfg.q_override is not None:
                q[:] = cfg.q_override
        else:
            q = np.zeros(count, dtype=np.int64)
        xi = rng.standard_normal((count, d))
        x = rho * xi
        if label == 0:
            x[:, 0] += 1.0
            x[:, 1] -= q * tau
        elif label == 1:
            x[:, 0] -= 1.0
            x[:, 1] -= q * tau
        else:
            x[:, 1] += 1.0
        blocks.append(x)
        noises.append(xi)
        qs.append(q)
        labels.append(np.full(count, label, dtype=np.int64))
    prov = {"generator": "toy", **asdict(cfg)}
    return Dataset(
        np.concatenate(blocks), np.concatenate(labels), 3, prov, np.concatenate(noises), np.concatenate(qs)
    )


# ---------------------------------------------------------------------------
# long-tailed class counts

PROFILE_SHAPES = ("exponential", "pareto", "step", "balanced")


@dataclass
class ImbalanceProfile:
    C: int
    shape: str = "exponential"
    base_count: int = 5000
    ratio_r: float = 1.0
    pareto_power: float = 6.0

    def validate(self):
        if self.C < 1:
            raise ConfigError("C must be positive")
        if self.shape not in PROFILE_SHAPES:
            raise ConfigError(f"shape must be one of {PROFILE_SHAPES}, got {self.shape!r}")
        if not 0 < self.ratio_r <= 1:
            raise ConfigError(f"ratio_r must lie in (0, 1], got {self.ratio_r}")
        if self.base_count < 1:
            raise ConfigError("base_count must be positive")
        if not self.pareto_power > 0:
            raise ConfigError("pareto_power must be positive")
        if self.shape != "balanced" and round(self.base_count * self.ratio_r) < 1:
            raise ConfigError("base_count * ratio_r rounds to zero examples for the rarest class")


def _round_half_up(values):
    return np.floor(np.asarray(values, dtype=np.float64) + 0.5).astype(np.int64)


def gen_longtail_counts(profile: ImbalanceProfile) -> list[int]:
    """Per-class example counts, non-increasing in the class index.

    exponential: ``base * r**((c-1)/(C-1))``; pareto: ``base * x_c**-power`` on a
    grid ``x_1 = 1 .. x_C = r**(-1/power)``; step: the first ``ceil(C/2)`` classes
    at ``base`` and the rest at ``base * r``; balanced: ``base`` everywhere.
    Rounded to nearest (halves up).
    """
    profile.validate()
    C, base, r = profile.C, profile.base_count, profile.ratio_r
    c = np.arange(C, dtype=np.float64)
    frac = c / (C - 1) if C > 1 else np.zeros(1)
    if profile.shape == "exponential":
        raw = base * r**frac
    elif profile.shape == "pareto":
        a = profile.pareto_power
        grid = 1.0 + frac * (r ** (-1.0 / a) - 1.0)
        raw = base * grid ** (-a)
    elif profile.shape == "step":
        raw = np.where(c < math.ceil(C / 2), float(base), base * r)
    else:
        raw = np.full(C, float(base))
    counts = _round_half_up(raw)
    counts[0] = base
    return [int(v) for v in counts]


# ---------------------------------------------------------------------------
# Gaussian class-mean datasets


def _unit_rows(rng, k, dim):
    m = rng.standard_normal((k, dim))
    return m / np.linalg.norm(m, axis=1, keepdims=True)


def gen_longtail_gaussian(counts, dim, mean_scale=1.0, noise_scale=1.0, seed=0, sample_seed=None) -> Dataset:
    """Gaussian classes with unit-direction means scaled by ``mean_scale``.

    Class means depend on ``seed`` only, so a held-out set from the same
    class-conditional distributions is obtained by changing ``sample_seed``.
    """
    counts = [int(c) for c in counts]
    if len(counts) < 2 or min(counts) < 0:
        raise ConfigError("need at least two classes with non-negative counts")
    if dim < 1 or not noise_scale >= 0 or not mean_scale >= 0:
        raise ConfigError("dim must be positive and scales non-negative")
    mean_ss, sample_ss = np.random.SeedSequence(seed).spawn(2)
    means = mean_scale * _unit_rows(np.random.default_rng(mean_ss), len(counts), dim)
    rng = np.random.default_rng(sample_ss if sample_seed is None else sample_seed)
    labels = np.repeat(np.arange(len(counts)), counts)
    inputs = means[labels] + noise_scale * rng.standard_normal((labels.size, dim))
    prov = {
        "generator": "longtail_gaussian",
        "counts": counts,
        "dim": dim,
        "mean_scale": mean_scale,
        "noise_scale": noise_scale,
        "seed": seed,
        "sample_seed": sample_seed,
    }
    return Dataset(inputs, labels, len(counts), prov)


# ---------------------------------------------------------------------------
# semi-synthetic two-block construction


@dataclass
class SemiSynthConfig:
    """Two-block analog of the half-image construction.

    Classes ``0..k_frequent-1`` carry their label in the left block and a random
    rare-class pattern in the right block; the remaining ``k_rare`` classes have
    a blank left block and their label in the right block.
    """

    block_dim: int = 128
    k_frequent: int = 5
    k_rare: int = 5
    n_frequent: int = 500
    n_rare: int = 1
    signal_scale: float = 5.0
    noise_scale: float = 1.0
    seed: int = 0
    sample_seed: int | None = None

    def validate(self):
        if self.k_frequent + self.k_rare < 2:
            raise ConfigError("need at least two classes in total")
        if self.k_frequent < 0 or self.k_rare < 1:
            raise ConfigError("k_rare must be positive and k_frequent non-negative")
        if self.block_dim < 1 or self.n_frequent < 0 or self.n_rare < 0:
            raise ConfigError("block_dim must be positive and counts non-negative")
        if not self.signal_scale > 0 or not self.noise_scale >= 0:
            raise ConfigError("signal_scale must be positive and noise_scale non-negative")

    @property
    def ratio(self):
        return self.n_rare / self.n_frequent if self.n_frequent else 1.0


def semisynthetic_means(cfg: SemiSynthConfig):
    """Unit class means ``(frequent_left, rare_right)`` shared by every sample draw."""
    mean_ss, _ = np.random.SeedSequence(cfg.seed).spawn(2)
    rng = np.random.default_rng(mean_ss)
    return _unit_rows(rng, cfg.k_frequent, cfg.block_dim), _unit_rows(rng, cfg.k_rare, cfg.block_dim)


def gen_semisynthetic(cfg: SemiSynthConfig) -> Dataset:
    cfg.validate()
    D, s, sigma = cfg.block_dim, cfg.signal_scale, cfg.noise_scale
    mu_f, mu_r = semisynthetic_means(cfg)
    _, sample_ss = np.random.SeedSequence(cfg.seed).spawn(2)
    rng = np.random.default_rng(sample_ss if cfg.sample_seed is None else cfg.sample_seed)

    nf = cfg.k_frequent * cfg.n_frequent
    nr = cfg.k_rare * cfg.n_rare
    inputs = np.zeros((nf + nr, 2 * D))
    y_f = np.repeat(np.arange(cfg.k_frequent), cfg.n_frequent)
    y_r = np.repeat(np.arange(cfg.k_rare), cfg.n_rare)

    pattern = rng.integers(0, cfg.k_rare, size=nf)
    inputs[:nf, :D] = s * mu_f[y_f] + sigma * rng.standard_normal((nf, D))
    inputs[:nf, D:] = s * mu_r[pattern] + sigma * rng.standard_normal((nf, D))
    inputs[nf:, D:] = s * mu_r[y_r] + sigma * rng.standard_normal((nr, D))

    labels = np.concatenate([y_f, cfg.k_frequent + y_r])
    prov = {"generator": "semisynthetic", **asdict(cfg)}
    return Dataset(inputs, labels, cfg.k_frequent + cfg.k_rare, prov)


# ---------------------------------------------------------------------------
# persistence


def content_hash(inputs, labels):
    """SHA-256 over little-endian int64 labels followed by C-order float64 inputs."""
    h = hashlib.sha256()
    h.update(np.ascontiguousarray(labels, dtype="<i8").tobytes())
    h.update(np.ascontiguousarray(inputs, dtype="<f8").tobytes())
    return h.hexdigest()


def manifest_path(path):
    path = Path(path)
    return path.with_name(path.stem + ".manifest.json")


def _jsonable(obj):
    if isinstance(obj, dict):
        return {str(k): _jsonable(v) for k, v in obj.items()}
    if isinstance(obj, (list, tuple)):
        return [_jsonable(v) for v in obj]
    if isinstance(obj, np.integer):
        return int(obj)
    if isinstance(obj, np.floating):
        return float(obj)
    if isinstance(obj, np.ndarray):
        return obj.tolist()
    return obj


def write_matrix_csv(path, matrix, header, first_column=None):
    """Write rows with ``%.17g`` floats, which round-trip float64 exactly."""
    matrix = np.asarray(matrix, dtype=np.float64)
    Path(path).parent.mkdir(parents=True, exist_ok=True)
    with open(path, "w", newline="") as fh:
        fh.write(",".join(header) + "\n")
        for i, row in enumerate(matrix):
            vals = ["%.17g" % v for v in row]
            if first_column is not None:
                vals.insert(0, str(int(first_column[i])))
            fh.write(",".join(vals) + "\n")


def persist_dataset(ds: Dataset, path) -> None:
    path = Path(path)
    header = ["label"] + [f"x{k}" for k in range(ds.d)]
    write_matrix_csv(path, ds.inputs, header, first_column=ds.labels)
    manifest = {
        "schema_version": SCHEMA_VERSION,
        "config": _jsonable(ds.provenance),
        "n": ds.n,
        "d": ds.d,
        "C": ds.class_count,
        "sha256": content_hash(ds.inputs, ds.labels),
    }
    manifest_path(path).write_text(json.dumps(manifest, indent=2, sort_keys=True) + "\n")


def load_dataset(path) -> Dataset:
    path = Path(path)
    mpath = manifest_path(path)
    try:
        manifest = json.loads(mpath.read_text())
    except (OSError, json.JSONDecodeError) as exc:
        raise DatasetFormatError(f"cannot read manifest {mpath}: {exc}") from exc
    missing = {"schema_version", "config", "n", "d", "C", "sha256"} - set(manifest)
    if missing:
        raise DatasetFormatError(f"manifest lacks keys {sorted(missing)}")

    try:
        lines = path.read_text().splitlines()
    except OSError as exc:
        raise DatasetFormatError(f"cannot read {path}: {exc}") from exc
    if not lines:
        raise DatasetFormatError("empty dataset file")
    header = lines[0].split(",")
    d = manifest["d"]
    if header != ["label"] + [f"x{k}" for k in range(d)]:
        raise DatasetFormatError(f"header does not match d={d} from the manifest")
    rows = [ln for ln in lines[1:] if ln.strip()]
    if len(rows) != manifest["n"]:
        raise DatasetFormatError(f"manifest says n={manifest['n']} but file has {len(rows)} rows")

    labels = np.empty(len(rows), dtype=np.int64)
    inputs = np.empty((len(rows), d))
    for i, ln in enumerate(rows):
        parts = ln.split(",")
        if len(parts) != d + 1:
            raise DatasetFormatError(f"row {i} has {len(parts) - 1} values, expected {d}")
        try:
            labels[i] = int(parts[0])
            inputs[i] = [float(v) for v in parts[1:]]
        except ValueError as exc:
            raise DatasetFormatError(f"row {i}: {exc}") from exc

    if content_hash(inputs, labels) != manifest["sha256"]:
        raise DatasetFormatError("content hash mismatch")
    try:
        return Dataset(inputs, labels, int(manifest["C"]), manifest["config"])
    except ConfigError as exc:
        raise DatasetFormatError(str(exc)) from exc
