"""Config-driven experiments: validation, per-trial seeding, artifacts, aggregation.

A run directory holds one ``trial_NNNN`` subdirectory per trial (its own
``results.csv`` plus module artifacts), a combined ``results.csv`` and a
``run_record.json``. Result CSVs carry no timestamps, so repeated runs of the
same config produce byte-identical files.
"""

from __future__ import annotations

import csv
import dataclasses
import hashlib
import json
import time
import traceback
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np
import yaml

from . import __version__
from .datagen import ImbalanceProfile, ToyConfig, gen_longtail_counts, gen_longtail_gaussian, gen_toy
from .density import KdeConfig, compute_weights, export_weights_csv
from .errors import ConfigError
from .evaluation import ProbeConfig, generalization_gap, relative_gap, train_probe
from .features import FeatureMap, save_feature_map
from .sam import SamConfig, train
from .spectral import SslObjective, empirical_second_moment, solve_spectral
from .theory import (
    MARGIN_CONSTANT,
    constructed_classifier_check,
    data_matrix_check,
    loglog_slope,
    theorem_trial,
    verify_gaussian_properties,
)

KINDS = ("toy-theorem", "rwsam-pipeline", "gap-study", "lemma-checks")


def _mix(a, b):
    digest = hashlib.sha256(f"{a}:{b}".encode()).digest()
    return int.from_bytes(digest[:8], "big") >> 1


def trial_seed(master_seed, trial_index):
    """First 63 bits of ``sha256("<master>:<trial>")``: stateless and platform independent."""
    return _mix(int(master_seed), int(trial_index))


def sub_seed(seed, tag):
    """Independent stream for one role (``"held"``, ``"stage1"``...) inside a trial."""
    return _mix(int(seed), str(tag))


# ---------------------------------------------------------------------------
# config schema


@dataclass
class ToySection:
    d_grid: list = field(default_factory=lambda: [256])
    n1: int = 2000
    n2: int = 2000
    m: int = 2


@dataclass
class LemmaSection:
    d: int = 1024
    n1: int = 2000
    n2: int = 2000
    c_m: float = MARGIN_CONSTANT
    c_u: float | None = None
    samples_u: int = 1000


def _stage1_default():
    return SamConfig(sam_radius_rho=0.0, learning_rate=0.003, steps=1500)


def _stage2_default():
    return SamConfig(sam_radius_rho=2.0, learning_rate=0.003, steps=1500)


@dataclass
class RwsamSection:
    counts: list = field(default_factory=lambda: [500] * 5 + [5] * 5)
    dim: int = 384
    mean_scale: float = 20.0
    noise_scale: float = 1.0
    m: int = 10
    perturb_scale: float = 1.0
    heldout_per_class: int = 200
    probe_per_class: int = 100
    draws: int = 64
    stage1: SamConfig = field(default_factory=_stage1_default)
    stage2: SamConfig = field(default_factory=_stage2_default)
    # a fixed bandwidth on standardized features; the median heuristic smooths
    # the rare clusters into the frequent ones at this dimension
    kde: KdeConfig = field(default_factory=lambda: KdeConfig(bandwidth_h=0.3, alpha=1.2))
    probe: ProbeConfig = field(default_factory=ProbeConfig)


@dataclass
class GapSection:
    profile: ImbalanceProfile = field(
        default_factory=lambda: ImbalanceProfile(C=10, shape="exponential", base_count=500, ratio_r=0.1)
    )
    dim: int = 64
    mean_scale: float = 3.0
    noise_scale: float = 1.0
    m: int = 10
    probe_train_per_class: int = 100
    probe_test_per_class: int = 200
    probe: ProbeConfig = field(default_factory=ProbeConfig)


SECTIONS = {"toy-theorem": ("toy", ToySection), "lemma-checks": ("lemma", LemmaSection),
            "rwsam-pipeline": ("rwsam", RwsamSection), "gap-study": ("gap", GapSection)}
NESTED = {
    RwsamSection: {"stage1": SamConfig, "stage2": SamConfig, "kde": KdeConfig, "probe": ProbeConfig},
    GapSection: {"profile": ImbalanceProfile, "probe": ProbeConfig},
}


def _coerce(v, default, where):
    # YAML reads 1e-5 as a string and 2 as an int; follow the default's type
    if isinstance(default, float) and not isinstance(default, bool):
        if isinstance(v, (int, str)) and not isinstance(v, bool):
            try:
                return float(v)
            except ValueError as exc:
                raise ConfigError(f"{where} must be a number, got {v!r}") from exc
    if isinstance(default, int) and not isinstance(default, bool) and isinstance(v, float) and v.is_integer():
        return int(v)
    return v


def _canon(v):
    if isinstance(v, dict):
        return {k: _canon(x) for k, x in v.items()}
    if isinstance(v, (list, tuple)):
        return [_canon(x) for x in v]
    if isinstance(v, float) and v.is_integer():
        return int(v)
    return v


def _build(cls, data, where):
    if data is None:
        data = {}
    if not isinstance(data, dict):
        raise ConfigError(f"{where} must be a mapping")
    names = {f.name for f in dataclasses.fields(cls)}
    unknown = sorted(set(data) - names)
    if unknown:
        raise ConfigError(f"unknown key(s) {unknown} in {where}")
    nested = NESTED.get(cls, {})
    try:
        defaults = cls()
    except TypeError:
        defaults = None
    kwargs = {}
    for k, v in data.items():
        if k in nested:
            base = dataclasses.asdict(getattr(defaults, k))
            base.update(v or {})
            kwargs[k] = _build(nested[k], base, f"{where}.{k}")
        else:
            kwargs[k] = _coerce(v, getattr(defaults, k, None), f"{where}.{k}")
    try:
        obj = cls(**kwargs)
    except TypeError as exc:
        raise ConfigError(f"{where}: {exc}") from exc
    if hasattr(obj, "validate"):
        obj.validate()
    return obj


@dataclass
class ExperimentConfig:
    kind: str
    master_seed: int = 0
    output_dir: str = "runs/out"
    trial_count: int = 1
    section: object = None

    @classmethod
    def from_dict(cls, data):
        if not isinstance(data, dict):
            raise ConfigError("config must be a mapping")
        kind = data.get("kind")
        if kind not in KINDS:
            raise ConfigError(f"kind must be one of {KINDS}, got {kind!r}")
        sec_name, sec_cls = SECTIONS[kind]
        allowed = {"kind", "master_seed", "output_dir", "trial_count", sec_name}
        unknown = sorted(set(data) - allowed)
        if unknown:
            raise ConfigError(f"unknown key(s) {unknown} for kind {kind!r}")
        cfg = cls(
            kind=kind,
            master_seed=data.get("master_seed", 0),
            output_dir=data.get("output_dir", "runs/out"),
            trial_count=data.get("trial_count", 1),
            section=_build(sec_cls, data.get(sec_name), sec_name),
        )
        cfg.validate()
        return cfg

    @classmethod
    def load(cls, path):
        try:
            data = yaml.safe_load(Path(path).read_text())
        except (OSError, yaml.YAMLError) as exc:
            raise ConfigError(f"cannot read config {path}: {exc}") from exc
        return cls.from_dict(data)

    def validate(self):
        if not isinstance(self.master_seed, int) or self.master_seed < 0:
            raise ConfigError("master_seed must be a non-negative integer")
        if not isinstance(self.trial_count, int) or self.trial_count < 1:
            raise ConfigError("trial_count must be a positive integer")
        if self.kind == "toy-theorem":
            grid = self.section.d_grid
            if not grid or any(int(d) != d or d < 3 for d in grid):
                raise ConfigError("toy.d_grid must be a non-empty list of integers >= 3")

    def to_dict(self):
        sec_name, _ = SECTIONS[self.kind]
        return {
            "kind": self.kind,
            "master_seed": self.master_seed,
            "output_dir": self.output_dir,
            "trial_count": self.trial_count,
            sec_name: dataclasses.asdict(self.section),
        }

    def semantic_dict(self):
        """Everything that determines the numbers; ``output_dir`` is excluded."""
        d = self.to_dict()
        d.pop("output_dir")
        return d

    def config_hash(self):
        canon = json.dumps(_canon(self.semantic_dict()), sort_keys=True, separators=(",", ":"))
        return hashlib.sha256(canon.encode()).hexdigest()


@dataclass
class RunRecord:
    config_hash: str
    kind: str
    master_seed: int
    trial_seeds: list
    outputs: dict
    failures: dict
    wall_time: float
    version: str = __version__

    @property
    def status(self):
        return "partial" if self.failures else "ok"


# ---------------------------------------------------------------------------
# trial bodies; each returns result rows and writes artifacts into tdir


def _fmt(v):
    if isinstance(v, (float, np.floating)):
        return repr(float(v))
    if isinstance(v, (bool, np.bool_)):
        return str(bool(v))
    return v


def write_rows(path, rows, fields=None):
    fields = fields or list(rows[0].keys())
    with open(path, "w", newline="") as fh:
        w = csv.DictWriter(fh, fieldnames=fields, lineterminator="\n")
        w.writeheader()
        for r in rows:
            w.writerow({k: _fmt(r.get(k, "")) for k in fields})


def _trial_toy(sec: ToySection, seed, tdir):
    rows = []
    for d in sec.d_grid:
        r = theorem_trial(int(d), seed, sec.n1, sec.n2, m=sec.m)
        r.pop("error")
        rows.append(r)
    return rows


def _trial_lemma(sec: LemmaSection, seed, tdir):
    cfg = ToyConfig.theorem_defaults(sec.d, sec.n1, sec.n2, seed)
    ds = gen_toy(cfg)
    checks = [
        verify_gaussian_properties(ds.noise),
        constructed_classifier_check(ds, cfg, sec.c_m),
        data_matrix_check(empirical_second_moment(ds), sec.samples_u, cfg, sec.c_u, seed=sub_seed(seed, "u")),
    ]
    (tdir / "lemmas.json").write_text(json.dumps([c.to_dict() for c in checks], indent=2, sort_keys=True, default=str) + "\n")
    rows = []
    for c in checks:
        for q, val in c.measured.items():
            rows.append(
                {
                    "lemma": c.name,
                    "quantity": q,
                    "measured": float(val),
                    "bound": float(c.bounds[q]) if q in c.bounds else "",
                    "passed": c.flags.get(q, ""),
                }
            )
    return rows


def _balanced(counts_len, per_class, dim, mean_scale, noise_scale, seed, sample_seed):
    return gen_longtail_gaussian([per_class] * counts_len, dim, mean_scale, noise_scale, seed, sample_seed)


def _trial_rwsam(sec: RwsamSection, seed, tdir):
    C = len(sec.counts)
    ds = gen_longtail_gaussian(sec.counts, sec.dim, sec.mean_scale, sec.noise_scale, seed)
    held = _balanced(C, sec.heldout_per_class, sec.dim, sec.mean_scale, sec.noise_scale, seed, sub_seed(seed, "held"))
    ptr = _balanced(C, sec.probe_per_class, sec.dim, sec.mean_scale, sec.noise_scale, seed, sub_seed(seed, "ptr"))
    pte = _balanced(C, sec.probe_per_class, sec.dim, sec.mean_scale, sec.noise_scale, seed, sub_seed(seed, "pte"))

    obj = SslObjective(ds.inputs, sec.m, sec.perturb_scale)
    s1 = dataclasses.replace(sec.stage1, seed=sub_seed(seed, "stage1"))
    s2 = dataclasses.replace(sec.stage2, seed=sub_seed(seed, "stage2"))
    stage1 = train(obj, s1, mode="sgd", stop_rel_change=1e-5)
    wv = compute_weights(obj.features(stage1.params), sec.kde)
    export_weights_csv(wv, tdir / "weights.csv")
    rows = []
    for method in ("sgd", "rwsam"):
        tr = train(obj, s2, weights=wv if method == "rwsam" else None, mode=method, init_params=stage1.params)
        fm = FeatureMap(obj.unflatten(tr.params), "ssl_trained", {"stage2_mode": method})
        save_feature_map(fm, tdir / f"features_{method}.csv")
        gg = generalization_gap(obj, tr.params, ds, held, draws=sec.draws, seed=sub_seed(seed, "gap"))
        probe = train_probe(fm, ptr, pte, sec.probe)
        rows.append(
            {
                "method": method,
                "acc": probe.top1_accuracy,
                "gap_freq": gg.group_gap["frequent"],
                "gap_rare": gg.group_gap["rare"],
                "final_loss": float(tr.losses[-1]) if tr.steps_run else float("nan"),
            }
        )
    return rows


def _trial_gap(sec: GapSection, seed, tdir):
    counts = gen_longtail_counts(sec.profile)
    C, n = len(counts), int(sum(counts))
    bal = [n // C + (1 if c < n % C else 0) for c in range(C)]
    kw = dict(dim=sec.dim, mean_scale=sec.mean_scale, noise_scale=sec.noise_scale, seed=seed)
    imb_ds = gen_longtail_gaussian(counts, sample_seed=sub_seed(seed, "imb"), **kw)
    bal_ds = gen_longtail_gaussian(bal, sample_seed=sub_seed(seed, "bal"), **kw)
    ptr = gen_longtail_gaussian([sec.probe_train_per_class] * C, sample_seed=sub_seed(seed, "ptr"), **kw)
    pte = gen_longtail_gaussian([sec.probe_test_per_class] * C, sample_seed=sub_seed(seed, "pte"), **kw)
    acc = {}
    for tag, data in (("balanced", bal_ds), ("imbalanced", imb_ds)):
        fm, _ = solve_spectral(empirical_second_moment(data), sec.m)
        save_feature_map(fm, tdir / f"features_{tag}.csv")
        acc[tag] = train_probe(fm, ptr, pte, sec.probe).top1_accuracy
    rep = relative_gap(acc["balanced"], acc["imbalanced"], n, sec.profile.ratio_r)
    return [
        {
            "method": "ssl",
            "n": n,
            "r": sec.profile.ratio_r,
            "a_balanced": rep.a_balanced,
            "a_imbalanced": rep.a_imbalanced,
            "delta": rep.delta,
        }
    ]


TRIALS = {"toy-theorem": _trial_toy, "lemma-checks": _trial_lemma, "rwsam-pipeline": _trial_rwsam, "gap-study": _trial_gap}


def _run_trial(args):
    kind, section, index, seed, out_dir = args
    tdir = Path(out_dir) / f"trial_{index:04d}"
    tdir.mkdir(parents=True, exist_ok=True)
    try:
        rows = TRIALS[kind](section, seed, tdir)
    except Exception as exc:  # quarantined per trial; the run continues
        err = {"trial": index, "seed": seed, "error": f"{type(exc).__name__}: {exc}", "traceback": traceback.format_exc()}
        (tdir / "error.json").write_text(json.dumps(err, indent=2, sort_keys=True) + "\n")
        return index, None, err["error"]
    rows = [{"trial": index, "seed": seed, **r} for r in rows]
    write_rows(tdir / "results.csv", rows)
    return index, rows, None


def run_experiment(cfg: ExperimentConfig, jobs=1) -> RunRecord:
    """Run every trial of ``cfg`` and write the combined results and a run record.

    Trial ``i`` uses ``trial_seed(master_seed, i)``. Failed trials leave an
    ``error.json`` and are listed in the record.
    """
    t0 = time.perf_counter()
    out = Path(cfg.output_dir)
    out.mkdir(parents=True, exist_ok=True)
    (out / "config.json").write_text(json.dumps(cfg.to_dict(), indent=2, sort_keys=True) + "\n")
    seeds = [trial_seed(cfg.master_seed, i) for i in range(cfg.trial_count)]
    tasks = [(cfg.kind, cfg.section, i, s, str(out)) for i, s in enumerate(seeds)]
    if jobs > 1 and len(tasks) > 1:
        with ProcessPoolExecutor(max_workers=jobs) as pool:
            results = list(pool.map(_run_trial, tasks))
    else:
        results = [_run_trial(t) for t in tasks]
    results.sort(key=lambda t: t[0])

    all_rows, failures = [], {}
    for index, rows, err in results:
        if err is not None:
            failures[index] = err
        else:
            all_rows.extend(rows)
    outputs = {"config": "config.json", "trials": [f"trial_{i:04d}" for i in range(cfg.trial_count)]}
    if all_rows:
        write_rows(out / "results.csv", all_rows)
        outputs["results"] = "results.csv"
    record = RunRecord(cfg.config_hash(), cfg.kind, cfg.master_seed, seeds, outputs, failures, time.perf_counter() - t0)
    (out / "run_record.json").write_text(
        json.dumps({**dataclasses.asdict(record), "status": record.status}, indent=2, sort_keys=True) + "\n"
    )
    return record


# ---------------------------------------------------------------------------
# aggregation

KEY_COLUMNS = ("d", "method", "lemma", "quantity", "n", "r")
SKIP_COLUMNS = ("trial", "seed")


def _num(v):
    if v in ("True", "False"):
        return 1.0 if v == "True" else 0.0
    try:
        return float(v)
    except (TypeError, ValueError):
        return None


def read_trial_rows(paths):
    rows = []
    for p in paths:
        with open(p, newline="") as fh:
            rows.extend(csv.DictReader(fh))
    # fold over sorted trial ids so the input order never matters
    rows.sort(key=lambda r: tuple(str(r.get(k, "")) for k in ("trial",) + KEY_COLUMNS))
    rows.sort(key=lambda r: int(r["trial"]))
    return rows


def aggregate(rows):
    """Median, quartiles and IQR of every numeric column per key group."""
    if not rows:
        raise ConfigError("no trial results to aggregate")
    cols = list(rows[0].keys())
    keys = [k for k in KEY_COLUMNS if k in cols]
    metrics = [c for c in cols if c not in keys and c not in SKIP_COLUMNS]
    groups = {}
    for r in rows:
        groups.setdefault(tuple(r[k] for k in keys), []).append(r)

    def sort_key(g):
        return tuple((0, _num(v)) if _num(v) is not None else (1, v) for v in g)

    table = []
    for g in sorted(groups, key=sort_key):
        members = groups[g]
        for mname in metrics:
            vals = np.array([v for v in (_num(r[mname]) for r in members) if v is not None and np.isfinite(v)])
            if vals.size == 0:
                continue
            q25, med, q75 = np.percentile(vals, [25, 50, 75])
            table.append(
                {**dict(zip(keys, g)), "metric": mname, "count": int(vals.size), "median": float(med),
                 "q25": float(q25), "q75": float(q75), "iqr": float(q75 - q25)}
            )
    return keys, table


def report(run_dir, trial_paths=None):
    """Aggregate a run directory into ``summary.csv``, ``summary.json`` and, for sweeps, ``long.csv``."""
    run_dir = Path(run_dir)
    if trial_paths is None:
        trial_paths = sorted(run_dir.glob("trial_*/results.csv"))
    if not trial_paths:
        raise FileNotFoundError(f"no trial results under {run_dir}")
    rows = read_trial_rows(trial_paths)
    keys, table = aggregate(rows)
    write_rows(run_dir / "summary.csv", table, keys + ["metric", "count", "median", "q25", "q75", "iqr"])
    summary = {"trials": len({r["trial"] for r in rows}), "table": table}
    if "d" in keys and "leakage" in rows[0]:
        long_rows = []
        for r in rows:
            long_rows.append({"d": r["d"], "trial": r["trial"], "metric": "leakage", "value": _num(r["leakage"])})
            long_rows.append(
                {"d": r["d"], "trial": r["trial"], "metric": "one_minus_capture", "value": 1.0 - _num(r["capture"])}
            )
        long_rows.sort(key=lambda r: (int(r["d"]), r["metric"], int(r["trial"])))
        write_rows(run_dir / "long.csv", long_rows, ["d", "metric", "trial", "value"])
        med = {m: [t["median"] for t in table if t["metric"] == m] for m in ("leakage", "capture")}
        grid = [int(t["d"]) for t in table if t["metric"] == "leakage"]
        summary["slope_leakage"] = loglog_slope(grid, med["leakage"])
        summary["slope_one_minus_capture"] = loglog_slope(grid, [1.0 - c for c in med["capture"]])
    (run_dir / "summary.json").write_text(json.dumps(summary, indent=2, sort_keys=True) + "\n")
    return summary

