"""Command-line entry point.

Exit codes: 0 success, 2 configuration error, 3 some trials failed, 4 fatal.
"""

from __future__ import annotations

import argparse
import json
import logging
import sys
from dataclasses import MISSING, fields
from pathlib import Path

import yaml

from .datagen import (
    ImbalanceProfile,
    SemiSynthConfig,
    ToyConfig,
    gen_longtail_counts,
    gen_longtail_gaussian,
    gen_semisynthetic,
    gen_toy,
    load_dataset,
    persist_dataset,
)
from .errors import ConfigError
from .evaluation import ProbeConfig, train_probe
from .features import load_feature_map, save_feature_map
from .maxmargin import solve_maxmargin_qp
from .runner import ExperimentConfig, report, run_experiment
from .spectral import empirical_second_moment, solve_spectral

log = logging.getLogger("imbalanced_ssl")

EXIT_OK, EXIT_CONFIG, EXIT_PARTIAL, EXIT_FATAL = 0, 2, 3, 4
EXPERIMENTS = {"verify": "lemma-checks", "sweep": "toy-theorem", "rwsam": "rwsam-pipeline", "gap": "gap-study"}


def parse_sets(items):
    """``a.b=value`` pairs into a nested dict; values are parsed as YAML scalars or lists."""
    out = {}
    for item in items or []:
        if "=" not in item:
            raise ConfigError(f"--set expects key=value, got {item!r}")
        key, raw = item.split("=", 1)
        node = out
        parts = key.split(".")
        for p in parts[:-1]:
            node = node.setdefault(p, {})
        node[parts[-1]] = yaml.safe_load(raw)
    return out


def merge(base, extra):
    for k, v in extra.items():
        if isinstance(v, dict) and isinstance(base.get(k), dict):
            merge(base[k], v)
        else:
            base[k] = v
    return base


def _pick(cls, params, where):
    names = {f.name for f in fields(cls)}
    unknown = sorted(set(params) - names)
    if unknown:
        raise ConfigError(f"unknown {where} parameter(s) {unknown}")
    required = {f.name for f in fields(cls) if f.default is MISSING and f.default_factory is MISSING}
    missing = sorted(required - set(params))
    if missing:
        raise ConfigError(f"missing {where} parameter(s) {missing}")
    return dict(params)


def cmd_gen(args):
    params = parse_sets(args.set)
    if args.seed is not None:
        params["seed"] = args.seed
    if args.generator == "toy":
        if "d" in params and "n3" not in params:
            params["n3"] = ToyConfig.theorem_defaults(int(params["d"]), 1, 1).n3
        ds = gen_toy(ToyConfig(**_pick(ToyConfig, params, "toy")))
    elif args.generator == "semisynth":
        ds = gen_semisynthetic(SemiSynthConfig(**_pick(SemiSynthConfig, params, "semisynth")))
    else:
        data_keys = {"dim": 32, "mean_scale": 3.0, "noise_scale": 1.0, "seed": 0}
        data = {k: params.pop(k, v) for k, v in data_keys.items()}
        profile = ImbalanceProfile(**_pick(ImbalanceProfile, params, "profile"))
        ds = gen_longtail_gaussian(gen_longtail_counts(profile), **data)
    out = Path(args.out or "dataset.csv")
    out.parent.mkdir(parents=True, exist_ok=True)
    persist_dataset(ds, out)
    print(json.dumps({"path": str(out), "n": ds.n, "d": ds.d, "C": ds.class_count}))
    return EXIT_OK


def cmd_solve_sl(args):
    ds = load_dataset(args.data)
    sol = solve_maxmargin_qp(ds)
    out = Path(args.out or "features_sl.csv")
    save_feature_map(sol.feature_map, out)
    print(
        json.dumps(
            {
                "path": str(out),
                "objective": sol.objective,
                "min_margin": sol.min_margin,
                "kkt_residual": sol.kkt_residual,
                "sweeps": sol.iterations,
                "converged": sol.converged,
            }
        )
    )
    return EXIT_OK


def cmd_solve_ssl(args):
    ds = load_dataset(args.data)
    fm, rep = solve_spectral(empirical_second_moment(ds), args.rank)
    out = Path(args.out or "features_ssl.csv")
    save_feature_map(fm, out)
    print(
        json.dumps(
            {
                "path": str(out),
                "eigenvalues": [float(v) for v in rep.eigenvalues],
                "e2_coefficients": [float(v) for v in rep.e2_coefficients],
                "eigengap": rep.eigengap,
                "degenerate": rep.degenerate,
            }
        )
    )
    return EXIT_OK


def cmd_probe(args):
    fm = load_feature_map(args.features)
    res = train_probe(fm, load_dataset(args.train), load_dataset(args.test), ProbeConfig())
    payload = res.to_dict()
    if args.out:
        Path(args.out).write_text(json.dumps(payload, indent=2, sort_keys=True) + "\n")
    print(json.dumps(payload))
    return EXIT_OK


def build_experiment(kind, args):
    data = {"kind": kind}
    if args.config:
        try:
            loaded = yaml.safe_load(Path(args.config).read_text()) or {}
        except (OSError, yaml.YAMLError) as exc:
            raise ConfigError(f"cannot read config {args.config}: {exc}") from exc
        if not isinstance(loaded, dict):
            raise ConfigError("config must be a mapping")
        if loaded.get("kind", kind) != kind:
            raise ConfigError(f"config kind {loaded.get('kind')!r} does not match subcommand ({kind!r})")
        data.update(loaded)
    merge(data, parse_sets(args.set))
    if args.seed is not None:
        data["master_seed"] = args.seed
    if args.out is not None:
        data["output_dir"] = args.out
    if args.trials is not None:
        data["trial_count"] = args.trials
    return ExperimentConfig.from_dict(data)


def cmd_experiment(args):
    cfg = build_experiment(EXPERIMENTS[args.command], args)
    log.info("running %s with %d trial(s) into %s", cfg.kind, cfg.trial_count, cfg.output_dir)
    record = run_experiment(cfg, jobs=args.jobs)
    if "results" in record.outputs:
        report(cfg.output_dir)
    print(json.dumps({"output_dir": cfg.output_dir, "config_hash": record.config_hash, "failures": record.failures}))
    if record.failures:
        return EXIT_PARTIAL
    return EXIT_OK


def cmd_report(args):
    run_dir = args.run or args.out
    if run_dir is None:
        raise ConfigError("report needs --run or --out")
    summary = report(run_dir)
    print(json.dumps({"run": str(run_dir), "trials": summary["trials"]}))
    return EXIT_OK


def make_parser():
    common = argparse.ArgumentParser(add_help=False)
    common.add_argument("--config", help="YAML or JSON experiment config")
    common.add_argument("--seed", type=int, help="master seed (generator seed for gen)")
    common.add_argument("--out", help="output directory, or file for gen/solve/probe")
    common.add_argument("--trials", type=int, help="number of trials")
    common.add_argument("--jobs", type=int, default=1, help="parallel trials")
    common.add_argument("--set", action="append", metavar="KEY=VALUE", help="override a config entry (dotted keys)")
    common.add_argument("-v", "--verbose", action="store_true")

    p = argparse.ArgumentParser(prog="imbalanced-ssl", description=__doc__.splitlines()[0])
    sub = p.add_subparsers(dest="command", required=True)

    g = sub.add_parser("gen", parents=[common], help="generate and persist a dataset")
    g.add_argument("--generator", choices=("toy", "longtail", "semisynth"), default="toy")
    g.set_defaults(func=cmd_gen)

    s = sub.add_parser("solve-sl", parents=[common], help="min-norm max-margin features of a dataset")
    s.add_argument("--data", required=True)
    s.set_defaults(func=cmd_solve_sl)

    s = sub.add_parser("solve-ssl", parents=[common], help="spectral features of a dataset")
    s.add_argument("--data", required=True)
    s.add_argument("--rank", type=int, default=2)
    s.set_defaults(func=cmd_solve_ssl)

    for name, kind in EXPERIMENTS.items():
        e = sub.add_parser(name, parents=[common], help=f"run a {kind} experiment")
        e.set_defaults(func=cmd_experiment)

    pr = sub.add_parser("probe", parents=[common], help="linear probe of saved features")
    pr.add_argument("--features", required=True)
    pr.add_argument("--train", required=True)
    pr.add_argument("--test", required=True)
    pr.set_defaults(func=cmd_probe)

    r = sub.add_parser("report", parents=[common], help="aggregate a run directory")
    r.add_argument("--run")
    r.set_defaults(func=cmd_report)
    return p


def main(argv=None):
    parser = make_parser()
    args = parser.parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING, format="%(levelname)s %(message)s")
    try:
        return args.func(args)
    except ConfigError as exc:
        print(f"config error: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    except Exception as exc:
        print(f"fatal: {type(exc).__name__}: {exc}", file=sys.stderr)
        return EXIT_FATAL


if __name__ == "__main__":
    sys.exit(main())
