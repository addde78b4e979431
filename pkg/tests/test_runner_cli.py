import csv
import json
import random
import shutil
import subprocess
import sys
from fractions import Fraction

import pytest
import yaml

from imbalanced_ssl.cli import EXIT_CONFIG, EXIT_FATAL, EXIT_OK, EXIT_PARTIAL, main
from imbalanced_ssl.datagen import gen_longtail_counts, load_dataset
from imbalanced_ssl.errors import ConfigError
from imbalanced_ssl.runner import (
    ExperimentConfig,
    aggregate,
    read_trial_rows,
    report,
    run_experiment,
    sub_seed,
    trial_seed,
)

SMALL_GAP = {"profile": {"C": 4, "base_count": 60, "ratio_r": 0.2}, "dim": 8, "m": 4,
             "probe_train_per_class": 20, "probe_test_per_class": 30}


def read_csv(path):
    with open(path, newline="") as fh:
        return list(csv.DictReader(fh))


def toy_cfg(out, trials=1, **toy):
    return ExperimentConfig.from_dict(
        {"kind": "toy-theorem", "output_dir": str(out), "trial_count": trials,
         "toy": {"d_grid": [64], "n1": 40, "n2": 40, **toy}}
    )


def test_trial_seed_is_documented_mix():
    import hashlib

    expect = int.from_bytes(hashlib.sha256(b"7:3").digest()[:8], "big") >> 1
    assert trial_seed(7, 3) == expect
    assert trial_seed(7, 3) != trial_seed(7, 4) != trial_seed(8, 3)
    assert 0 <= trial_seed(2**40, 10**6) < 2**63
    assert sub_seed(5, "held") != sub_seed(5, "stage1")


def test_toy_smoke(tmp_path):
    rec = run_experiment(toy_cfg(tmp_path))
    rows = read_csv(tmp_path / "results.csv")
    assert len(rows) == 1 and rows[0]["d"] == "64"
    assert 0 <= float(rows[0]["capture"]) <= 1
    assert rec.status == "ok" and rec.trial_seeds == [trial_seed(0, 0)]
    record = json.loads((tmp_path / "run_record.json").read_text())
    assert record["config_hash"] == rec.config_hash and "version" in record


def test_byte_identical_reruns(tmp_path):
    for name in ("a", "b"):
        run_experiment(toy_cfg(tmp_path / name, trials=2))
        report(tmp_path / name)
    for f in ("results.csv", "trial_0000/results.csv", "trial_0001/results.csv", "summary.csv", "long.csv"):
        assert (tmp_path / "a" / f).read_bytes() == (tmp_path / "b" / f).read_bytes()


def test_parallel_matches_serial(tmp_path):
    run_experiment(toy_cfg(tmp_path / "s", trials=2))
    run_experiment(toy_cfg(tmp_path / "p", trials=2), jobs=2)
    assert (tmp_path / "s/results.csv").read_bytes() == (tmp_path / "p/results.csv").read_bytes()


def test_gap_study_delta_recomputable(tmp_path):
    cfg = ExperimentConfig.from_dict({"kind": "gap-study", "output_dir": str(tmp_path), "trial_count": 2, "gap": SMALL_GAP})
    run_experiment(cfg)
    rows = read_csv(tmp_path / "results.csv")
    assert len(rows) == 2
    for r in rows:
        a, b = Fraction(r["a_balanced"]), Fraction(r["a_imbalanced"])
        assert float((a - b) / a) == float(r["delta"])
        assert int(r["n"]) == sum(gen_longtail_counts(cfg.section.profile))


def test_report_single_trial_iqr_zero(tmp_path):
    run_experiment(toy_cfg(tmp_path))
    summary = report(tmp_path)
    assert summary["trials"] == 1
    for row in summary["table"]:
        assert row["count"] == 1 and row["iqr"] == 0.0
    assert summary["slope_leakage"] is None


def test_report_counts_every_trial(tmp_path):
    trial_rows = [{"trial": str(i), "seed": "0", "d": "64", "leakage": str(i / 10)} for i in range(10)]
    _, table = aggregate(trial_rows)
    assert table[0]["count"] == 10 and table[0]["median"] == pytest.approx(0.45)


def test_report_shuffle_invariant(tmp_path):
    run_experiment(toy_cfg(tmp_path, trials=3, d_grid=[64, 128]))
    paths = sorted(tmp_path.glob("trial_*/results.csv"))
    report(tmp_path, paths)
    ref = (tmp_path / "summary.csv").read_bytes(), (tmp_path / "long.csv").read_bytes()
    random.Random(1).shuffle(paths)
    report(tmp_path, paths[::-1])
    assert ((tmp_path / "summary.csv").read_bytes(), (tmp_path / "long.csv").read_bytes()) == ref
    rows = read_trial_rows(paths)
    assert [r["trial"] for r in rows] == ["0", "0", "1", "1", "2", "2"]


def test_report_missing_artifacts(tmp_path):
    with pytest.raises(FileNotFoundError):
        report(tmp_path)


def test_config_hash_key_order_and_whitespace():
    a = yaml.safe_load("kind: toy-theorem\nmaster_seed: 3\ntoy:\n  n1: 40\n  d_grid: [64]\n")
    b = yaml.safe_load("toy: {d_grid: [64],   n1: 40.0}\nmaster_seed: 3\nkind: toy-theorem\noutput_dir: elsewhere\n")
    ha = ExperimentConfig.from_dict(a).config_hash()
    assert ha == ExperimentConfig.from_dict(b).config_hash()
    b["toy"]["n1"] = 41
    assert ha != ExperimentConfig.from_dict(b).config_hash()


@pytest.mark.parametrize(
    "data",
    [
        {"kind": "toy-theorem", "bogus": 1},
        {"kind": "toy-theorem", "toy": {"dgrid": [64]}},
        {"kind": "rwsam-pipeline", "rwsam": {"stage2": {"radius": 1}}},
        {"kind": "nope"},
        {"kind": "toy-theorem", "trial_count": 0},
        {"kind": "gap-study", "gap": {"profile": {"ratio_r": 0}}},
    ],
)
def test_invalid_configs(data):
    with pytest.raises(ConfigError):
        ExperimentConfig.from_dict(data)


def test_rwsam_section_nested_overrides():
    cfg = ExperimentConfig.from_dict({"kind": "rwsam-pipeline", "rwsam": {"stage2": {"steps": 10}, "kde": {"alpha": 0.5}}})
    assert cfg.section.stage2.steps == 10
    assert cfg.section.stage2.sam_radius_rho == 2.0
    assert cfg.section.kde.alpha == 0.5 and cfg.section.kde.bandwidth_h == 0.3


# CLI


def test_cli_unknown_key_exit_2(tmp_path, capsys):
    cfg = tmp_path / "c.yaml"
    cfg.write_text("toy:\n  d_grid: [64]\n  extra: 1\n")
    assert main(["sweep", "--config", str(cfg), "--out", str(tmp_path / "o")]) == EXIT_CONFIG
    assert "unknown" in capsys.readouterr().err


def test_cli_kind_mismatch_exit_2(tmp_path):
    cfg = tmp_path / "c.yaml"
    cfg.write_text("kind: gap-study\n")
    assert main(["sweep", "--config", str(cfg)]) == EXIT_CONFIG


def test_cli_partial_failure_exit_3(tmp_path):
    # a spectral rank above d fails inside every trial, after validation
    code = main(["sweep", "--out", str(tmp_path), "--trials", "2", "--set", "toy.d_grid=[64]",
                 "--set", "toy.n1=10", "--set", "toy.n2=10", "--set", "toy.m=100"])
    assert code == EXIT_PARTIAL
    rec = json.loads((tmp_path / "run_record.json").read_text())
    assert rec["status"] == "partial" and set(rec["failures"]) == {"0", "1"}
    assert (tmp_path / "trial_0000/error.json").exists()


def test_cli_fatal_exit_4(tmp_path):
    assert main(["solve-sl", "--data", str(tmp_path / "missing.csv")]) == EXIT_FATAL


def test_cli_sweep_and_report(tmp_path, capsys):
    out = tmp_path / "run"
    code = main(["sweep", "--out", str(out), "--seed", "5", "--trials", "2", "--set", "toy.d_grid=[64, 128]",
                 "--set", "toy.n1=30", "--set", "toy.n2=30"])
    assert code == EXIT_OK
    printed = json.loads(capsys.readouterr().out)
    assert printed["failures"] == {}
    summary = json.loads((out / "summary.json").read_text())
    assert summary["trials"] == 2 and isinstance(summary["slope_leakage"], float)
    (out / "summary.csv").unlink()
    assert main(["report", "--run", str(out)]) == EXIT_OK
    assert (out / "summary.csv").exists()


def test_cli_gen_solve_probe(tmp_path, capsys):
    data = tmp_path / "toy.csv"
    assert main(["gen", "--generator", "toy", "--seed", "3", "--out", str(data),
                 "--set", "d=16", "--set", "n1=10", "--set", "n2=10", "--set", "n3=4"]) == EXIT_OK
    ds = load_dataset(data)
    assert ds.n == 24 and ds.provenance["seed"] == 3
    assert main(["solve-sl", "--data", str(data), "--out", str(tmp_path / "sl.csv")]) == EXIT_OK
    assert main(["solve-ssl", "--data", str(data), "--rank", "2", "--out", str(tmp_path / "ssl.csv")]) == EXIT_OK
    lt_tr, lt_te = tmp_path / "tr.csv", tmp_path / "te.csv"
    for path, seed in ((lt_tr, 1), (lt_te, 2)):
        assert main(["gen", "--generator", "longtail", "--out", str(path), "--set", "dim=16", "--set", f"seed={seed}",
                     "--set", "C=3", "--set", "base_count=20", "--set", "shape=balanced"]) == EXIT_OK
    capsys.readouterr()
    assert main(["probe", "--features", str(tmp_path / "ssl.csv"), "--train", str(lt_tr), "--test", str(lt_te)]) == EXIT_OK
    assert 0 <= json.loads(capsys.readouterr().out)["top1_accuracy"] <= 1
    assert main(["gen", "--generator", "toy", "--set", "bogus=1", "--out", str(data)]) == EXIT_CONFIG
    assert main(["gen", "--generator", "toy", "--set", "n1=5", "--out", str(data)]) == EXIT_CONFIG


def test_cli_toy_n3_default_and_nested_outputs(tmp_path):
    data = tmp_path / "a" / "toy.csv"
    assert main(["gen", "--generator", "toy", "--out", str(data), "--set", "d=32", "--set", "n1=6", "--set", "n2=6"]) == EXIT_OK
    assert load_dataset(data).n == 12 + 2  # ceil(32 ** 0.2) == 2
    assert main(["solve-ssl", "--data", str(data), "--out", str(tmp_path / "b" / "c" / "ssl.csv")]) == EXIT_OK


def test_cli_verify_gap_rwsam_smoke(tmp_path):
    assert main(["verify", "--out", str(tmp_path / "v"), "--set", "lemma.d=64", "--set", "lemma.n1=50",
                 "--set", "lemma.n2=50", "--set", "lemma.samples_u=20"]) in (EXIT_OK,)
    rows = read_csv(tmp_path / "v/results.csv")
    assert {r["lemma"] for r in rows} == {"gaussian_properties", "constructed_classifier", "data_matrix"}
    gap = ["gap", "--out", str(tmp_path / "g")]
    for k, v in (("profile.C", 4), ("profile.base_count", 60), ("dim", 8), ("m", 4)):
        gap += ["--set", f"gap.{k}={v}"]
    assert main(gap) == EXIT_OK
    rw = ["rwsam", "--out", str(tmp_path / "r")]
    for k, v in (("counts", "[40, 40, 4, 4]"), ("dim", 8), ("m", 3), ("mean_scale", 3.0), ("heldout_per_class", 10),
                 ("probe_per_class", 10), ("draws", 4), ("stage1.steps", 20), ("stage2.steps", 20)):
        rw += ["--set", f"rwsam.{k}={v}"]
    assert main(rw) == EXIT_OK
    assert {r["method"] for r in read_csv(tmp_path / "r/results.csv")} == {"sgd", "rwsam"}
    assert (tmp_path / "r/trial_0000/weights.csv").exists()


def test_module_entry_point(tmp_path):
    if shutil.which(sys.executable) is None:
        pytest.skip("no interpreter path")
    proc = subprocess.run([sys.executable, "-m", "imbalanced_ssl", "sweep", "--set", "toy.bad=1"],
                          capture_output=True, text=True, cwd=tmp_path)
    assert proc.returncode == EXIT_CONFIG
