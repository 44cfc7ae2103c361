"""End-to-end command line: run, sweep, analyze, exit codes."""

import csv

import numpy as np
import pytest

from natsel.cli import (
    LAYOUT_AXIS,
    RHO_AXIS,
    SIGMA_AXIS,
    _read_scores,
    main,
    run_experiment,
    sweep,
)
from natsel.config import parse_config
from natsel.errors import ConfigError
from natsel.trainer import deterministic_csv_bytes, read_metrics_csv

quiet = lambda *args, **kwargs: None

BASE = """
[experiment]
label = demo
output_dir = {out}
seeds = 1,2

[dataset]
classes = 2
height = 4
width = 4
balanced_count = 8
test_per_class = 4
noise_std = 0.1

[model]
hidden = 8

[train]
batch_size = 8
epochs = 2
learning_rate = 0.5
momentum = 0.9

[grouping]
layout = 1x2

[weighting]
sigma = 0.7
rho = 1.0
"""


def write_config(tmp_path, name="config.ini", out="out", extra=""):
    path = tmp_path / name
    path.write_text(BASE.format(out=tmp_path / out) + extra)
    return path


class TestRun:
    def test_run_writes_all_artifacts(self, tmp_path):
        cfg_path = write_config(tmp_path)
        assert main(["run", str(cfg_path)]) == 0
        run_dir = tmp_path / "out" / "demo"
        for name in ("config.ini", "aggregate.csv", "metrics_1.csv",
                     "metrics_2.csv", "checkpoint_1.bin", "checkpoint_2.bin",
                     "scores_1.csv", "scores_2.csv"):
            assert (run_dir / name).exists(), name

    def test_archived_config_reparses_to_effective_settings(self, tmp_path):
        main(["run", str(write_config(tmp_path))])
        archived = (tmp_path / "out" / "demo" / "config.ini").read_text()
        cfg = parse_config(archived)
        assert cfg.train.weighting.strategy == "ns_ws"
        assert cfg.seeds == (1, 2)
        assert cfg.train.batch_size == 8

    def test_reruns_are_deterministic(self, tmp_path):
        main(["run", str(write_config(tmp_path, "a.ini", out="out_a"))])
        main(["run", str(write_config(tmp_path, "b.ini", out="out_b"))])
        for seed in (1, 2):
            a = tmp_path / "out_a" / "demo" / f"metrics_{seed}.csv"
            b = tmp_path / "out_b" / "demo" / f"metrics_{seed}.csv"
            assert deterministic_csv_bytes(a) == deterministic_csv_bytes(b)
            ca = (tmp_path / "out_a" / "demo" / f"checkpoint_{seed}.bin")
            cb = (tmp_path / "out_b" / "demo" / f"checkpoint_{seed}.bin")
            assert ca.read_bytes() == cb.read_bytes()

    def test_uniform_weighting_skips_score_log(self, tmp_path):
        cfg_path = write_config(tmp_path)
        assert main(["run", str(cfg_path), "--rho", "0.0",
                     "--label", "plain"]) == 0
        run_dir = tmp_path / "out" / "plain"
        assert (run_dir / "metrics_1.csv").exists()
        assert not (run_dir / "scores_1.csv").exists()

    def test_aggregate_matches_per_seed_metrics(self, tmp_path):
        main(["run", str(write_config(tmp_path))])
        run_dir = tmp_path / "out" / "demo"
        per_seed = {s: read_metrics_csv(run_dir / f"metrics_{s}.csv")
                    for s in (1, 2)}
        with open(run_dir / "aggregate.csv", newline="") as fh:
            rows = list(csv.reader(fh))
        assert rows[0] == ["epoch", "split", "mean_loss_mean",
                           "mean_loss_std", "accuracy_mean", "accuracy_std",
                           "seed_count"]
        assert len(rows) - 1 == len(per_seed[1])
        for i, row in enumerate(rows[1:]):
            recs = [per_seed[s][i] for s in (1, 2)]
            assert int(row[0]) == recs[0].epoch
            assert row[1] == recs[0].split
            accs = np.array([r.accuracy for r in recs])
            assert abs(float(row[4]) - accs.mean()) <= 1e-12
            assert abs(float(row[5]) - accs.std(ddof=1)) <= 1e-12
            assert int(row[6]) == 2

    def test_score_log_round_trip(self, tmp_path):
        cfg_path = write_config(tmp_path)
        main(["run", str(cfg_path)])
        run_dir = tmp_path / "out" / "demo"
        rows = _read_scores(run_dir / "scores_1.csv")
        assert rows, "score log should not be empty"
        config = parse_config(cfg_path.read_text())
        sigma = config.train.weighting.sigma
        rho = config.train.weighting.rho
        for epoch, step, gid, sample, label, q, s, w in rows:
            assert 0 <= epoch < 2
            assert label in (0, 1)
            assert 0.0 < s < 1.0 or (gid == -1 and s == 0.5)
            assert abs(w - (sigma + rho * s)) <= 1e-12

    def test_single_seed_flag(self, tmp_path):
        cfg_path = write_config(tmp_path)
        config = parse_config(cfg_path.read_text())
        summary = run_experiment(
            parse_config(cfg_path.read_text().replace("seeds = 1,2",
                                                      "seeds = 1")),
            echo=quiet)
        assert summary.single_seed
        assert summary.std_accuracy == 0.0
        assert summary.mean_accuracy == summary.seed_accuracy[0][1]
        full = run_experiment(config, echo=quiet)
        assert not full.single_seed


class TestExitCodes:
    def test_bad_config_exits_one(self, tmp_path):
        path = tmp_path / "bad.ini"
        path.write_text("[train]\nbatch_sizes = 8\n")
        assert main(["run", str(path)]) == 1

    def test_missing_config_exits_two(self, tmp_path):
        assert main(["run", str(tmp_path / "nope.ini")]) == 2

    def test_divergence_exits_two(self, tmp_path):
        cfg_path = write_config(
            tmp_path, extra="").with_name("diverge.ini")
        cfg_path.write_text(BASE.format(out=tmp_path / "out")
                            .replace("learning_rate = 0.5",
                                     "learning_rate = 1e250")
                            .replace("seeds = 1,2", "seeds = 1")
                            .replace("rho = 1.0", "rho = 0.0"))
        assert main(["run", str(cfg_path)]) == 2

    def test_analyze_missing_dir_exits_one(self, tmp_path):
        assert main(["analyze", str(tmp_path / "not_a_run")]) == 1


class TestOverrides:
    def test_seed_label_output_overrides(self, tmp_path):
        cfg_path = write_config(tmp_path)
        assert main(["run", str(cfg_path), "--seeds", "5",
                     "--label", "alt", "--output",
                     str(tmp_path / "elsewhere")]) == 0
        run_dir = tmp_path / "elsewhere" / "alt"
        assert (run_dir / "metrics_5.csv").exists()
        assert not (run_dir / "metrics_1.csv").exists()

    def test_strategy_override_mismatch_exits_one(self, tmp_path):
        cfg_path = write_config(tmp_path)
        assert main(["run", str(cfg_path), "--strategy", "ns_lf"]) == 1

    def test_layout_override(self, tmp_path):
        cfg_path = write_config(tmp_path)
        assert main(["run", str(cfg_path), "--layout", "2x2",
                     "--label", "wide"]) == 0
        archived = (tmp_path / "out" / "wide" / "config.ini").read_text()
        assert parse_config(archived).train.layout.group_size == 4


class TestSweep:
    def test_axes_are_the_published_grids(self):
        assert SIGMA_AXIS == RHO_AXIS == (0.0, 0.1, 0.5, 0.8, 1.0, 1.5, 1.8)
        assert LAYOUT_AXIS == ("1x2", "2x2", "2x4", "4x2", "4x4")

    def test_sigma_sweep_writes_table_and_run_dirs(self, tmp_path):
        cfg_path = write_config(tmp_path)
        assert main(["sweep", str(cfg_path), "--axis", "sigma",
                     "--values", "0.5,1.0", "--seeds", "1"]) == 0
        out = tmp_path / "out"
        with open(out / "sweep_sigma.csv", newline="") as fh:
            rows = list(csv.reader(fh))
        assert rows[0] == ["axis", "value", "accuracy_mean", "accuracy_std"]
        assert [r[:2] for r in rows[1:]] == [["sigma", "0.5"],
                                             ["sigma", "1.0"]]
        assert (out / "demo_sigma_0p5" / "metrics_1.csv").exists()
        assert (out / "demo_sigma_1p0" / "metrics_1.csv").exists()

    def test_table_matches_run_summaries(self, tmp_path):
        config = parse_config(write_config(tmp_path).read_text())
        results = sweep(config, "layout", values=("1x2", "2x2"), echo=quiet)
        with open(tmp_path / "out" / "sweep_layout.csv", newline="") as fh:
            rows = list(csv.reader(fh))
        for row, (value, summary) in zip(rows[1:], results):
            assert row[1] == value
            assert float(row[2]) == summary.mean_accuracy
            assert float(row[3]) == summary.std_accuracy

    def test_unknown_axis(self, tmp_path):
        config = parse_config(write_config(tmp_path).read_text())
        with pytest.raises(ConfigError, match="axis"):
            sweep(config, "temperature", echo=quiet)
        with pytest.raises(ConfigError, match="at least one"):
            sweep(config, "sigma", values=(), echo=quiet)


class TestAnalyze:
    def test_analyze_writes_plot_csvs(self, tmp_path):
        cfg_path = write_config(tmp_path)
        main(["run", str(cfg_path)])
        run_dir = tmp_path / "out" / "demo"
        assert main(["analyze", str(run_dir)]) == 0
        for seed in (1, 2):
            for stem in ("box_stats", "scatter_count", "scatter_accuracy",
                         "fits"):
                assert (run_dir / f"{stem}_{seed}.csv").exists(), (stem, seed)

    def test_box_stats_cover_every_class(self, tmp_path):
        cfg_path = write_config(tmp_path)
        main(["run", str(cfg_path)])
        run_dir = tmp_path / "out" / "demo"
        main(["analyze", str(run_dir)])
        with open(run_dir / "box_stats_1.csv", newline="") as fh:
            rows = list(csv.reader(fh))
        assert [r[0] for r in rows[1:]] == ["0", "1"]
        for row in rows[1:]:
            assert 0.0 < float(row[3]) < 1.0  # median group share

    def test_balanced_run_notes_undefined_count_fit(self, tmp_path):
        cfg_path = write_config(tmp_path)
        main(["run", str(cfg_path)])
        run_dir = tmp_path / "out" / "demo"
        main(["analyze", str(run_dir)])
        with open(run_dir / "fits_1.csv", newline="") as fh:
            rows = {r[0]: r for r in list(csv.reader(fh))[1:]}
        assert "zero variance" in rows["count_vs_score"][4]

    def test_analyze_without_metrics_exits_one(self, tmp_path):
        run_dir = tmp_path / "fake_run"
        run_dir.mkdir()
        cfg_path = write_config(tmp_path)
        (run_dir / "config.ini").write_text(cfg_path.read_text())
        assert main(["analyze", str(run_dir)]) == 1
