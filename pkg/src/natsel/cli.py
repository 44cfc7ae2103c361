"""Experiment runner: run / sweep / analyze subcommands.

``run`` executes one config over its seed list and writes per-seed
artifacts plus a cross-seed aggregate.  ``sweep`` repeats a run along one
axis (sigma, rho, or layout) and tabulates final accuracies.  ``analyze``
post-processes an existing run directory into plotting-ready CSVs.

Exit codes: 0 success, 1 configuration/validation error, 2 runtime abort.
"""

from __future__ import annotations

import argparse
import csv
import sys
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from .analysis import (
    correlation_report,
    ns_distribution,
    write_box_stats,
    write_correlation_scatter,
    write_fits,
)
from .config import (
    ExperimentConfig,
    apply_overrides,
    classifier_for,
    datasets_for,
    parse_config,
    serialize_config,
    train_for,
)
from .errors import AnalysisError, ConfigError, FormatError, NatselError, \
    NumericError, TrainingDiverged
from .model import Classifier, save_checkpoint
from .trainer import read_metrics_csv, train, write_metrics_csv

__all__ = [
    "SIGMA_AXIS",
    "RHO_AXIS",
    "LAYOUT_AXIS",
    "RunSummary",
    "run_experiment",
    "sweep",
    "analyze_run",
    "main",
]

# Canonical sweep grids exercised by the comparison tables.
SIGMA_AXIS = (0.0, 0.1, 0.5, 0.8, 1.0, 1.5, 1.8)
RHO_AXIS = (0.0, 0.1, 0.5, 0.8, 1.0, 1.5, 1.8)
LAYOUT_AXIS = ("1x2", "2x2", "2x4", "4x2", "4x4")

_SCORE_COLUMNS = ("epoch", "step", "group_id", "sample_index", "label", "q",
                  "s", "w")


@dataclass(frozen=True)
class RunSummary:
    """Cross-seed result of one experiment."""

    label: str
    run_dir: str
    seed_accuracy: tuple[tuple[int, float], ...]
    mean_accuracy: float
    std_accuracy: float

    @property
    def single_seed(self) -> bool:
        return len(self.seed_accuracy) == 1


class _ScoreLog:
    """Collects per-sample scoring rows during training."""

    def __init__(self):
        self.rows = []

    def __call__(self, epoch, step, result, weights, batch_idx):
        for pos, sample in enumerate(batch_idx):
            self.rows.append((
                epoch, step, int(sample), int(result.group_ids[pos]),
                float(result.raw[pos]), float(result.score[pos]),
                float(weights[pos]),
            ))


def _write_scores(path, rows, labels) -> None:
    with open(path, "w", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(_SCORE_COLUMNS)
        for epoch, step, sample, gid, q, s, w in rows:
            writer.writerow([epoch, step, gid, sample, int(labels[sample]),
                             repr(q), repr(s), repr(w)])


def _read_scores(path):
    """Rows as (epoch, step, group_id, sample_index, label, q, s, w)."""
    with open(path, "r", newline="") as fh:
        rows = list(csv.reader(fh))
    if not rows or tuple(rows[0]) != _SCORE_COLUMNS:
        raise ConfigError(f"{path} is not a score log")
    parsed = []
    for row in rows[1:]:
        parsed.append((int(row[0]), int(row[1]), int(row[2]), int(row[3]),
                       int(row[4]), float(row[5]), float(row[6]),
                       float(row[7])))
    return parsed


def run_experiment(config: ExperimentConfig, echo=print) -> RunSummary:
    """Train every seed, write artifacts, aggregate across seeds."""
    run_dir = Path(config.output_dir) / config.label
    run_dir.mkdir(parents=True, exist_ok=True)
    (run_dir / "config.ini").write_text(serialize_config(config))

    per_seed_records = {}
    finals = []
    for seed in config.seeds:
        train_set, test_set = datasets_for(config, seed)
        model = Classifier(classifier_for(
            config, seed, image_shape=train_set.image_shape,
            class_count=train_set.class_count))
        log = _ScoreLog()
        sink = log if config.train.weighting.rho != 0.0 else None
        _, records = train(train_for(config, seed), train_set, test_set,
                           model, score_sink=sink)
        write_metrics_csv(run_dir / f"metrics_{seed}.csv", records)
        save_checkpoint(model, run_dir / f"checkpoint_{seed}.bin")
        if sink is not None:
            _write_scores(run_dir / f"scores_{seed}.csv", log.rows,
                          train_set.labels)
        per_seed_records[seed] = records
        final_acc = [r.accuracy for r in records if r.split == "test"][-1]
        finals.append((seed, final_acc))
        echo(f"seed {seed}: final test accuracy {final_acc:.4f}")

    _write_aggregate(run_dir / "aggregate.csv", config.seeds,
                     per_seed_records)
    accs = np.array([a for _, a in finals])
    std = float(accs.std(ddof=1)) if accs.size > 1 else 0.0
    summary = RunSummary(
        label=config.label, run_dir=str(run_dir),
        seed_accuracy=tuple(finals), mean_accuracy=float(accs.mean()),
        std_accuracy=std,
    )
    flag = " [single seed]" if summary.single_seed else ""
    echo(f"{config.label}: final test accuracy "
         f"{summary.mean_accuracy:.4f} +/- {summary.std_accuracy:.4f} "
         f"over {accs.size} seed(s){flag}")
    return summary


def _write_aggregate(path, seeds, per_seed_records) -> None:
    """Mean and sample std (n-1) of loss/accuracy per (epoch, split)."""
    keys = [(r.epoch, r.split) for r in per_seed_records[seeds[0]]]
    with open(path, "w", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(["epoch", "split", "mean_loss_mean", "mean_loss_std",
                         "accuracy_mean", "accuracy_std", "seed_count"])
        for i, (epoch, split) in enumerate(keys):
            losses = np.array([per_seed_records[s][i].mean_loss
                               for s in seeds])
            accs = np.array([per_seed_records[s][i].accuracy for s in seeds])
            loss_std = float(losses.std(ddof=1)) if len(seeds) > 1 else 0.0
            acc_std = float(accs.std(ddof=1)) if len(seeds) > 1 else 0.0
            writer.writerow([epoch, split, repr(float(losses.mean())),
                             repr(loss_std), repr(float(accs.mean())),
                             repr(acc_std), len(seeds)])


def sweep(config: ExperimentConfig, axis: str, values=None,
          echo=print) -> list[tuple[str, RunSummary]]:
    """One run_experiment per value along sigma, rho, or layout."""
    if axis == "sigma":
        values = SIGMA_AXIS if values is None else values
        override = lambda cfg, v: apply_overrides(cfg, sigma=float(v))
    elif axis == "rho":
        values = RHO_AXIS if values is None else values
        override = lambda cfg, v: apply_overrides(cfg, rho=float(v))
    elif axis == "layout":
        values = LAYOUT_AXIS if values is None else values
        override = lambda cfg, v: apply_overrides(cfg, layout=str(v))
    else:
        raise ConfigError(f"unknown sweep axis {axis!r}")
    if not values:
        raise ConfigError("sweep needs at least one value")

    results = []
    for value in values:
        tag = str(value).replace(".", "p")
        sub = apply_overrides(override(config, value),
                              label=f"{config.label}_{axis}_{tag}")
        results.append((str(value), run_experiment(sub, echo=echo)))

    table = Path(config.output_dir) / f"sweep_{axis}.csv"
    table.parent.mkdir(parents=True, exist_ok=True)
    with open(table, "w", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(["axis", "value", "accuracy_mean", "accuracy_std"])
        for value, summary in results:
            writer.writerow([axis, value, repr(summary.mean_accuracy),
                             repr(summary.std_accuracy)])
    echo(f"sweep table written to {table}")
    return results


def analyze_run(run_dir, echo=print) -> None:
    """Turn an existing run directory into plotting-ready CSVs.

    Consumes only the archived config and logs; training state is never
    touched.  Per seed it writes score box stats, the two correlation
    scatters, and the fitted lines.
    """
    run_dir = Path(run_dir)
    config_path = run_dir / "config.ini"
    if not config_path.exists():
        raise ConfigError(f"{run_dir} has no config.ini; not a run directory")
    config = parse_config(config_path.read_text())
    for seed in config.seeds:
        metrics_path = run_dir / f"metrics_{seed}.csv"
        if not metrics_path.exists():
            raise ConfigError(f"missing {metrics_path}")
        records = read_metrics_csv(metrics_path)
        train_set, _ = datasets_for(config, seed)

        scores_path = run_dir / f"scores_{seed}.csv"
        if scores_path.exists():
            rows = _read_scores(scores_path)
            last_epoch = max(r[0] for r in rows)
            final = [r for r in rows if r[0] == last_epoch]
            stats = ns_distribution(
                [r[6] for r in final], [r[4] for r in final],
                train_set.class_count)
            write_box_stats(run_dir / f"box_stats_{seed}.csv", stats)

        report = correlation_report(records, train_set.label_counts())
        write_correlation_scatter(
            report,
            run_dir / f"scatter_count_{seed}.csv",
            run_dir / f"scatter_accuracy_{seed}.csv")
        write_fits(run_dir / f"fits_{seed}.csv", report.fits)
        echo(f"seed {seed}: analysis artifacts written to {run_dir}")


def _build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="natsel",
        description="competition-weighted training experiments")
    sub = parser.add_subparsers(dest="command", required=True)

    def add_overrides(p):
        p.add_argument("--output", help="output directory override")
        p.add_argument("--label", help="run label override")
        p.add_argument("--seeds", help="comma list of seeds")
        p.add_argument("--sigma", type=float, help="weight floor override")
        p.add_argument("--rho", type=float, help="weight slope override")
        p.add_argument("--strategy", choices=("ns_ws", "ns_lf", "uniform",
                                              "focal_like"))
        p.add_argument("--layout", help="grid layout override, e.g. 2x2")

    run_p = sub.add_parser("run", help="run one experiment config")
    run_p.add_argument("config", help="path to an INI experiment config")
    add_overrides(run_p)

    sweep_p = sub.add_parser("sweep", help="repeat a config along one axis")
    sweep_p.add_argument("config", help="path to an INI experiment config")
    sweep_p.add_argument("--axis", required=True,
                         choices=("sigma", "rho", "layout"))
    sweep_p.add_argument("--values",
                         help="comma list of axis values (defaults to the "
                              "standard grid)")
    add_overrides(sweep_p)

    an_p = sub.add_parser("analyze",
                          help="post-process an existing run directory")
    an_p.add_argument("run_dir", help="directory written by a previous run")
    return parser


def _overridden(config: ExperimentConfig, args) -> ExperimentConfig:
    seeds = None
    if args.seeds is not None:
        seeds = tuple(int(tok) for tok in args.seeds.split(",") if tok)
    return apply_overrides(
        config, sigma=args.sigma, rho=args.rho, strategy=args.strategy,
        layout=args.layout, seeds=seeds, label=args.label,
        output_dir=args.output)


def main(argv=None) -> int:
    args = _build_parser().parse_args(argv)
    try:
        if args.command == "run":
            config = parse_config(Path(args.config).read_text())
            run_experiment(_overridden(config, args))
        elif args.command == "sweep":
            config = parse_config(Path(args.config).read_text())
            config = _overridden(config, args)
            values = None
            if args.values is not None:
                values = [tok for tok in args.values.split(",") if tok]
            sweep(config, args.axis, values)
        else:
            analyze_run(args.run_dir)
    except (ConfigError, FormatError) as err:
        print(f"error: {err}", file=sys.stderr)
        return 1
    except (TrainingDiverged, NumericError, AnalysisError, NatselError,
            OSError) as err:
        print(f"aborted: {err}", file=sys.stderr)
        return 2
    return 0


if __name__ == "__main__":
    sys.exit(main())
