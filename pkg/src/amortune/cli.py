"""Command-line entry point: tune, sweep, landscape, synth, check.

Batch-oriented and deterministic under (flags, seed). Exit codes: 0 success,
1 runtime or numerical failure, 2 usage error. The AMORTUNE_THREADS
environment variable caps tensor-math worker threads (default 1, which also
keeps reruns byte-identical).
"""

from __future__ import annotations

import argparse
import csv
import json
import os
import sys
from pathlib import Path

import numpy as np
import torch

from . import analysis, checks, dataset as ds, svg, tuner
from .errors import AmortuneError, ConfigError
from .kernels import KernelSpec
from .svgp import TrainSchedule
from .tuner import AcquisitionParams, MetricSeries, OnlineUpdateConfig, TunerState

USAGE_ERROR = 2
RUNTIME_ERROR = 1


def _fmt(x: float) -> str:
    return f"{x:.12g}"


def _write_metrics(path: Path, series: MetricSeries) -> None:
    with path.open("w", encoding="utf-8", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(["iteration", "regret", "ranking", "queried_config", "queried_epoch", "observed_y"])
        for i in range(len(series.regret)):
            writer.writerow(
                [
                    i + 1,
                    _fmt(series.regret[i]),
                    _fmt(series.ranking[i]),
                    series.configs[i],
                    series.epochs[i],
                    _fmt(series.values[i]),
                ]
            )


def _write_state(path: Path, db: ds.TuningDatabase, state: TunerState) -> None:
    doc = {
        "test_task": db.tasks[state.test_task],
        "test_task_index": state.test_task,
        "budget": state.budget,
        "iterations": state.q,
        "warm_start": state.warm_descriptor,
        "e_max": {str(c): int(e) for c, e in enumerate(state.e_max) if e > 0},
        "log": [
            {"config": rec.config, "epoch": rec.epoch, "value": rec.value} for rec in state.log
        ],
    }
    path.write_text(json.dumps(doc, indent=2) + "\n", encoding="utf-8")


def _aggregate(rows: dict[str, list[MetricSeries]], out_path: Path) -> None:
    """Per-iteration mean and standard error of both metrics, per method."""
    with out_path.open("w", encoding="utf-8", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(
            ["method", "iteration", "regret_mean", "regret_stderr", "ranking_mean", "ranking_stderr"]
        )
        for method, many in rows.items():
            if not many:
                continue
            horizon = min(len(s.regret) for s in many)
            regret = np.array([s.regret[:horizon] for s in many])
            ranking = np.array([s.ranking[:horizon] for s in many])
            denom = np.sqrt(len(many))
            for i in range(horizon):
                writer.writerow(
                    [
                        method,
                        i + 1,
                        _fmt(regret[:, i].mean()),
                        _fmt(regret[:, i].std(ddof=0) / denom),
                        _fmt(ranking[:, i].mean()),
                        _fmt(ranking[:, i].std(ddof=0) / denom),
                    ]
                )


def cmd_tune(args: argparse.Namespace) -> int:
    db = ds.load_database(args.db)
    spec = KernelSpec.parse(args.spec)
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    schedule = TrainSchedule(args.train_epochs, args.lr, args.momentum)
    online = OnlineUpdateConfig(args.update_epochs, args.retrain_every, args.train_epochs)
    acq = AcquisitionParams(eta_ucb=args.eta)
    splits = ds.train_test_splits(db, args.pairs, args.seed)

    collected: dict[str, list[MetricSeries]] = {spec.identifier: [], "random": [], "single-task": []}
    for i, split in enumerate(splits):
        run_seed = args.seed + i
        runs = {
            spec.identifier: tuner.run(
                db, split, spec, args.budget, acq, run_seed, args.inducing, schedule, online,
                args.warm_start_fraction, args.seed_draw,
            ),
            "random": tuner.baseline_random(db, split, args.budget, run_seed),
            "single-task": tuner.baseline_single_task(
                db, split, spec, args.budget, acq, run_seed,
                n_inducing=args.inducing, schedule=schedule, online=online,
                seed_draw=args.seed_draw,
            ),
        }
        for method, (series, state) in runs.items():
            safe = method.replace("/", "-")
            run_dir = out / f"pair{i}_{safe}"
            run_dir.mkdir(parents=True, exist_ok=True)
            _write_metrics(run_dir / "metrics.csv", series)
            _write_state(run_dir / "state.json", db, state)
            collected[method].append(series)
            if args.emit_svg and series.regret:
                iters = np.arange(1, len(series.regret) + 1)
                svg.write_line_plot(
                    run_dir / "curves.svg",
                    {
                        "regret": (iters, np.asarray(series.regret)),
                        "ranking (smoothed)": (
                            iters,
                            tuner.hamming_smooth(series.ranking, series.window),
                        ),
                    },
                    title=f"{method} on {db.tasks[state.test_task]}",
                    x_label="iteration",
                    y_label="metric",
                )
    _aggregate(collected, out / "summary.csv")
    print(f"wrote {args.pairs} split pair(s) x 3 methods under {out}")
    return 0


def cmd_sweep(args: argparse.Namespace) -> int:
    db = ds.load_database(args.db)
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    schedule = TrainSchedule(args.train_epochs, args.lr, args.momentum)
    report, best = analysis.kernel_sweep(
        db,
        n_tasks=args.tasks,
        test_size=args.test_size,
        train_size=args.train_size,
        n_inducing=args.inducing,
        schedule=schedule,
        seed=args.seed,
        keep_best=True,
    )
    with (out / "sweep.csv").open("w", encoding="utf-8", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(["rank", "task_kernel", "config_kernel", "fidelity_kernel", "elbo", "status"])
        for row in report.rows:
            writer.writerow(
                [
                    row.rank,
                    row.spec.task,
                    row.spec.config,
                    row.spec.fidelity,
                    _fmt(row.elbo) if np.isfinite(row.elbo) else "nan",
                    row.status,
                ]
            )
    if best is not None:
        model, ctx, test_data = best
        pairs = analysis.distance_scatter(model, ctx, test_data, seed=args.seed)
        with (out / "scatter.csv").open("w", encoding="utf-8", newline="") as fh:
            writer = csv.writer(fh)
            writer.writerow(["pred_dist", "true_dist"])
            for pair in pairs:
                writer.writerow([_fmt(pair.predicted), _fmt(pair.true)])
    top = report.rows[0]
    print(f"sweep complete ({report.split_descriptor}); best {top.spec.identifier} "
          f"held-out ELBO {top.elbo:.4f}")
    return 0


def cmd_landscape(args: argparse.Namespace) -> int:
    db = ds.load_database(args.db)
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    report = analysis.landscape_report(db, top_fraction=args.top_fraction, k=args.k)
    with (out / "landscape.csv").open("w", encoding="utf-8", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(["task_a", "task_b", "l2", "overlap"])
        for pair in report.pairs:
            writer.writerow([db.tasks[pair.task_a], db.tasks[pair.task_b], _fmt(pair.l2), pair.overlap])
    print(
        f"{len(report.pairs)} task pairs; closest {report.group_size} mean top-{report.k} overlap "
        f"{report.closest_mean_overlap:.2f} vs farthest {report.farthest_mean_overlap:.2f}"
    )
    return 0


def cmd_synth(args: argparse.Namespace) -> int:
    params = ds.SyntheticParams(
        n_tasks=args.tasks,
        n_clusters=args.clusters,
        n_configs=args.configs,
        n_epochs=args.epochs,
        noise=args.noise,
        feature_dim=args.feature_dim,
        seed=args.seed,
    )
    db = ds.generate_synthetic(params)
    ds.save_database(db, args.out)
    print(
        f"wrote synthetic bundle to {args.out} "
        f"({db.n_tasks} tasks x {db.n_configs} configs x {db.n_epochs} epochs x {len(db.seeds)} seeds)"
    )
    return 0


def cmd_check(args: argparse.Namespace) -> int:
    results = checks.run_all(seed=args.seed)
    for result in results:
        print(result.line())
    failed = [r for r in results if not r.passed]
    if failed:
        print(f"{len(failed)} check(s) failed", file=sys.stderr)
        return RUNTIME_ERROR
    print(f"all {len(results)} checks passed")
    return 0


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="amortune", description=__doc__)
    sub = parser.add_subparsers(dest="command", required=True)

    def add_training_flags(p: argparse.ArgumentParser, inducing: int) -> None:
        p.add_argument("--inducing", type=int, default=inducing, help="number of inducing points")
        p.add_argument("--train-epochs", type=int, default=200)
        p.add_argument("--lr", type=float, default=0.02)
        p.add_argument("--momentum", type=float, default=0.8)

    p = sub.add_parser("tune", help="run a tuning session plus both baselines")
    p.add_argument("--db", required=True, help="database bundle directory")
    p.add_argument("--spec", default="optiland/deeppoly/acccurve",
                   help="kernel spec, e.g. optiland/deeppoly/acccurve")
    p.add_argument("--budget", type=int, default=100)
    p.add_argument("--pairs", type=int, default=5, help="number of train/test task splits")
    p.add_argument("--eta", type=float, default=0.25, help="UCB exploration weight")
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--update-epochs", type=int, default=20)
    p.add_argument("--retrain-every", type=int, default=25)
    p.add_argument("--warm-start-fraction", type=float, default=1.0)
    p.add_argument("--seed-draw", action="store_true",
                   help="draw one recorded seed per query instead of the seed average")
    p.add_argument("--emit-svg", action="store_true")
    p.add_argument("--out", required=True)
    add_training_flags(p, inducing=100)
    p.set_defaults(func=cmd_tune)

    p = sub.add_parser("sweep", help="rank all 64 kernel composites by held-out ELBO")
    p.add_argument("--db", required=True)
    p.add_argument("--tasks", type=int, default=4)
    p.add_argument("--test-size", type=int, default=1000)
    p.add_argument("--train-size", type=int, default=None)
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--out", required=True)
    add_training_flags(p, inducing=100)
    p.set_defaults(func=cmd_sweep)

    p = sub.add_parser("landscape", help="pairwise landscape distances and top-k overlaps")
    p.add_argument("--db", required=True)
    p.add_argument("--top-fraction", type=float, default=0.10)
    p.add_argument("--k", type=int, default=5)
    p.add_argument("--out", required=True)
    p.set_defaults(func=cmd_landscape)

    p = sub.add_parser("synth", help="generate a synthetic database bundle")
    p.add_argument("--tasks", type=int, required=True)
    p.add_argument("--clusters", type=int, required=True)
    p.add_argument("--configs", type=int, required=True)
    p.add_argument("--epochs", type=int, required=True)
    p.add_argument("--noise", type=float, default=0.01)
    p.add_argument("--feature-dim", type=int, default=3)
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--out", required=True)
    p.set_defaults(func=cmd_synth)

    p = sub.add_parser("check", help="run the verification oracle battery")
    p.add_argument("--seed", type=int, default=0)
    p.set_defaults(func=cmd_check)
    return parser


def main(argv: list[str] | None = None) -> int:
    torch.set_num_threads(max(1, int(os.environ.get("AMORTUNE_THREADS", "1"))))
    parser = build_parser()
    args = parser.parse_args(argv)
    if getattr(args, "spec", None) is not None:
        try:
            KernelSpec.parse(args.spec)
        except ConfigError as exc:
            print(f"error: {exc}", file=sys.stderr)
            return USAGE_ERROR
    try:
        return args.func(args)
    except AmortuneError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return RUNTIME_ERROR


if __name__ == "__main__":
    sys.exit(main())
