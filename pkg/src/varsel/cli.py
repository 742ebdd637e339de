"""Command-line entry point: ``varsel --mode fsm|mnist``."""

import argparse
import json
import logging
import sys
from concurrent.futures import ProcessPoolExecutor
from dataclasses import asdict
from pathlib import Path
from typing import Any, Callable, Optional, Sequence

import numpy as np

from .config import RunConfig, load_run_config
from .errors import DatasetNotFoundError, VarselError
from .export import (
    mnr_conditioners_by_depth,
    mnr_to_dot,
    model_to_dict,
    model_to_dot,
    write_dot,
)
from .fsm_env import TrialResult, load_tables, run_trial, summarize
from .metrics import MetricRecord, MetricsWriter, write_manifest
from .mnr import MnrModel, learn_sample, predict, predicted_label
from .vision import image_to_spn, load_mnist, mnist_paths

logger = logging.getLogger(__name__)

FSM_METRICS = "fsm_metrics.jsonl"
MNIST_METRICS = "mnist_metrics.jsonl"
SUMMARY = "summary.json"


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="varsel",
        description="Run continual-learning experiments on the two-cell FSM or on MNIST.",
    )
    parser.add_argument("--mode", choices=("fsm", "mnist"))
    parser.add_argument("--config", help="JSON run configuration")
    parser.add_argument("--seed", type=int)
    parser.add_argument("--out", help="output directory")
    parser.add_argument("--trials", dest="trial_count", type=int)
    parser.add_argument("--workers", type=int, help="trials run in parallel")
    parser.add_argument("--classes", dest="n_classes", type=int)
    parser.add_argument("--samples", dest="n_sample", type=int, help="samples per class per cycle")
    parser.add_argument("--test-per-class", type=int)
    parser.add_argument("--cycles", type=int)
    parser.add_argument("--t-ref", type=float)
    parser.add_argument("--t-sign", type=float)
    parser.add_argument("--nce-cutoff", type=float)
    parser.add_argument("--epsilon", type=float)
    parser.add_argument("--random-variant", action="store_true", default=None)
    parser.add_argument("--readaptation", action="store_true", default=None)
    parser.add_argument("--data-dir", help="MNIST IDX directory (default: $VARSEL_DATA_DIR)")
    parser.add_argument("--export-dot", help="directory for DOT exports of the learned models")
    parser.add_argument(
        "--log-level", default="INFO", choices=("DEBUG", "INFO", "WARNING", "ERROR")
    )
    return parser


def _map_trials(fn: Callable, jobs: list[tuple], workers: int) -> list[Any]:
    if workers <= 1 or len(jobs) <= 1:
        return [fn(*job) for job in jobs]
    with ProcessPoolExecutor(max_workers=workers) as pool:
        return list(pool.map(fn, *zip(*jobs)))


def _fsm_trial(config: RunConfig, trial: int, agent: str) -> TrialResult:
    return run_trial(
        config.schedule,
        trial,
        config.seed + trial,
        agent,
        config.random_variant,
        config.learner_settings(),
        config.planner_settings(),
        config.episode_cap,
    )


def _fsm_records(result: TrialResult) -> list[MetricRecord]:
    records = [
        MetricRecord(
            result.trial, e.episode, f"{result.agent}.episode_duration", e.duration, phase=e.phase
        )
        for e in result.episodes
    ]
    records += [
        MetricRecord(result.trial, step, f"{result.agent}.csv_count", count)
        for step, count in enumerate(result.csv_counts)
    ]
    return records


def run_fsm(config: RunConfig) -> dict[str, Any]:
    """Run planner and random-baseline trials and write per-episode metrics and a summary."""
    out = Path(config.out)
    jobs = [
        (config, trial, agent)
        for trial in range(config.trial_count)
        for agent in ("planner", "random")
    ]
    results = _map_trials(_fsm_trial, jobs, config.workers)
    planner = [r for r in results if r.agent == "planner"]
    baseline = [r for r in results if r.agent == "random"]

    with MetricsWriter(out / FSM_METRICS) as writer:
        for result in results:
            writer.write_all(_fsm_records(result))

    summary = {
        "schedule": [asdict(p) for p in config.schedule],
        "planner": [asdict(s) for s in summarize(planner, config.schedule)],
        "random": [asdict(s) for s in summarize(baseline, config.schedule)],
        "final_csv_count": [r.csv_counts[-1] if r.csv_counts else 0 for r in planner],
    }
    (out / SUMMARY).write_text(json.dumps(summary, indent=2) + "\n")
    for row in summary["planner"]:
        logger.info(
            "phase %d %s learning=%s: mean %.2f +- %.2f",
            row["phase"],
            row["subtype"],
            row["learning"],
            row["mean"],
            row["stderr"],
        )

    if config.export_dot and planner and planner[0].model is not None:
        model = planner[0].model
        dot_dir = Path(config.export_dot)
        write_dot(model_to_dot(model), dot_dir / "fsm_model.dot")
        write_dot(model_to_dot(model, reliable_only=True), dot_dir / "fsm_model_reliable.dot")
        write_dot(model_to_dot(model, pathway="1G"), dot_dir / "fsm_model_1G.dot")
        (dot_dir / "fsm_model.json").write_text(json.dumps(model_to_dict(model), indent=2))
    return summary


def _sample_indices(rng: np.random.Generator, pool: np.ndarray, count: int) -> np.ndarray:
    return rng.choice(pool, size=min(count, pool.size), replace=False)


def _mnist_trial(config: RunConfig, trial: int) -> tuple[list[MetricRecord], MnrModel]:
    train = load_mnist(*mnist_paths(config.resolved_data_dir(), "train"))
    test = load_mnist(*mnist_paths(config.resolved_data_dir(), "test"))
    rng = np.random.default_rng(config.seed + trial)
    classes = [int(c) for c in rng.choice(10, size=config.n_classes, replace=False)]
    logger.info("trial %d: classes %s", trial, classes)

    test_set = [
        (label, image_to_spn(test.images[i]))
        for label in classes
        for i in _sample_indices(rng, test.indices_of(label), config.test_per_class)
    ]
    model = MnrModel(config.mnr_settings(), seed=config.seed + trial)
    records = []
    for cycle in range(config.cycles):
        for iteration, label in enumerate(classes):
            for i in _sample_indices(rng, train.indices_of(label), config.n_sample):
                learn_sample(model, image_to_spn(train.images[i]), label)
            correct = {c: 0 for c in classes}
            totals = {c: 0 for c in classes}
            for truth, spn in test_set:
                totals[truth] += 1
                # abstaining counts as an error
                correct[truth] += predicted_label(predict(model, spn)) == truth
            for c in classes:
                accuracy = correct[c] / totals[c] if totals[c] else 0.0
                records.append(
                    MetricRecord(trial, iteration, f"accuracy.class_{c}", accuracy, cycle=cycle)
                )
            mean = float(np.mean([correct[c] / max(totals[c], 1) for c in classes]))
            records.append(MetricRecord(trial, iteration, "accuracy.mean", mean, cycle=cycle))
            logger.info(
                "trial %d cycle %d iteration %d (class %d): mean accuracy %.3f, %d conditioners",
                trial,
                cycle,
                iteration,
                label,
                mean,
                len(model.csvs),
            )
    return records, model


def run_mnist(config: RunConfig) -> dict[str, Any]:
    """Class-incremental MNIST: per cycle and iteration, per-class test accuracy."""
    out = Path(config.out)
    missing = [
        str(p)
        for split in ("train", "test")
        for p in mnist_paths(config.resolved_data_dir(), split)
        if not p.is_file()
    ]
    if missing:
        raise DatasetNotFoundError(
            f"MNIST files not found: {', '.join(missing)}; set VARSEL_DATA_DIR or --data-dir"
        )

    jobs = [(config, trial) for trial in range(config.trial_count)]
    results = _map_trials(_mnist_trial, jobs, config.workers)
    with MetricsWriter(out / MNIST_METRICS) as writer:
        for records, _ in results:
            writer.write_all(records)

    finals = [
        r.value
        for records, _ in results
        for r in records
        if r.metric == "accuracy.mean"
        and r.cycle == config.cycles - 1
        and r.iteration == config.n_classes - 1
    ]
    summary = {"final_mean_accuracy": float(np.mean(finals)) if finals else None}
    (out / SUMMARY).write_text(json.dumps(summary, indent=2) + "\n")
    logger.info("final mean accuracy %s", summary["final_mean_accuracy"])

    if config.export_dot and results:
        model = results[0][1]
        dot_dir = Path(config.export_dot)
        write_dot(mnr_to_dot(model), dot_dir / "mnr_model.dot")
        (dot_dir / "mnr_conditioners.json").write_text(
            json.dumps(mnr_conditioners_by_depth(model), indent=2)
        )
        (dot_dir / "mnr_model.json").write_text(json.dumps(model.to_dict()))
    return summary


def main(argv: Optional[Sequence[str]] = None) -> int:
    args = build_parser().parse_args(argv)
    logging.basicConfig(
        level=args.log_level, format="%(asctime)s %(levelname)s %(name)s: %(message)s"
    )
    overrides = {k: v for k, v in vars(args).items() if k not in ("config", "log_level")}
    try:
        config = load_run_config(args.config, **overrides)
        out = Path(config.out)
        out.mkdir(parents=True, exist_ok=True)
        table_version = load_tables().version if config.mode == "fsm" else None
        write_manifest(out, config.to_dict(), config.seed, table_version)
        if config.mode == "fsm":
            run_fsm(config)
        else:
            run_mnist(config)
    except VarselError as e:
        logger.error("%s", e)
        return 2
    return 0


if __name__ == "__main__":
    sys.exit(main())
