"""Command-line surface: fetch, stream info, run, resume, report, plot.

Every command is a thin shell over library operations. Exit codes: 0 success,
2 configuration error, 3 causality violation, 4 data error. A run owns its
output directory exclusively via a lock file; the resolved config is echoed
there for provenance.
"""

from __future__ import annotations

import argparse
import csv
import json
import os
import sys
from contextlib import contextmanager
from pathlib import Path

from . import analysis, plotting, registry
from .errors import CausalityViolation, ConfigError, DataError, TaskStreamError
from .manifest import load_stream, short_stream_rows
from .protocol import (
    StrategyLearner,
    read_checkpoint,
    read_record_log,
    resume_pass,
    run_meta_test,
    run_meta_train,
    write_record_log,
)
from .runconfig import RunConfig, build_base_config, build_stream, dump_config, load_config

EXIT_OK = 0
EXIT_CONFIG = 2
EXIT_CAUSALITY = 3
EXIT_DATA = 4

CACHE_ENV_VAR = "TASKSTREAM_CACHE"
SUMMARY_SCHEMA = 1


def default_cache_dir(flag_value: str | None) -> Path:
    if flag_value:
        return Path(flag_value)
    env = os.environ.get(CACHE_ENV_VAR)
    if env:
        return Path(env)
    return Path.home() / ".cache" / "taskstream"


@contextmanager
def output_lock(out_dir: Path):
    out_dir.mkdir(parents=True, exist_ok=True)
    lock_path = out_dir / ".lock"
    try:
        fd = os.open(lock_path, os.O_CREAT | os.O_EXCL | os.O_WRONLY)
    except FileExistsError:
        raise ConfigError(
            f"output directory {out_dir} is locked by another invocation "
            f"(remove {lock_path} if that run is dead)"
        ) from None
    try:
        os.write(fd, str(os.getpid()).encode())
        os.close(fd)
        yield
    finally:
        lock_path.unlink(missing_ok=True)


# ---------------------------------------------------------------------------
# fetch
# ---------------------------------------------------------------------------


def cmd_fetch(args: argparse.Namespace) -> int:
    descriptors = registry.load_descriptors(args.descriptors)
    if args.dataset:
        missing = [d for d in args.dataset if d not in descriptors]
        if missing:
            raise ConfigError(f"unknown dataset ids: {missing}")
        selected = [descriptors[d] for d in args.dataset]
    else:
        selected = list(descriptors.values())
    cache = default_cache_dir(args.cache)
    for descriptor in selected:
        path = registry.fetch(descriptor, cache)
        print(f"fetched {descriptor.id} -> {path}")
        if args.prepare:
            task, _ = registry.prepare(descriptor, cache)
            sizes = (len(task.train), len(task.val), len(task.test))
            print(f"prepared {descriptor.id}: splits {sizes}")
    return EXIT_OK


# ---------------------------------------------------------------------------
# stream info
# ---------------------------------------------------------------------------


def cmd_stream_info(args: argparse.Namespace) -> int:
    if args.short_table:
        rows = short_stream_rows()
        print(f"{'year':<6}{'name':<32}{'kind':<6}{'domain':<10}{'train':>9}")
        for row in rows:
            print(
                f"{row['year']:<6}{row['name']:<32}{row['kind']:<6}"
                f"{row['domain']:<10}{row['train_size']:>9}"
            )
        print(f"\n{len(rows)} tasks")
        return EXIT_OK
    if args.manifest:
        stream = load_stream(Path(args.manifest))
    elif args.config:
        config = load_config(Path(args.config))
        stream = build_stream(config, Path(args.config).parent)
    else:
        raise ConfigError("stream info needs --manifest, --config or --short-table")
    print(f"{len(stream)} tasks; meta-train boundary at {stream.boundary}")
    years: dict[int, int] = {}
    domains: dict[str, int] = {}
    for task in stream.tasks:
        years[task.year] = years.get(task.year, 0) + 1
        domains[task.domain] = domains.get(task.domain, 0) + 1
    print("tasks per year:", ", ".join(f"{y}:{n}" for y, n in sorted(years.items())))
    print("tasks per domain:", ", ".join(f"{d}:{n}" for d, n in sorted(domains.items())))
    print(f"{'idx':<5}{'id':<24}{'year':<6}{'kind':<14}{'classes':>8}{'train':>8}")
    for i, task in enumerate(stream.tasks):
        marker = "*" if i >= stream.boundary else " "
        print(
            f"{i:<5}{task.id:<24}{task.year:<6}{task.kind.value:<14}"
            f"{task.num_classes:>8}{len(task.train):>8} {marker}"
        )
    print("(* = meta-test task)")
    return EXIT_OK


# ---------------------------------------------------------------------------
# run / resume
# ---------------------------------------------------------------------------


def _run_one_seed(config: RunConfig, stream, base_config, seed: int, out_dir: Path):
    learner = StrategyLearner(config.strategy, config.budgets, base_config)
    checkpoint = out_dir / f"checkpoint-seed{seed}.bin"
    if config.phase == "meta_train":
        result = run_meta_train(stream, learner, seed=seed, checkpoint_path=checkpoint)
    else:
        result = run_meta_test(stream, learner, seed=seed, checkpoint_path=checkpoint)
    record_path = out_dir / f"records-seed{seed}.jsonl"
    write_record_log(record_path, result.records)
    return {
        "seed": seed,
        "phase": result.phase,
        "error": result.mean_error,
        "flops": result.total_flops,
        "records": record_path.name,
    }


def _write_summary(out_dir: Path, config: RunConfig, runs: list[dict]) -> None:
    summary = {
        "schema": SUMMARY_SCHEMA,
        "strategy": config.strategy.label(),
        "phase": config.phase,
        "runs": runs,
    }
    (out_dir / "summary.json").write_text(json.dumps(summary, indent=2, sort_keys=True))


def cmd_run(args: argparse.Namespace) -> int:
    overrides: dict = {}
    if args.phase:
        overrides["phase"] = args.phase
    if args.output_dir:
        overrides["output_dir"] = args.output_dir
    if args.seeds:
        overrides["seeds"] = [int(s) for s in args.seeds.split(",")]
    config = load_config(Path(args.config), overrides)
    base_dir = Path(args.config).parent
    out_dir = Path(config.output_dir)
    if not out_dir.is_absolute():
        out_dir = base_dir / out_dir

    with output_lock(out_dir):
        (out_dir / "config.yaml").write_text(dump_config(config))
        stream = build_stream(config, base_dir)
        if config.phase == "transfer_matrix":
            matrix = analysis.transfer_matrix(
                stream, config.budgets, build_base_config(config, stream), seed=config.seeds[0]
            )
            (out_dir / "transfer_matrix.json").write_text(
                json.dumps(matrix.to_json(), indent=2, sort_keys=True)
            )
            print(
                f"transfer matrix over {len(matrix.task_ids)} tasks "
                f"({matrix.num_training_runs} training runs)"
            )
            return EXIT_OK
        base_config = build_base_config(config, stream)
        runs = []
        for seed in config.seeds:
            run = _run_one_seed(config, stream, base_config, seed, out_dir)
            runs.append(run)
            print(
                f"seed {seed}: {run['phase']} E={run['error']:.4f} "
                f"cFLOP={run['flops']:,}"
            )
        _write_summary(out_dir, config, runs)
    return EXIT_OK


def cmd_resume(args: argparse.Namespace) -> int:
    out_dir = Path(args.output_dir)
    config_path = out_dir / "config.yaml"
    if not config_path.exists():
        raise ConfigError(f"no config echo found at {config_path}; nothing to resume")
    config = load_config(config_path)
    if config.phase == "transfer_matrix":
        raise ConfigError("transfer-matrix runs are not resumable")
    with output_lock(out_dir):
        stream = build_stream(config, out_dir)
        base_config = build_base_config(config, stream)
        runs = []
        for seed in config.seeds:
            checkpoint = out_dir / f"checkpoint-seed{seed}.bin"
            record_path = out_dir / f"records-seed{seed}.jsonl"
            if not checkpoint.exists():
                run = _run_one_seed(config, stream, base_config, seed, out_dir)
                runs.append(run)
                continue
            data = read_checkpoint(checkpoint)
            expected = stream.boundary if config.phase == "meta_train" else len(stream)
            if data.cursor >= expected:
                print(f"seed {seed}: already complete ({data.cursor} tasks)")
                result_records = data.records
            else:
                learner = StrategyLearner(config.strategy, config.budgets, base_config)
                result = resume_pass(stream, learner, checkpoint)
                result_records = result.records
            write_record_log(record_path, result_records)
            scored_from = 0 if config.phase == "meta_train" else stream.boundary
            scored = [r.error for r in result_records if r.task_index >= scored_from]
            runs.append(
                {
                    "seed": seed,
                    "phase": config.phase,
                    "error": sum(scored) / len(scored),
                    "flops": sum(r.flops for r in result_records),
                    "records": record_path.name,
                }
            )
        _write_summary(out_dir, config, runs)
    return EXIT_OK


# ---------------------------------------------------------------------------
# report
# ---------------------------------------------------------------------------


def cmd_report(args: argparse.Namespace) -> int:
    out_dir = Path(args.out)
    out_dir.mkdir(parents=True, exist_ok=True)
    slices = [s.strip() for s in args.slices.split(",") if s.strip()] if args.slices else []

    overall_rows = []
    slice_rows: dict[str, list[dict]] = {name: [] for name in slices}
    for log_path in args.logs:
        records = read_record_log(Path(log_path))
        if not records:
            raise DataError(f"record log {log_path} is empty")
        error, flops = analysis.aggregate(records)
        overall_rows.append(
            {
                "log": Path(log_path).name,
                "strategy": records[0].strategy,
                "phase": records[0].phase,
                "tasks": len(records),
                "error": error,
                "flops": flops,
            }
        )
        for name in slices:
            for key, (err, fl, count) in analysis.sliced_aggregates(records, name).items():
                slice_rows[name].append(
                    {
                        "log": Path(log_path).name,
                        "strategy": records[0].strategy,
                        "slice": key,
                        "tasks": count,
                        "error": err,
                        "flops": fl,
                    }
                )

    def write_csv(path: Path, rows: list[dict]) -> None:
        if not rows:
            return
        with open(path, "w", newline="") as fh:
            writer = csv.DictWriter(fh, fieldnames=list(rows[0].keys()))
            writer.writeheader()
            writer.writerows(rows)

    write_csv(out_dir / "overall.csv", overall_rows)
    for name in slices:
        write_csv(out_dir / f"slice_{name}.csv", slice_rows[name])
    for row in overall_rows:
        print(
            f"{row['log']}: {row['strategy']} {row['phase']} "
            f"E={row['error']:.4f} cFLOP={row['flops']:,}"
        )
    print(f"tables written to {out_dir}")
    return EXIT_OK


# ---------------------------------------------------------------------------
# plot
# ---------------------------------------------------------------------------


def _summary_points(paths: list[str]) -> dict[str, list[analysis.ParetoPoint]]:
    points: dict[str, list[analysis.ParetoPoint]] = {}
    for path in paths:
        data = json.loads(Path(path).read_text())
        if data.get("schema") != SUMMARY_SCHEMA:
            raise DataError(f"summary {path}: unsupported schema {data.get('schema')}")
        label = data["strategy"]
        for run in data["runs"]:
            points.setdefault(label, []).append(
                analysis.ParetoPoint(
                    label=f"{label}-seed{run['seed']}",
                    error=float(run["error"]),
                    flops=int(run["flops"]),
                )
            )
    return points


def cmd_plot(args: argparse.Namespace) -> int:
    out = Path(args.out) if args.out else Path(f"{args.kind}.png")
    if args.kind == "pareto":
        if not args.inputs:
            raise ConfigError("pareto plot needs at least one summary.json")
        plotting.plot_pareto(_summary_points(args.inputs), out)
    elif args.kind == "regret":
        if not args.reference:
            raise ConfigError("regret plot needs --reference")
        reference = read_record_log(Path(args.reference))
        curves = {}
        for path in args.inputs:
            records = read_record_log(Path(path))
            curves[records[0].strategy + ":" + Path(path).stem] = analysis.regret_curve(
                records, reference
            )
        plotting.plot_regret(curves, out)
    elif args.kind == "fwt":
        data = {}
        for path in args.inputs:
            records = read_record_log(Path(path))
            data[records[0].strategy + ":" + Path(path).stem] = analysis.fwt_by_task(records)
        plotting.plot_fwt(data, out)
    elif args.kind == "transfer":
        if len(args.inputs) != 1:
            raise ConfigError("transfer plot needs exactly one transfer_matrix.json")
        matrix = analysis.TransferMatrix.from_json(json.loads(Path(args.inputs[0]).read_text()))
        plotting.plot_transfer(matrix, out)
    else:
        raise ConfigError(f"unknown plot kind {args.kind!r}")
    print(f"wrote {out}")
    return EXIT_OK


# ---------------------------------------------------------------------------
# entry point
# ---------------------------------------------------------------------------


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="taskstream",
        description="Compute-aware evaluation harness for task streams",
    )
    sub = parser.add_subparsers(dest="command", required=True)

    p_fetch = sub.add_parser("fetch", help="download and prepare datasets")
    p_fetch.add_argument("dataset", nargs="*", help="descriptor ids (default: all)")
    p_fetch.add_argument("--cache", help=f"cache dir (or ${CACHE_ENV_VAR})")
    p_fetch.add_argument("--descriptors", help="alternative descriptor list (yaml)")
    p_fetch.add_argument("--prepare", action="store_true", help="also extract and split")
    p_fetch.set_defaults(func=cmd_fetch)

    p_stream = sub.add_parser("stream", help="stream inspection")
    stream_sub = p_stream.add_subparsers(dest="stream_command", required=True)
    p_info = stream_sub.add_parser("info", help="print stream statistics")
    p_info.add_argument("--manifest")
    p_info.add_argument("--config")
    p_info.add_argument("--short-table", action="store_true", help="print the packaged table")
    p_info.set_defaults(func=cmd_stream_info)

    p_run = sub.add_parser("run", help="execute a configured pass")
    p_run.add_argument("config", help="run config file (yaml)")
    p_run.add_argument("--phase", choices=["meta_train", "meta_test", "transfer_matrix"])
    p_run.add_argument("--output-dir")
    p_run.add_argument("--seeds", help="comma-separated seed list override")
    p_run.set_defaults(func=cmd_run)

    p_resume = sub.add_parser("resume", help="continue an interrupted run")
    p_resume.add_argument("output_dir")
    p_resume.set_defaults(func=cmd_resume)

    p_report = sub.add_parser("report", help="aggregate record logs into CSV tables")
    p_report.add_argument("logs", nargs="+")
    p_report.add_argument("--slices", default="domain,size,resolution")
    p_report.add_argument("--out", default="report")
    p_report.set_defaults(func=cmd_report)

    p_plot = sub.add_parser("plot", help="emit figures from runs")
    p_plot.add_argument("--kind", required=True, choices=["pareto", "regret", "fwt", "transfer"])
    p_plot.add_argument("inputs", nargs="*")
    p_plot.add_argument("--reference", help="reference record log (regret)")
    p_plot.add_argument("--out")
    p_plot.set_defaults(func=cmd_plot)

    return parser


def main(argv: list[str] | None = None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    try:
        return args.func(args)
    except ConfigError as exc:
        print(f"config error: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    except CausalityViolation as exc:
        print(f"causality violation: {exc}", file=sys.stderr)
        return EXIT_CAUSALITY
    except DataError as exc:
        print(f"data error: {exc}", file=sys.stderr)
        return EXIT_DATA
    except TaskStreamError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 1


if __name__ == "__main__":
    sys.exit(main())
