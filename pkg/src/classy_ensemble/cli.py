"""Command-line interface: experiment runs, external-bundle aggregation, and
synthetic dataset generation.

Exit codes: 0 success, 1 configuration/usage error, 2 data error,
3 runtime failure or expired time limit. Progress goes to stderr; stdout
carries only the per-method summary lines.
"""
from __future__ import annotations

import argparse
import sys
from pathlib import Path

import numpy as np

from .data import DataError, load_csv, make_blobs, write_csv
from .harness import (
    DEFAULT_K_GRID,
    DEFAULT_METHODS,
    ExperimentConfig,
    aggregate_csv_rows,
    aggregate_external,
    aggregate_to_dict,
    dump_json,
    experiment_csv_rows,
    report_to_dict,
    run_experiment,
    summary_lines,
)


class ConfigError(ValueError):
    """Bad flags, bad config file, or inconsistent experiment parameters."""


class _Parser(argparse.ArgumentParser):
    # usage errors must exit 1, not argparse's default 2
    def error(self, message):
        self.print_usage(sys.stderr)
        raise ConfigError(message)


def _parse_duration(text: str) -> float:
    text = text.strip().lower()
    factor = 1.0
    if text and text[-1] in "smh":
        factor = {"s": 1.0, "m": 60.0, "h": 3600.0}[text[-1]]
        text = text[:-1]
    try:
        value = float(text) * factor
    except ValueError:
        raise ConfigError(f"cannot parse duration '{text}'") from None
    if value <= 0:
        raise ConfigError("time limit must be positive")
    return value


def _parse_int_list(text: str, what: str) -> tuple[int, ...]:
    try:
        return tuple(int(v.strip()) for v in text.split(",") if v.strip())
    except ValueError:
        raise ConfigError(f"cannot parse {what} '{text}'") from None


_CONFIG_PARSERS = {
    "n_replicates": int,
    "n_models": int,
    "k_grid": lambda v: _parse_int_list(v, "k_grid"),
    "fractions": lambda v: tuple(float(x) for x in v.split(",")),
    "methods": lambda v: tuple(m.strip() for m in v.split(",") if m.strip()),
    "alpha": float,
    "permutation_rounds": int,
    "seed": int,
    "stratified": lambda v: {"true": True, "false": False}[v.strip().lower()],
    "time_limit": lambda v: None if v.strip().lower() in ("", "none") else _parse_duration(v),
}


def parse_config_file(path: str | Path) -> dict:
    """Flat ``key = value`` lines mirroring ExperimentConfig field names."""
    path = Path(path)
    if not path.exists():
        raise ConfigError(f"no such config file: {path}")
    values = {}
    for lineno, line in enumerate(path.read_text().splitlines(), start=1):
        line = line.strip()
        if not line or line.startswith("#"):
            continue
        if "=" not in line:
            raise ConfigError(f"{path}:{lineno}: expected 'key = value'")
        key, _, raw = line.partition("=")
        key = key.strip()
        if key not in _CONFIG_PARSERS:
            raise ConfigError(f"{path}:{lineno}: unknown config key '{key}'")
        try:
            values[key] = _CONFIG_PARSERS[key](raw.strip())
        except ConfigError:
            raise
        except (ValueError, KeyError):
            raise ConfigError(
                f"{path}:{lineno}: cannot parse value for '{key}'"
            ) from None
    return values


def _experiment_config(args) -> ExperimentConfig:
    values = {}
    if args.config:
        values.update(parse_config_file(args.config))
    flag_map = {
        "n_replicates": args.replicates,
        "n_models": args.models,
        "k_grid": _parse_int_list(args.k_grid, "--k-grid") if args.k_grid else None,
        "methods": tuple(m.strip() for m in args.methods.split(",")) if args.methods else None,
        "alpha": args.alpha,
        "permutation_rounds": args.perm_rounds,
        "seed": args.seed,
        "stratified": args.stratified,
        "time_limit": _parse_duration(args.time_limit) if args.time_limit else None,
    }
    for key, value in flag_map.items():
        if value is not None:
            values[key] = value
    try:
        return ExperimentConfig(**values)
    except ValueError as exc:
        raise ConfigError(str(exc)) from exc


def _out_paths(out: str, fmt: str) -> tuple[Path | None, Path | None]:
    path = Path(out)
    if fmt == "csv":
        return None, path
    csv_path = path.with_suffix(".csv") if path.suffix == ".json" else Path(str(path) + ".csv")
    return path, csv_path


def _write_outputs(json_text: str, csv_rows: list[list], out: str, fmt: str):
    json_path, csv_path = _out_paths(out, fmt)
    if json_path is not None:
        json_path.write_text(json_text)
    if csv_path is not None:
        csv_path.write_text(
            "\n".join(",".join(str(c) for c in row) for row in csv_rows) + "\n"
        )


def cmd_run(args) -> int:
    config = _experiment_config(args)
    dataset = load_csv(
        args.data,
        target_column=args.target_col,
        has_header=not args.no_header,
        delimiter=args.delimiter,
    )

    def progress(done, total):
        print(f"replicates {done}/{total}", file=sys.stderr)

    report = run_experiment(dataset, config, jobs=args.jobs, progress=progress)
    _write_outputs(
        dump_json(report_to_dict(report)), experiment_csv_rows(report),
        args.out, args.format,
    )
    for line in summary_lines(report):
        print(line)
    if not report.complete:
        print("time limit expired: report is incomplete", file=sys.stderr)
        return 3
    return 0


def cmd_aggregate(args) -> int:
    config = _experiment_config(args)
    report = aggregate_external(args.bundle, config)
    _write_outputs(
        dump_json(aggregate_to_dict(report)), aggregate_csv_rows(report),
        args.out, args.format,
    )
    best = report.best_single
    print(f"{'best_single':<16} {best.family:<24} test={best.test_score:.4f}")
    for m in report.methods:
        print(
            f"{m.method:<16} k={m.best_k:<6} size={m.size:<6} "
            f"test={m.test_score:.4f}"
        )
    return 0


def cmd_synth(args) -> int:
    if args.samples < 1:
        raise ConfigError("--samples must be >= 1")
    if args.features < 1:
        raise ConfigError("--features must be >= 1")
    if args.classes < 2:
        raise ConfigError("--classes must be >= 2")
    if args.sep < 0:
        raise ConfigError("--sep must be non-negative")
    if not 0.0 <= args.noise < 1.0:
        raise ConfigError("--noise must lie in [0, 1)")
    if args.seed is not None and args.seed < 0:
        raise ConfigError("--seed must be non-negative")
    rng = np.random.default_rng(args.seed)
    try:
        dataset = make_blobs(
            args.samples, args.features, args.classes, args.sep, args.noise, rng,
            source_name=Path(args.out).name,
        )
    except DataError as exc:
        raise ConfigError(str(exc)) from exc
    write_csv(dataset, args.out)
    print(f"wrote {dataset.n_samples} rows to {args.out}", file=sys.stderr)
    return 0


def _add_config_flags(p: argparse.ArgumentParser):
    p.add_argument("--config", help="flat key=value config file")
    p.add_argument("--seed", type=int, default=None, help="master seed (default 0)")
    p.add_argument("--replicates", type=int, default=None,
                   help="replicate count (default 30)")
    p.add_argument("--models", type=int, default=None,
                   help="pool size per replicate (default 250)")
    p.add_argument("--k-grid", default=None,
                   help=f"comma list of k values (default {','.join(map(str, DEFAULT_K_GRID))})")
    p.add_argument("--methods", default=None,
                   help=f"comma list of methods (default {','.join(DEFAULT_METHODS)}; "
                        "also available: classy_cluster)")
    p.add_argument("--alpha", type=float, default=None,
                   help="significance level (default 0.05)")
    p.add_argument("--perm-rounds", type=int, default=None,
                   help="permutation-test rounds (default 10000)")
    p.add_argument("--stratified", action=argparse.BooleanOptionalAction,
                   default=None, help="stratify splits by class (default on)")
    p.add_argument("--time-limit", default=None,
                   help="abort after this long, e.g. 30m, 10h, 600s")


def _add_output_flags(p: argparse.ArgumentParser, default_out: str):
    p.add_argument("--out", default=default_out, help="output path")
    p.add_argument("--format", choices=("json", "csv"), default="json",
                   help="json writes the full report plus a CSV summary; "
                        "csv writes only the summary")


def build_parser() -> argparse.ArgumentParser:
    parser = _Parser(prog="classy-ensemble",
                     description="Ensemble generation and benchmark harness")
    sub = parser.add_subparsers(dest="subcommand", required=True)

    run = sub.add_parser("run", help="run the replicate experiment on a CSV dataset")
    run.add_argument("--data", required=True, help="CSV/TSV dataset path (.gz ok)")
    run.add_argument("--target-col", default="target",
                     help="target column name (default 'target')")
    run.add_argument("--no-header", action="store_true",
                     help="file has no header row; target defaults to last column")
    run.add_argument("--delimiter", default=None,
                     help="field delimiter (default: by file extension)")
    run.add_argument("--jobs", type=int, default=1, help="parallel workers")
    _add_config_flags(run)
    _add_output_flags(run, "report.json")
    run.set_defaults(func=cmd_run)

    agg = sub.add_parser("aggregate",
                         help="rank pre-computed model predictions from a bundle dir")
    agg.add_argument("--bundle", required=True,
                     help="directory with meta.json and per-model proba CSVs")
    _add_config_flags(agg)
    _add_output_flags(agg, "aggregate.json")
    agg.set_defaults(func=cmd_aggregate)

    synth = sub.add_parser("synth", help="write a Gaussian-blob CSV dataset")
    synth.add_argument("--samples", type=int, default=1000)
    synth.add_argument("--features", type=int, default=10)
    synth.add_argument("--classes", type=int, default=3)
    synth.add_argument("--sep", type=float, default=3.0,
                       help="min distance between class centers, in cluster sds")
    synth.add_argument("--noise", type=float, default=0.0,
                       help="label-noise rate in [0, 1)")
    synth.add_argument("--seed", type=int, default=None)
    synth.add_argument("--out", default="blobs.csv")
    synth.set_defaults(func=cmd_synth)
    return parser


def main(argv=None) -> int:
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
        return args.func(args)
    except ConfigError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 1
    except DataError as exc:
        print(f"data error: {exc}", file=sys.stderr)
        return 2
    except Exception as exc:  # noqa: BLE001 - runtime failures map to exit 3
        print(f"runtime error: {exc}", file=sys.stderr)
        return 3


if __name__ == "__main__":
    sys.exit(main())
