import argparse
import json
import os
import sys

from pathlib import Path

from dotenv import load_dotenv

from bench import DEFAULT_LOG_LEVEL, DEFAULT_OUT_DIR, ConfigError
from bench.config import ExperimentConfig, config_schema, load_config, load_grid
from bench.log import configure_logging
from bench.runner import output_dir, run_experiment, sweep
from bench.selfcheck import run_selfcheck
from bench.toy import run_toy


def parse_seeds(value: str) -> list[int]:
    try:
        return [int(s) for s in value.split(",") if s.strip()]
    except ValueError as exc:
        raise argparse.ArgumentTypeError(f"seeds must be comma-separated integers, got {value!r}") from exc


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="softreset", description="Soft Reset non-stationary learning benchmark")
    commands = parser.add_subparsers(dest="command", required=True)

    def add_overrides(sub: argparse.ArgumentParser) -> None:
        sub.add_argument("--out", type=Path, help="output directory")
        sub.add_argument("--seeds", type=parse_seeds, help="comma-separated seeds, e.g. 0,1,2")
        sub.add_argument("--data", help="directory holding the IDX files")
        sub.add_argument("--synthetic", action="store_true", help="use the synthetic dataset instead of IDX files")

    run = commands.add_parser("run", help="run one experiment config")
    run.add_argument("--config", type=Path, required=True)
    add_overrides(run)

    grid = commands.add_parser("sweep", help="run a hyperparameter grid")
    grid.add_argument("--config", type=Path, required=True, help="grid file: {\"base\": ..., \"grid\": ...}")
    grid.add_argument("--workers", type=int, help="parallel runs")
    grid.add_argument("--budget", type=int, help="maximum number of grid points")
    add_overrides(grid)

    toy = commands.add_parser("toy", help="mean-tracking comparison of SGD, resets and Soft Reset")
    toy.add_argument("--out", type=Path)
    toy.add_argument("--seeds", type=parse_seeds, default=[0, 1, 2])

    commands.add_parser("selfcheck", help="run the numerical invariant suite")
    commands.add_parser("schema", help="print the experiment config JSON schema")
    return parser


def apply_overrides(cfg: ExperimentConfig, args: argparse.Namespace) -> ExperimentConfig:
    update = {}
    if args.out is not None:
        update["output_dir"] = str(args.out)
    if args.seeds:
        update["seeds"] = args.seeds
    if args.data is not None:
        update["data_dir"] = args.data
    if args.synthetic:
        update["synthetic"] = True
    return cfg.model_copy(update=update)


def main(argv: list[str] | None = None) -> int:
    load_dotenv()
    args = build_parser().parse_args(argv)
    configure_logging(os.getenv("SOFTRESET_LOG_LEVEL", DEFAULT_LOG_LEVEL))

    match args.command:
        case "run":
            result = run_experiment(apply_overrides(load_config(args.config), args))
            print(json.dumps(result.summary.get("aggregate", {}), indent=2))
            return 0 if result.ok else 1

        case "sweep":
            configs = load_grid(args.config)
            configs = [apply_overrides(cfg, args).model_copy(update={"output_dir": None}) for cfg in configs]
            out_dir = args.out or Path(os.getenv("SOFTRESET_OUT_DIR", DEFAULT_OUT_DIR)) / args.config.stem
            result = sweep(configs, out_dir, args.workers, args.budget)
            print(json.dumps({variant: cfg.name for variant, cfg in result.best.items()}, indent=2))
            return 0 if result.ok else 1

        case "toy":
            out_dir = args.out or output_dir(ExperimentConfig(name="toy"))
            print(run_toy(out_dir, args.seeds).to_string(index=False))
            return 0

        case "selfcheck":
            results = run_selfcheck()
            for r in results:
                print(f"{'PASS' if r.passed else 'FAIL'}  {r.name:<20} {r.seconds:7.2f}s  {r.detail}")
            return 0 if all(r.passed for r in results) else 1

        case "schema":
            print(json.dumps(config_schema(), indent=2))
            return 0


if __name__ == "__main__":
    try:
        sys.exit(main())
    except ConfigError as exc:
        print(f"config error: {exc}", file=sys.stderr)
        sys.exit(2)
