import argparse
import logging
import os
import sys
from pathlib import Path

import numpy as np
from dotenv import load_dotenv
from pydantic import ValidationError

from grouped_bart.logic.bench import run_benchmark
from grouped_bart.logic.config_manager import (
    DEFAULT_PROFILE,
    LOG_LEVEL_ENV,
    apply_overrides,
    default_workers,
    load_plan,
    load_profile,
)
from grouped_bart.logic.data import Dataset, generate_synthetic, load_csv, load_predictors, save_csv
from grouped_bart.logic.errors import ConfigError, GBartError
from grouped_bart.logic.grouping import fit_bart, fit_grouped, gbart_fit, isg_search
from grouped_bart.logic.model_store import load_model, load_partition, save_model, save_partition, save_predictions, save_trace
from grouped_bart.logic.sampler import predict, variable_usage
from grouped_bart.logic.seeding import derive_seed

logger = logging.getLogger("grouped_bart")

LOG_FORMAT = "%(asctime)s %(levelname)s %(name)s: %(message)s"
EXIT_OK, EXIT_USAGE, EXIT_FAILURE = 0, 1, 2


class ArgumentParser(argparse.ArgumentParser):
    """argparse with the help text on errors and exit code 1 for usage mistakes."""

    def error(self, message):
        self.print_help(sys.stderr)
        self.exit(EXIT_USAGE, f"\n{self.prog}: error: {message}\n")


def configure_logging(verbose: bool, quiet: bool) -> None:
    if verbose:
        level = "DEBUG"
    elif quiet:
        level = "WARNING"
    else:
        level = os.environ.get(LOG_LEVEL_ENV, "INFO").strip().upper()
        # logging.getLevelNamesMapping() is 3.11+; on 3.10 use the same mapping it copies.
        level_names = getattr(logging, "getLevelNamesMapping", lambda: dict(logging._nameToLevel))()
        if level not in level_names:
            raise ConfigError(f"{LOG_LEVEL_ENV} must be a logging level name, got {level!r}")
    logging.basicConfig(level=level, format=LOG_FORMAT)


# --- Argument helpers ---
def _seed(text: str) -> int:
    value = int(text)
    if value < 0:
        raise argparse.ArgumentTypeError(f"seed must be >= 0, got {value}")
    return value


def _add_data_args(sub: argparse.ArgumentParser) -> None:
    source = sub.add_mutually_exclusive_group(required=True)
    source.add_argument("--data", type=Path, help="CSV file with a header row")
    source.add_argument("--case", type=int, help="Synthetic case 1-12, generated from --seed")
    sub.add_argument("--target", help="Target column name or index (with --data)")
    sub.add_argument("--drop", action="append", default=[], help="Column to ignore (with --data, repeatable)")
    sub.add_argument("--n", type=int, default=500, help="Rows to generate (with --case)")


def _add_run_args(sub: argparse.ArgumentParser) -> None:
    sub.add_argument("--seed", type=_seed, default=0)
    sub.add_argument("--profile", default=DEFAULT_PROFILE, help="Named profile from config/profiles.yaml")
    sub.add_argument("--set", dest="overrides", action="append", default=[], metavar="KEY=VALUE",
                     help="Override a setting, e.g. mcmc.ndpost=50 or search.max_rounds=3 (repeatable)")
    sub.add_argument("--workers", type=int, help="Concurrent fits (default: $GBART_WORKERS or 1)")


def _load_data(args) -> Dataset:
    if args.data is not None:
        if args.target is None:
            args.parser.error("--target is required with --data")
        return load_csv(args.data, args.target, args.drop)
    return generate_synthetic(args.case, args.n, args.seed)


def _settings(args):
    profile = load_profile(args.profile)
    mcmc, search = apply_overrides((profile.mcmc, profile.search), args.overrides)
    workers = args.workers if args.workers is not None else default_workers()
    if workers < 1:
        args.parser.error("--workers must be positive")
    return mcmc, search.model_copy(update={"workers": workers})


# --- Commands ---
def cmd_gen_data(args) -> int:
    data = generate_synthetic(args.case, args.n, args.seed, noise=not args.noiseless)
    save_csv(data, args.out)
    print(f"Wrote case {args.case}: {data.n} rows, {data.p} predictors -> {args.out}")
    return EXIT_OK


def cmd_group_search(args) -> int:
    data = _load_data(args)
    mcmc, search = _settings(args)
    partition, trace = isg_search(data, search, derive_seed(args.seed, "search"), mcmc)
    save_partition(partition, args.out)
    if args.trace is not None:
        save_trace(trace, args.trace)
    print(f"Partition {partition} after {len(trace.rounds)} round(s) -> {args.out}")
    return EXIT_OK


def cmd_fit(args) -> int:
    data = _load_data(args)
    mcmc, search = _settings(args)
    fit_seed = derive_seed(args.seed, "fit")
    if args.partition is not None:
        partition = load_partition(args.partition)
        fit = fit_grouped(data, partition, search.stage2_trees, mcmc, fit_seed)
    elif args.method == "bart":
        fit = fit_bart(data, search.stage2_trees, mcmc, fit_seed)
    else:
        fit, _, _ = gbart_fit(data, search, mcmc, fit_seed)
    save_model(fit, args.out, columns=data.column_names(), target=data.target_name)

    rates = fit.diagnostics.acceptance_rates()
    logger.info("acceptance rates: %s", {k: round(v, 3) for k, v in rates.items()})
    usage = variable_usage(fit)
    print(f"Fitted {data.n} rows with partition {fit.partition} -> {args.out}")
    print(f"  posterior mean sigma: {float(np.mean(fit.sigmas_original_scale())):.4f}")
    for name, count in zip(data.column_names(), usage):
        print(f"  {name}: {int(count)} split(s)")
    return EXIT_OK


def cmd_predict(args) -> int:
    fit, columns = load_model(args.model)
    X = load_predictors(args.data, columns, fit.partition.num_variables)
    predictions = predict(fit, X)
    save_predictions(predictions, args.out)
    print(f"Wrote {len(predictions)} prediction(s), mean {float(np.mean(predictions)):.4f} -> {args.out}")
    return EXIT_OK


def cmd_benchmark(args) -> int:
    plan = load_plan(args.plan, profile=args.profile, overrides=args.overrides)
    update = {}
    if args.workers is not None:
        if args.workers < 1:
            args.parser.error("--workers must be positive")
        update["workers"] = args.workers
    if args.deterministic:
        update["record_wall_time"] = False
    if args.replications is not None:
        update["replications"] = args.replications
    if update:
        try:
            plan = plan.model_validate({**plan.model_dump(), **update})
        except ValidationError as e:
            raise ConfigError(f"invalid benchmark options: {e}") from e
    table = run_benchmark(plan)
    table.write(args.csv, args.json)
    print(table.to_frame().to_string(index=False))
    return EXIT_OK


def build_parser() -> ArgumentParser:
    parser = ArgumentParser(prog="grouped-bart", description="Grouped Bayesian additive regression trees")
    verbosity = parser.add_mutually_exclusive_group()
    verbosity.add_argument("-v", "--verbose", action="store_true", help="Debug logging")
    verbosity.add_argument("-q", "--quiet", action="store_true", help="Warnings and errors only")
    commands = parser.add_subparsers(dest="command", required=True, metavar="COMMAND")

    sub = commands.add_parser("gen-data", help="Write a synthetic dataset as CSV")
    sub.add_argument("--case", type=int, required=True)
    sub.add_argument("--n", type=int, default=500)
    sub.add_argument("--seed", type=_seed, default=0)
    sub.add_argument("--noiseless", action="store_true", help="Omit the noise term")
    sub.add_argument("--out", type=Path, required=True)
    sub.set_defaults(handler=cmd_gen_data, parser=sub)

    sub = commands.add_parser("group-search", help="Discover interacting predictor pairs")
    _add_data_args(sub)
    _add_run_args(sub)
    sub.add_argument("--out", type=Path, required=True, help="Partition JSON")
    sub.add_argument("--trace", type=Path, help="Search trace, JSON lines")
    sub.set_defaults(handler=cmd_group_search, parser=sub)

    sub = commands.add_parser("fit", help="Fit a model and save it as JSON")
    _add_data_args(sub)
    _add_run_args(sub)
    sub.add_argument("--partition", type=Path, help="Partition JSON; skips the search")
    sub.add_argument("--method", choices=["gbart", "bart"], default="gbart",
                     help="Without --partition: search then fit (gbart) or one group (bart)")
    sub.add_argument("--out", type=Path, required=True, help="Model JSON")
    sub.set_defaults(handler=cmd_fit, parser=sub)

    sub = commands.add_parser("predict", help="Score a CSV with a saved model")
    sub.add_argument("--model", type=Path, required=True)
    sub.add_argument("--data", type=Path, required=True)
    sub.add_argument("--out", type=Path, required=True, help="Predictions CSV")
    sub.set_defaults(handler=cmd_predict, parser=sub)

    sub = commands.add_parser("benchmark", help="Cross-validated GBART vs BART comparison")
    sub.add_argument("--plan", type=Path, required=True, help="key=value plan file")
    sub.add_argument("--profile", help="Profile overriding the plan's own")
    sub.add_argument("--set", dest="overrides", action="append", default=[], metavar="KEY=VALUE")
    sub.add_argument("--workers", type=int)
    sub.add_argument("--replications", type=int)
    sub.add_argument("--deterministic", action="store_true", help="Write wall times as 0 for reproducible files")
    sub.add_argument("--csv", type=Path, default=Path("results/benchmark.csv"))
    sub.add_argument("--json", type=Path, default=Path("results/benchmark.json"))
    sub.set_defaults(handler=cmd_benchmark, parser=sub)
    return parser


def cli_main(argv: list[str] | None = None) -> int:
    load_dotenv()
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except SystemExit as e:
        return e.code if isinstance(e.code, int) else EXIT_USAGE
    try:
        configure_logging(args.verbose, args.quiet)
        return args.handler(args)
    except SystemExit as e:
        return e.code if isinstance(e.code, int) else EXIT_USAGE
    except (GBartError, OSError) as e:
        logger.error("%s", e)
        return EXIT_FAILURE


if __name__ == "__main__":
    sys.exit(cli_main())
