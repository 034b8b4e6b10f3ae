"""Command-line interface: ``stagegrn <command> [options]``.

Exit codes: 0 success, 1 usage error, 2 data error, 3 numerical failure.
"""

from __future__ import annotations

import argparse
import sys
from pathlib import Path

import numpy as np

from . import __version__
from .baselines import MODES, run_baseline
from .benchmark import run_benchmark
from .config import KEYS, ConfigError, Settings, parse_value, read_config
from .io import DatasetFormatError, dumps_json, load_dataset, metrics_table, read_report, write_dataset, write_text
from .mcmc import run_chain
from .metrics import INDEXES, AggregateMetrics, compute_metrics
from .model import Dims, generate_coefficients, generate_network, simulate_dataset
from .report import report_from_model, report_from_summary
from .subsample import subsample_runs

EXIT_OK, EXIT_USAGE, EXIT_DATA, EXIT_NUMERICAL = 0, 1, 2, 3


class UsageError(Exception):
    pass


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        raise UsageError(f"{self.prog}: {message}")


def _global_flags() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(add_help=False)
    g = p.add_argument_group("global options")
    g.add_argument("--seed", type=int, default=0, help="master random seed (default 0)")
    g.add_argument("--config", type=Path, help="key = value settings file")
    g.add_argument("--out", type=Path, help="output file (default: standard output)")
    g.add_argument("--format", choices=("json", "tsv"), default="json", help="output format")
    g.add_argument("--threads", type=int, default=1, help="worker processes for replicates and sub-runs")
    s = p.add_argument_group("settings (override the config file)")
    for key in KEYS:
        s.add_argument(f"--{key.name}", dest=f"set_{key.name}", metavar="VALUE", help=key.help)
    return p


def build_parser() -> argparse.ArgumentParser:
    common = _global_flags()
    parser = _Parser(prog="stagegrn", description="Stage-transition gene regulatory network inference.")
    parser.add_argument("--version", action="version", version=f"%(prog)s {__version__}")
    sub = parser.add_subparsers(dest="command", required=True, parser_class=_Parser)

    p = sub.add_parser("simulate", parents=[common], help="simulate a network and a staged-death dataset")
    p.add_argument("--truth", type=Path, help="also write the true network as JSON")
    p.add_argument("--include-latent", action="store_true", help="write unmeasured simulated values (observed=0)")

    p = sub.add_parser("infer", parents=[common], help="run the sampler on a dataset")
    p.add_argument("--data", type=Path, required=True)

    p = sub.add_parser("baseline", parents=[common], help="run a correlation baseline on a dataset")
    p.add_argument("--data", type=Path, required=True)
    p.add_argument("--mode", choices=MODES, required=True)

    sub.add_parser("benchmark", parents=[common], help="replicated simulation study")

    p = sub.add_parser("subsample", parents=[common], help="inference on weighted gene/region subsets")
    p.add_argument("--data", type=Path, required=True)

    p = sub.add_parser("metrics", parents=[common], help="score an estimated network against the truth")
    p.add_argument("--truth", type=Path, required=True, help="JSON report of the true network")
    p.add_argument("--estimate", type=Path, required=True, help="JSON report of the estimated network")
    return parser


def _settings(args) -> Settings:
    values = read_config(args.config) if args.config else {}
    for key in KEYS:
        text = getattr(args, f"set_{key.name}")
        if text is not None:
            values[key.name] = parse_value(key.name, text)
    return Settings(values)


def _emit(text: str, out: Path | None) -> None:
    if out is None:
        sys.stdout.write(text)
    else:
        write_text(text, out)


def _dims_meta(dims: Dims) -> dict:
    return {"T": dims.T, "G": dims.G, "R": dims.R, "n": list(dims.n)}


def _meta(args, settings: Settings, dims: Dims, **extra) -> dict:
    return {"command": args.command, "seed": args.seed, "dims": _dims_meta(dims), "settings": settings.as_dict(),
            "version": __version__, **extra}


def _load(args, settings: Settings):
    return load_dataset(args.data, settings.get("stages"))


def _report_text(report, fmt: str) -> str:
    return dumps_json(report.to_dict()) if fmt == "json" else report.table()


def cmd_simulate(args, settings: Settings) -> None:
    rng = np.random.default_rng(np.random.SeedSequence([args.seed]))
    bench = settings.bench(args.seed, 1)
    dims = bench.dims
    truth = generate_network(rng, dims, bench.density)
    coeffs = generate_coefficients(rng, truth, bench.prior)
    dataset = simulate_dataset(truth, coeffs, bench.true_params(), dims, rng)
    if args.out is None:
        raise UsageError("simulate needs --out for the dataset CSV")
    write_dataset(dataset, args.out, include_latent=args.include_latent)
    if args.truth is not None:
        params = {"mu": bench.true_params().mu, "sigma1_sq": bench.true_sigma1_sq, "mu2": bench.true_mu2,
                  "sigma2_sq": bench.true_sigma2_sq, "coefficients": coeffs.values}
        report = report_from_model(truth, meta=_meta(args, settings, dims), params=params)
        write_text(dumps_json(report.to_dict()), args.truth)


def cmd_infer(args, settings: Settings) -> None:
    dataset = _load(args, settings)
    summary = run_chain(dataset, settings.prior(), settings.mcmc(args.seed))
    report = report_from_summary(summary, settings.get("min_support"), _meta(args, settings, dataset.dims))
    _emit(_report_text(report, args.format), args.out)


def cmd_baseline(args, settings: Settings) -> None:
    dataset = _load(args, settings)
    rng = np.random.default_rng(np.random.SeedSequence([args.seed]))
    model = run_baseline(dataset, args.mode, rng, settings.get("rf_trees"), settings.get("rf_max_iters"))
    report = report_from_model(model, meta=_meta(args, settings, dataset.dims, mode=args.mode))
    _emit(_report_text(report, args.format), args.out)


def cmd_benchmark(args, settings: Settings) -> None:
    result = run_benchmark(settings.bench(args.seed, args.threads))
    if args.format == "json":
        _emit(dumps_json(result.to_dict()), args.out)
    else:
        _emit(metrics_table(result.aggregate), args.out)


def cmd_subsample(args, settings: Settings) -> None:
    dataset = _load(args, settings)
    cfg = settings.subsample(dataset.dims.G, dataset.dims.R)
    report = subsample_runs(dataset, cfg, settings.mcmc(args.seed), settings.prior(), args.seed, args.threads,
                            settings.get("min_support"))
    meta = dict(report.meta)
    meta.update(_meta(args, settings, dataset.dims))
    report = type(report)(report.transitions, report.params, meta)
    _emit(_report_text(report, args.format), args.out)


def cmd_metrics(args, settings: Settings) -> None:
    truth, estimate = read_report(args.truth), read_report(args.estimate)
    d = truth.meta.get("dims")
    if d is None:
        raise DatasetFormatError(f"{args.truth}: report has no dims in its meta block")
    dims = Dims(int(d["T"]), int(d["G"]), int(d["R"]), tuple(d["n"]))
    report = compute_metrics(truth.model(dims), estimate.model(dims))
    if args.format == "json":
        out = {"transitions": {str(t): {"counts": vars(c), **report.rows[t]} for t, c in report.counts.items()},
               "total": {"counts": vars(report.total_counts), **report.total}}
        _emit(dumps_json(out), args.out)
    else:
        _emit(metrics_table({"estimate": AggregateMetrics.from_reports([report])}, INDEXES), args.out)


COMMANDS = {"simulate": cmd_simulate, "infer": cmd_infer, "baseline": cmd_baseline, "benchmark": cmd_benchmark,
            "subsample": cmd_subsample, "metrics": cmd_metrics}


def main(argv: list[str] | None = None) -> int:
    try:
        args = build_parser().parse_args(argv)
        if args.threads < 1:
            raise UsageError("--threads must be >= 1")
        settings = _settings(args)
        with np.errstate(over="raise", invalid="ignore", divide="ignore"):
            COMMANDS[args.command](args, settings)
    except UsageError as exc:
        print(f"usage error: {exc}", file=sys.stderr)
        return EXIT_USAGE
    except ConfigError as exc:
        print(f"usage error: {exc}", file=sys.stderr)
        return EXIT_USAGE
    except (np.linalg.LinAlgError, FloatingPointError, OverflowError) as exc:
        print(f"numerical failure: {exc}", file=sys.stderr)
        return EXIT_NUMERICAL
    except (DatasetFormatError, OSError, ValueError) as exc:
        print(f"data error: {exc}", file=sys.stderr)
        return EXIT_DATA
    return EXIT_OK


if __name__ == "__main__":
    sys.exit(main())
