"""Command-line surface.

Subcommands: fit, resample, simulate, calibrate, quasar. Inputs are CSV or
JSON files; machine-readable results go to stdout (JSON at full precision,
tables at 4 decimal places). Exit codes: 0 success, 1 input error,
2 optimization failure, 3 resampling or study flagged invalid.

Given one seed and one thread count, every command is bit-reproducible.
"""

from __future__ import annotations

import argparse
import json
import math
import os
import sys
from dataclasses import replace

from .inference import Sided, resample, wald_interval, wald_test, write_replicates_csv
from .loss import WeightScheme
from .model import ValidationError, read_sample_csv
from .optimize import FitOptions, OptimizationError, Strategy, fit
from .quasar import (
    EvolutionModel,
    evolution_sample,
    load_quasar,
    loss_curve,
    loss_curve_tsv,
)
from .simlab import (
    calibrate_truncation,
    design_from_dict,
    design_to_dict,
    iterates_csv,
    report_csv,
    report_json,
    run_study,
)

EXIT_OK = 0
EXIT_INPUT = 1
EXIT_OPTIMIZATION = 2
EXIT_INVALID = 3


class _Parser(argparse.ArgumentParser):
    """argparse reports usage problems with status 2; remap them to 1."""

    def error(self, message):
        self.print_usage(sys.stderr)
        print(f"error: {message}", file=sys.stderr)
        sys.exit(EXIT_INPUT)


def _jsonable(obj):
    if isinstance(obj, float):
        return obj if math.isfinite(obj) else None
    if isinstance(obj, dict):
        return {key: _jsonable(val) for key, val in obj.items()}
    if isinstance(obj, (list, tuple)):
        return [_jsonable(val) for val in obj]
    return obj


def _print_json(payload) -> None:
    sys.stdout.write(json.dumps(_jsonable(payload), indent=2) + "\n")


def _emit(text: str, path: str | None) -> None:
    if path is None:
        sys.stdout.write(text)
    else:
        with open(path, "w") as fh:
            fh.write(text)


def _add_fit_flags(parser) -> None:
    parser.add_argument("--scheme", choices=["wilcoxon", "logrank"],
                        default="wilcoxon", help="pair weighting scheme")
    parser.add_argument("--iterations", type=int, default=3,
                        help="weighted refinement sweeps when --scheme logrank")
    parser.add_argument("--strategy", choices=["direct", "iterative"],
                        default="direct", help="equal-weight stage minimizer")
    parser.add_argument("--tol", type=float, default=0.01,
                        help="coordinate-change threshold between sweeps")


def _fit_options(args) -> FitOptions:
    return FitOptions(
        scheme=WeightScheme(args.scheme),
        logrank_iterations=args.iterations,
        convergence_tol=args.tol,
        strategy=Strategy(args.strategy),
    )


def _default_threads() -> int:
    return os.cpu_count() or 1


def _inference_block(sample, fit_result, opts, args):
    summary = resample(sample, fit_result, opts, B=args.B, rng=args.seed,
                       n_jobs=args.threads)
    sided = Sided(args.sided)
    intervals = []
    tests = []
    for est, se in zip(fit_result.beta_hat, summary.se):
        est, se = float(est), float(se)
        if math.isfinite(se) and se > 0:
            intervals.append(list(wald_interval(est, se, args.level)))
            stat, p = wald_test(est, se, sided)
            tests.append({"statistic": stat, "p_value": p})
        else:
            intervals.append(None)
            tests.append(None)
    block = {
        "B": summary.B,
        "failed": list(summary.failed),
        "invalid": summary.invalid,
        "se": [float(v) for v in summary.se],
        "level": args.level,
        "sided": sided.value,
        "intervals": intervals,
        "tests": tests,
    }
    return block, summary.invalid, summary


def _cmd_fit(args) -> int:
    sample = read_sample_csv(args.sample)
    result = fit(sample, _fit_options(args))
    _print_json(result.to_dict())
    return EXIT_OK


def _cmd_resample(args) -> int:
    sample = read_sample_csv(args.sample)
    opts = _fit_options(args)
    result = fit(sample, opts)
    block, invalid, summary = _inference_block(sample, result, opts, args)
    if args.replicates:
        write_replicates_csv(summary, args.replicates)
    _print_json({"fit": result.to_dict(), "resample": block})
    return EXIT_INVALID if invalid else EXIT_OK


def _load_design(path):
    with open(path) as fh:
        return design_from_dict(json.load(fh))


def _cmd_simulate(args) -> int:
    design = _load_design(args.design)
    if args.seed is not None:
        design = replace(design, seed=args.seed)
    opts = FitOptions(logrank_iterations=args.iterations)
    report = run_study(design, replications=args.replications, B=args.B,
                       opts=opts, n_jobs=args.threads,
                       emit_iterates=bool(args.emit_iterates))
    _emit(report_csv(report), args.csv)
    if args.json:
        _emit(report_json(report), args.json)
    if args.emit_iterates:
        _emit(iterates_csv(report), args.emit_iterates)
    return EXIT_INVALID if report.invalid else EXIT_OK


def _cmd_calibrate(args) -> int:
    design = _load_design(args.design)
    result = calibrate_truncation(design, args.target_left, args.target_right,
                                  rng=args.seed, attempts=args.attempts)
    _print_json({
        "calibration": result.to_dict(),
        "design": design_to_dict(result.apply(design)),
    })
    return EXIT_OK


def _parse_grid(spec: str) -> list[float]:
    parts = spec.split(":")
    if len(parts) != 3:
        raise ValidationError("grid must be lo:hi:step")
    try:
        lo, hi, step = (float(s) for s in parts)
    except ValueError:
        raise ValidationError("grid must be lo:hi:step with numeric parts") from None
    if step <= 0 or hi < lo:
        raise ValidationError("grid needs step > 0 and hi >= lo")
    count = int(math.floor((hi - lo) / step + 1e-9)) + 1
    return [lo + k * step for k in range(count)]


def _cmd_quasar(args) -> int:
    records = load_quasar(args.records)
    if args.model == "both":
        models = [EvolutionModel.LINEAR, EvolutionModel.QUADRATIC]
    else:
        models = [EvolutionModel(args.model)]
    opts = _fit_options(args)
    payload = {"records": len(records), "models": {}}
    any_invalid = False
    for model in models:
        sample = evolution_sample(records, model)
        result = fit(sample, opts)
        entry = {"fit": result.to_dict()}
        if args.B > 0:
            block, invalid, _ = _inference_block(sample, result, opts, args)
            entry["resample"] = block
            any_invalid = any_invalid or invalid
        payload["models"][model.value] = entry

    if args.loss_curve:
        grid = _parse_grid(args.loss_curve)
        tsv = loss_curve_tsv(
            loss_curve(evolution_sample(records, EvolutionModel.LINEAR), grid)
        )
        if args.curve_out:
            _emit(tsv, args.curve_out)
            _print_json(payload)
        else:
            # keep stdout single-format: the curve replaces the JSON report
            sys.stdout.write(tsv)
    else:
        _print_json(payload)
    return EXIT_INVALID if any_invalid else EXIT_OK


def _build_parser() -> _Parser:
    parser = _Parser(prog="dtrank",
                     description="Rank regression for doubly truncated responses.")
    sub = parser.add_subparsers(dest="command")

    p_fit = sub.add_parser("fit", help="point estimate from a sample CSV")
    p_fit.add_argument("sample", help="CSV with header y,l,r,x1,...,xp")
    _add_fit_flags(p_fit)
    p_fit.set_defaults(func=_cmd_fit)

    p_res = sub.add_parser("resample",
                           help="fit plus perturbation se, intervals, tests")
    p_res.add_argument("sample")
    _add_fit_flags(p_res)
    p_res.add_argument("--B", type=int, default=200)
    p_res.add_argument("--seed", type=int, default=0)
    p_res.add_argument("--level", type=float, default=0.95)
    p_res.add_argument("--sided", choices=["one", "two"], default="two")
    p_res.add_argument("--threads", type=int, default=_default_threads())
    p_res.add_argument("--replicates", metavar="PATH",
                       help="also write the replicate matrix CSV here")
    p_res.set_defaults(func=_cmd_resample)

    p_sim = sub.add_parser("simulate", help="replication study from a design JSON")
    p_sim.add_argument("design", help="design JSON (see calibrate output)")
    p_sim.add_argument("--replications", type=int, default=200)
    p_sim.add_argument("--B", type=int, default=200)
    p_sim.add_argument("--iterations", type=int, default=3)
    p_sim.add_argument("--seed", type=int, default=None,
                       help="override the design's seed")
    p_sim.add_argument("--threads", type=int, default=_default_threads())
    p_sim.add_argument("--csv", metavar="PATH",
                       help="write the report table here instead of stdout")
    p_sim.add_argument("--json", metavar="PATH",
                       help="also write the full-precision report here")
    p_sim.add_argument("--emit-iterates", metavar="PATH",
                       help="write fixed-vs-converged iterate pairs here")
    p_sim.set_defaults(func=_cmd_simulate)

    p_cal = sub.add_parser("calibrate",
                           help="bisect window constants to target truncation rates")
    p_cal.add_argument("design")
    p_cal.add_argument("--target-left", type=float, default=0.15)
    p_cal.add_argument("--target-right", type=float, default=0.15)
    p_cal.add_argument("--attempts", type=int, default=200_000)
    p_cal.add_argument("--seed", type=int, default=None)
    p_cal.set_defaults(func=_cmd_calibrate)

    p_q = sub.add_parser("quasar",
                         help="luminosity-evolution analysis from z,m,a,b records")
    p_q.add_argument("records")
    p_q.add_argument("--model", choices=["linear", "quadratic", "both"],
                     default="both")
    _add_fit_flags(p_q)
    p_q.add_argument("--B", type=int, default=500,
                     help="perturbation replicates; 0 skips resampling")
    p_q.add_argument("--seed", type=int, default=0)
    p_q.add_argument("--level", type=float, default=0.95)
    p_q.add_argument("--sided", choices=["one", "two"], default="two")
    p_q.add_argument("--threads", type=int, default=_default_threads())
    p_q.add_argument("--loss-curve", metavar="LO:HI:STEP",
                     help="emit the one-covariate loss curve as TSV")
    p_q.add_argument("--curve-out", metavar="PATH",
                     help="write the TSV here, keeping the JSON on stdout")
    p_q.set_defaults(func=_cmd_quasar)

    parser.set_defaults(func=None)
    return parser


def main(argv=None) -> int:
    parser = _build_parser()
    args = parser.parse_args(argv)
    if args.func is None:
        parser.print_help(sys.stderr)
        return EXIT_INPUT
    try:
        return args.func(args)
    except ValidationError as err:
        print(f"error: {err}", file=sys.stderr)
        return EXIT_INPUT
    except OptimizationError as err:
        print(f"optimization failed: {err}", file=sys.stderr)
        return EXIT_OPTIMIZATION
    except (OSError, json.JSONDecodeError, ValueError, RuntimeError) as err:
        print(f"error: {err}", file=sys.stderr)
        return EXIT_INPUT


if __name__ == "__main__":
    sys.exit(main())
