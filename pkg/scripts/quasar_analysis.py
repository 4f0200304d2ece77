#!/usr/bin/env python3
"""Full luminosity-evolution analysis of a z,m,a,b record file.

Fits the linear and quadratic evolution models, resamples both, prints a
compact coefficient table, and writes the one-covariate loss curve so the
minimum can be eyeballed against the point estimate.
"""

import argparse
import sys
import warnings

import dtrank as dt


def analyze(records, model, B, seed, threads, level):
    with warnings.catch_warnings():
        warnings.simplefilter("ignore", RuntimeWarning)
        sample = dt.evolution_sample(records, model)
    opts = dt.FitOptions()
    result = dt.fit(sample, opts)
    summary = dt.resample(sample, result, opts, B=B, rng=seed, n_jobs=threads)
    print(f"{model.value} model (n={sample.n}, B={B}, "
          f"{len(summary.failed)} failed replicates)")
    for j, (est, se) in enumerate(zip(result.beta_hat, summary.se), start=1):
        stat, p = dt.wald_test(float(est), float(se))
        lo, hi = dt.wald_interval(float(est), float(se), level)
        print(f"  theta_{j}: {est:+.4f}  se {se:.4f}  "
              f"{level:.0%} interval [{lo:+.4f}, {hi:+.4f}]  "
              f"wald {stat:+.3f}  p {p:.4g}")
    return sample


def main():
    ap = argparse.ArgumentParser(description=__doc__)
    ap.add_argument("records", help="CSV with header z,m,a,b")
    ap.add_argument("--B", type=int, default=500)
    ap.add_argument("--seed", type=int, default=0)
    ap.add_argument("--threads", type=int, default=1)
    ap.add_argument("--level", type=float, default=0.95)
    ap.add_argument("--curve", metavar="PATH", default=None,
                    help="write the linear-model loss curve TSV here")
    ap.add_argument("--grid", default="0.0:5.0:0.05",
                    help="loss curve grid as lo:hi:step")
    args = ap.parse_args()

    records = dt.load_quasar(args.records)
    print(f"{len(records)} records")
    linear_sample = analyze(records, dt.EvolutionModel.LINEAR, args.B,
                            args.seed, args.threads, args.level)
    analyze(records, dt.EvolutionModel.QUADRATIC, args.B, args.seed,
            args.threads, args.level)

    if args.curve:
        lo, hi, step = (float(v) for v in args.grid.split(":"))
        grid = []
        t = lo
        while t <= hi + 1e-9:
            grid.append(t)
            t += step
        with open(args.curve, "w") as fh:
            fh.write(dt.loss_curve_tsv(dt.loss_curve(linear_sample, grid)))
        print(f"wrote loss curve ({len(grid)} points) to {args.curve}")
    return 0


if __name__ == "__main__":
    sys.exit(main())
