"""Perturbation resampling, Wald intervals and tests.

Standard errors come from refitting under random pairwise perturbations: each
replicate draws i.i.d. gamma multipliers W_i, weighs the pair (i, j) by
W_i + W_j, and reruns the same fitting pipeline that produced the point
estimate, started from it. The spread of the replicates estimates the
sampling covariance of the estimator. The gamma law is pinned to shape 0.25
so that the variance equals four times the squared mean; the rate only
rescales all weights, which leaves every argmin unchanged.
"""

from __future__ import annotations

import csv
import math
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass
from enum import Enum
from typing import Sequence

import numpy as np
from scipy.stats import norm

from .loss import PairTerms, PerturbationWeights, WeightScheme
from .model import TruncatedSample
from .optimize import (
    FitOptions,
    FitResult,
    OptimizationError,
    _guarded_minimize,
    _logrank_sweep,
)


@dataclass(frozen=True)
class PerturbationLaw:
    """Gamma law for the perturbation multipliers.

    The shape is fixed at 1/4 by the moment condition variance = 4 * mean^2;
    the rate is free because rescaling every W_i by the same constant scales
    the perturbed objective without moving its argmin. Defaults give mean 0.5
    and variance 1.
    """

    shape: float = 0.25
    rate: float = 0.5

    def __post_init__(self):
        if self.shape <= 0 or self.rate <= 0:
            raise ValueError("shape and rate must be positive")
        if abs(self.shape - 0.25) > 1e-12:
            raise ValueError(
                "moment condition variance = 4*mean^2 requires shape = 0.25"
            )

    @property
    def mean(self) -> float:
        return self.shape / self.rate

    @property
    def variance(self) -> float:
        return self.shape / self.rate**2


class Sided(Enum):
    ONE_SIDED_GREATER = "one"
    TWO_SIDED = "two"


@dataclass(frozen=True, eq=False)
class ResampleSummary:
    """Replicate matrix with its empirical spread.

    Replicates that errored are NaN rows in ``replicates``; those plus any
    non-converged refits are listed in ``failed`` and excluded from se and
    cov (divisor B_good - 1, centered at the replicate mean). ``invalid``
    flags a failure fraction above 5%. Percentile intervals can be formed
    directly from ``replicates``.
    """

    replicates: np.ndarray
    se: np.ndarray
    cov: np.ndarray
    B: int
    failed: tuple[int, ...]
    invalid: bool

    def to_dict(self) -> dict:
        return {
            "B": int(self.B),
            "se": [float(v) for v in self.se],
            "cov": [[float(v) for v in row] for row in self.cov],
            "failed": list(self.failed),
            "invalid": bool(self.invalid),
        }


def draw_perturbation(n: int, law: PerturbationLaw = PerturbationLaw(),
                      rng=None) -> PerturbationWeights:
    """n i.i.d. gamma multipliers from the law, reproducible from the rng."""
    if n < 1:
        raise ValueError("n must be at least 1")
    gen = np.random.default_rng(rng)
    return PerturbationWeights(gen.gamma(law.shape, 1.0 / law.rate, size=n))


def _pair_terms_for(sample: TruncatedSample) -> PairTerms:
    """Engine for the sample; skip window arrays when nothing is truncated."""
    unbounded = bool(
        np.isneginf(sample.lower).all() and np.isposinf(sample.upper).all()
    )
    return PairTerms(sample, windows=not unbounded)


def _single_replicate(pt: PairTerms, fit: FitResult, opts: FitOptions,
                      w: np.ndarray) -> tuple[np.ndarray, bool]:
    """One perturbed refit following the point estimate's pipeline shape.

    Returns (replicate estimate, converged). Wilcoxon-scheme fits reminimize
    the perturbed loss from fit.beta_hat; LogRank-scheme fits compute the
    perturbed Wilcoxon minimizer first (started from the recorded Wilcoxon
    iterate) and then rerun the same number of perturbed weighted refits.
    """
    pp = pt.perturbation_pairs(w)
    sopts = opts.simplex
    if opts.scheme is WeightScheme.WILCOXON:
        res, _ = _guarded_minimize(lambda b: pt.loss_value(b, pp),
                                   fit.beta_hat, sopts)
        return res.x, res.converged
    start0 = np.asarray(fit.iterates[0], dtype=float)
    res, _ = _guarded_minimize(lambda b: pt.loss_value(b, pp), start0, sopts)
    sweep = _logrank_sweep(pt, res.x, opts.logrank_iterations, sopts,
                           opts.convergence_tol, pert_pairs=pp)
    return sweep.iterates[-1], res.converged and sweep.nm_converged


def _replicate_chunk(sample: TruncatedSample, fit: FitResult, opts: FitOptions,
                     weights: list[np.ndarray]) -> list[tuple[np.ndarray, bool]]:
    pt = _pair_terms_for(sample)
    out = []
    for w in weights:
        try:
            out.append(_single_replicate(pt, fit, opts, w))
        except OptimizationError:
            out.append((None, False))
    return out


def resample(sample: TruncatedSample, fit: FitResult,
             opts: FitOptions = FitOptions(), B: int = 200,
             law: PerturbationLaw = PerturbationLaw(), rng=0,
             n_jobs: int = 1,
             perturbations: Sequence[PerturbationWeights] | None = None
             ) -> ResampleSummary:
    """B perturbed refits and their empirical covariance.

    Per-replicate streams are spawned from the master rng up front, so serial
    and parallel schedules produce bit-identical results. ``perturbations``
    overrides the internal draws (mainly for tests); its length must be B.
    """
    if B < 2:
        raise ValueError("B must be at least 2")
    p = sample.p
    if perturbations is not None:
        if len(perturbations) != B:
            raise ValueError("need exactly B perturbation vectors")
        weights = [pw.w for pw in perturbations]
    else:
        master = np.random.default_rng(rng)
        weights = [draw_perturbation(sample.n, law, g).w
                   for g in master.spawn(B)]

    results: list[tuple[np.ndarray | None, bool]] = []
    if n_jobs <= 1:
        results = _replicate_chunk(sample, fit, opts, weights)
    else:
        chunk_ids = np.array_split(np.arange(B), n_jobs)
        with ProcessPoolExecutor(max_workers=n_jobs) as ex:
            futures = [
                ex.submit(_replicate_chunk, sample, fit, opts,
                          [weights[i] for i in ids])
                for ids in chunk_ids if len(ids)
            ]
            for fut in futures:
                results.extend(fut.result())

    rows = np.full((B, p), np.nan)
    failed = []
    for b, (beta, ok) in enumerate(results):
        if beta is None or not ok:
            failed.append(b)
        if beta is not None:
            rows[b] = beta
    good = np.delete(rows, failed, axis=0) if failed else rows
    if good.shape[0] >= 2:
        # anchor on one replicate before centering: the spread is shift
        # invariant, and identical replicates then give se exactly 0
        anchored = good - good[0]
        se = anchored.std(axis=0, ddof=1)
        centered = anchored - anchored.mean(axis=0)
        cov = centered.T @ centered / (good.shape[0] - 1)
    else:
        se = np.full(p, np.nan)
        cov = np.full((p, p), np.nan)
    return ResampleSummary(
        replicates=rows,
        se=se,
        cov=cov,
        B=B,
        failed=tuple(failed),
        invalid=len(failed) > 0.05 * B,
    )


def scale_invariance_check(sample: TruncatedSample, fit: FitResult,
                           opts: FitOptions, W: PerturbationWeights,
                           c: float) -> bool:
    """True iff rescaling all perturbation weights by c leaves the perturbed
    minimizer unchanged within x_tol."""
    if c <= 0:
        raise ValueError("c must be positive")
    pt = _pair_terms_for(sample)
    b1, _ = _single_replicate(pt, fit, opts, W.w)
    b2, _ = _single_replicate(pt, fit, opts, c * W.w)
    return bool(np.max(np.abs(b1 - b2)) <= opts.simplex.x_tol)


def wald_interval(estimate: float, se: float, level: float = 0.95
                  ) -> tuple[float, float]:
    if not 0.0 < level < 1.0:
        raise ValueError("level must be in (0, 1)")
    if se <= 0:
        raise ValueError("se must be positive")
    z = float(norm.ppf(0.5 * (1.0 + level)))
    return estimate - z * se, estimate + z * se


def wald_test(estimate: float, se: float,
              sided: Sided = Sided.TWO_SIDED) -> tuple[float, float]:
    if se <= 0:
        raise ValueError("se must be positive")
    stat = estimate / se
    if sided is Sided.ONE_SIDED_GREATER:
        p = float(norm.sf(stat))
    else:
        p = float(2.0 * norm.sf(abs(stat)))
    return float(stat), p


def write_replicates_csv(summary: ResampleSummary, path) -> None:
    """Replicate matrix as CSV with header b,beta_1,...,beta_p."""
    p = summary.replicates.shape[1]
    with open(path, "w", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(["b"] + [f"beta_{k}" for k in range(1, p + 1)])
        for b, row in enumerate(summary.replicates, start=1):
            writer.writerow([b] + [repr(float(v)) for v in row])
