"""Derivative-free fitting of the clipped pairwise objective.

The loss is piecewise linear and generally not convex once truncation is
active, so fitting goes through a Nelder-Mead simplex with a cheap
local-minimum certificate and a single perturbed restart. Three fit shapes
are provided: direct minimization of the clipped loss, an iterative scheme
that refits a convex comparability-restricted L1 objective, and a weighted
scheme that alternates between refreshing at-risk weights and minimizing the
weighted clipped loss a fixed number of times.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from enum import Enum
from typing import Callable, NamedTuple

import numpy as np
from scipy.optimize import minimize

from .loss import PairTerms, WeightScheme
from .model import TruncatedSample

_ITERATIVE_CAP = 50


class OptimizationError(RuntimeError):
    pass


class NonIdentifiableError(OptimizationError):
    pass


class Strategy(Enum):
    DIRECT_SIMPLEX = "direct"
    ITERATIVE_L1 = "iterative"


@dataclass(frozen=True)
class SimplexOptions:
    """Nelder-Mead settings.

    ``max_evals`` of None means 400 * p, chosen at call time. The initial
    simplex places vertex j at start + initial_step * max(1, |start_j|) along
    coordinate j.
    """

    x_tol: float = 1e-6
    f_tol: float = 1e-6
    max_evals: int | None = None
    initial_step: float = 0.1

    def __post_init__(self):
        if self.x_tol <= 0 or self.f_tol <= 0 or self.initial_step <= 0:
            raise ValueError("simplex tolerances and step must be positive")
        if self.max_evals is not None and self.max_evals <= 0:
            raise ValueError("max_evals must be positive")


@dataclass(frozen=True)
class FitOptions:
    scheme: WeightScheme = WeightScheme.WILCOXON
    logrank_iterations: int = 3
    convergence_tol: float = 0.01
    strategy: Strategy = Strategy.DIRECT_SIMPLEX
    simplex: SimplexOptions = field(default_factory=SimplexOptions)

    def __post_init__(self):
        if self.logrank_iterations < 0:
            raise ValueError("logrank_iterations must be nonnegative")
        if self.convergence_tol <= 0:
            raise ValueError("convergence_tol must be positive")


@dataclass(frozen=True, eq=False)
class FitResult:
    """Outcome of a fit: the estimate, its iterate trail, and bookkeeping.

    ``final_loss`` is the objective value of the last minimization stage at
    ``beta_hat``. ``converged`` reports the stage-specific criterion: the
    simplex tolerance for a direct fit, the coordinate-change threshold for
    the iterative schemes.
    """

    beta_hat: np.ndarray
    scheme: WeightScheme
    iterates: tuple[np.ndarray, ...]
    final_loss: float
    converged: bool
    evals: int

    def to_dict(self) -> dict:
        return {
            "beta_hat": [float(v) for v in self.beta_hat],
            "scheme": self.scheme.value,
            "iterates": [[float(v) for v in it] for it in self.iterates],
            "final_loss": float(self.final_loss),
            "converged": bool(self.converged),
            "evals": int(self.evals),
        }


class SimplexResult(NamedTuple):
    x: np.ndarray
    value: float
    evals: int
    converged: bool


def nelder_mead(objective: Callable[[np.ndarray], float], start,
                opts: SimplexOptions = SimplexOptions()) -> SimplexResult:
    """Minimize with a Nelder-Mead simplex.

    Terminates when the simplex diameter is below x_tol and the value spread
    below f_tol, or when max_evals is exhausted (converged flag False).
    A non-finite objective value at any probe raises OptimizationError.
    """
    start = np.atleast_1d(np.asarray(start, dtype=float))
    p = start.size
    if p == 0:
        raise ValueError("start must have at least one coordinate")
    if not np.isfinite(start).all():
        raise ValueError("start must be finite")
    max_evals = opts.max_evals if opts.max_evals is not None else 400 * p
    if max_evals < p + 1:
        raise ValueError("max_evals must be at least p + 1")

    nfev = 0

    def wrapped(b):
        nonlocal nfev
        nfev += 1
        v = float(objective(b))
        if not math.isfinite(v):
            raise OptimizationError(
                f"non-finite objective value {v!r} at {np.asarray(b).tolist()}"
            )
        return v

    steps = opts.initial_step * np.maximum(1.0, np.abs(start))
    sim = np.vstack([start, start + np.diag(steps)])
    res = minimize(
        wrapped,
        start,
        method="Nelder-Mead",
        options={
            "xatol": opts.x_tol,
            "fatol": opts.f_tol,
            "maxfev": max_evals,
            "maxiter": 2 * max_evals,
            "initial_simplex": sim,
        },
    )
    return SimplexResult(np.asarray(res.x, dtype=float), float(res.fun), nfev,
                         bool(res.success))


def _certificate(objective, x: np.ndarray, fx: float, delta: float) -> tuple[bool, int]:
    """Check fx <= f at +-delta along each coordinate. Returns (ok, evals)."""
    count = 0
    for j in range(x.size):
        for s in (delta, -delta):
            probe = x.copy()
            probe[j] += s
            count += 1
            if float(objective(probe)) < fx:
                return False, count
    return True, count


def _guarded_minimize(objective, start, sopts: SimplexOptions) -> tuple[SimplexResult, int]:
    """Nelder-Mead plus a local-minimum certificate with one restart.

    If the returned point is beaten by a probe 10*x_tol away along some
    coordinate, rerun once from the start shifted by +-0.5 with alternating
    signs and keep the better of the two runs.
    """
    start = np.atleast_1d(np.asarray(start, dtype=float))
    r1 = nelder_mead(objective, start, sopts)
    evals = r1.evals
    ok, probes = _certificate(objective, r1.x, r1.value, 10.0 * sopts.x_tol)
    evals += probes
    if ok:
        return r1, evals
    shift = 0.5 * (-1.0) ** np.arange(start.size)
    r2 = nelder_mead(objective, start + shift, sopts)
    evals += r2.evals
    return (r2 if r2.value < r1.value else r1), evals


def _least_squares_start(sample: TruncatedSample) -> np.ndarray:
    """Centered least squares start; the pairwise loss has no intercept."""
    xc = sample.x - sample.x.mean(axis=0)
    yc = sample.y - sample.y.mean()
    beta, *_ = np.linalg.lstsq(xc, yc, rcond=None)
    if not np.isfinite(beta).all():
        return np.zeros(sample.p)
    return beta


def naive_fit(sample: TruncatedSample,
              opts: SimplexOptions = SimplexOptions()) -> FitResult:
    """Minimize the untruncated pairwise L1 loss (convex).

    Serves both as the truncation-ignoring comparator and as the default
    initializer of the corrected fits.
    """
    if sample.n < 2:
        raise ValueError("need at least two observations")
    if np.all(sample.x == sample.x[0]):
        raise NonIdentifiableError(
            "all covariate vectors are identical; the pairwise objective is flat"
        )
    pt = PairTerms(sample, windows=False)
    res = nelder_mead(lambda b: pt.loss_value(b, clip=False),
                      _least_squares_start(sample), opts)
    return FitResult(
        beta_hat=res.x,
        scheme=WeightScheme.WILCOXON,
        iterates=(res.x,),
        final_loss=res.value,
        converged=res.converged,
        evals=res.evals,
    )


def _wilcoxon_stage(pt: PairTerms, start: np.ndarray, opts: FitOptions
                    ) -> tuple[list[np.ndarray], float, bool, int]:
    """Wilcoxon fit from a given start. Returns (iterates, value, converged, evals)."""
    sopts = opts.simplex
    if opts.strategy is Strategy.DIRECT_SIMPLEX:
        res, evals = _guarded_minimize(lambda b: pt.loss_value(b), start, sopts)
        return [np.asarray(start, dtype=float), res.x], res.value, res.converged, evals
    iterates = [np.asarray(start, dtype=float)]
    evals = 0
    converged = False
    res = None
    for k in range(_ITERATIVE_CAP):
        anchor = iterates[-1]
        mult = pt.comparable_multiplier(anchor)
        try:
            res = nelder_mead(lambda b: pt.loss_value(b, mult, clip=False),
                              anchor, sopts)
        except OptimizationError as err:
            raise OptimizationError(f"iterative stage, iterate {k + 1}: {err}") from err
        evals += res.evals
        delta = float(np.abs(res.x - anchor).sum())
        iterates.append(res.x)
        if delta < opts.convergence_tol:
            converged = res.converged
            break
    return iterates, res.value, converged, evals


class _SweepResult(NamedTuple):
    iterates: list
    value: float
    delta_converged: bool
    nm_converged: bool
    evals: int


def _logrank_sweep(pt: PairTerms, start: np.ndarray, iterations: int,
                   sopts: SimplexOptions, tol: float,
                   pert_pairs: np.ndarray | None = None) -> _SweepResult:
    """Fixed number of weighted refits, weights refreshed at each anchor.

    ``delta_converged`` reports the coordinate-change criterion at the last
    refit; ``nm_converged`` whether every inner simplex run terminated by
    tolerance. ``pert_pairs`` folds an optional per-pair perturbation
    multiplier into every inner objective.
    """
    iterates = [np.asarray(start, dtype=float)]
    evals = 0
    delta_converged = True
    nm_converged = True
    value = math.nan
    for k in range(iterations):
        anchor = iterates[-1]
        mult = pt.logrank_pair_weights(anchor)
        if pert_pairs is not None:
            mult = mult * pert_pairs
        try:
            res = nelder_mead(lambda b: pt.loss_value(b, mult), anchor, sopts)
        except OptimizationError as err:
            raise OptimizationError(f"weighted stage, iterate {k + 1}: {err}") from err
        evals += res.evals
        delta = float(np.abs(res.x - anchor).sum())
        iterates.append(res.x)
        value = res.value
        delta_converged = delta < tol
        nm_converged = nm_converged and res.converged
    if iterations == 0:
        mult = pt.logrank_pair_weights(iterates[0])
        if pert_pairs is not None:
            mult = mult * pert_pairs
        value = pt.loss_value(iterates[0], mult)
    return _SweepResult(iterates, value, delta_converged, nm_converged, evals)


def fit(sample: TruncatedSample, opts: FitOptions = FitOptions()) -> FitResult:
    """Fit the regression coefficients under the configured scheme.

    Wilcoxon with the direct strategy minimizes the clipped loss from the
    naive start; the iterative strategy refits the comparability-restricted
    L1 objective until coordinates move less than convergence_tol in total
    (cap 50). The LogRank scheme runs the Wilcoxon fit first, then
    ``logrank_iterations`` weighted refits; its converged flag records
    whether the last refit moved less than convergence_tol.
    """
    naive = naive_fit(sample, opts.simplex)
    pt = PairTerms(sample)
    try:
        wil_iterates, wil_value, wil_converged, wil_evals = _wilcoxon_stage(
            pt, naive.beta_hat, opts
        )
    except OptimizationError as err:
        raise OptimizationError(f"Wilcoxon stage failed: {err}") from err
    evals = naive.evals + wil_evals
    if opts.scheme is WeightScheme.WILCOXON:
        return FitResult(
            beta_hat=wil_iterates[-1],
            scheme=WeightScheme.WILCOXON,
            iterates=tuple(wil_iterates),
            final_loss=wil_value,
            converged=wil_converged,
            evals=evals,
        )
    sweep = _logrank_sweep(
        pt, wil_iterates[-1], opts.logrank_iterations, opts.simplex,
        opts.convergence_tol
    )
    return FitResult(
        beta_hat=sweep.iterates[-1],
        scheme=WeightScheme.LOGRANK,
        iterates=tuple(sweep.iterates),
        final_loss=sweep.value,
        converged=sweep.delta_converged,
        evals=evals + sweep.evals,
    )
