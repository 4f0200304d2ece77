"""Simulation laboratory: data generation, calibration, replication studies.

The generating process draws a binary covariate (success probability 0.5), a
uniform covariate on [0, 2], an error from one of three laws, and keeps a
record only when the response lands strictly inside its truncation window.
Windows are uniform around the response's typical location, either shared
across records or centered on a covariate-driven midpoint. The window
constants are not free knobs: they are calibrated by bisection so that each
side truncates a target fraction of the latent draws.

A study runs many replications of generate / fit / resample for three
estimators: the truncation-ignoring naive fit, the corrected fit with equal
pair weights, and the corrected fit refined by a fixed number of at-risk
weighted iterations. Replications use independent seed substreams keyed by
(master seed, replication index), so any parallel schedule reproduces the
serial result bit for bit.
"""

from __future__ import annotations

import json
import math
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass, field, replace
from enum import Enum

import numpy as np

from .inference import PerturbationLaw, _single_replicate, wald_interval
from .loss import PairTerms, WeightScheme
from .model import TruncatedSample
from .optimize import (
    _ITERATIVE_CAP,
    FitOptions,
    FitResult,
    OptimizationError,
    _guarded_minimize,
    _logrank_sweep,
    _wilcoxon_stage,
    naive_fit,
)


class ErrorLaw(Enum):
    NORMAL = "normal"
    LOGISTIC = "logistic"
    EXTREME_MIN = "extreme_min"


class TruncationKind(Enum):
    COVARIATE_INDEPENDENT = "covariate_independent"
    COVARIATE_DEPENDENT = "covariate_dependent"
    NONE = "none"


@dataclass(frozen=True)
class Truncation:
    """Truncation scheme plus its window constants.

    Covariate-independent windows draw the left bound uniformly on
    (lower, 1) and the right bound on (1, upper). Covariate-dependent
    windows replace the fixed center 1 by x1 + x2/2. Constants may be None
    until calibrated; generation requires them.
    """

    kind: TruncationKind
    lower: float | None = None
    upper: float | None = None

    def __post_init__(self):
        if self.kind is TruncationKind.NONE:
            if self.lower is not None or self.upper is not None:
                raise ValueError("no constants allowed without truncation")
            return
        if self.kind is TruncationKind.COVARIATE_INDEPENDENT:
            if self.lower is not None and not self.lower < 1.0:
                raise ValueError("left constant must be below 1")
            if self.upper is not None and not self.upper > 1.0:
                raise ValueError("right constant must be above 1")
        else:
            if self.lower is not None and not self.lower < 0.0:
                raise ValueError("left constant must be negative")
            if self.upper is not None and not self.upper > 2.0:
                raise ValueError("right constant must exceed 2")

    def ready(self) -> bool:
        return self.kind is TruncationKind.NONE or (
            self.lower is not None and self.upper is not None
        )


@dataclass(frozen=True)
class SimDesign:
    n: int = 200
    beta0: tuple[float, float] = (0.0, 1.0)
    error: ErrorLaw = ErrorLaw.NORMAL
    truncation: Truncation = field(
        default_factory=lambda: Truncation(TruncationKind.COVARIATE_INDEPENDENT)
    )
    seed: int = 0

    def __post_init__(self):
        if self.n < 2:
            raise ValueError("n must be at least 2")
        if len(self.beta0) != 2:
            raise ValueError("the generating process uses exactly two covariates")
        if self.seed < 0:
            raise ValueError("seed must be nonnegative")
        object.__setattr__(self, "beta0", tuple(float(b) for b in self.beta0))


def _draw_errors(law: ErrorLaw, rng: np.random.Generator, size: int) -> np.ndarray:
    if law is ErrorLaw.NORMAL:
        return rng.standard_normal(size)
    if law is ErrorLaw.LOGISTIC:
        return rng.logistic(0.0, 1.0, size)
    # minimum extreme value: negate a standard max-Gumbel draw,
    # giving CDF 1 - exp(-exp(x))
    return -rng.gumbel(0.0, 1.0, size)


def _latent_block(design: SimDesign, rng: np.random.Generator, size: int):
    """One block of latent draws: covariates, response, window bounds."""
    x1 = rng.binomial(1, 0.5, size).astype(float)
    x2 = rng.uniform(0.0, 2.0, size)
    eps = _draw_errors(design.error, rng, size)
    y = design.beta0[0] * x1 + design.beta0[1] * x2 + eps
    kind = design.truncation.kind
    if kind is TruncationKind.NONE:
        lower = np.full(size, -np.inf)
        upper = np.full(size, np.inf)
    elif kind is TruncationKind.COVARIATE_INDEPENDENT:
        lower = rng.uniform(design.truncation.lower, 1.0, size)
        upper = rng.uniform(1.0, design.truncation.upper, size)
    else:
        mid = x1 + 0.5 * x2
        lower = rng.uniform(design.truncation.lower, mid)
        upper = rng.uniform(mid, design.truncation.upper)
    x = np.column_stack([x1, x2])
    return x, y, lower, upper


def generate_dataset(design: SimDesign, rng) -> TruncatedSample:
    """Draw latent records until n of them fall inside their windows.

    Aborts when the acceptance rate is still below 1% after a million
    attempts, which indicates misconfigured window constants.
    """
    if not design.truncation.ready():
        raise ValueError("truncation constants missing; calibrate first")
    gen = np.random.default_rng(rng)
    block = max(4 * design.n, 1024)
    kept_x, kept_y, kept_l, kept_r = [], [], [], []
    accepted = 0
    attempts = 0
    while accepted < design.n:
        x, y, lower, upper = _latent_block(design, gen, block)
        keep = (lower < y) & (y < upper)
        kept_x.append(x[keep])
        kept_y.append(y[keep])
        kept_l.append(lower[keep])
        kept_r.append(upper[keep])
        accepted += int(keep.sum())
        attempts += block
        if attempts >= 1_000_000 and accepted < 0.01 * attempts:
            raise RuntimeError(
                f"acceptance rate {accepted / attempts:.4f} below 1% "
                f"after {attempts} attempts; window constants look wrong"
            )
    n = design.n
    return TruncatedSample.from_arrays(
        np.concatenate(kept_y)[:n],
        np.concatenate(kept_x)[:n],
        np.concatenate(kept_l)[:n],
        np.concatenate(kept_r)[:n],
    )


@dataclass(frozen=True)
class CalibrationResult:
    truncation: Truncation
    achieved_left: float
    achieved_right: float
    attempts: int
    converged_left: bool
    converged_right: bool

    def apply(self, design: SimDesign) -> SimDesign:
        return replace(design, truncation=self.truncation)

    def to_dict(self) -> dict:
        return {
            "kind": self.truncation.kind.value,
            "lower": self.truncation.lower,
            "upper": self.truncation.upper,
            "achieved_left": self.achieved_left,
            "achieved_right": self.achieved_right,
            "attempts": self.attempts,
            "converged_left": self.converged_left,
            "converged_right": self.converged_right,
        }


def _bisect_probability(prob, target: float, lo: float, hi: float,
                        increasing: bool, tol: float) -> tuple[float, float, bool]:
    """Bisect a monotone Monte Carlo probability to the target.

    Returns (constant, achieved, converged). Unreachable targets clamp to
    the nearer range end and report the best achievable value.
    """
    plo, phi = prob(lo), prob(hi)
    pmin, pmax = (plo, phi) if increasing else (phi, plo)
    if target <= pmin:
        c = lo if increasing else hi
        return c, pmin, abs(pmin - target) <= tol
    if target >= pmax:
        c = hi if increasing else lo
        return c, pmax, abs(pmax - target) <= tol
    best = (lo, plo)
    for _ in range(80):
        mid = 0.5 * (lo + hi)
        pm = prob(mid)
        if abs(pm - target) < abs(best[1] - target):
            best = (mid, pm)
        if abs(pm - target) <= tol:
            return mid, pm, True
        if (pm < target) == increasing:
            lo = mid
        else:
            hi = mid
    return best[0], best[1], abs(best[1] - target) <= tol


def calibrate_truncation(design: SimDesign, target_left: float = 0.15,
                         target_right: float = 0.15, rng=None,
                         attempts: int = 200_000) -> CalibrationResult:
    """Pick window constants so each side truncates its target fraction.

    One common pool of latent draws is shared by every bisection probe, so
    each probe sees at least ``attempts`` Monte Carlo attempts, the achieved
    probability is exactly monotone in the constant, and the whole procedure
    is deterministic given the rng. The two sides are independent: the left
    constant never influences right truncation and vice versa.
    """
    kind = design.truncation.kind
    if kind is TruncationKind.NONE:
        raise ValueError("nothing to calibrate without truncation")
    if attempts < 100_000:
        raise ValueError("need at least 1e5 attempts per probe")
    gen = np.random.default_rng(design.seed if rng is None else rng)
    x1 = gen.binomial(1, 0.5, attempts).astype(float)
    x2 = gen.uniform(0.0, 2.0, attempts)
    eps = _draw_errors(design.error, gen, attempts)
    y = design.beta0[0] * x1 + design.beta0[1] * x2 + eps
    u_left = gen.uniform(0.0, 1.0, attempts)
    u_right = gen.uniform(0.0, 1.0, attempts)

    if kind is TruncationKind.COVARIATE_INDEPENDENT:
        center_l = np.full(attempts, 1.0)
        center_r = center_l
        left_range = (-60.0, 1.0 - 1e-9)
        right_range = (1.0 + 1e-9, 60.0)
    else:
        mid = x1 + 0.5 * x2
        center_l = mid
        center_r = mid
        left_range = (-60.0, -1e-9)
        right_range = (2.0 + 1e-9, 60.0)

    def p_left(c):
        return float(np.mean(y <= c + (center_l - c) * u_left))

    def p_right(c):
        return float(np.mean(y >= center_r + (c - center_r) * u_right))

    tol = 0.002
    c_left, ach_left, ok_left = _bisect_probability(
        p_left, target_left, *left_range, increasing=True, tol=tol
    )
    c_right, ach_right, ok_right = _bisect_probability(
        p_right, target_right, *right_range, increasing=False, tol=tol
    )
    return CalibrationResult(
        truncation=Truncation(kind, c_left, c_right),
        achieved_left=ach_left,
        achieved_right=ach_right,
        attempts=attempts,
        converged_left=ok_left,
        converged_right=ok_right,
    )


@dataclass(frozen=True)
class ReportRow:
    estimator: str
    parameter: int
    bias: float
    se: float
    see: float
    cp95: float


@dataclass(frozen=True, eq=False)
class SimulationReport:
    design: SimDesign
    replications: int
    B: int
    rows: tuple[ReportRow, ...]
    failed_replications: int
    invalid: bool
    iterate_pairs: np.ndarray | None = None


def _estimator_names(opts: FitOptions) -> tuple[str, str, str]:
    return ("naive", "wilcoxon", f"logrank{opts.logrank_iterations}")


def _one_replication(design: SimDesign, rep: int, B: int, opts: FitOptions,
                     law: PerturbationLaw, emit_iterates: bool) -> dict:
    """Generate, fit all three estimators, optionally resample each."""
    rng = np.random.default_rng(np.random.SeedSequence((design.seed, rep)))
    sample = generate_dataset(design, rng)
    sopts = opts.simplex
    out: dict = {"rep": rep, "failed": False}
    try:
        naive = naive_fit(sample, sopts)
        pt = PairTerms(sample)
        wil_iterates, wil_value, wil_conv, _ = _wilcoxon_stage(
            pt, naive.beta_hat, replace(opts, scheme=WeightScheme.WILCOXON)
        )
        wil_beta = wil_iterates[-1]
        sweep = _logrank_sweep(pt, wil_beta, opts.logrank_iterations, sopts,
                               opts.convergence_tol)
        lr_beta = sweep.iterates[-1]
    except OptimizationError:
        out["failed"] = True
        return out
    betas = {"naive": naive.beta_hat, "wilcoxon": wil_beta,
             f"logrank{opts.logrank_iterations}": lr_beta}
    out["betas"] = betas

    if emit_iterates:
        conv_beta = lr_beta
        steps = opts.logrank_iterations
        converged = sweep.delta_converged and opts.logrank_iterations > 0
        while not converged and steps < _ITERATIVE_CAP:
            s = _logrank_sweep(pt, conv_beta, 1, sopts, opts.convergence_tol)
            conv_beta = s.iterates[-1]
            converged = s.delta_converged
            steps += 1
        out["iterate_pair"] = (lr_beta, conv_beta)

    if B > 0:
        pt_unb = PairTerms(sample, windows=False)
        wrng = np.random.default_rng(np.random.SeedSequence((design.seed, rep, 1)))
        p = sample.p
        reps = {name: np.full((B, p), np.nan) for name in betas}
        ok = {name: np.zeros(B, dtype=bool) for name in betas}
        wil_fitres = FitResult(wil_beta, WeightScheme.WILCOXON,
                               tuple(wil_iterates), wil_value, wil_conv, 0)
        for b in range(B):
            w = wrng.gamma(law.shape, 1.0 / law.rate, sample.n)
            try:
                beta_n, ok_n = _single_replicate(pt_unb, naive,
                                                 replace(opts, scheme=WeightScheme.WILCOXON), w)
                reps["naive"][b] = beta_n
                ok["naive"][b] = ok_n
            except OptimizationError:
                pass
            try:
                pp = pt.perturbation_pairs(w)
                res_w, _ = _guarded_minimize(lambda v: pt.loss_value(v, pp),
                                             wil_beta, sopts)
                reps["wilcoxon"][b] = res_w.x
                ok["wilcoxon"][b] = res_w.converged
                sweep_b = _logrank_sweep(pt, res_w.x, opts.logrank_iterations,
                                         sopts, opts.convergence_tol,
                                         pert_pairs=pp)
                name = f"logrank{opts.logrank_iterations}"
                reps[name][b] = sweep_b.iterates[-1]
                ok[name][b] = res_w.converged and sweep_b.nm_converged
            except OptimizationError:
                pass
        ses = {}
        covered = {}
        for name in betas:
            good = reps[name][ok[name]]
            frac_failed = 1.0 - good.shape[0] / B
            if frac_failed > 0.05 or good.shape[0] < 2:
                out["failed"] = True
                return out
            se = (good - good[0]).std(axis=0, ddof=1)
            ses[name] = se
            cov_j = []
            for j in range(p):
                if se[j] > 0:
                    lo, hi = wald_interval(float(betas[name][j]), float(se[j]), 0.95)
                    cov_j.append(lo <= design.beta0[j] <= hi)
                else:
                    cov_j.append(False)
            covered[name] = np.asarray(cov_j, dtype=bool)
        out["ses"] = ses
        out["covered"] = covered
    return out


def run_study(design: SimDesign, replications: int = 200, B: int = 200,
              opts: FitOptions = FitOptions(), law: PerturbationLaw = PerturbationLaw(),
              n_jobs: int = 1, emit_iterates: bool = False) -> SimulationReport:
    """Replicate the generate / fit / resample pipeline and aggregate.

    ``B = 0`` skips resampling (se-of-estimates studies); the see and cp95
    columns are then NaN. Replications whose fits error out, or whose
    resampling loses more than 5% of replicates, are excluded; if more than
    2% of replications are excluded the report is flagged invalid.
    """
    if replications < 2:
        raise ValueError("need at least two replications")
    if B < 0:
        raise ValueError("B must be nonnegative")
    if not design.truncation.ready():
        raise ValueError("truncation constants missing; calibrate first")

    if n_jobs <= 1:
        results = [_one_replication(design, r, B, opts, law, emit_iterates)
                   for r in range(replications)]
    else:
        with ProcessPoolExecutor(max_workers=n_jobs) as ex:
            futures = [ex.submit(_one_replication, design, r, B, opts, law,
                                 emit_iterates)
                       for r in range(replications)]
            results = [f.result() for f in futures]
        results.sort(key=lambda d: d["rep"])

    names = _estimator_names(opts)
    p = len(design.beta0)
    good = [r for r in results if not r["failed"]]
    failed = replications - len(good)
    rows = []
    iterate_pairs = None
    if emit_iterates and good:
        iterate_pairs = np.stack([np.stack(r["iterate_pair"]) for r in good])
    for name in names:
        est = np.stack([r["betas"][name] for r in good])
        if B > 0:
            ses = np.stack([r["ses"][name] for r in good])
            cov = np.stack([r["covered"][name] for r in good])
        for j in range(p):
            bias = float(est[:, j].mean() - design.beta0[j])
            se = float(est[:, j].std(ddof=1))
            see = float(ses[:, j].mean()) if B > 0 else math.nan
            cp = float(cov[:, j].mean()) if B > 0 else math.nan
            rows.append(ReportRow(name, j + 1, bias, se, see, cp))
    return SimulationReport(
        design=design,
        replications=replications,
        B=B,
        rows=tuple(rows),
        failed_replications=failed,
        invalid=failed > 0.02 * replications,
        iterate_pairs=iterate_pairs,
    )


def design_to_dict(design: SimDesign) -> dict:
    return {
        "n": design.n,
        "beta0": list(design.beta0),
        "error": design.error.value,
        "truncation": {
            "kind": design.truncation.kind.value,
            "lower": design.truncation.lower,
            "upper": design.truncation.upper,
        },
        "seed": design.seed,
    }


def design_from_dict(d: dict) -> SimDesign:
    try:
        trunc = d.get("truncation", {})
        return SimDesign(
            n=int(d["n"]),
            beta0=tuple(float(v) for v in d.get("beta0", (0.0, 1.0))),
            error=ErrorLaw(d.get("error", "normal")),
            truncation=Truncation(
                TruncationKind(trunc.get("kind", "covariate_independent")),
                trunc.get("lower"),
                trunc.get("upper"),
            ),
            seed=int(d.get("seed", 0)),
        )
    except (KeyError, ValueError, TypeError) as err:
        raise ValueError(f"bad design: {err}") from err


def _fmt(v: float) -> str:
    return f"{v:.4f}"


def report_csv(report: SimulationReport) -> str:
    lines = ["estimator,parameter,bias,se,see,cp95"]
    for row in report.rows:
        lines.append(
            f"{row.estimator},{row.parameter},{_fmt(row.bias)},{_fmt(row.se)},"
            f"{_fmt(row.see)},{_fmt(row.cp95)}"
        )
    return "\n".join(lines) + "\n"


def _null_if_nan(v: float):
    return float(v) if math.isfinite(v) else None


def report_json(report: SimulationReport) -> str:
    payload = {
        "design": design_to_dict(report.design),
        "replications": report.replications,
        "B": report.B,
        "failed_replications": report.failed_replications,
        "invalid": report.invalid,
        "rows": [
            {
                "estimator": row.estimator,
                "parameter": row.parameter,
                "bias": _null_if_nan(row.bias),
                "se": _null_if_nan(row.se),
                "see": _null_if_nan(row.see),
                "cp95": _null_if_nan(row.cp95),
            }
            for row in report.rows
        ],
    }
    return json.dumps(payload, indent=2) + "\n"


def iterates_csv(report: SimulationReport) -> str:
    """Scatter data relating the fixed-iteration fit to the converged one."""
    if report.iterate_pairs is None:
        raise ValueError("study was run without emit_iterates")
    lines = ["replication,parameter,beta_fixed,beta_converged"]
    pairs = report.iterate_pairs
    for r in range(pairs.shape[0]):
        for j in range(pairs.shape[2]):
            lines.append(
                f"{r + 1},{j + 1},{_fmt(pairs[r, 0, j])},{_fmt(pairs[r, 1, j])}"
            )
    return "\n".join(lines) + "\n"
