"""Pairwise rank objective for doubly truncated responses.

The building block is the residual difference e_i(beta) - e_j(beta) of an
ordered pair. Under double truncation that difference is only informative
inside a pair-specific window; outside the window the contribution is frozen
at the window edge. Summing the absolute clipped differences over all ordered
pairs gives the loss; its almost-everywhere derivative is (minus) a
Mann-Whitney style estimating function restricted to comparable pairs.

Two weighting schemes are supported. Wilcoxon weighs every pair equally.
LogRank weighs a pair by the reciprocal size of the at-risk set at the
smaller of the two residuals, with the residuals taken at a fixed anchor
point so the weights do not move while the loss is minimized.

Everything here is a pure function of its inputs. The ``PairTerms`` engine
precomputes per-pair windows once per sample and evaluates the loss with a
fixed-order vectorized reduction, so repeated calls inside an optimizer are
cheap and bit-reproducible. Because the clipped term of an ordered pair
equals that of its swap (negating the difference exactly mirrors the window),
the engine sums the strict upper triangle and doubles it; the full ordered
double sum, diagonal included, is what the public functions return.
"""

from __future__ import annotations

import math
from dataclasses import dataclass
from enum import Enum

import numpy as np

from .model import Observation, ResidualFrame, TruncatedSample, _check_beta, residuals


class WeightScheme(Enum):
    WILCOXON = "wilcoxon"
    LOGRANK = "logrank"


@dataclass(frozen=True, eq=False)
class PerturbationWeights:
    """Nonnegative multipliers, one per observation."""

    w: np.ndarray

    def __post_init__(self):
        w = np.asarray(self.w, dtype=float)
        if w.ndim != 1 or w.size == 0:
            raise ValueError("perturbation weights must be a nonempty vector")
        if not np.isfinite(w).all() or (w < 0).any():
            raise ValueError("perturbation weights must be finite and nonnegative")
        object.__setattr__(self, "w", w)

    @property
    def n(self) -> int:
        return self.w.shape[0]


class PairWindow:
    """Open interval (lo, hi) that brackets an informative pair difference."""

    __slots__ = ("lo", "hi")

    def __init__(self, lo: float, hi: float):
        if not lo < hi:
            raise ValueError(f"degenerate pair window: lo={lo!r} >= hi={hi!r}")
        self.lo = lo
        self.hi = hi

    def __iter__(self):
        return iter((self.lo, self.hi))

    def __repr__(self):
        return f"PairWindow(lo={self.lo!r}, hi={self.hi!r})"


def pair_window(obs_i: Observation, obs_j: Observation) -> PairWindow:
    """Window for the ordered pair (i, j).

    lo = max(l_j - y_j, y_i - r_i) and hi = min(r_j - y_j, y_i - l_i); for
    valid observations lo < 0 < hi, so the window always contains zero.
    """
    lo = max(obs_j.l - obs_j.y, obs_i.y - obs_i.r)
    hi = min(obs_j.r - obs_j.y, obs_i.y - obs_i.l)
    return PairWindow(lo, hi)


def _pair_residual_diff(obs_i: Observation, obs_j: Observation, beta) -> float:
    b = np.atleast_1d(np.asarray(beta, dtype=float))
    ei = obs_i.y - float(np.dot(b, obs_i.x))
    ej = obs_j.y - float(np.dot(b, obs_j.x))
    return ei - ej


def clipped_pair_term(obs_i: Observation, obs_j: Observation, beta) -> float:
    """|clip(e_i(beta) - e_j(beta); lo, hi)| for the ordered pair window."""
    w = pair_window(obs_i, obs_j)
    d = _pair_residual_diff(obs_i, obs_j, beta)
    return abs(min(max(d, w.lo), w.hi))


def comparable(obs_i: Observation, obs_j: Observation, beta) -> bool:
    """Pair comparability, stated on shifted bounds.

    True iff e_i lies strictly inside (lb_j, rb_j) and e_j strictly inside
    (lb_i, rb_i), all shifts taken at ``beta``. See ``comparable_by_window``
    for the equivalent single-inequality form; the two are kept as separate
    code paths on purpose so their agreement can be tested.
    """
    b = np.atleast_1d(np.asarray(beta, dtype=float))
    si = float(np.dot(b, obs_i.x))
    sj = float(np.dot(b, obs_j.x))
    ei = obs_i.y - si
    ej = obs_j.y - sj
    return (obs_j.l - sj < ei < obs_j.r - sj) and (obs_i.l - si < ej < obs_i.r - si)


def comparable_by_window(obs_i: Observation, obs_j: Observation, beta) -> bool:
    """Window form of pair comparability: lo < e_i - e_j < hi."""
    w = pair_window(obs_i, obs_j)
    d = _pair_residual_diff(obs_i, obs_j, beta)
    return w.lo < d < w.hi


def _at_risk_counts(e: np.ndarray) -> np.ndarray:
    """counts[i] = #{k : e_k >= e_i}, ties counted."""
    order = np.sort(e)
    return e.size - np.searchsorted(order, e, side="left")


def logrank_weight(frame: ResidualFrame, t: float) -> float:
    """Reciprocal at-risk count at threshold t among the frame's residuals."""
    count = int(np.count_nonzero(frame.e >= t))
    if count == 0:
        raise ValueError(f"empty at-risk set: t={t!r} exceeds every residual")
    return 1.0 / count


class PairTerms:
    """Vectorized pair engine for one sample.

    Precomputes the strict-upper-triangle pair windows once; each evaluation
    then costs one residual pass plus one fused pass over the pair arrays.
    Buffers are reused across calls, so one instance must not be shared
    between threads. Results equal the full ordered-pair double sum.
    """

    __slots__ = ("y", "x", "n", "p", "m", "iu", "ju", "lo", "hi", "_xdiff", "_w1", "_w2")

    def __init__(self, sample: TruncatedSample, windows: bool = True):
        n = sample.n
        iu, ju = np.triu_indices(n, k=1)
        self.iu = iu.astype(np.int32)
        self.ju = ju.astype(np.int32)
        self.y = sample.y
        self.x = sample.x
        self.n = n
        self.p = sample.p
        self.m = self.iu.shape[0]
        if windows:
            a = sample.lower - sample.y
            b = sample.y - sample.upper
            c = sample.upper - sample.y
            d = sample.y - sample.lower
            self.lo = np.maximum(a[self.ju], b[self.iu])
            self.hi = np.minimum(c[self.ju], d[self.iu])
            if not np.all(self.lo < self.hi):
                raise ValueError("corrupted sample: pair window with lo >= hi")
        else:
            self.lo = None
            self.hi = None
        self._xdiff = None
        self._w1 = np.empty(self.m)
        self._w2 = np.empty(self.m)

    @property
    def xdiff(self) -> np.ndarray:
        """(p, m) covariate differences x_i - x_j on the upper triangle."""
        if self._xdiff is None:
            self._xdiff = np.ascontiguousarray(
                (self.x[self.iu] - self.x[self.ju]).T
            )
        return self._xdiff

    def residual_diffs(self, beta: np.ndarray) -> np.ndarray:
        """e_i(beta) - e_j(beta) on the upper triangle (internal buffer)."""
        e = self.y - self.x @ beta
        np.take(e, self.iu, out=self._w1)
        np.take(e, self.ju, out=self._w2)
        np.subtract(self._w1, self._w2, out=self._w1)
        return self._w1

    def loss_value(self, beta, multiplier: np.ndarray | None = None,
                   clip: bool = True) -> float:
        """Doubled upper-triangle sum of |clip(diff)| times the multiplier."""
        b = np.asarray(beta, dtype=float)
        w = self.residual_diffs(b)
        if clip and self.lo is not None:
            np.clip(w, self.lo, self.hi, out=w)
        np.abs(w, out=w)
        if multiplier is None:
            return 2.0 * float(w.sum())
        return 2.0 * float(np.dot(w, multiplier))

    def window_mask(self, beta) -> np.ndarray:
        """Boolean comparability mask lo < diff < hi on the upper triangle."""
        if self.lo is None:
            return np.ones(self.m, dtype=bool)
        d = self.residual_diffs(np.asarray(beta, dtype=float))
        return (self.lo < d) & (d < self.hi)

    def comparable_multiplier(self, anchor) -> np.ndarray:
        """Comparability mask at the anchor as a float multiplier."""
        return self.window_mask(anchor).astype(float)

    def logrank_pair_weights(self, anchor) -> np.ndarray:
        """Reciprocal at-risk counts at min(e_i, e_j), residuals at anchor.

        The at-risk count is nonincreasing in its threshold, so the count at
        the pair minimum is the larger of the two per-observation counts.
        """
        a = np.asarray(anchor, dtype=float)
        e = self.y - self.x @ a
        counts = _at_risk_counts(e)
        return 1.0 / np.maximum(counts[self.iu], counts[self.ju])

    def perturbation_pairs(self, w: np.ndarray) -> np.ndarray:
        """Pair multipliers W_i + W_j on the upper triangle."""
        if w.shape != (self.n,):
            raise ValueError(f"perturbation length {w.shape} does not match n={self.n}")
        return w[self.iu] + w[self.ju]

    def score_value(self, beta, scheme: WeightScheme = WeightScheme.WILCOXON,
                    anchor=None) -> np.ndarray:
        b = np.asarray(beta, dtype=float)
        d = self.residual_diffs(b).copy()
        if self.lo is not None:
            mask = (self.lo < d) & (d < self.hi)
        else:
            mask = np.ones(self.m, dtype=bool)
        s = np.sign(d)
        s *= mask
        if scheme is WeightScheme.LOGRANK:
            s *= self.logrank_pair_weights(b if anchor is None else anchor)
        if self.m == 0:
            return np.zeros(self.p)
        return 2.0 * (self.xdiff @ s)


def loss(sample: TruncatedSample, beta) -> float:
    """Clipped pairwise loss over all ordered pairs of the sample.

    With every bound infinite this is the plain sum of absolute pairwise
    residual differences.
    """
    b = _check_beta(sample, beta)
    return PairTerms(sample).loss_value(b)


def score(sample: TruncatedSample, beta, scheme: WeightScheme = WeightScheme.WILCOXON,
          anchor=None) -> np.ndarray:
    """Estimating function: sum of w_ij(anchor) * (x_i - x_j) * sgn(e_i - e_j)
    over comparable ordered pairs, with sgn(0) = 0.

    ``anchor`` fixes the point where LogRank weights are evaluated; it
    defaults to ``beta`` and is ignored under the Wilcoxon scheme.
    """
    b = _check_beta(sample, beta)
    a = b if anchor is None else _check_beta(sample, anchor)
    return PairTerms(sample).score_value(b, scheme, a)


def weighted_loss(sample: TruncatedSample, beta, anchor=None,
                  scheme: WeightScheme = WeightScheme.WILCOXON,
                  perturbation: PerturbationWeights | None = None) -> float:
    """Clipped pairwise loss with scheme weights frozen at the anchor and an
    optional perturbation multiplier (W_i + W_j) per pair.

    Wilcoxon scheme with no perturbation reproduces ``loss`` exactly (same
    code path).
    """
    b = _check_beta(sample, beta)
    pt = PairTerms(sample)
    mult = None
    if scheme is WeightScheme.LOGRANK:
        a = b if anchor is None else _check_beta(sample, anchor)
        mult = pt.logrank_pair_weights(a)
    if perturbation is not None:
        pp = pt.perturbation_pairs(perturbation.w)
        mult = pp if mult is None else mult * pp
    return pt.loss_value(b, mult)


def iterative_loss(sample: TruncatedSample, beta, anchor) -> float:
    """Unclipped absolute pair differences restricted to pairs comparable at
    the anchor. Convex in beta for a fixed anchor."""
    b = _check_beta(sample, beta)
    a = _check_beta(sample, anchor)
    pt = PairTerms(sample)
    return pt.loss_value(b, pt.comparable_multiplier(a), clip=False)
