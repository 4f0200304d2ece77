"""Data model for regression with a doubly truncated response.

An observation is kept in the data only when its response falls strictly
inside a per-observation window (lower, upper). Either side of the window
may be infinite, which recovers one-sided or no truncation. All estimation
code in this package works on residual shifts of the response and of the
window, so the sample type stores plain arrays and the residual frame is
the only derived structure.
"""

from __future__ import annotations

import csv
import math
from dataclasses import dataclass
from typing import Iterable, Sequence

import numpy as np


class ValidationError(ValueError):
    """Raised when a sample or a record violates the data contract.

    Carries the index of the first offending record in ``index`` when the
    violation is record-level (-1 for sample-level problems).
    """

    def __init__(self, message: str, index: int = -1):
        super().__init__(message)
        self.index = index


@dataclass(frozen=True)
class Observation:
    """One record: response ``y``, covariates ``x``, window ``(l, r)``.

    ``x`` may be given as a single float for one-dimensional problems; it is
    normalized to a tuple. The record itself is a plain carrier and does not
    validate; ``validate_sample`` checks the invariants and reports which
    record broke them.
    """

    y: float
    x: tuple[float, ...]
    l: float = -math.inf
    r: float = math.inf

    def __post_init__(self):
        x = self.x
        if isinstance(x, (int, float)):
            x = (float(x),)
        else:
            x = tuple(float(v) for v in x)
        object.__setattr__(self, "x", x)
        object.__setattr__(self, "y", float(self.y))
        object.__setattr__(self, "l", float(self.l))
        object.__setattr__(self, "r", float(self.r))

    def violation(self) -> str | None:
        """Reason this record is invalid, or None if it is fine."""
        if not math.isfinite(self.y):
            return "non-finite response"
        if any(not math.isfinite(v) for v in self.x):
            return "non-finite covariate"
        if math.isnan(self.l) or self.l == math.inf:
            return "left bound must be finite or -inf"
        if math.isnan(self.r) or self.r == -math.inf:
            return "right bound must be finite or +inf"
        if self.y <= self.l:
            return "response at left bound"
        if self.y >= self.r:
            return "response at right bound"
        return None


@dataclass(frozen=True, eq=False)
class TruncatedSample:
    """Validated sample stored as arrays.

    Fields
    ------
    y : (n,) responses
    x : (n, p) covariates
    lower, upper : (n,) window bounds, possibly -inf / +inf

    Construct through ``validate_sample`` or ``from_arrays``; both enforce
    strict ``lower < y < upper`` per record.
    """

    y: np.ndarray
    x: np.ndarray
    lower: np.ndarray
    upper: np.ndarray

    @property
    def n(self) -> int:
        return self.y.shape[0]

    @property
    def p(self) -> int:
        return self.x.shape[1]

    @property
    def observations(self) -> tuple[Observation, ...]:
        return tuple(
            Observation(self.y[i], tuple(self.x[i]), self.lower[i], self.upper[i])
            for i in range(self.n)
        )

    def untruncated(self) -> "TruncatedSample":
        """Copy of this sample with both window sides set to infinity."""
        n = self.n
        return TruncatedSample(
            self.y.copy(),
            self.x.copy(),
            np.full(n, -np.inf),
            np.full(n, np.inf),
        )

    @staticmethod
    def from_arrays(y, x, lower, upper) -> "TruncatedSample":
        y = np.asarray(y, dtype=float)
        x = np.asarray(x, dtype=float)
        if x.ndim == 1:
            x = x[:, None]
        lower = np.asarray(lower, dtype=float)
        upper = np.asarray(upper, dtype=float)
        if y.ndim != 1 or y.size == 0:
            raise ValidationError("empty sample")
        n = y.shape[0]
        if x.shape[0] != n or lower.shape != (n,) or upper.shape != (n,):
            raise ValidationError("array length mismatch")
        bad = ~np.isfinite(y)
        if bad.any():
            i = int(np.argmax(bad))
            raise ValidationError(f"observation {i}: non-finite response", i)
        bad = ~np.isfinite(x).all(axis=1)
        if bad.any():
            i = int(np.argmax(bad))
            raise ValidationError(f"observation {i}: non-finite covariate", i)
        bad = np.isnan(lower) | (lower == np.inf)
        if bad.any():
            i = int(np.argmax(bad))
            raise ValidationError(f"observation {i}: left bound must be finite or -inf", i)
        bad = np.isnan(upper) | (upper == -np.inf)
        if bad.any():
            i = int(np.argmax(bad))
            raise ValidationError(f"observation {i}: right bound must be finite or +inf", i)
        bad = y <= lower
        if bad.any():
            i = int(np.argmax(bad))
            raise ValidationError(f"observation {i}: response at left bound", i)
        bad = y >= upper
        if bad.any():
            i = int(np.argmax(bad))
            raise ValidationError(f"observation {i}: response at right bound", i)
        return TruncatedSample(y, x, lower, upper)


def validate_sample(raw: Iterable[Observation]) -> TruncatedSample:
    """Check a list of observations and pack it into a TruncatedSample.

    Reports the index and reason of the first violation. The covariate
    dimension is taken from the first record; ragged records are rejected.
    """
    records = list(raw)
    if not records:
        raise ValidationError("empty sample")
    p = len(records[0].x)
    for i, obs in enumerate(records):
        if len(obs.x) != p:
            raise ValidationError(
                f"observation {i}: expected {p} covariates, got {len(obs.x)}", i
            )
        reason = obs.violation()
        if reason is not None:
            raise ValidationError(f"observation {i}: {reason}", i)
    y = np.array([obs.y for obs in records], dtype=float)
    x = np.array([obs.x for obs in records], dtype=float)
    lower = np.array([obs.l for obs in records], dtype=float)
    upper = np.array([obs.r for obs in records], dtype=float)
    return TruncatedSample(y, x, lower, upper)


@dataclass(frozen=True, eq=False)
class ResidualFrame:
    """Residual shift of a sample at a coefficient vector.

    ``e`` are the response residuals, ``lb``/``rb`` the window bounds shifted
    by the same linear predictor, so the observed-data condition keeps the
    form lb < e < rb record by record.
    """

    e: np.ndarray
    lb: np.ndarray
    rb: np.ndarray
    beta: np.ndarray


def _check_beta(sample: TruncatedSample, beta) -> np.ndarray:
    b = np.asarray(beta, dtype=float)
    if b.ndim == 0:
        b = b[None]
    if b.shape != (sample.p,):
        raise ValueError(f"beta has shape {b.shape}, expected ({sample.p},)")
    if not np.isfinite(b).all():
        raise ValueError("beta must be finite")
    return b


def residuals(sample: TruncatedSample, beta) -> ResidualFrame:
    """Shift responses and window bounds by the linear predictor x'beta."""
    b = _check_beta(sample, beta)
    shift = sample.x @ b
    return ResidualFrame(
        e=sample.y - shift,
        lb=sample.lower - shift,
        rb=sample.upper - shift,
        beta=b,
    )


def read_sample_csv(path) -> TruncatedSample:
    """Read a sample from CSV with header ``y,l,r,x1,...,xp``.

    The bound columns accept the literal strings ``-inf`` and ``inf``.
    Malformed rows raise ValidationError with the file line number.
    """
    with open(path, newline="") as fh:
        reader = csv.reader(fh)
        try:
            header = next(reader)
        except StopIteration:
            raise ValidationError("empty sample") from None
        header = [h.strip().lower() for h in header]
        p = len(header) - 3
        expected = ["y", "l", "r"] + [f"x{k}" for k in range(1, p + 1)]
        if p < 1 or header != expected:
            raise ValidationError(
                f"bad header {header!r}, expected y,l,r,x1,...,xp"
            )
        records = []
        for lineno, row in enumerate(reader, start=2):
            if not row or all(not c.strip() for c in row):
                continue
            if len(row) != p + 3:
                raise ValidationError(f"line {lineno}: expected {p + 3} fields")
            try:
                vals = [float(c) for c in row]
            except ValueError:
                raise ValidationError(f"line {lineno}: non-numeric field") from None
            records.append(
                Observation(y=vals[0], x=tuple(vals[3:]), l=vals[1], r=vals[2])
            )
    return validate_sample(records)
