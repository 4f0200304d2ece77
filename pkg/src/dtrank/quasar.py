"""Quasar luminosity-evolution ingestion and helpers.

Input rows carry a redshift, an observed apparent magnitude, and the two
magnitude limits that doubly truncate it. Magnitudes convert to log
luminosities through a fixed distance relation (natural logs, flat
matter-dominated expansion), and the luminosity-evolution regression uses
log(1 + z) covariates, linear or quadratic.

Brighter means smaller magnitude, so the conversion is decreasing: the
magnitude limits swap roles when mapped to luminosity bounds. The mapping
performs that swap and warns, then checks the bounds strictly bracket the
response.
"""

from __future__ import annotations

import csv
import math
import warnings
from dataclasses import dataclass
from enum import Enum

import numpy as np

from .loss import PairTerms
from .model import Observation, TruncatedSample, ValidationError


class EvolutionModel(Enum):
    """Covariate layout: log(1+z) alone, or with its square."""

    LINEAR = "linear"
    QUADRATIC = "quadratic"


@dataclass(frozen=True)
class QuasarRecord:
    z: float
    m: float
    a: float
    b: float

    def violation(self) -> str | None:
        for name in ("z", "m", "a", "b"):
            if not math.isfinite(getattr(self, name)):
                return f"non-finite {name}"
        if self.z <= 0.0:
            return "redshift must be positive"
        if not self.a < self.m:
            return "magnitude at or below its lower limit"
        if not self.m < self.b:
            return "magnitude at or above its upper limit"
        return None


def load_quasar(path) -> list[QuasarRecord]:
    """Read `z,m,a,b` rows, validating each record.

    Malformed rows raise with their line number; records violating
    z > 0 or a < m < b raise with their record index (0-based).
    """
    records: list[QuasarRecord] = []
    with open(path, newline="") as fh:
        reader = csv.reader(fh)
        try:
            header = next(reader)
        except StopIteration:
            raise ValidationError("empty file") from None
        if [h.strip().lower() for h in header] != ["z", "m", "a", "b"]:
            raise ValidationError("expected header z,m,a,b")
        for lineno, row in enumerate(reader, start=2):
            if not row or all(not cell.strip() for cell in row):
                continue
            if len(row) != 4:
                raise ValidationError(f"line {lineno}: expected 4 fields, got {len(row)}")
            try:
                z, m, a, b = (float(cell) for cell in row)
            except ValueError:
                raise ValidationError(f"line {lineno}: could not parse a number") from None
            rec = QuasarRecord(z, m, a, b)
            reason = rec.violation()
            if reason is not None:
                raise ValidationError(
                    f"record {len(records)} (line {lineno}): {reason}",
                    index=len(records),
                )
            records.append(rec)
    if not records:
        raise ValidationError("no records in file")
    return records


def _log_luminosity(z: float, magnitude: float) -> float:
    big_z = 1.0 + z
    return (
        19.894
        - 2.303 * magnitude / 2.5
        + math.log(big_z - math.sqrt(big_z))
        - 0.5 * math.log(big_z)
    )


def to_luminosity(record: QuasarRecord) -> Observation:
    """Map one magnitude record to a bounded log-luminosity observation.

    The conversion decreases in magnitude, so the image of the upper
    magnitude limit is the lower luminosity bound; the roles are swapped
    with a warning rather than emitted in raw order.
    """
    if record.z <= 0.0:
        raise ValidationError("redshift must be positive")
    y = _log_luminosity(record.z, record.m)
    lower = _log_luminosity(record.z, record.a)
    upper = _log_luminosity(record.z, record.b)
    if upper < lower:
        warnings.warn(
            "magnitude limits map to reversed luminosity bounds; swapping",
            RuntimeWarning,
            stacklevel=2,
        )
        lower, upper = upper, lower
    if not (lower < y < upper):
        raise ValidationError("mapped bounds do not bracket the response")
    return Observation(y=y, x=(), l=lower, r=upper)


def evolution_sample(records, model: EvolutionModel) -> TruncatedSample:
    """Assemble the regression sample for the chosen evolution model."""
    records = list(records)
    if not records:
        raise ValidationError("no records")
    y = np.empty(len(records))
    lower = np.empty(len(records))
    upper = np.empty(len(records))
    for i, rec in enumerate(records):
        obs = to_luminosity(rec)
        y[i] = obs.y
        lower[i] = obs.l
        upper[i] = obs.r
    logs = np.log1p(np.asarray([rec.z for rec in records]))
    if model is EvolutionModel.LINEAR:
        x = logs[:, None]
    else:
        x = np.column_stack([logs, logs**2])
    return TruncatedSample.from_arrays(y, x, lower, upper)


def loss_curve(sample: TruncatedSample, grid) -> list[tuple[float, float]]:
    """Evaluate the pairwise loss along a one-dimensional slope grid."""
    if sample.p != 1:
        raise ValueError("loss curves need exactly one covariate")
    pt = PairTerms(sample)
    return [(float(t), float(pt.loss_value(np.asarray([t], dtype=float))))
            for t in np.asarray(grid, dtype=float)]


def loss_curve_tsv(table) -> str:
    lines = ["theta\tloss"]
    for theta, value in table:
        lines.append(f"{theta:.4f}\t{value:.4f}")
    return "\n".join(lines) + "\n"
