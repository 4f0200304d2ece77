"""Rank-based linear regression for doubly truncated responses.

A response is observed only when it falls strictly between record-specific
lower and upper truncation bounds. Estimation minimizes a pairwise clipped
L1 loss whose summands compare only pairs that remain rankable despite the
truncation; inference perturbs the loss with gamma multipliers and refits.
"""

from .inference import (
    PerturbationLaw,
    ResampleSummary,
    Sided,
    draw_perturbation,
    resample,
    scale_invariance_check,
    wald_interval,
    wald_test,
    write_replicates_csv,
)
from .loss import (
    PairWindow,
    PerturbationWeights,
    WeightScheme,
    clipped_pair_term,
    comparable,
    comparable_by_window,
    iterative_loss,
    logrank_weight,
    loss,
    pair_window,
    score,
    weighted_loss,
)
from .model import (
    Observation,
    ResidualFrame,
    TruncatedSample,
    ValidationError,
    read_sample_csv,
    residuals,
    validate_sample,
)
from .optimize import (
    FitOptions,
    FitResult,
    NonIdentifiableError,
    OptimizationError,
    SimplexOptions,
    Strategy,
    fit,
    naive_fit,
    nelder_mead,
)
from .quasar import (
    EvolutionModel,
    QuasarRecord,
    evolution_sample,
    load_quasar,
    loss_curve,
    loss_curve_tsv,
    to_luminosity,
)
from .simlab import (
    CalibrationResult,
    ErrorLaw,
    ReportRow,
    SimDesign,
    SimulationReport,
    Truncation,
    TruncationKind,
    calibrate_truncation,
    generate_dataset,
    iterates_csv,
    report_csv,
    report_json,
    run_study,
)

__all__ = [
    "CalibrationResult",
    "ErrorLaw",
    "EvolutionModel",
    "FitOptions",
    "FitResult",
    "NonIdentifiableError",
    "Observation",
    "OptimizationError",
    "PairWindow",
    "PerturbationLaw",
    "PerturbationWeights",
    "QuasarRecord",
    "ReportRow",
    "ResampleSummary",
    "ResidualFrame",
    "Sided",
    "SimDesign",
    "SimplexOptions",
    "SimulationReport",
    "Strategy",
    "Truncation",
    "TruncatedSample",
    "TruncationKind",
    "ValidationError",
    "WeightScheme",
    "calibrate_truncation",
    "clipped_pair_term",
    "comparable",
    "comparable_by_window",
    "draw_perturbation",
    "evolution_sample",
    "fit",
    "generate_dataset",
    "iterates_csv",
    "iterative_loss",
    "load_quasar",
    "logrank_weight",
    "loss",
    "loss_curve",
    "loss_curve_tsv",
    "naive_fit",
    "nelder_mead",
    "pair_window",
    "read_sample_csv",
    "report_csv",
    "report_json",
    "resample",
    "residuals",
    "run_study",
    "scale_invariance_check",
    "score",
    "to_luminosity",
    "validate_sample",
    "wald_interval",
    "wald_test",
    "weighted_loss",
    "write_replicates_csv",
]

__version__ = "0.1.0"
