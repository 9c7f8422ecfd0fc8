"""Conformal classification that adapts to random label contamination."""

from .calibration import (
    CTable,
    EcdfFamily,
    NoiseRegion,
    adaptive_calibration_conditional,
    adaptive_ci,
    adaptive_label_conditional,
    adaptive_marginal,
    monte_carlo_c,
    rr_region,
    standard_label_conditional,
    standard_marginal,
    theoretical_bounds,
    two_level_region,
)
from .contamination import (
    ContaminationModel,
    build_from_transition,
    build_rr,
    build_two_level_rr,
    corrupt_labels,
)
from .estimation import fit_general, fit_rr, fit_two_level_rr
from .scores import aps_scores, hps_scores, prediction_set, prediction_sets

__version__ = "0.1.0"

__all__ = [
    "CTable",
    "ContaminationModel",
    "EcdfFamily",
    "NoiseRegion",
    "adaptive_calibration_conditional",
    "adaptive_ci",
    "adaptive_label_conditional",
    "adaptive_marginal",
    "aps_scores",
    "build_from_transition",
    "build_rr",
    "build_two_level_rr",
    "corrupt_labels",
    "fit_general",
    "fit_rr",
    "fit_two_level_rr",
    "hps_scores",
    "monte_carlo_c",
    "prediction_set",
    "prediction_sets",
    "rr_region",
    "standard_label_conditional",
    "standard_marginal",
    "theoretical_bounds",
    "two_level_region",
]
