"""Multi-target sensing chain: CP decomposition, association, symbol-level fusion."""

from .association import AssociationError, AssociationOutcome, associate, component_ranges
from .cp import CpConfig, CpFactors, cp_decompose, reconstruct
from .fusion import (
    FusionSet, build_fusion, estimate_noise_variance, localization_objective, localization_trace,
    mrc_weights, velocity_objective, velocity_trace,
)
from .pipeline import (
    SenseConfig, SenseReport, StageOne, TargetEstimate, estimate_target, failed_estimate, sense,
    sl_mdts, stage_one,
)
from .ranging import coarse_range, music_refine, music_spectrum

__all__ = [
    "AssociationError", "AssociationOutcome", "CpConfig", "CpFactors", "FusionSet",
    "SenseConfig", "SenseReport", "StageOne", "TargetEstimate", "associate", "build_fusion",
    "coarse_range", "component_ranges", "cp_decompose", "estimate_noise_variance",
    "estimate_target", "failed_estimate", "localization_objective", "localization_trace", "mrc_weights",
    "music_refine", "music_spectrum", "reconstruct", "sense", "sl_mdts", "stage_one",
    "velocity_objective", "velocity_trace",
]
