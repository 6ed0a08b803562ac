from .estimate import FitConfig, fit
from .model import (
    PROCESS_NAMES,
    DenseKernel,
    HawkesModel,
    InstabilityError,
    InterventionPlan,
    LowRankKernel,
    Process,
    branching_spectral_radius,
    make_model,
    process_events,
)
from .moments import (
    ExcitationState,
    expected_counts,
    intensity_at,
    propagator,
    residual_excitation,
)
from .simulate import simulate

__all__ = [
    "PROCESS_NAMES",
    "DenseKernel",
    "ExcitationState",
    "FitConfig",
    "HawkesModel",
    "InstabilityError",
    "InterventionPlan",
    "LowRankKernel",
    "Process",
    "branching_spectral_radius",
    "expected_counts",
    "fit",
    "intensity_at",
    "make_model",
    "process_events",
    "propagator",
    "residual_excitation",
    "simulate",
]
