"""Sub-diffraction emitter localization and brightness sensing with spatial-mode sorting."""

from .scene import (
    DegeneratePositionsError,
    EigenbasisRep,
    EmitterEnsemble,
    NumericalRankError,
    eigenbasis_representation,
    ensemble_representation,
    gram_matrix,
    min_pairwise_separation,
    uniform_ensemble,
)
from .measurements import (
    PadSpadeConfig,
    PhotonData,
    bspade_probabilities,
    helstrom_binary,
    pad_probabilities,
    sample_direct_imaging,
)
from .ykl import YklMeasurement, design_ykl, solve_ykl, ykl_outcome_probabilities
from .estimation import (
    align_permutation,
    brightness_error,
    error_correlation,
    estimate_brightness_mle,
    estimate_positions_mle,
    localization_error,
)
from .information import (
    TwoSourceParams,
    optimal_allocation,
    qfim_brightness_block,
    qfim_two_source,
    sld_brightness_two_source,
)

__version__ = "0.1.0"
