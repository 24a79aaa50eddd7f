"""Sensitivity of transported treatment effects to overlap violations."""

__version__ = "0.1.0"

from .data import (  # noqa: E402
    ExperimentalSample,
    ExperimentalSchema,
    SubgroupRule,
    TargetPopulation,
    TargetSchema,
    build_subgroup,
    load_experimental,
    load_target,
)
from .weights import (  # noqa: E402
    SelectionModel,
    WeightVector,
    fit_selection,
    transport_weights,
    weighted_moments,
)
from .estimation import bootstrap, dim, fh_var_bound, tpate  # noqa: E402
from .sensitivity import (  # noqa: E402
    SensitivityParams,
    bias,
    bias_from_target_var,
    contour_grid,
    mve,
    orv,
    r2_upper_bound,
    var_target_decomposition,
)
from .benchmark import (  # noqa: E402
    benchmark_all,
    benchmark_subgroup,
    exact_match_overlap,
    range_overlap,
)
from .sim import DGPSpec, generate, oracle  # noqa: E402
