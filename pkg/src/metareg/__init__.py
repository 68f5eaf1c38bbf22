"""Mixed-effects meta-regression with Knapp-Hartung inference and a
seeded Monte Carlo laboratory for moderator/interaction misspecification."""

from .data import (
    Dataset,
    DesignMatrix,
    ModelSpec,
    StudyRecord,
    build_design,
    column_medians,
)
from .effects import EffectData, expit, logit, logit_effect, logit_effect_arrays
from .errors import (
    DataError,
    InsufficientStudiesError,
    MetaregError,
    NonConvergenceError,
    NumericalError,
    SingularDesignError,
    UsageError,
)
from .estimation import (
    Convergence,
    FitResult,
    FitSettings,
    dl_tau2,
    fit_model,
    reml_tau2,
    restricted_loglik,
    wls_fit,
)
from .inference import (
    ConfidenceInterval,
    PredictionBand,
    confidence_intervals,
    kh_scale,
    predict_at,
    t_quantile,
)
from .rng import RandomStream, SeedSpec
from .simulation import (
    ModelSummary,
    ReplicateData,
    ReplicateTruth,
    Scenario,
    ScenarioDesign,
    SimulationSummary,
    bias_metric,
    coverage_metric,
    generate_replicate,
    median_length_metric,
    run_simulation,
)
from .synthetic import scenario_a, scenario_b, standard_fitted_specs, synthetic_design

__version__ = "0.1.0"

__all__ = [name for name in dir() if not name.startswith("_")]
