"""Doubly robust weighted regression for treatment effects when some
confounders are only partially observed.

The package encodes missing confounders with the missing-indicator device,
builds propensity-score balancing weights, and estimates blip (treatment
effect) parameters by weighted least squares, with AIPW and G-estimation
competitors, stacked sandwich variances, a Monte Carlo scenario engine and
a synthetic clinical cohort generator.
"""

from .data import (
    AugmentedDesign,
    Dataset,
    Encoded,
    EncodingError,
    ModelSpec,
    RankError,
    build_design,
    encode_missing_indicator,
    read_csv_dataset,
    write_dataset_csv,
)
from .estimators import (
    FitResult,
    fit_aipw,
    fit_g_estimation,
    fit_propensity,
    fit_weighted_ols,
)
from .fitting import (
    FittingError,
    LogisticFit,
    SeparationError,
    WlsFit,
    fit_logistic,
    fit_wls,
)
from .inference import (
    AseEseReport,
    SandwichError,
    StackedScores,
    ase_ese_report,
    sandwich_cov,
)
from .simulation import (
    MetricsRow,
    MetricsTable,
    ScenarioConfig,
    SimulationResult,
    generate_scenario,
    run_monte_carlo,
    run_scenario_grid,
    table1_scenarios,
    working_models,
)
from .weights import WeightScheme, check_balance, compute_weights, satisfies_balance

__version__ = "0.1.0"
