"""Synthetic observational cohort: antihypertensive prescriptions and kidney
function, calibrated to published baseline marginals.

The generator draws ~570k patients whose covariate marginals match the
reference baseline table (comorbidities, sex, age and calendar-period
categories), two partially observed confounders (ethnicity, missing 59.0%;
baseline kidney-function category, missing 52.9%), a confounded binary
treatment with treated fraction ~0.2734, and a continuous kidney-function
outcome with overall mean 82.15, SD 17.82 and a homogeneous treatment effect
of -0.6831.

Both the treatment mechanism and the outcome mean include one
hypertension x missing-indicator interaction; "misspecified" working models
omit that term, which is what produces the bias pattern the illustration
study exercises.  Missingness is MAR: the masking probabilities depend only
on fully observed covariates that are independent of the masked value, so
the published observed-category marginals are preserved.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .data import Dataset, ModelSpec, build_design, encode_missing_indicator
from .estimators import (
    fit_aipw,
    fit_g_estimation,
    fit_propensity,
    fit_weighted_ols,
)
from .fitting import expit
from .simulation import rng_stream
from .weights import WeightScheme

__all__ = [
    "CohortConfig",
    "IllustrationRow",
    "generate_cohort",
    "cohort_model_spec",
    "run_illustration",
    "TRUE_EFFECT",
    "TABLE2_COUNTS",
]

TRUE_EFFECT = -0.6831
COHORT_N = 570_586
TREATED_COUNT = 155_982

EGFR_MEAN = 82.15
EGFR_SD = 17.82

AGE_LEVELS = ("<45", "45-54", "55-59", "60-64", "65-69", "70-74", "75-84", ">=85")
AGE_COUNTS = (342080, 116258, 47433, 34242, 19906, 7908, 2221, 538)
PERIOD_LEVELS = ("<=2000", "2001-2004", "2005-2008", "2009-2011", "2012-2014")
PERIOD_COUNTS = (32890, 85662, 141807, 149111, 161116)
ETHNICITY_LEVELS = ("White", "South Asian", "Black", "Other", "Mixed")
ETHNICITY_COUNTS = (217496, 7999, 5128, 2335, 1131)
ETHNICITY_MISSING = 336_497
EGFR_LEVELS = ("<30", "30-44", "45-59", ">=60")
EGFR_COUNTS = (235571, 26343, 5625, 1101)
EGFR_MISSING = 301_946

BINARY_COUNTS = {
    "diabetes": 83496,
    "hypertension": 364614,
    "cardiac_failure": 31853,
    "arrhythmia": 56200,
    "heart_disease": 118486,
    "female": 298839,
}

# Overall percentages of the reference baseline table, used by calibration
# checks: binary prevalences, category shares and missing fractions.
TABLE2_COUNTS = {
    **BINARY_COUNTS,
    **{f"age={lab}": cnt for lab, cnt in zip(AGE_LEVELS, AGE_COUNTS)},
    **{f"period={lab}": cnt for lab, cnt in zip(PERIOD_LEVELS, PERIOD_COUNTS)},
    **{f"ethnicity={lab}": cnt for lab, cnt in zip(ETHNICITY_LEVELS, ETHNICITY_COUNTS)},
    "ethnicity=missing": ETHNICITY_MISSING,
    **{f"egfr={lab}": cnt for lab, cnt in zip(EGFR_LEVELS, EGFR_COUNTS)},
    "egfr=missing": EGFR_MISSING,
    "treated": TREATED_COUNT,
}

# Kidney-category distribution is tilted by age while preserving the overall
# marginal: P(cat) = p_old * q_old + (1 - p_old) * q_young with q_old = q + d.
_EGFR_TILT = np.array([0.038, -0.02, -0.015, -0.003])

# Treatment-mechanism log-odds (small, keeps propensities inside [0.1, 0.6]).
TREATMENT_COEFS = {
    "diabetes": 0.15,
    "hypertension": 0.10,
    "cardiac_failure": 0.12,
    "female": -0.08,
    "age55": 0.05,
    "egfr=30-44": 0.08,
    "egfr=45-59": 0.10,
    "egfr=>=60": 0.12,
    "egfr=missing": -0.10,
}

# Outcome-mean coefficients on the same covariates (kidney-function units).
OUTCOME_COEFS = {
    "diabetes": -1.5,
    "hypertension": -1.0,
    "cardiac_failure": -2.0,
    "female": 0.8,
    "age55": -3.0,
    "egfr=30-44": 2.0,
    "egfr=45-59": 3.0,
    "egfr=>=60": 4.0,
    "egfr=missing": 1.5,
}

# hypertension x egfr-missing interaction: present in the generator for both
# treatment and outcome; the misspecified working models omit it.  Sized so
# that omitting it from both models biases the effect estimate by about -0.17,
# well past the half-width of a full-size confidence interval.
INTERACTION_TREATMENT = 0.5
INTERACTION_OUTCOME = -6.0

METHODS = ("unw", "abs", "ipw", "sipw", "aipw", "gest")


@dataclass(frozen=True)
class CohortConfig:
    n: int = COHORT_N
    seed: int = 20260808
    true_effect: float = TRUE_EFFECT
    treated_fraction: float = TREATED_COUNT / COHORT_N
    interaction_treatment: float = INTERACTION_TREATMENT
    interaction_outcome: float = INTERACTION_OUTCOME
    treatment_coefs: dict = field(default_factory=lambda: dict(TREATMENT_COEFS))
    outcome_coefs: dict = field(default_factory=lambda: dict(OUTCOME_COEFS))
    ethnicity_missing_rate: float = ETHNICITY_MISSING / COHORT_N
    egfr_missing_rate: float = EGFR_MISSING / COHORT_N
    outcome_mean: float = EGFR_MEAN
    outcome_sd: float = EGFR_SD


def _draw_categorical(g: np.random.Generator, probs: np.ndarray, n: int) -> np.ndarray:
    cum = np.cumsum(probs)
    cum[-1] = 1.0
    return np.searchsorted(cum, g.random(n), side="right").astype(float)


def _solve_intercept(lp: np.ndarray, target: float) -> float:
    """Intercept a such that mean(expit(a + lp)) == target, by bisection."""
    lo, hi = -20.0, 20.0
    for _ in range(200):
        mid = 0.5 * (lo + hi)
        if float(expit(mid + lp).mean()) < target:
            lo = mid
        else:
            hi = mid
    return 0.5 * (lo + hi)


def generate_cohort(cfg: CohortConfig = CohortConfig()) -> Dataset:
    """Draw the synthetic cohort; deterministic in cfg.seed."""
    g = rng_stream(cfg.seed, "cohort", 0)
    n = cfg.n

    cols = {name: (g.random(n) < cnt / COHORT_N).astype(float)
            for name, cnt in BINARY_COUNTS.items()}
    age = _draw_categorical(g, np.array(AGE_COUNTS) / COHORT_N, n)
    period = _draw_categorical(g, np.array(PERIOD_COUNTS) / COHORT_N, n)
    age55 = (age >= AGE_LEVELS.index("55-59")).astype(float)

    # Kidney category depends on age through a marginal-preserving tilt.
    q = np.array(EGFR_COUNTS) / sum(EGFR_COUNTS)
    p_old = sum(AGE_COUNTS[AGE_LEVELS.index("55-59"):]) / COHORT_N
    q_old = q + _EGFR_TILT
    q_young = q - _EGFR_TILT * p_old / (1.0 - p_old)
    u = g.random(n)
    egfr_cat = np.where(
        age55 == 1.0,
        np.searchsorted(np.cumsum(q_old), u, side="right"),
        np.searchsorted(np.cumsum(q_young), u, side="right"),
    ).astype(float)
    egfr_cat = np.minimum(egfr_cat, len(EGFR_LEVELS) - 1)

    ethnicity = _draw_categorical(
        g, np.array(ETHNICITY_COUNTS) / sum(ETHNICITY_COUNTS), n)

    # MAR masking: probabilities depend only on fully observed covariates
    # that are independent of the masked category, preserving the published
    # observed-category marginals.
    lp_eth = 0.25 * cols["female"] + 0.20 * age55
    a_eth = _solve_intercept(lp_eth, cfg.ethnicity_missing_rate)
    eth_obs = g.random(n) >= expit(a_eth + lp_eth)

    lp_eg = 0.20 * cols["hypertension"] + 0.15 * (period >= PERIOD_LEVELS.index("2009-2011"))
    a_eg = _solve_intercept(lp_eg, cfg.egfr_missing_rate)
    egfr_obs = g.random(n) >= expit(a_eg + lp_eg)

    egfr_missing = (~egfr_obs).astype(float)
    interaction = cols["hypertension"] * egfr_missing

    def mechanism_lp(coefs: dict) -> np.ndarray:
        lp = np.zeros(n)
        for name, b in coefs.items():
            if name == "age55":
                lp += b * age55
            elif name.startswith("egfr="):
                lab = name.split("=", 1)[1]
                if lab == "missing":
                    lp += b * egfr_missing
                else:
                    lp += b * ((egfr_cat == EGFR_LEVELS.index(lab)) & egfr_obs)
            else:
                lp += b * cols[name]
        return lp

    lp_z = mechanism_lp(cfg.treatment_coefs) + cfg.interaction_treatment * interaction
    a_z = _solve_intercept(lp_z, cfg.treated_fraction)
    z = (g.random(n) < expit(a_z + lp_z)).astype(float)

    lp_y = (mechanism_lp(cfg.outcome_coefs)
            + cfg.interaction_outcome * interaction
            + cfg.true_effect * z)
    var_lp = float(np.var(lp_y))
    resid_var = cfg.outcome_sd ** 2 - var_lp
    if resid_var <= 0:
        raise ValueError("outcome coefficients explain more than the target variance")
    a_y = cfg.outcome_mean - float(lp_y.mean())
    y = a_y + lp_y + np.sqrt(resid_var) * g.standard_normal(n)

    return Dataset(
        y=y,
        z=z,
        c=np.column_stack([
            cols["diabetes"], cols["hypertension"], cols["cardiac_failure"],
            cols["arrhythmia"], cols["heart_disease"], cols["female"],
            age, age55, period,
        ]),
        x=np.column_stack([ethnicity, np.where(egfr_obs, egfr_cat, 0.0)]),
        observed=np.column_stack([eth_obs, egfr_obs]),
        c_names=("diabetes", "hypertension", "cardiac_failure", "arrhythmia",
                 "heart_disease", "female", "age", "age55", "period"),
        x_names=("ethnicity", "egfr"),
        c_levels={"age": AGE_LEVELS, "period": PERIOD_LEVELS},
        x_levels={"ethnicity": ETHNICITY_LEVELS, "egfr": EGFR_LEVELS},
    )


_BASE_TERMS = (
    "intercept", "diabetes", "hypertension", "cardiac_failure", "female",
    "age55", "egfr=30-44", "egfr=45-59", "egfr=>=60", "egfr=missing",
)
_INTERACTION_TERM = "hypertension*egfr=missing"


def cohort_model_spec(pi_correct: bool, y_correct: bool) -> ModelSpec:
    """Working models for the illustration; 'misspecified' omits the
    hypertension x missing-indicator interaction the generator contains."""
    t_terms = _BASE_TERMS + ((_INTERACTION_TERM,) if pi_correct else ())
    y_terms = _BASE_TERMS + ((_INTERACTION_TERM,) if y_correct else ())
    return ModelSpec(treatment_terms=t_terms, treatment_free_terms=y_terms,
                     blip_terms=("intercept",))


@dataclass(frozen=True)
class IllustrationRow:
    method: str
    pi_spec: str   # "ok", "mis", or "-" for methods without a treatment model
    y_spec: str
    estimate: float
    bias: float
    se: float
    ci_lower: float
    ci_upper: float


def run_illustration(cfg: CohortConfig = CohortConfig(),
                     dataset: Dataset | None = None,
                     methods: tuple[str, ...] = METHODS) -> list[IllustrationRow]:
    """Estimate the treatment effect under all four specification combos.

    Returns one row per (method, pi-model, y-model) cell; the unweighted
    regression ignores the treatment model and contributes one row per
    outcome specification.
    """
    data = generate_cohort(cfg) if dataset is None else dataset
    encoded = encode_missing_indicator(data, fill=0.0)

    designs = {}
    propensities = {}
    for pi_ok in (True, False):
        for y_ok in (True, False):
            designs[(pi_ok, y_ok)] = build_design(
                encoded, cohort_model_spec(pi_ok, y_ok))
    for pi_ok in (True, False):
        propensities[pi_ok] = fit_propensity(designs[(pi_ok, True)], data)

    def spec_tag(ok: bool) -> str:
        return "ok" if ok else "mis"

    rows: list[IllustrationRow] = []
    for method in methods:
        if method == "unw":
            combos = [(None, True), (None, False)]
        else:
            combos = [(True, True), (True, False), (False, True), (False, False)]
        for pi_ok, y_ok in combos:
            design = designs[(pi_ok if pi_ok is not None else True, y_ok)]
            prop = propensities[pi_ok] if pi_ok is not None else None
            if method == "aipw":
                fit = fit_aipw(design, data, propensity=prop)
            elif method == "gest":
                fit = fit_g_estimation(design, data, propensity=prop)
            else:
                scheme = (WeightScheme("sipw", float(data.z.mean()))
                          if method == "sipw" else WeightScheme(method))
                fit = fit_weighted_ols(design, data, scheme, propensity=prop)
            rows.append(IllustrationRow(
                method=method,
                pi_spec="-" if pi_ok is None else spec_tag(pi_ok),
                y_spec=spec_tag(y_ok),
                estimate=float(fit.psi[0]),
                bias=float(fit.psi[0]) - cfg.true_effect,
                se=float(fit.se[0]),
                ci_lower=float(fit.ci_lower[0]),
                ci_upper=float(fit.ci_upper[0]),
            ))
    return rows
