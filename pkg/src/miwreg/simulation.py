"""Monte Carlo engine: data-generating mechanisms, scenario grid and metrics.

The generator draws a binary confounder X that can go missing, a fully
observed binary confounder C, latent standard-normal common causes U_Z and
U_Y, an observedness indicator R, a binary treatment Z and a continuous
outcome Y:

    X ~ Bernoulli(0.67),  C ~ Bernoulli(0.58)
    R ~ Bernoulli(1 - expit(-0.5 + 1.48 U_Z + 1.36 U_Y))
    Z ~ Bernoulli(expit(-1.2 + tau U_Z + 1.38 X R + lambda X (1-R) + 2 R
                        + 1.69 C + delta_z C R))
    Y ~ Normal(1 + psi0 Z + psi1 Z C - 2.2 tau U_Y - 1.55 X R
               + gamma X (1-R) + 1.8 R - 1.7 C + delta_y C R,  sd = 3)

Switch semantics: tau = 0 removes the latent confounding, lambda = 0 makes
the missing part of X irrelevant to treatment, gamma = 0 makes it irrelevant
to the outcome, and delta_z = 0 / delta_y = 0 make the working treatment /
outcome models (which never include the C x R interaction) correctly
specified.

Randomness comes from the counter-based Philox generator; each replication's
stream key is the first 16 bytes of SHA-256("base_seed|scenario|rep"), so
results are reproducible across machines and independent of worker count.
"""

from __future__ import annotations

import hashlib
import multiprocessing
from dataclasses import dataclass, field, replace
from typing import Sequence

import numpy as np

from .data import (
    Dataset,
    EncodingError,
    ModelSpec,
    RankError,
    build_design,
    encode_missing_indicator,
)
from .estimators import (
    fit_aipw,
    fit_g_estimation,
    fit_propensity,
    fit_weighted_ols,
)
from .fitting import FittingError, expit
from .inference import SandwichError
from .weights import WeightScheme

__all__ = [
    "ScenarioConfig",
    "MetricsRow",
    "MetricsTable",
    "ReplicateRecord",
    "SimulationResult",
    "ESTIMATOR_TAGS",
    "rng_stream",
    "generate_scenario",
    "working_models",
    "run_monte_carlo",
    "run_scenario_grid",
    "table1_scenarios",
]

TRUE_MAIN_EFFECT = -2.35
P_X = 0.67
P_C = 0.58
OUTCOME_SD = 3.0

# Weighted-regression schemes plus the two competitor estimators.
ESTIMATOR_TAGS = ("unw", "abs", "ipw", "sipw", "aipw", "gest")

MAX_FAILURE_FRACTION = 0.05

_FAILURE_KINDS = (FittingError, SandwichError, np.linalg.LinAlgError)


@dataclass(frozen=True)
class ScenarioConfig:
    """One cell of the simulation grid.

    tau breaks the no-latent-confounding assumption, lam / gamma break the
    irrelevance of the missing confounder part to treatment / outcome, and
    delta_z / delta_y put a C x R interaction in the generator that the
    working models omit.
    """

    tau: float = 0.0
    lam: float = 0.0
    gamma: float = 0.0
    delta_z: float = 0.0
    delta_y: float = 0.0
    psi0: float = TRUE_MAIN_EFFECT
    psi1: float = 0.0
    n: int = 500
    reps: int = 1000
    base_seed: int = 0

    @property
    def msita(self) -> bool:
        return self.tau == 0.0

    @property
    def cit(self) -> bool:
        return self.lam == 0.0

    @property
    def cio(self) -> bool:
        return self.gamma == 0.0

    @property
    def treatment_model_correct(self) -> bool:
        return self.delta_z == 0.0

    @property
    def outcome_model_correct(self) -> bool:
        return self.delta_y == 0.0

    @property
    def spec_label(self) -> str:
        """Model-specification cell: CC / CI / IC / II (treatment, outcome)."""
        return (("C" if self.treatment_model_correct else "I")
                + ("C" if self.outcome_model_correct else "I"))

    @property
    def heterogeneous(self) -> bool:
        return self.psi1 != 0.0

    def scenario_key(self) -> str:
        """Canonical id; also salts the RNG streams."""
        return (f"tau={self.tau:g},lambda={self.lam:g},gamma={self.gamma:g},"
                f"dz={self.delta_z:g},dy={self.delta_y:g},"
                f"psi0={self.psi0:g},psi1={self.psi1:g},n={self.n}")

    def assumption_label(self) -> str:
        flags = [
            "mSITA" if self.msita else "no-mSITA",
            "CIT" if self.cit else "no-CIT",
            "CIO" if self.cio else "no-CIO",
        ]
        return "+".join(flags)

    def truth_for(self, estimator: str) -> np.ndarray:
        """Target value(s) of the estimator under this generator."""
        if estimator == "aipw":
            # AIPW targets the marginal average treatment effect.
            return np.array([self.psi0 + self.psi1 * P_C])
        if self.heterogeneous:
            return np.array([self.psi0, self.psi1])
        return np.array([self.psi0])


def rng_stream(base_seed: int, label: str, rep: int) -> np.random.Generator:
    """Counter-based stream keyed injectively by (seed, label, replication)."""
    digest = hashlib.sha256(f"{base_seed}|{label}|{rep}".encode()).digest()
    key = int.from_bytes(digest[:16], "little")
    return np.random.Generator(np.random.Philox(key=key))


@dataclass(frozen=True)
class GeneratedScenario:
    """Dataset plus generator-side quantities kept for estimand checks."""

    dataset: Dataset
    mean_treated: np.ndarray
    mean_untreated: np.ndarray
    treated_fraction: float
    missing_fraction: float


def _generate(cfg: ScenarioConfig, rep_index: int) -> GeneratedScenario:
    g = rng_stream(cfg.base_seed, cfg.scenario_key(), rep_index)
    n = cfg.n
    u_z = g.standard_normal(n)
    u_y = g.standard_normal(n)
    x = (g.random(n) < P_X).astype(float)
    c = (g.random(n) < P_C).astype(float)
    p_obs = 1.0 - expit(-0.5 + 1.48 * u_z + 1.36 * u_y)
    r = (g.random(n) < p_obs).astype(float)
    logit_z = (-1.2 + cfg.tau * u_z + 1.38 * x * r + cfg.lam * x * (1.0 - r)
               + 2.0 * r + 1.69 * c + cfg.delta_z * c * r)
    z = (g.random(n) < expit(logit_z)).astype(float)

    base = (1.0 - 2.2 * cfg.tau * u_y - 1.55 * x * r + cfg.gamma * x * (1.0 - r)
            + 1.8 * r - 1.7 * c + cfg.delta_y * c * r)
    mean_treated = base + cfg.psi0 + cfg.psi1 * c
    mean_untreated = base
    mu = np.where(z == 1.0, mean_treated, mean_untreated)
    y = mu + OUTCOME_SD * g.standard_normal(n)

    dataset = Dataset(
        y=y, z=z, c=c, x=x, observed=(r == 1.0).reshape(-1, 1),
        c_names=("C",), x_names=("X",),
    )
    return GeneratedScenario(
        dataset=dataset,
        mean_treated=mean_treated,
        mean_untreated=mean_untreated,
        treated_fraction=float(z.mean()),
        missing_fraction=float(1.0 - r.mean()),
    )


def generate_scenario(cfg: ScenarioConfig, rep_index: int) -> Dataset:
    """Draw one dataset; same (cfg, rep_index) always gives identical bits."""
    if rep_index >= cfg.reps:
        raise ValueError(f"rep_index {rep_index} out of range (reps={cfg.reps})")
    return _generate(cfg, rep_index).dataset


def working_models(cfg: ScenarioConfig) -> ModelSpec:
    """Analyst-side model specification for this scenario.

    Both models regress on the encoded confounders without the C x R
    interaction, so they are correct exactly when the corresponding delta
    is zero.  The blip picks up the effect modifier only in heterogeneous
    configurations.
    """
    terms = ("intercept", "X*R_X", "R_X", "C")
    blip = ("intercept", "C") if cfg.heterogeneous else ("intercept",)
    return ModelSpec(treatment_terms=terms, treatment_free_terms=terms,
                     blip_terms=blip)


def _scheme_for(tag: str, z: np.ndarray) -> WeightScheme:
    if tag == "sipw":
        return WeightScheme("sipw", float(z.mean()))
    return WeightScheme(tag)


@dataclass(frozen=True)
class ReplicateRecord:
    rep: int
    estimator: str
    psi: np.ndarray | None
    se: np.ndarray | None
    error: str | None = None

    @property
    def ok(self) -> bool:
        return self.error is None


def _run_estimators(dataset: Dataset, spec: ModelSpec,
                    estimators: Sequence[str], rep: int) -> list[ReplicateRecord]:
    records = []
    try:
        design = build_design(encode_missing_indicator(dataset, fill=0.0), spec)
    except (EncodingError, RankError) as exc:
        return [ReplicateRecord(rep, tag, None, None, str(exc))
                for tag in estimators]

    propensity = None
    propensity_error = None
    if any(tag != "unw" for tag in estimators):
        try:
            propensity = fit_propensity(design, dataset)
        except _FAILURE_KINDS as exc:
            propensity_error = str(exc)

    for tag in estimators:
        if tag != "unw" and propensity is None:
            records.append(ReplicateRecord(rep, tag, None, None, propensity_error))
            continue
        try:
            if tag == "aipw":
                fit = fit_aipw(design, dataset, propensity=propensity)
            elif tag == "gest":
                fit = fit_g_estimation(design, dataset, propensity=propensity)
            else:
                fit = fit_weighted_ols(design, dataset,
                                       _scheme_for(tag, dataset.z),
                                       propensity=propensity)
            records.append(ReplicateRecord(rep, tag, fit.psi, fit.se))
        except _FAILURE_KINDS as exc:
            records.append(ReplicateRecord(rep, tag, None, None, str(exc)))
    return records


def _replicate_chunk(cfg: ScenarioConfig, rep_lo: int, rep_hi: int,
                     estimators: tuple[str, ...]) -> list[ReplicateRecord]:
    spec = working_models(cfg)
    out: list[ReplicateRecord] = []
    for rep in range(rep_lo, rep_hi):
        dataset = _generate(cfg, rep).dataset
        out.extend(_run_estimators(dataset, spec, estimators, rep))
    return out


@dataclass(frozen=True)
class MetricsRow:
    """Aggregated performance of one estimator in one scenario cell."""

    scenario: str
    assumptions: str
    spec_label: str
    estimator: str
    param: str
    truth: float
    n_used: int
    n_failed: int
    mean_est: float
    bias: float
    ese: float
    ase: float
    pct_bias_over_ase: float
    coverage: float
    mse: float
    mse_rel_gest: float
    valid: bool


METRICS_COLUMNS = (
    "scenario", "assumptions", "spec_label", "estimator", "param", "truth",
    "n_used", "n_failed", "mean_est", "bias", "ese", "ase",
    "pct_bias_over_ase", "coverage", "mse", "mse_rel_gest", "valid",
)


@dataclass
class MetricsTable:
    rows: list[MetricsRow] = field(default_factory=list)

    def filter(self, **kv) -> "MetricsTable":
        rows = [r for r in self.rows
                if all(getattr(r, k) == v for k, v in kv.items())]
        return MetricsTable(rows)

    def cell(self, **kv) -> MetricsRow:
        rows = self.filter(**kv).rows
        if len(rows) != 1:
            raise KeyError(f"expected exactly one row for {kv}, found {len(rows)}")
        return rows[0]

    def to_rows(self) -> list[list]:
        out = []
        for r in self.rows:
            out.append([getattr(r, c) for c in METRICS_COLUMNS])
        return out


def _aggregate(cfg: ScenarioConfig, estimator: str,
               records: list[ReplicateRecord],
               gest_mse: dict[str, float] | None) -> list[MetricsRow]:
    truth = cfg.truth_for(estimator)
    ok = [r for r in records if r.ok]
    n_failed = len(records) - len(ok)
    valid = n_failed <= MAX_FAILURE_FRACTION * len(records)

    if estimator == "aipw":
        param_names = ("ate",)
    elif cfg.heterogeneous:
        param_names = ("psi0", "psi1")
    else:
        param_names = ("psi0",)

    rows = []
    if not ok:
        for k, name in enumerate(param_names):
            rows.append(MetricsRow(
                scenario=cfg.scenario_key(), assumptions=cfg.assumption_label(),
                spec_label=cfg.spec_label, estimator=estimator, param=name,
                truth=float(truth[k]), n_used=0, n_failed=n_failed,
                mean_est=float("nan"), bias=float("nan"), ese=float("nan"),
                ase=float("nan"), pct_bias_over_ase=float("nan"),
                coverage=float("nan"), mse=float("nan"),
                mse_rel_gest=float("nan"), valid=False,
            ))
        return rows

    est = np.array([r.psi for r in ok])
    ses = np.array([r.se for r in ok])
    for k, name in enumerate(param_names):
        e = est[:, k]
        s = ses[:, k]
        mean_est = float(e.mean())
        bias = mean_est - float(truth[k])
        ese = float(e.std()) if e.size > 1 else float("nan")
        ase = float(s.mean())
        cover = float(np.mean((e - 1.96 * s <= truth[k])
                              & (truth[k] <= e + 1.96 * s)))
        mse = bias * bias + ese * ese if e.size > 1 else float("nan")
        rel = float("nan")
        # AIPW's single target coincides with the main blip coefficient in
        # homogeneous scenarios, so its MSE is comparable to gest's psi0.
        ref = "psi0" if (name == "ate" and not cfg.heterogeneous) else name
        if gest_mse is not None and ref in gest_mse and gest_mse[ref] > 0:
            rel = mse / gest_mse[ref]
        rows.append(MetricsRow(
            scenario=cfg.scenario_key(), assumptions=cfg.assumption_label(),
            spec_label=cfg.spec_label, estimator=estimator, param=name,
            truth=float(truth[k]), n_used=len(ok), n_failed=n_failed,
            mean_est=mean_est, bias=bias, ese=ese, ase=ase,
            pct_bias_over_ase=100.0 * bias / ase if ase > 0 else float("nan"),
            coverage=cover, mse=mse, mse_rel_gest=rel, valid=valid,
        ))
    return rows


@dataclass
class SimulationResult:
    config: ScenarioConfig
    metrics: MetricsTable
    records: dict[str, list[ReplicateRecord]]

    def replicate_estimates(self, estimator: str, param: int = 0) -> np.ndarray:
        return np.array([r.psi[param] for r in self.records[estimator] if r.ok])


def _chunks(reps: int, size: int) -> list[tuple[int, int]]:
    return [(lo, min(lo + size, reps)) for lo in range(0, reps, size)]


def _collect(cfg: ScenarioConfig, estimators: Sequence[str],
             records: list[ReplicateRecord]) -> SimulationResult:
    by_est: dict[str, list[ReplicateRecord]] = {tag: [] for tag in estimators}
    for rec in sorted(records, key=lambda r: r.rep):
        by_est[rec.estimator].append(rec)

    gest_mse = None
    if "gest" in by_est:
        gest_rows = _aggregate(cfg, "gest", by_est["gest"], None)
        gest_mse = {row.param: row.mse for row in gest_rows}

    table = MetricsTable()
    for tag in estimators:
        # gest against its own MSE yields exactly 1, as required.
        table.rows.extend(_aggregate(cfg, tag, by_est[tag], gest_mse))
    return SimulationResult(config=cfg, metrics=table, records=by_est)


def run_monte_carlo(cfg: ScenarioConfig,
                    estimators: Sequence[str] = ESTIMATOR_TAGS,
                    workers: int = 1,
                    chunk_size: int = 50) -> SimulationResult:
    """Replicate the scenario and aggregate estimator performance.

    Replication failures (separation, singular systems) are excluded from
    the aggregates and counted; a cell whose failure fraction exceeds 5% is
    flagged invalid.  Output is independent of ``workers``.
    """
    estimators = tuple(estimators)
    chunks = _chunks(cfg.reps, chunk_size)
    if workers > 1 and len(chunks) > 1:
        with multiprocessing.Pool(workers) as pool:
            parts = pool.starmap(
                _replicate_chunk,
                [(cfg, lo, hi, estimators) for lo, hi in chunks],
            )
        records = [rec for part in parts for rec in part]
    else:
        records = _replicate_chunk(cfg, 0, cfg.reps, estimators)
    return _collect(cfg, estimators, records)


def run_scenario_grid(cfgs: Sequence[ScenarioConfig],
                      estimators: Sequence[str] = ESTIMATOR_TAGS,
                      workers: int = 1,
                      chunk_size: int = 50) -> list[SimulationResult]:
    """Run several scenarios against one worker pool."""
    estimators = tuple(estimators)
    tasks = []
    for i, cfg in enumerate(cfgs):
        for lo, hi in _chunks(cfg.reps, chunk_size):
            tasks.append((i, cfg, lo, hi))
    if workers > 1 and len(tasks) > 1:
        with multiprocessing.Pool(workers) as pool:
            parts = pool.starmap(
                _grid_task, [(i, cfg, lo, hi, estimators) for i, cfg, lo, hi in tasks]
            )
    else:
        parts = [_grid_task(i, cfg, lo, hi, estimators)
                 for i, cfg, lo, hi in tasks]

    per_cfg: dict[int, list[ReplicateRecord]] = {i: [] for i in range(len(cfgs))}
    for i, recs in parts:
        per_cfg[i].extend(recs)
    return [_collect(cfg, estimators, per_cfg[i]) for i, cfg in enumerate(cfgs)]


def _grid_task(i, cfg, lo, hi, estimators):
    return i, _replicate_chunk(cfg, lo, hi, estimators)


def table1_scenarios(n: int = 500, reps: int = 1000, base_seed: int = 0,
                     psi1: float = 0.0) -> list[ScenarioConfig]:
    """The 16-scenario benchmark grid: no latent confounding, all four
    (CIT, CIO) combinations crossed with CC/CI/IC/II model specification."""
    base = ScenarioConfig(n=n, reps=reps, base_seed=base_seed, psi1=psi1)
    out = []
    for lam, gamma in [(0.0, 0.0), (1.38, 0.0), (0.0, -1.55), (1.38, -1.55)]:
        for dz, dy in [(0.0, 0.0), (0.0, -4.2), (-4.2, 0.0), (-4.2, -4.2)]:
            out.append(replace(base, lam=lam, gamma=gamma, delta_z=dz, delta_y=dy))
    return out
