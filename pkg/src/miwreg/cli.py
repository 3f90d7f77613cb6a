"""Command-line interface.

Subcommands:

* ``estimate``          -- run selected estimators on a CSV dataset
* ``simulate``          -- Monte Carlo over a scenario grid from a config file
* ``replicate-table1``  -- the bundled 16-scenario benchmark grid
* ``replicate-table3``  -- the bundled cohort benchmark (specification grid)
* ``balance-check``     -- analytic balance defects per weighting scheme

Config files are JSON or TOML.  Every output table is written both as CSV
(machine) and markdown (human), with a header comment embedding the config
hash and seed.  Exit codes: 0 success, 2 configuration error, 3 fitting
error.
"""

from __future__ import annotations

import argparse
import hashlib
import json
import os
import sys
from pathlib import Path

try:
    import tomllib
except ModuleNotFoundError:  # Python 3.10
    import tomli as tomllib

import numpy as np

from .cohort import CohortConfig, run_illustration
from .data import (
    ModelSpec,
    RankError,
    build_design,
    encode_missing_indicator,
    read_csv_dataset,
)
from .estimators import fit_aipw, fit_g_estimation, fit_propensity, fit_weighted_ols
from .fitting import FittingError
from .inference import SandwichError
from .simulation import (
    METRICS_COLUMNS,
    ScenarioConfig,
    run_scenario_grid,
    table1_scenarios,
)
from .weights import WeightScheme, check_balance

EXIT_OK = 0
EXIT_CONFIG = 2
EXIT_FIT = 3

SCHEME_TAGS = ("unw", "abs", "ipw", "sipw")
ALL_ESTIMATORS = ("unw", "abs", "ipw", "sipw", "aipw", "gest")

WORKERS_ENV_VAR = "MIWREG_WORKERS"


class ConfigError(ValueError):
    """Bad configuration or input file."""


def _load_config(path: str) -> dict:
    p = Path(path)
    if not p.exists():
        raise ConfigError(f"config file not found: {path}")
    if p.suffix.lower() == ".toml":
        with open(p, "rb") as fh:
            return tomllib.load(fh)
    with open(p, "r", encoding="utf-8") as fh:
        try:
            return json.load(fh)
        except json.JSONDecodeError as exc:
            raise ConfigError(f"cannot parse {path}: {exc}") from None


def _config_hash(cfg: dict) -> str:
    return hashlib.sha256(
        json.dumps(cfg, sort_keys=True, default=str).encode()
    ).hexdigest()[:16]


def _provenance(cfg_hash: str, seed) -> str:
    return f"config_hash={cfg_hash} seed={seed}"


def _fmt(v) -> str:
    if isinstance(v, float):
        return repr(v)
    return str(v)


def write_csv(path: Path, header: list[str], rows: list[list], provenance: str) -> None:
    with open(path, "w", encoding="utf-8", newline="") as fh:
        fh.write(f"# {provenance}\n")
        fh.write(",".join(header) + "\n")
        for row in rows:
            fh.write(",".join(_fmt(v) for v in row) + "\n")


def write_markdown(path: Path, header: list[str], rows: list[list],
                   provenance: str, ndigits: int = 4) -> None:
    def cell(v):
        if isinstance(v, float):
            return f"{v:.{ndigits}f}"
        return str(v)

    with open(path, "w", encoding="utf-8") as fh:
        fh.write(f"<!-- {provenance} -->\n\n")
        fh.write("| " + " | ".join(header) + " |\n")
        fh.write("|" + "|".join("---" for _ in header) + "|\n")
        for row in rows:
            fh.write("| " + " | ".join(cell(v) for v in row) + " |\n")


def _resolve_workers(args) -> int:
    env = os.environ.get(WORKERS_ENV_VAR)
    if env is not None:
        return max(1, int(env))
    if args.workers is not None:
        return max(1, args.workers)
    return os.cpu_count() or 1


def _out_dir(args) -> Path:
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    return out


# ---------------------------------------------------------------------------
# estimate
# ---------------------------------------------------------------------------

def _model_spec_from_config(cfg: dict, encoded_names) -> ModelSpec:
    models = cfg.get("models")
    if models is None:
        raise ConfigError("config must declare a [models] section with term lists")
    try:
        spec = ModelSpec(
            treatment_terms=tuple(models["treatment_terms"]),
            treatment_free_terms=tuple(models["treatment_free_terms"]),
            blip_terms=tuple(models.get("blip_terms", ["intercept"])),
        )
    except (KeyError, ValueError) as exc:
        raise ConfigError(f"bad model specification: {exc}") from None
    for terms in (spec.treatment_terms, spec.treatment_free_terms, spec.blip_terms):
        for term in terms:
            if term == "intercept":
                continue
            for factor in term.split("*"):
                if factor.strip() not in encoded_names:
                    raise ConfigError(
                        f"model term {term!r} refers to unknown encoded column "
                        f"{factor.strip()!r}"
                    )
    return spec


def cmd_estimate(args) -> int:
    cfg = _load_config(args.config)
    cfg_hash = _config_hash(cfg)
    seed = args.seed if args.seed is not None else cfg.get("seed", 0)

    cols = cfg.get("columns")
    if not cols:
        raise ConfigError("config must declare a [columns] section")
    for role in ("outcome", "treatment"):
        if role not in cols or isinstance(cols[role], list):
            raise ConfigError(f"columns.{role} must name exactly one column")

    data_path = args.input or cfg.get("input")
    if not data_path:
        raise ConfigError("no input CSV given (flag --input or config key 'input')")

    data = read_csv_dataset(
        data_path,
        outcome=cols["outcome"],
        treatment=cols["treatment"],
        confounders=list(cols.get("confounders", [])),
        partially_observed=list(cols.get("partially_observed", [])),
        categorical=cols.get("categorical", ()),
    )
    encoded = encode_missing_indicator(data, fill=float(cfg.get("fill", 0.0)))
    spec = _model_spec_from_config(cfg, encoded.names)
    design = build_design(encoded, spec)

    estimators = tuple(cfg.get("estimators", ALL_ESTIMATORS))
    for tag in estimators:
        if tag not in ALL_ESTIMATORS:
            raise ConfigError(f"unknown estimator {tag!r}")

    propensity = None
    if any(tag != "unw" for tag in estimators):
        try:
            propensity = fit_propensity(design, data)
        except FittingError as exc:
            print(f"error: propensity model: {exc}", file=sys.stderr)
            return EXIT_FIT

    rows = []
    for tag in estimators:
        try:
            if tag == "aipw":
                fit = fit_aipw(design, data, propensity=propensity)
            elif tag == "gest":
                fit = fit_g_estimation(design, data, propensity=propensity)
            else:
                scheme = (WeightScheme("sipw", float(data.z.mean()))
                          if tag == "sipw" else WeightScheme(tag))
                fit = fit_weighted_ols(design, data, scheme, propensity=propensity)
        except (FittingError, SandwichError) as exc:
            print(f"error: estimator {tag}: {exc}", file=sys.stderr)
            return EXIT_FIT
        for k, name in enumerate(fit.psi_names):
            rows.append([tag, name, float(fit.psi[k]), float(fit.se[k]),
                         float(fit.ci_lower[k]), float(fit.ci_upper[k])])

    out = _out_dir(args)
    header = ["estimator", "parameter", "estimate", "se", "ci_lower", "ci_upper"]
    prov = _provenance(cfg_hash, seed)
    write_csv(out / "estimates.csv", header, rows, prov)
    write_markdown(out / "estimates.md", header, rows, prov)
    print(f"wrote {out / 'estimates.csv'} and {out / 'estimates.md'}")
    return EXIT_OK


# ---------------------------------------------------------------------------
# simulate / replicate-table1
# ---------------------------------------------------------------------------

def _as_list(v) -> list:
    return list(v) if isinstance(v, (list, tuple)) else [v]


def _scenario_configs(cfg: dict, args) -> list[ScenarioConfig]:
    base_seed = args.seed if args.seed is not None else int(cfg.get("base_seed", 0))
    n = args.n if args.n is not None else int(cfg.get("n", 500))
    reps = args.reps if args.reps is not None else int(cfg.get("reps", 1000))
    out = []
    for tau in _as_list(cfg.get("tau", 0.0)):
        for lam in _as_list(cfg.get("lambda", 0.0)):
            for gamma in _as_list(cfg.get("gamma", 0.0)):
                for dz in _as_list(cfg.get("delta_z", 0.0)):
                    for dy in _as_list(cfg.get("delta_y", 0.0)):
                        out.append(ScenarioConfig(
                            tau=float(tau), lam=float(lam), gamma=float(gamma),
                            delta_z=float(dz), delta_y=float(dy),
                            psi0=float(cfg.get("psi0", -2.35)),
                            psi1=float(cfg.get("psi1", 0.0)),
                            n=n, reps=reps, base_seed=base_seed,
                        ))
    return out


def _estimator_selection(cfg: dict) -> tuple[str, ...]:
    schemes = [s for s in cfg.get("schemes", SCHEME_TAGS)]
    estimators = [e for e in cfg.get("estimators", ["wreg", "aipw", "gest"])]
    tags: list[str] = []
    if "wreg" in estimators:
        tags.extend(schemes)
    for e in estimators:
        if e in ("aipw", "gest"):
            tags.append(e)
        elif e != "wreg":
            raise ConfigError(f"unknown estimator {e!r}")
    for s in schemes:
        if s not in SCHEME_TAGS:
            raise ConfigError(f"unknown weighting scheme {s!r}")
    return tuple(tags)


def _write_metrics(results, out: Path, stem: str, prov: str,
                   replicates: bool) -> None:
    header = list(METRICS_COLUMNS)
    rows = []
    for res in results:
        rows.extend(res.metrics.to_rows())
    write_csv(out / f"{stem}.csv", header, rows, prov)
    write_markdown(out / f"{stem}.md", header, rows, prov)
    if replicates:
        rep_header = ["scenario", "assumptions", "spec_label", "estimator",
                      "replicate", "estimate"]
        rep_rows = []
        for res in results:
            cfg = res.config
            for tag, recs in res.records.items():
                for rec in recs:
                    if rec.ok:
                        rep_rows.append([cfg.scenario_key(), cfg.assumption_label(),
                                         cfg.spec_label, tag, rec.rep,
                                         float(rec.psi[0])])
        write_csv(out / f"{stem}_replicates.csv", rep_header, rep_rows, prov)


def cmd_simulate(args) -> int:
    cfg = _load_config(args.config)
    cfgs = _scenario_configs(cfg, args)
    estimators = _estimator_selection(cfg)
    workers = _resolve_workers(args)
    results = run_scenario_grid(cfgs, estimators=estimators, workers=workers)
    out = _out_dir(args)
    prov = _provenance(_config_hash(cfg), cfgs[0].base_seed if cfgs else 0)
    _write_metrics(results, out, "metrics", prov, replicates=args.replicates)
    print(f"wrote {out / 'metrics.csv'} ({len(cfgs)} scenarios)")
    return EXIT_OK


def cmd_replicate_table1(args) -> int:
    cfg = _load_config(args.config) if args.config else {}
    seed = args.seed if args.seed is not None else int(cfg.get("base_seed", 0))
    n = args.n if args.n is not None else int(cfg.get("n", 500))
    reps = args.reps if args.reps is not None else int(cfg.get("reps", 1000))
    if reps < 100:
        raise ConfigError("replicate-table1 needs reps >= 100")
    workers = _resolve_workers(args)

    cfgs = table1_scenarios(n=n, reps=reps, base_seed=seed)
    results = run_scenario_grid(
        cfgs, estimators=("abs", "ipw", "sipw", "aipw", "gest"), workers=workers)

    out = _out_dir(args)
    prov = _provenance(_config_hash({"n": n, "reps": reps, **cfg}), seed)
    _write_metrics(results, out, "table1", prov, replicates=args.replicates)

    # Compact layout: one row per scenario, %bias/ASE and relative MSE cells,
    # with the Monte Carlo standard error of each %bias cell.
    header = ["CIT", "CIO", "model_spec"]
    for tag in ("abs", "ipw", "sipw", "aipw", "gest"):
        header += [f"pct_bias_ase_{tag}", f"mc_se_{tag}"]
    for tag in ("abs", "ipw", "sipw", "aipw"):
        header += [f"rel_mse_{tag}"]
    rows = []
    for res in results:
        c = res.config
        row = ["yes" if c.cit else "no", "yes" if c.cio else "no", c.spec_label]
        for tag in ("abs", "ipw", "sipw", "aipw", "gest"):
            cell = res.metrics.cell(estimator=tag)
            mc_se = 100.0 * cell.ese / np.sqrt(max(cell.n_used, 1)) / cell.ase
            row += [cell.pct_bias_over_ase, mc_se]
        for tag in ("abs", "ipw", "sipw", "aipw"):
            row += [res.metrics.cell(estimator=tag).mse_rel_gest]
        rows.append(row)
    write_csv(out / "table1_layout.csv", header, rows, prov)
    write_markdown(out / "table1_layout.md", header, rows, prov, ndigits=2)
    print(f"wrote {out / 'table1.csv'} and {out / 'table1_layout.csv'}")
    return EXIT_OK


# ---------------------------------------------------------------------------
# replicate-table3
# ---------------------------------------------------------------------------

def cmd_replicate_table3(args) -> int:
    from .cohort import generate_cohort
    from .data import write_dataset_csv

    cfg = _load_config(args.config) if args.config else {}
    seed = args.seed if args.seed is not None else int(cfg.get("seed", CohortConfig().seed))
    n = args.n if args.n is not None else int(cfg.get("n", CohortConfig().n))
    ccfg = CohortConfig(n=n, seed=seed)
    dataset = generate_cohort(ccfg)
    if args.export_csv:
        write_dataset_csv(dataset, args.export_csv)
        print(f"wrote {args.export_csv}")
    rows = run_illustration(ccfg, dataset=dataset)

    out = _out_dir(args)
    prov = _provenance(_config_hash({"n": n, **cfg}), seed)
    header = ["method", "pi_model", "y_model", "estimate", "bias", "se",
              "ci_lower", "ci_upper"]
    table = [[r.method, r.pi_spec, r.y_spec, r.estimate, r.bias, r.se,
              r.ci_lower, r.ci_upper] for r in rows]
    write_csv(out / "table3.csv", header, table, prov)
    write_markdown(out / "table3.md", header, table, prov)
    print(f"wrote {out / 'table3.csv'} and {out / 'table3.md'}")
    return EXIT_OK


# ---------------------------------------------------------------------------
# balance-check
# ---------------------------------------------------------------------------

def cmd_balance_check(args) -> int:
    cfg = _load_config(args.config) if args.config else {}
    grid = np.linspace(0.01, 0.99, int(cfg.get("grid_points", 99)))
    p_bar = float(cfg.get("marginal_p", 0.5))

    rows = []
    for tag in SCHEME_TAGS:
        scheme = WeightScheme("sipw", p_bar) if tag == "sipw" else WeightScheme(tag)
        defects = check_balance(scheme, grid)
        max_defect = float(np.max(np.abs(defects)))
        balanced = "yes" if max_defect < 1e-12 else "no"
        rows.append([tag.upper(), max_defect, balanced])
        print(f"{tag.upper():5s} max |defect| = {max_defect:.3e}  balanced: {balanced}")

    out = _out_dir(args)
    prov = _provenance(_config_hash(cfg), cfg.get("seed", 0))
    header = ["scheme", "max_abs_defect", "balanced"]
    write_csv(out / "balance.csv", header, rows, prov)
    write_markdown(out / "balance.md", header, rows, prov, ndigits=6)

    if args.input:
        cols = cfg.get("columns")
        if not cols:
            raise ConfigError("balance-check with a dataset needs a [columns] config")
        data = read_csv_dataset(
            args.input,
            outcome=cols["outcome"],
            treatment=cols["treatment"],
            confounders=list(cols.get("confounders", [])),
            partially_observed=list(cols.get("partially_observed", [])),
            categorical=cols.get("categorical", ()),
        )
        encoded = encode_missing_indicator(data, fill=float(cfg.get("fill", 0.0)))
        spec = _model_spec_from_config(cfg, encoded.names)
        design = build_design(encoded, spec)
        prop = fit_propensity(design, data)
        from .estimators import clip_propensity
        pi = clip_propensity(prop.fitted)
        emp_rows = []
        for tag in SCHEME_TAGS:
            scheme = (WeightScheme("sipw", float(data.z.mean()))
                      if tag == "sipw" else WeightScheme(tag))
            from .weights import compute_weights
            w = compute_weights(scheme, data.z, pi)
            t = data.z == 1.0
            for j, name in enumerate(design.alpha_names):
                col = design.h_alpha[:, j]
                diff = (np.average(col[t], weights=w[t])
                        - np.average(col[~t], weights=w[~t]))
                emp_rows.append([tag.upper(), name, float(diff)])
        write_csv(out / "balance_empirical.csv",
                  ["scheme", "column", "weighted_mean_diff"], emp_rows, prov)
        print(f"wrote {out / 'balance_empirical.csv'}")
    return EXIT_OK


# ---------------------------------------------------------------------------
# entry point
# ---------------------------------------------------------------------------

def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="miwreg",
        description="Doubly robust weighted regression with partially "
                    "observed confounders",
    )
    sub = parser.add_subparsers(dest="command", required=True)

    def common(p, config_required=False):
        p.add_argument("--config", required=config_required,
                       help="JSON or TOML config file")
        p.add_argument("--out", default="out", help="output directory")
        p.add_argument("--seed", type=int, default=None, help="base seed")
        p.add_argument("--workers", type=int, default=None,
                       help=f"worker processes (env {WORKERS_ENV_VAR} overrides)")
        p.add_argument("--reps", type=int, default=None, help="replications")
        p.add_argument("--n", type=int, default=None, help="sample size")

    p = sub.add_parser("estimate", help="estimate effects on a CSV dataset")
    common(p, config_required=True)
    p.add_argument("--input", help="input CSV (overrides config key 'input')")
    p.set_defaults(func=cmd_estimate)

    p = sub.add_parser("simulate", help="Monte Carlo over a scenario grid")
    common(p, config_required=True)
    p.add_argument("--replicates", action="store_true",
                   help="also write long-format per-replication estimates")
    p.set_defaults(func=cmd_simulate)

    p = sub.add_parser("replicate-table1", help="16-scenario benchmark grid")
    common(p)
    p.add_argument("--replicates", action="store_true",
                   help="also write long-format per-replication estimates")
    p.set_defaults(func=cmd_replicate_table1)

    p = sub.add_parser("replicate-table3", help="cohort specification grid")
    common(p)
    p.add_argument("--export-csv", default=None,
                   help="also write the generated cohort as CSV")
    p.set_defaults(func=cmd_replicate_table3)

    p = sub.add_parser("balance-check", help="balance defects per scheme")
    common(p)
    p.add_argument("--input", help="optional CSV dataset for empirical balance")
    p.set_defaults(func=cmd_balance_check)

    return parser


def main(argv=None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    try:
        return args.func(args)
    except (FittingError, SandwichError, RankError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_FIT
    except (ConfigError, ValueError, OSError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_CONFIG


if __name__ == "__main__":
    sys.exit(main())
