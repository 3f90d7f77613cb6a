"""Treatment-effect estimators on indicator-encoded data.

Four estimators share the same model designs:

* weighted regression of the outcome on (treatment-free part, treatment x
  blip part) with propensity-based weights -- the doubly robust workhorse;
  with unit weights it degenerates to the singly robust plain regression;
* AIPW for the average treatment effect;
* G-estimation, which uses treatment residuals (z - pi) as instruments for
  the blip columns.

All report sandwich standard errors from stacked estimating equations, so
the variance accounts for the estimated propensity model (and, for SIPW,
the estimated stabilizing proportion).  The propensity model is fitted once
per dataset and may be shared across estimators via the ``propensity``
argument.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .data import AugmentedDesign, Dataset
from .fitting import FittingError, LogisticFit, WlsFit, expit, fit_logistic, fit_wls
from .inference import StackedScores, sandwich_cov
from .weights import WeightScheme, compute_weights

__all__ = [
    "FitResult",
    "PROPENSITY_CLIP",
    "fit_propensity",
    "fit_weighted_ols",
    "fit_aipw",
    "fit_g_estimation",
]

# Fitted propensities are pushed away from 0/1 by this margin wherever
# weights are formed; the likelihood itself is never clipped.
PROPENSITY_CLIP = 1e-6

Z_CRIT_95 = 1.96

# |z - pi| below this triggers the near-nonsmooth diagnostic for ABS weights.
NONSMOOTH_EPS = 1e-8


@dataclass(frozen=True)
class FitResult:
    """Point estimates, sandwich covariance and 95% intervals for one fit."""

    psi: np.ndarray
    psi_names: tuple[str, ...]
    se: np.ndarray
    ci_lower: np.ndarray
    ci_upper: np.ndarray
    cov_psi: np.ndarray
    beta: np.ndarray | None
    alpha: np.ndarray | None
    estimator: str
    scheme: str | None = None
    diagnostics: dict = field(default_factory=dict)

    @property
    def label(self) -> str:
        return self.scheme.upper() if self.scheme else self.estimator.upper()


def _result(psi, psi_names, cov_psi, beta, alpha, estimator, scheme=None,
            diagnostics=None) -> FitResult:
    psi = np.atleast_1d(np.asarray(psi, dtype=float))
    cov_psi = np.atleast_2d(np.asarray(cov_psi, dtype=float))
    se = np.sqrt(np.maximum(np.diag(cov_psi), 0.0))
    return FitResult(
        psi=psi,
        psi_names=tuple(psi_names),
        se=se,
        ci_lower=psi - Z_CRIT_95 * se,
        ci_upper=psi + Z_CRIT_95 * se,
        cov_psi=cov_psi,
        beta=None if beta is None else np.asarray(beta, dtype=float),
        alpha=None if alpha is None else np.asarray(alpha, dtype=float),
        estimator=estimator,
        scheme=scheme,
        diagnostics=diagnostics or {},
    )


def fit_propensity(design: AugmentedDesign, data: Dataset) -> LogisticFit:
    """Fit the treatment model on the encoded design (shared across schemes)."""
    return fit_logistic(design.h_alpha, data.z)


def _propensity_is_estimated(logistic: LogisticFit, h_alpha: np.ndarray) -> bool:
    """Whether the fitted probabilities come from the model at alpha.

    A caller may pass a propensity whose fitted values were pinned externally
    (known randomization probabilities, oracle tests); those are treated as
    fixed, so the sandwich does not stack the treatment-model score.
    """
    return bool(np.allclose(expit(h_alpha @ logistic.alpha), logistic.fitted,
                            atol=1e-10))


def clip_propensity(pi: np.ndarray) -> np.ndarray:
    return np.clip(pi, PROPENSITY_CLIP, 1.0 - PROPENSITY_CLIP)


def _outcome_design(design: AugmentedDesign, z: np.ndarray) -> np.ndarray:
    return np.hstack([design.h_beta, z[:, None] * design.h_psi])


def _weight_fn(kind: str, z: np.ndarray, pi: np.ndarray, pbar: float | None):
    scheme = WeightScheme(kind, pbar if kind == "sipw" else None)
    return compute_weights(scheme, z, pi)


def fit_weighted_ols(design: AugmentedDesign, data: Dataset,
                     scheme: WeightScheme,
                     propensity: LogisticFit | None = None) -> FitResult:
    """Propensity-weighted regression estimator of the blip parameters.

    Solves the weighted normal equations of the outcome model
    y ~ h_beta + z * h_psi with weights w(z, pi_hat) under the given scheme.
    With unit weights this is ordinary least squares (the singly robust
    regression); with balancing weights it is doubly robust.
    """
    z, y = data.z, data.y
    d = _outcome_design(design, z)
    p_beta = design.h_beta.shape[1]
    p_psi = design.h_psi.shape[1]
    diagnostics: dict = {}

    if scheme.kind == "unw":
        w = np.ones(data.n)
        logistic = None
    else:
        logistic = propensity if propensity is not None else fit_propensity(design, data)
        pi = clip_propensity(logistic.fitted)
        w = compute_weights(scheme, z, pi)
        if scheme.kind == "abs":
            near = int(np.sum(np.abs(z - pi) < NONSMOOTH_EPS))
            if near:
                diagnostics["near_nonsmooth"] = near

    wls = fit_wls(d, y, w)
    beta = wls.coef[:p_beta]
    psi = wls.coef[p_beta:]

    cov = _weighted_ols_cov(design, data, scheme, logistic, wls)
    cov_psi = cov[-p_psi:, -p_psi:]
    return _result(psi, design.psi_names, cov_psi, beta,
                   None if logistic is None else logistic.alpha,
                   estimator="wreg", scheme=scheme.kind, diagnostics=diagnostics)


def _weighted_ols_cov(design: AugmentedDesign, data: Dataset,
                      scheme: WeightScheme, logistic: LogisticFit | None,
                      wls: WlsFit) -> np.ndarray:
    """Stacked sandwich for the weighted regression estimator.

    Stacks the propensity score (when weights use it) and, for SIPW, the
    stabilizing proportion, ahead of the outcome-regression score, then
    returns the (beta, psi) block of the sandwich covariance.
    """
    z, y = data.z, data.y
    h_alpha = design.h_alpha
    d = _outcome_design(design, z)
    kind = scheme.kind

    labels_out = [f"beta:{t}" for t in design.beta_names]
    labels_out += [f"psi:{t}" for t in design.psi_names]

    if kind == "unw" or not _propensity_is_estimated(logistic, h_alpha):
        w_fixed = wls.weights
        theta = wls.coef
        labels = labels_out

        def score(t):
            resid = y - d @ t
            return d * (w_fixed * resid)[:, None]

    else:
        p_alpha = h_alpha.shape[1]
        has_pbar = kind == "sipw"
        parts = [logistic.alpha]
        labels = [f"alpha:{t}" for t in design.alpha_names]
        if has_pbar:
            parts.append([scheme.marginal_p])
            labels = labels + ["pbar"]
        parts.append(wls.coef)
        theta = np.concatenate([np.atleast_1d(np.asarray(p, dtype=float)) for p in parts])
        labels = labels + labels_out

        def score(t):
            alpha = t[:p_alpha]
            k = p_alpha
            if has_pbar:
                pbar = float(t[k])
                k += 1
            else:
                pbar = None
            coef = t[k:]
            pi_raw = expit(h_alpha @ alpha)
            s_alpha = h_alpha * (z - pi_raw)[:, None]
            w = _weight_fn(kind, z, clip_propensity(pi_raw), pbar)
            resid = y - d @ coef
            s_out = d * (w * resid)[:, None]
            if has_pbar:
                return np.hstack([s_alpha, (z - pbar)[:, None], s_out])
            return np.hstack([s_alpha, s_out])

    cov = sandwich_cov(StackedScores(theta=theta, labels=tuple(labels), score=score))
    p_out = d.shape[1]
    return cov[-p_out:, -p_out:]


def fit_g_estimation(design: AugmentedDesign, data: Dataset,
                     propensity: LogisticFit | None = None) -> FitResult:
    """G-estimation of the blip parameters.

    Solves the linear estimating equations with instrument rows
    (h_beta, (z - pi_hat) * h_psi) against outcome-model residuals; the
    system is (G' D) theta = G' y and is not symmetric.
    """
    z, y = data.z, data.y
    logistic = propensity if propensity is not None else fit_propensity(design, data)
    pi = clip_propensity(logistic.fitted)

    d = _outcome_design(design, z)
    g = np.hstack([design.h_beta, (z - pi)[:, None] * design.h_psi])
    p_beta = design.h_beta.shape[1]
    p_psi = design.h_psi.shape[1]

    gtd = g.T @ d
    try:
        coef = np.linalg.solve(gtd, g.T @ y)
    except np.linalg.LinAlgError:
        raise FittingError("singular G-estimation system") from None

    h_alpha = design.h_alpha
    p_alpha = h_alpha.shape[1]
    labels_out = [f"beta:{t}" for t in design.beta_names]
    labels_out += [f"psi:{t}" for t in design.psi_names]

    if _propensity_is_estimated(logistic, h_alpha):
        theta = np.concatenate([logistic.alpha, coef])
        labels = [f"alpha:{t}" for t in design.alpha_names] + labels_out

        def score(t):
            alpha = t[:p_alpha]
            coef_t = t[p_alpha:]
            pi_raw = expit(h_alpha @ alpha)
            s_alpha = h_alpha * (z - pi_raw)[:, None]
            resid = y - d @ coef_t
            g_t = np.hstack([design.h_beta,
                             (z - clip_propensity(pi_raw))[:, None] * design.h_psi])
            return np.hstack([s_alpha, g_t * resid[:, None]])

    else:
        theta = coef
        labels = labels_out

        def score(t):
            resid = y - d @ t
            return g * resid[:, None]

    cov = sandwich_cov(StackedScores(theta=theta, labels=tuple(labels), score=score))
    cov_psi = cov[-p_psi:, -p_psi:]
    return _result(coef[p_beta:], design.psi_names, cov_psi, coef[:p_beta],
                   logistic.alpha, estimator="gest")


def fit_aipw(design: AugmentedDesign, data: Dataset,
             propensity: LogisticFit | None = None) -> FitResult:
    """Augmented inverse probability weighting estimate of the ATE.

    Outcome predictions under each arm come from the joint outcome model
    (h_beta, z * h_psi) fitted by ordinary least squares and evaluated at
    z = 1 and z = 0.  The standard error is the empirical standard deviation
    of the estimated influence function over sqrt(n).
    """
    z, y = data.z, data.y
    n = data.n
    logistic = propensity if propensity is not None else fit_propensity(design, data)
    pi = clip_propensity(logistic.fitted)

    d = _outcome_design(design, z)
    p_beta = design.h_beta.shape[1]
    ols = fit_wls(d, y, np.ones(n))
    beta = ols.coef[:p_beta]
    blip = design.h_psi @ ols.coef[p_beta:]
    m0 = design.h_beta @ beta
    m1 = m0 + blip

    phi = (z * (y - m1) / pi + m1) - ((1.0 - z) * (y - m0) / (1.0 - pi) + m0)
    ate = float(phi.mean())
    var = float(np.var(phi, ddof=1)) / n
    return _result([ate], ("ate",), [[var]], beta, logistic.alpha,
                   estimator="aipw")
