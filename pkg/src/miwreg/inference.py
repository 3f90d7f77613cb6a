"""Stacked M-estimation sandwich variance and replication-study summaries.

Every estimator in this package solves a system of estimating equations
sum_i s_i(theta) = 0.  The sandwich covariance A^-1 B A^-T / n is built from
the empirical sensitivity matrix A = -(1/n) sum_i d s_i / d theta (by central
finite differences of the summed score) and the variability matrix
B = (1/n) sum_i s_i s_i'.  Differentiating numerically keeps the machinery
agnostic to which nuisance parameters (propensity coefficients, stabilizing
proportions) are stacked into theta, so estimated weights are accounted for
automatically.
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import Callable, Sequence

import numpy as np

__all__ = ["StackedScores", "AseEseReport", "sandwich_cov", "ase_ese_report"]

FD_STEP = 1e-6
SCORE_SUM_RTOL = 1e-6
PSD_TOL = 1e-10


class SandwichError(ValueError):
    """Raised when the sandwich covariance cannot be formed."""


@dataclass(frozen=True)
class StackedScores:
    """Stacked per-observation estimating functions at and around theta_hat.

    ``score`` maps a parameter vector to the (n, p) matrix of per-observation
    score rows; ``labels`` names the stacked segments (e.g. "alpha:C",
    "psi:intercept").
    """

    theta: np.ndarray
    labels: tuple[str, ...]
    score: Callable[[np.ndarray], np.ndarray]

    def __post_init__(self):
        theta = np.asarray(self.theta, dtype=float).ravel()
        object.__setattr__(self, "theta", theta)
        object.__setattr__(self, "labels", tuple(self.labels))
        if len(self.labels) != theta.size:
            raise ValueError("labels and theta have different lengths")


def sandwich_cov(scores: StackedScores, theta_hat: np.ndarray | None = None) -> np.ndarray:
    """Sandwich covariance of theta_hat from stacked per-observation scores.

    Requires the summed score to vanish at theta_hat (relative tolerance
    1e-6).  Raises "non-invertible sensitivity" when A is singular and
    rejects results whose symmetrized form has an eigenvalue below
    -1e-10 * trace.
    """
    theta = scores.theta if theta_hat is None else np.asarray(theta_hat, dtype=float)
    p = theta.size

    s0 = np.asarray(scores.score(theta), dtype=float)
    n = s0.shape[0]
    if s0.shape != (n, p):
        raise ValueError(f"score matrix has shape {s0.shape}, expected (n, {p})")

    total = s0.sum(axis=0)
    scale = np.maximum(1.0, np.mean(np.abs(s0), axis=0))
    if np.any(np.abs(total) > SCORE_SUM_RTOL * n * scale):
        worst = int(np.argmax(np.abs(total) / scale))
        raise SandwichError(
            "score sum is not zero at theta_hat "
            f"(component {scores.labels[worst]}: {total[worst]:.3g})"
        )

    b = (s0.T @ s0) / n

    a = np.empty((p, p))
    for j in range(p):
        h = FD_STEP * max(1.0, abs(theta[j]))
        up = theta.copy()
        up[j] += h
        dn = theta.copy()
        dn[j] -= h
        mean_up = np.asarray(scores.score(up)).mean(axis=0)
        mean_dn = np.asarray(scores.score(dn)).mean(axis=0)
        a[:, j] = -(mean_up - mean_dn) / (2.0 * h)

    try:
        ainv_b = np.linalg.solve(a, b)
        cov = np.linalg.solve(a, ainv_b.T).T / n
    except np.linalg.LinAlgError:
        raise SandwichError("non-invertible sensitivity matrix") from None

    cov = 0.5 * (cov + cov.T)
    eigvals = np.linalg.eigvalsh(cov)
    if eigvals.min() < -PSD_TOL * max(np.trace(cov), 1e-300):
        raise SandwichError(
            f"sandwich covariance is not positive semidefinite "
            f"(min eigenvalue {eigvals.min():.3g})"
        )
    return cov


@dataclass(frozen=True)
class AseEseReport:
    """Per-parameter accuracy summary of a replication study.

    ``ratio`` is ASE/ESE and is NaN wherever the empirical spread is zero
    (degenerate replicate sets).
    """

    ase: np.ndarray
    ese: np.ndarray
    ratio: np.ndarray
    coverage: np.ndarray
    n_replicates: int


def ase_ese_report(replicate_fits: Sequence, truth) -> AseEseReport:
    """Aggregate point estimates, SEs and CI coverage across replicates.

    ``replicate_fits`` is a sequence of objects exposing ``psi``, ``se``,
    ``ci_lower`` and ``ci_upper`` (arrays of equal length).  ASE is the mean
    reported standard error, ESE the across-replicate standard deviation of
    the point estimates, and coverage the fraction of 95% intervals
    containing the truth.
    """
    if len(replicate_fits) < 2:
        raise ValueError("need at least 2 replicates")
    truth = np.atleast_1d(np.asarray(truth, dtype=float))
    est = np.array([np.asarray(f.psi, dtype=float) for f in replicate_fits])
    ses = np.array([np.asarray(f.se, dtype=float) for f in replicate_fits])
    lo = np.array([np.asarray(f.ci_lower, dtype=float) for f in replicate_fits])
    hi = np.array([np.asarray(f.ci_upper, dtype=float) for f in replicate_fits])
    if est.shape[1] != truth.size:
        raise ValueError("truth length does not match parameter count")

    ase = ses.mean(axis=0)
    ese = est.std(axis=0)
    with np.errstate(divide="ignore", invalid="ignore"):
        ratio = np.where(ese > 0, ase / np.where(ese > 0, ese, 1.0), np.nan)
    coverage = ((lo <= truth) & (truth <= hi)).mean(axis=0)
    return AseEseReport(ase=ase, ese=ese, ratio=ratio, coverage=coverage,
                        n_replicates=len(replicate_fits))
