"""Numerical fitting kernels: logistic regression by iteratively reweighted
least squares and weighted least squares.

Both solvers go through rank-revealing orthogonal decompositions (lstsq on the
square-root-weighted system); no matrix is ever inverted explicitly.  The
kernels are pure functions of their inputs and safe to call concurrently.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

__all__ = [
    "LogisticFit",
    "WlsFit",
    "FittingError",
    "SeparationError",
    "expit",
    "fit_logistic",
    "fit_wls",
]

IRLS_MAX_ITER = 100
IRLS_MAX_HALVINGS = 10
IRLS_DEVIANCE_RTOL = 1e-8
# |coef| beyond this is taken as quasi-complete separation.
SEPARATION_COEF_BOUND = 15.0


class FittingError(ValueError):
    """Raised when a model fit cannot be completed."""


class SeparationError(FittingError):
    """Raised when the logistic likelihood has no finite maximizer."""


def expit(eta: np.ndarray) -> np.ndarray:
    """Numerically stable logistic function."""
    out = np.empty_like(eta, dtype=float)
    pos = eta >= 0
    out[pos] = 1.0 / (1.0 + np.exp(-eta[pos]))
    e = np.exp(eta[~pos])
    out[~pos] = e / (1.0 + e)
    return out


def _deviance(eta: np.ndarray, z: np.ndarray) -> float:
    # -2 * Bernoulli log-likelihood, computed from the linear predictor so
    # extreme probabilities never hit log(0).
    return 2.0 * float(np.sum(np.logaddexp(0.0, eta) - z * eta))


@dataclass(frozen=True)
class LogisticFit:
    """Maximum-likelihood logistic fit with pieces kept for stacked variance."""

    alpha: np.ndarray
    fitted: np.ndarray
    converged: bool
    iterations: int
    score: np.ndarray        # (n, p) per-observation score rows at alpha
    information: np.ndarray  # H' diag(pi (1-pi)) H at alpha
    deviance_path: tuple[float, ...] = ()


def fit_logistic(h_alpha: np.ndarray, z: np.ndarray,
                 max_iter: int = IRLS_MAX_ITER) -> LogisticFit:
    """Fit a Bernoulli GLM with logit link by IRLS.

    Convergence: |change in deviance| < 1e-8 * (|deviance| + 1), with up to 10
    step-halvings per iteration whenever a step would increase the deviance
    (so accepted iterations are monotone).  A constant response raises
    "degenerate treatment"; non-convergence or any coefficient exceeding 15
    in absolute value raises "separation suspected".
    """
    h = np.asarray(h_alpha, dtype=float)
    z = np.asarray(z, dtype=float).ravel()
    n, p = h.shape
    if z.size != n:
        raise ValueError("design and response lengths differ")
    if np.all(z == z[0]):
        raise FittingError("degenerate treatment: response is constant")

    alpha = np.zeros(p)
    eta = h @ alpha
    dev = _deviance(eta, z)
    dev_path = [dev]
    converged = False
    iterations = 0

    for iterations in range(1, max_iter + 1):
        pi = expit(eta)
        w = pi * (1.0 - pi)
        # Guard exact zeros so the working system stays finite; such rows
        # carry no information and a vanishing weight is equivalent.
        w = np.maximum(w, 1e-300)
        sw = np.sqrt(w)
        resid = z - pi
        step, *_ = np.linalg.lstsq(h * sw[:, None], resid / sw, rcond=None)

        scale = 1.0
        for _ in range(IRLS_MAX_HALVINGS + 1):
            alpha_new = alpha + scale * step
            eta_new = h @ alpha_new
            dev_new = _deviance(eta_new, z)
            if dev_new <= dev + 1e-12:
                break
            scale *= 0.5
        else:
            break  # no acceptable step; report non-convergence below

        delta = dev - dev_new
        alpha, eta, dev = alpha_new, eta_new, dev_new
        dev_path.append(dev)
        if abs(delta) < IRLS_DEVIANCE_RTOL * (abs(dev) + 1.0):
            converged = True
            break

    if np.max(np.abs(alpha)) > SEPARATION_COEF_BOUND or not converged:
        raise SeparationError(
            "separation suspected: logistic fit did not reach a stable "
            f"interior maximum (|alpha|_max={np.max(np.abs(alpha)):.3g}, "
            f"converged={converged})"
        )

    pi = expit(eta)
    score = h * (z - pi)[:, None]
    information = h.T @ (h * (pi * (1.0 - pi))[:, None])
    return LogisticFit(alpha=alpha, fitted=pi, converged=converged,
                       iterations=iterations, score=score,
                       information=information, deviance_path=tuple(dev_path))


@dataclass(frozen=True)
class WlsFit:
    """Weighted least squares solution with pieces kept for variance work."""

    coef: np.ndarray
    residuals: np.ndarray
    weights: np.ndarray
    normal_matrix: np.ndarray  # X' W X


def fit_wls(design: np.ndarray, y: np.ndarray, w: np.ndarray) -> WlsFit:
    """Solve the weighted normal equations X'W(y - Xb) = 0.

    Weights must be nonnegative with at least one strictly positive entry;
    rows with zero weight do not count toward rank.  The solve uses an
    orthogonal decomposition of sqrt(w)X and the result is checked against
    the normal equations.
    """
    x = np.asarray(design, dtype=float)
    y = np.asarray(y, dtype=float).ravel()
    w = np.asarray(w, dtype=float).ravel()
    n, p = x.shape
    if y.size != n or w.size != n:
        raise ValueError("design, response and weights have mismatched lengths")
    if np.any(w < 0) or not np.all(np.isfinite(w)):
        raise FittingError("weights must be finite and nonnegative")
    if not np.any(w > 0):
        raise FittingError("all weights are zero")

    sw = np.sqrt(w)
    coef, _, rank, _ = np.linalg.lstsq(x * sw[:, None], y * sw, rcond=None)
    if rank < p:
        raise FittingError(
            f"weighted design is rank deficient (rank {rank} < {p} columns)"
        )

    residuals = y - x @ coef
    xtw = x.T * w
    score = xtw @ residuals
    scale = max(1.0, float(np.max(np.abs(xtw @ y))))
    if np.max(np.abs(score)) > 1e-8 * scale:
        raise FittingError("weighted normal equations not solved to tolerance")

    return WlsFit(coef=coef, residuals=residuals, weights=w,
                  normal_matrix=xtw @ x)
