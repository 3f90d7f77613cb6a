"""Propensity-score regression weights and the covariate-balancing check.

A weight function w(z, pi) balances treated and untreated pseudo-populations
when pi * w(1, pi) == (1 - pi) * w(0, pi) for every propensity pi.  Absolute
weights and inverse probability weights satisfy this identity exactly;
stabilized inverse probability weights do not (their defect is 2*p_marginal - 1
at every pi), and unit weights reduce to plain regression.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

__all__ = ["WeightScheme", "compute_weights", "check_balance", "satisfies_balance"]

SCHEME_KINDS = ("abs", "ipw", "sipw", "unw")
BALANCE_TOL = 1e-12


@dataclass(frozen=True)
class WeightScheme:
    """One of the supported weighting schemes.

    ``marginal_p`` is the marginal treated proportion used to stabilize the
    inverse probability weights; it is required for SIPW and meaningless (so
    forbidden) elsewhere.
    """

    kind: str
    marginal_p: float | None = None

    def __post_init__(self):
        if self.kind not in SCHEME_KINDS:
            raise ValueError(f"unknown weight scheme {self.kind!r}")
        if self.kind == "sipw":
            if self.marginal_p is None or not 0.0 < self.marginal_p < 1.0:
                raise ValueError("sipw requires marginal_p in (0, 1)")
        elif self.marginal_p is not None:
            raise ValueError(f"marginal_p is only meaningful for sipw, not {self.kind}")

    @property
    def label(self) -> str:
        return self.kind.upper()


def _weight_values(scheme: WeightScheme, z: np.ndarray, pi: np.ndarray) -> np.ndarray:
    if scheme.kind == "abs":
        return np.abs(z - pi)
    if scheme.kind == "ipw":
        return z / pi + (1.0 - z) / (1.0 - pi)
    if scheme.kind == "sipw":
        p = scheme.marginal_p
        return z * p / pi + (1.0 - z) * (1.0 - p) / (1.0 - pi)
    return np.ones_like(pi)


def compute_weights(scheme: WeightScheme, z: np.ndarray, pi: np.ndarray) -> np.ndarray:
    """Evaluate the scheme's weights at treatment z and propensity pi.

    Callers are responsible for clipping pi away from 0 and 1 beforehand;
    values outside the open interval are rejected.
    """
    z = np.asarray(z, dtype=float).ravel()
    pi = np.asarray(pi, dtype=float).ravel()
    if z.size != pi.size:
        raise ValueError("z and pi have different lengths")
    if np.any(pi <= 0.0) or np.any(pi >= 1.0):
        raise ValueError("propensity scores must lie strictly inside (0, 1)")
    return _weight_values(scheme, z, pi)


def check_balance(scheme: WeightScheme, pi_grid: np.ndarray) -> np.ndarray:
    """Balance defect pi*w(1, pi) - (1 - pi)*w(0, pi) at each grid point."""
    pi = np.asarray(pi_grid, dtype=float).ravel()
    if np.any(pi <= 0.0) or np.any(pi >= 1.0):
        raise ValueError("pi grid must lie strictly inside (0, 1)")
    w1 = _weight_values(scheme, np.ones_like(pi), pi)
    w0 = _weight_values(scheme, np.zeros_like(pi), pi)
    return pi * w1 - (1.0 - pi) * w0


def satisfies_balance(scheme: WeightScheme, pi_grid: np.ndarray) -> bool:
    return bool(np.max(np.abs(check_balance(scheme, pi_grid))) < BALANCE_TOL)
