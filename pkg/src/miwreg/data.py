"""Tabular dataset with partially observed confounders, missing-indicator
encoding, and construction of model design matrices.

A :class:`Dataset` holds a continuous outcome ``y``, a binary treatment ``z``,
fully observed confounders ``c`` and partially observed confounders ``x``
together with an explicit observedness mask.  Missingness is confined to the
confounders: ``y``, ``z`` and ``c`` must be complete.

:func:`encode_missing_indicator` produces the augmented covariate set: numeric
partially observed columns get a fill value where missing plus a 0/1 indicator
column, categorical ones get an explicit "missing" level.  Design matrices for
the treatment model, the treatment-free outcome part and the blip (treatment
effect) part are assembled from the encoded columns by :func:`build_design`
using a small term language ("intercept", column names, "a*b" products).
"""

from __future__ import annotations

import csv
from dataclasses import dataclass, field

import numpy as np
import scipy.linalg

__all__ = [
    "Dataset",
    "Encoded",
    "ModelSpec",
    "AugmentedDesign",
    "EncodingError",
    "RankError",
    "encode_missing_indicator",
    "build_design",
    "read_csv_dataset",
    "write_dataset_csv",
]

# Relative tolerance of the pivoted-QR rank check.
RANK_RTOL = 1e-10

# Cell spellings treated as missing on CSV input.
MISSING_TOKENS = ("", "NA")


class EncodingError(ValueError):
    """Raised when a dataset cannot be indicator-encoded."""


class RankError(ValueError):
    """Raised when a design matrix is rank deficient."""


def _as_matrix(a) -> np.ndarray:
    a = np.asarray(a, dtype=float)
    if a.ndim == 1:
        a = a.reshape(-1, 1)
    if a.ndim != 2:
        raise ValueError(f"expected 1- or 2-d array, got ndim={a.ndim}")
    return a


def _freeze(a: np.ndarray) -> np.ndarray:
    a = np.array(a, copy=True)
    a.setflags(write=False)
    return a


@dataclass(frozen=True)
class Dataset:
    """Rectangular study data with confounder-only missingness.

    ``x`` carries the partially observed confounders; ``observed`` is a
    parallel boolean mask, True where the value was recorded.  Masked entries
    of ``x`` are never read.  Categorical columns store integer level codes
    (as floats) and declare their labels in ``c_levels`` / ``x_levels``.
    """

    y: np.ndarray
    z: np.ndarray
    c: np.ndarray
    x: np.ndarray
    observed: np.ndarray
    c_names: tuple[str, ...] = ()
    x_names: tuple[str, ...] = ()
    c_levels: dict = field(default_factory=dict)
    x_levels: dict = field(default_factory=dict)

    def __post_init__(self):
        y = np.asarray(self.y, dtype=float).ravel()
        z = np.asarray(self.z, dtype=float).ravel()
        c = _as_matrix(self.c) if np.size(self.c) else np.empty((y.size, 0))
        x = _as_matrix(self.x) if np.size(self.x) else np.empty((y.size, 0))
        observed = np.asarray(self.observed, dtype=bool)
        if observed.ndim == 1:
            observed = observed.reshape(-1, 1)
        if observed.size == 0:
            observed = np.ones(x.shape, dtype=bool)

        n = y.size
        if z.size != n or c.shape[0] != n or x.shape[0] != n:
            raise ValueError("y, z, c, x must have the same number of rows")
        if observed.shape != x.shape:
            raise ValueError("observedness mask must match the shape of x")
        if not np.all(np.isin(z, (0.0, 1.0))):
            raise ValueError("treatment z must contain only 0 and 1")
        if not np.all(np.isfinite(y)):
            raise ValueError("outcome y contains missing or non-finite values")
        if c.size and not np.all(np.isfinite(c)):
            raise ValueError("fully observed confounders c contain missing values")
        if x.size and not np.all(np.isfinite(x[observed])):
            raise ValueError("observed entries of x contain non-finite values")

        c_names = tuple(self.c_names) or tuple(f"C{j + 1}" for j in range(c.shape[1]))
        x_names = tuple(self.x_names) or tuple(f"X{j + 1}" for j in range(x.shape[1]))
        if len(c_names) != c.shape[1] or len(x_names) != x.shape[1]:
            raise ValueError("column name counts do not match c / x")
        if len(set(c_names) | set(x_names)) != len(c_names) + len(x_names):
            raise ValueError("duplicate column names across c and x")

        object.__setattr__(self, "y", _freeze(y))
        object.__setattr__(self, "z", _freeze(z))
        object.__setattr__(self, "c", _freeze(c))
        object.__setattr__(self, "x", _freeze(x))
        object.__setattr__(self, "observed", _freeze(observed))
        object.__setattr__(self, "c_names", c_names)
        object.__setattr__(self, "x_names", x_names)
        object.__setattr__(self, "c_levels", dict(self.c_levels))
        object.__setattr__(self, "x_levels", dict(self.x_levels))

    @property
    def n(self) -> int:
        return self.y.size


@dataclass(frozen=True)
class Encoded:
    """Indicator-encoded covariates: one named column per encoded feature."""

    names: tuple[str, ...]
    matrix: np.ndarray
    indicator_names: tuple[str, ...]

    @property
    def n(self) -> int:
        return self.matrix.shape[0]

    def column(self, name: str) -> np.ndarray:
        try:
            j = self.names.index(name)
        except ValueError:
            raise KeyError(f"unknown encoded column {name!r}") from None
        return self.matrix[:, j]


def encode_missing_indicator(data: Dataset, fill: float = 0.0) -> Encoded:
    """Encode a dataset's covariates with explicit missingness indicators.

    Numeric partially observed columns ``X`` become a filled column ``X``
    (missing entries replaced by ``fill``) plus an indicator ``R_X`` equal to
    1 where observed.  Categorical partially observed columns expand to
    observed-level dummies (first level as reference) plus a ``=missing``
    dummy; the indicator itself is omitted because the missing dummy is its
    complement.  Fully observed categorical columns expand to reference-coded
    dummies.

    Raises :class:`EncodingError` for a partially observed column with no
    observed entries (its indicator would be constant zero).
    """
    cols: list[np.ndarray] = []
    names: list[str] = []
    indicators: list[str] = []
    n = data.n

    for j, name in enumerate(data.c_names):
        v = data.c[:, j]
        if name in data.c_levels:
            levels = data.c_levels[name]
            _check_codes(v, len(levels), name)
            for k, lab in enumerate(levels):
                if k == 0:
                    continue  # reference level
                cols.append((v == k).astype(float))
                names.append(f"{name}={lab}")
        else:
            cols.append(v.astype(float))
            names.append(name)

    for j, name in enumerate(data.x_names):
        r = data.observed[:, j]
        if not r.any():
            raise EncodingError(
                f"degenerate column: {name!r} has no observed entries"
            )
        v = data.x[:, j]
        if name in data.x_levels:
            levels = data.x_levels[name]
            _check_codes(v[r], len(levels), name)
            for k, lab in enumerate(levels):
                if k == 0:
                    continue
                cols.append(((v == k) & r).astype(float))
                names.append(f"{name}={lab}")
            miss = f"{name}=missing"
            cols.append((~r).astype(float))
            names.append(miss)
            indicators.append(miss)
        else:
            filled = np.where(r, v, fill)
            cols.append(filled.astype(float))
            names.append(name)
            ind = f"R_{name}"
            cols.append(r.astype(float))
            names.append(ind)
            indicators.append(ind)

    matrix = np.column_stack(cols) if cols else np.empty((n, 0))
    return Encoded(names=tuple(names), matrix=_freeze(matrix),
                   indicator_names=tuple(indicators))


def _check_codes(values: np.ndarray, n_levels: int, name: str) -> None:
    codes = np.unique(values)
    if codes.size and (codes.min() < 0 or codes.max() >= n_levels
                       or not np.all(codes == np.round(codes))):
        raise ValueError(f"column {name!r} has codes outside its declared levels")


@dataclass(frozen=True)
class ModelSpec:
    """Term lists for the three model design matrices.

    Terms are "intercept", an encoded column name, or a '*'-joined product of
    encoded column names.  The blip list must contain the intercept so the
    treatment main effect is always estimable.
    """

    treatment_terms: tuple[str, ...]
    treatment_free_terms: tuple[str, ...]
    blip_terms: tuple[str, ...] = ("intercept",)

    def __post_init__(self):
        object.__setattr__(self, "treatment_terms", tuple(self.treatment_terms))
        object.__setattr__(self, "treatment_free_terms", tuple(self.treatment_free_terms))
        object.__setattr__(self, "blip_terms", tuple(self.blip_terms))
        if "intercept" not in self.blip_terms:
            raise ValueError("blip terms must include the intercept")


@dataclass(frozen=True)
class AugmentedDesign:
    """Encoded covariate matrix plus the three assembled design matrices."""

    h: np.ndarray
    h_names: tuple[str, ...]
    h_alpha: np.ndarray
    alpha_names: tuple[str, ...]
    h_beta: np.ndarray
    beta_names: tuple[str, ...]
    h_psi: np.ndarray
    psi_names: tuple[str, ...]

    @property
    def n(self) -> int:
        return self.h.shape[0]


def _term_column(encoded: Encoded, term: str) -> np.ndarray:
    if term == "intercept":
        return np.ones(encoded.n)
    col = np.ones(encoded.n)
    for factor in term.split("*"):
        col = col * encoded.column(factor.strip())
    return col


def _assemble(encoded: Encoded, terms: tuple[str, ...], label: str):
    if not terms:
        raise ValueError(f"{label} term list is empty")
    cols = [_term_column(encoded, t) for t in terms]
    m = np.column_stack(cols)
    _check_rank(m, terms, label)
    return _freeze(m)


def _check_rank(m: np.ndarray, names: tuple[str, ...], label: str) -> None:
    """Pivoted-QR rank check; names the dependent columns on failure."""
    if m.shape[0] < m.shape[1]:
        raise RankError(f"{label} design has more columns than rows")
    _, r, piv = scipy.linalg.qr(m, mode="economic", pivoting=True)
    diag = np.abs(np.diag(r))
    ref = diag[0] if diag.size else 0.0
    if ref == 0.0:
        raise RankError(f"{label} design is identically zero")
    bad = [names[piv[k]] for k in range(diag.size) if diag[k] <= RANK_RTOL * ref]
    if bad:
        raise RankError(
            f"{label} design is rank deficient; collinear columns: "
            + ", ".join(sorted(bad))
        )


def build_design(encoded: Encoded, spec: ModelSpec) -> AugmentedDesign:
    """Assemble treatment / treatment-free / blip design matrices.

    Interaction terms are elementwise products of encoded columns.  Every
    matrix gets a full-column-rank check; failures raise :class:`RankError`
    naming the collinear columns.
    """
    h_alpha = _assemble(encoded, spec.treatment_terms, "treatment")
    h_beta = _assemble(encoded, spec.treatment_free_terms, "treatment-free")
    h_psi = _assemble(encoded, spec.blip_terms, "blip")
    return AugmentedDesign(
        h=encoded.matrix,
        h_names=encoded.names,
        h_alpha=h_alpha,
        alpha_names=spec.treatment_terms,
        h_beta=h_beta,
        beta_names=spec.treatment_free_terms,
        h_psi=h_psi,
        psi_names=spec.blip_terms,
    )


# ---------------------------------------------------------------------------
# CSV interchange
# ---------------------------------------------------------------------------

def read_csv_dataset(
    path,
    outcome: str,
    treatment: str,
    confounders: list[str],
    partially_observed: list[str],
    categorical=(),
) -> Dataset:
    """Read a dataset from CSV.

    The header row is required.  Empty cells and the literal "NA" are treated
    as missing and are only legal in ``partially_observed`` columns; any other
    unparsable numeric cell is a hard error.  ``categorical`` is either a list
    of column names (levels collected in sorted order, so ingestion is
    independent of row order) or a mapping of column name to an explicit level
    order (which fixes the reference level for encoding).
    """
    with open(path, "r", encoding="utf-8", newline="") as fh:
        reader = csv.reader(fh)
        try:
            header = next(reader)
        except StopIteration:
            raise ValueError(f"{path}: empty file, header row required") from None
        header = [h.strip() for h in header]
        rows = [row for row in reader if row]

    col_index = {}
    for name in [outcome, treatment, *confounders, *partially_observed]:
        if name not in header:
            raise ValueError(f"column {name!r} not found in CSV header")
        col_index[name] = header.index(name)

    declared_levels = dict(categorical) if isinstance(categorical, dict) else {}
    categorical = set(categorical)
    n = len(rows)

    def raw(name):
        j = col_index[name]
        return [row[j].strip() for row in rows]

    def parse_numeric(name, allow_missing):
        out = np.empty(n)
        mask = np.ones(n, dtype=bool)
        for i, cell in enumerate(raw(name)):
            if cell in MISSING_TOKENS:
                if not allow_missing:
                    raise ValueError(
                        f"column {name!r} row {i + 2}: missing value not allowed"
                    )
                out[i] = np.nan
                mask[i] = False
            else:
                try:
                    out[i] = float(cell)
                except ValueError:
                    raise ValueError(
                        f"column {name!r} row {i + 2}: cannot parse {cell!r}"
                    ) from None
        return out, mask

    def parse_categorical(name, allow_missing):
        cells = raw(name)
        mask = np.array([cell not in MISSING_TOKENS for cell in cells])
        if not allow_missing and not mask.all():
            bad = int(np.flatnonzero(~mask)[0])
            raise ValueError(f"column {name!r} row {bad + 2}: missing value not allowed")
        seen = {cell for cell, ok in zip(cells, mask) if ok}
        if name in declared_levels:
            levels = list(declared_levels[name])
            extra = seen - set(levels)
            if extra:
                raise ValueError(
                    f"column {name!r}: values {sorted(extra)} not in declared levels")
        else:
            levels = sorted(seen)
        code = {lab: k for k, lab in enumerate(levels)}
        out = np.array([code[cell] if ok else np.nan for cell, ok in zip(cells, mask)],
                       dtype=float)
        return out, mask, levels

    y, _ = parse_numeric(outcome, allow_missing=False)
    z, _ = parse_numeric(treatment, allow_missing=False)

    c_cols, c_levels = [], {}
    for name in confounders:
        if name in categorical:
            col, _, levels = parse_categorical(name, allow_missing=False)
            c_levels[name] = tuple(levels)
        else:
            col, _ = parse_numeric(name, allow_missing=False)
        c_cols.append(col)

    x_cols, masks, x_levels = [], [], {}
    for name in partially_observed:
        if name in categorical:
            col, mask, levels = parse_categorical(name, allow_missing=True)
            x_levels[name] = tuple(levels)
        else:
            col, mask = parse_numeric(name, allow_missing=True)
        x_cols.append(np.where(mask, col, 0.0))
        masks.append(mask)

    return Dataset(
        y=y,
        z=z,
        c=np.column_stack(c_cols) if c_cols else np.empty((n, 0)),
        x=np.column_stack(x_cols) if x_cols else np.empty((n, 0)),
        observed=np.column_stack(masks) if masks else np.empty((n, 0), dtype=bool),
        c_names=tuple(confounders),
        x_names=tuple(partially_observed),
        c_levels=c_levels,
        x_levels=x_levels,
    )


def write_dataset_csv(data: Dataset, path) -> None:
    """Write a dataset to CSV in the schema read_csv_dataset accepts.

    Missing entries become empty cells; categorical codes are written as
    their level labels.
    """
    header = ["y", "z", *data.c_names, *data.x_names]
    with open(path, "w", encoding="utf-8", newline="") as fh:
        writer = csv.writer(fh, lineterminator="\n")
        writer.writerow(header)
        for i in range(data.n):
            row = [repr(float(data.y[i])), str(int(data.z[i]))]
            for j, name in enumerate(data.c_names):
                v = data.c[i, j]
                if name in data.c_levels:
                    row.append(data.c_levels[name][int(v)])
                else:
                    row.append(repr(float(v)))
            for j, name in enumerate(data.x_names):
                if not data.observed[i, j]:
                    row.append("")
                elif name in data.x_levels:
                    row.append(data.x_levels[name][int(data.x[i, j])])
                else:
                    row.append(repr(float(data.x[i, j])))
            writer.writerow(row)
