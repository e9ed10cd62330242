"""Dataset ingestion, splitting, pseudo-observations and empirical margins."""

from __future__ import annotations

import csv
import logging
import math
from dataclasses import dataclass, field
from pathlib import Path
from typing import Sequence

import numpy as np
from scipy.stats import rankdata

logger = logging.getLogger(__name__)

_MISSING = {"", "na", "nan", "null", "none"}


class DataError(ValueError):
    """Raised when input data cannot be turned into a usable Dataset."""


class MissingColumnError(DataError):
    def __init__(self, column: str):
        super().__init__(f"column not found: {column!r}")
        self.column = column


@dataclass(frozen=True)
class Dataset:
    """Covariate matrix ``z`` (n x p) and response matrix ``X`` (n x d).

    Categorical covariates are integer-encoded; ``encodings`` maps each such
    column name to its ``label -> code`` table so new inputs can be encoded
    the same way.
    """

    covariates: np.ndarray
    responses: np.ndarray
    covariate_names: tuple[str, ...]
    response_names: tuple[str, ...]
    categorical_flags: tuple[bool, ...] = ()
    encodings: dict[str, dict[str, int]] = field(default_factory=dict)
    n_dropped: int = 0

    def __post_init__(self):
        z = np.asarray(self.covariates, dtype=float)
        x = np.asarray(self.responses, dtype=float)
        if z.ndim == 1:
            z = z[:, None]
        if x.ndim == 1:
            x = x[:, None]
        if z.shape[0] != x.shape[0]:
            raise DataError(
                f"covariates have {z.shape[0]} rows but responses have {x.shape[0]}"
            )
        if z.shape[1] < 1 or x.shape[1] < 1:
            raise DataError("need at least one covariate and one response column")
        if not (np.isfinite(z).all() and np.isfinite(x).all()):
            raise DataError("dataset contains non-finite values")
        if len(self.covariate_names) != z.shape[1]:
            raise DataError("covariate_names does not match covariate columns")
        if len(self.response_names) != x.shape[1]:
            raise DataError("response_names does not match response columns")
        flags = self.categorical_flags or (False,) * z.shape[1]
        if len(flags) != z.shape[1]:
            raise DataError("categorical_flags does not match covariate columns")
        z.setflags(write=False)
        x.setflags(write=False)
        object.__setattr__(self, "covariates", z)
        object.__setattr__(self, "responses", x)
        object.__setattr__(self, "covariate_names", tuple(self.covariate_names))
        object.__setattr__(self, "response_names", tuple(self.response_names))
        object.__setattr__(self, "categorical_flags", tuple(bool(f) for f in flags))

    @property
    def n(self) -> int:
        return self.responses.shape[0]

    @property
    def d(self) -> int:
        return self.responses.shape[1]

    @property
    def p(self) -> int:
        return self.covariates.shape[1]

    def subset(self, rows) -> "Dataset":
        rows = np.asarray(rows, dtype=int)
        return Dataset(
            covariates=self.covariates[rows],
            responses=self.responses[rows],
            covariate_names=self.covariate_names,
            response_names=self.response_names,
            categorical_flags=self.categorical_flags,
            encodings=self.encodings,
        )


def _parse_float(cell: str) -> float | None:
    try:
        value = float(cell)
    except ValueError:
        return None
    return value if math.isfinite(value) else None


def _sniff_delimiter(header_line: str) -> str:
    # Howell1.csv ships semicolon-separated; everything else is plain CSV.
    if ";" in header_line and "," not in header_line:
        return ";"
    if "\t" in header_line and "," not in header_line:
        return "\t"
    return ","


def _read_table(path, response_cols, covariate_cols, delimiter, encodings):
    path = Path(path)
    with path.open(newline="", encoding="utf-8") as fh:
        text = fh.read()
    lines = text.splitlines()
    if not lines:
        raise DataError(f"{path}: empty file")
    delim = delimiter or _sniff_delimiter(lines[0])
    reader = csv.reader(lines, delimiter=delim)
    header = [h.strip().strip('"') for h in next(reader)]
    rows = [r for r in reader if any(c.strip() for c in r)]

    index = {name: i for i, name in enumerate(header)}
    for name in list(response_cols) + list(covariate_cols):
        if name not in index:
            raise MissingColumnError(name)

    def column(name: str) -> list[str]:
        i = index[name]
        return [r[i].strip().strip('"') if i < len(r) else "" for r in rows]

    encodings = {k: dict(v) for k, v in (encodings or {}).items()}
    n_rows = len(rows)
    keep = np.ones(n_rows, dtype=bool)

    def numeric(cells: list[str]) -> np.ndarray:
        out = np.empty(n_rows)
        for k, cell in enumerate(cells):
            value = None if cell.lower() in _MISSING else _parse_float(cell)
            if value is None:
                keep[k] = False
                out[k] = np.nan
            else:
                out[k] = value
        return out

    responses = (np.column_stack([numeric(column(c)) for c in response_cols])
                 if n_rows and response_cols else np.empty((n_rows, len(response_cols))))
    cov_cols = []
    flags = []
    for name in covariate_cols:
        cells = column(name)
        present = [c for c in cells if c.lower() not in _MISSING]
        n_text = sum(_parse_float(c) is None for c in present)
        categorical = name in encodings or (present and n_text * 2 > len(present))
        if categorical:
            table = encodings.setdefault(name, {})
            fixed = bool(table)
            codes = np.empty(n_rows)
            for k, cell in enumerate(cells):
                if cell.lower() in _MISSING:
                    keep[k] = False
                    codes[k] = np.nan
                    continue
                if cell not in table:
                    if fixed:
                        raise DataError(f"column {name!r}: unknown category {cell!r}")
                    table[cell] = len(table)
                codes[k] = table[cell]
            cov_cols.append(codes)
        else:
            cov_cols.append(numeric(cells))
        flags.append(bool(categorical))
    covariates = np.column_stack(cov_cols) if n_rows else np.empty((0, len(covariate_cols)))

    n_dropped = int((~keep).sum())
    if n_dropped:
        logger.warning("%s: dropped %d row(s) with missing or unparseable cells", path, n_dropped)
    if keep.sum() == 0:
        raise DataError(f"{path}: no usable rows")
    encodings = {k: v for k, v in encodings.items() if k in covariate_cols}
    return covariates[keep], responses[keep], tuple(flags), encodings, n_dropped


def load_csv(
    path: str | Path,
    response_cols: Sequence[str],
    covariate_cols: Sequence[str],
    delimiter: str | None = None,
    encodings: dict[str, dict[str, int]] | None = None,
) -> Dataset:
    """Read a headered CSV file into a :class:`Dataset`.

    A covariate column is treated as categorical when most of its non-missing
    cells are not numbers; its labels are coded ``0, 1, ...`` in order of first
    appearance unless ``encodings`` supplies the table (as at prediction time).
    Rows with a missing or unparseable cell in any requested column are
    dropped and counted in ``Dataset.n_dropped``.
    """
    z, x, flags, enc, n_dropped = _read_table(path, response_cols, covariate_cols, delimiter, encodings)
    return Dataset(
        covariates=z,
        responses=x,
        covariate_names=tuple(covariate_cols),
        response_names=tuple(response_cols),
        categorical_flags=flags,
        encodings=enc,
        n_dropped=n_dropped,
    )


def load_covariates(path: str | Path, covariate_cols: Sequence[str], delimiter: str | None = None,
                    encodings: dict[str, dict[str, int]] | None = None) -> np.ndarray:
    """Covariate matrix only, e.g. a file of prediction inputs without responses."""
    return _read_table(path, (), covariate_cols, delimiter, encodings)[0]


def split_indices(n: int, n_test: int, seed: int) -> tuple[np.ndarray, np.ndarray]:
    if not 0 < n_test < n:
        raise DataError(f"n_test must satisfy 0 < n_test < n={n}, got {n_test}")
    rng = np.random.default_rng(seed)
    test = np.sort(rng.choice(n, size=n_test, replace=False))
    train = np.setdiff1d(np.arange(n), test)
    return train, test


def split(ds: Dataset, n_test: int, seed: int) -> tuple[Dataset, Dataset]:
    """Seeded random partition into ``(train, test)`` with ``n_test`` test rows."""
    train, test = split_indices(ds.n, n_test, seed)
    return ds.subset(train), ds.subset(test)


def pseudo_observations(m) -> np.ndarray:
    """Column-wise average ranks divided by ``n + 1``."""
    m = np.asarray(m, dtype=float)
    if m.ndim == 1:
        return rankdata(m) / (m.shape[0] + 1)
    if m.ndim != 2 or m.shape[0] < 1:
        raise ValueError("pseudo_observations expects a non-empty n x d matrix")
    return rankdata(m, axis=0) / (m.shape[0] + 1)


@dataclass(frozen=True)
class EmpiricalMargin:
    """Empirical distribution of training residuals, scaled by ``n + 1``."""

    sorted_residuals: np.ndarray

    def __post_init__(self):
        r = np.sort(np.asarray(self.sorted_residuals, dtype=float).ravel())
        r.setflags(write=False)
        object.__setattr__(self, "sorted_residuals", r)

    @property
    def n(self) -> int:
        return self.sorted_residuals.shape[0]

    def cdf(self, t) -> np.ndarray:
        """Right-continuous ``#{r <= t} / (n + 1)``."""
        return np.searchsorted(self.sorted_residuals, t, side="right") / (self.n + 1)

    def pit(self, t) -> np.ndarray:
        """Like :meth:`cdf`, but tied stored values get their average rank.

        This is the transform ``pseudo_observations`` applies to the training
        residuals; off the stored support it coincides with :meth:`cdf`.
        """
        lo = np.searchsorted(self.sorted_residuals, t, side="left")
        hi = np.searchsorted(self.sorted_residuals, t, side="right")
        rank = np.where(hi > lo, (lo + 1 + hi) / 2.0, hi)
        return rank / (self.n + 1)

    def quantile(self, u) -> np.ndarray:
        return margin_quantile(self, u)


def fit_empirical_margin(residuals) -> EmpiricalMargin:
    residuals = np.asarray(residuals, dtype=float).ravel()
    if residuals.size == 0:
        raise ValueError("cannot fit an empirical margin to an empty vector")
    return EmpiricalMargin(residuals)


def margin_quantile(m: EmpiricalMargin, u) -> np.ndarray:
    """Order-statistic quantile ``r_(ceil(u (n + 1)))`` clamped to ``[r_(1), r_(n)]``."""
    u = np.asarray(u, dtype=float)
    if np.any((u <= 0) | (u >= 1)) or np.any(~np.isfinite(u)):
        raise ValueError("quantile levels must lie strictly inside (0, 1)")
    x = u * (m.n + 1)
    # Guard against u = k/(n+1) landing a hair above k after the product.
    k = np.ceil(x - 1e-9 * np.maximum(1.0, x)).astype(np.int64)
    k = np.clip(k, 1, m.n)
    return m.sorted_residuals[k - 1]
