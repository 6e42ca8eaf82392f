"""Observedness structure of an incomplete data matrix.

A :class:`MaskedMatrix` pairs an ``N x d`` value array with a boolean mask
(``True`` = observed).  Missing cells hold NaN and are never read; every
consumer goes through the mask.
"""

import csv
from dataclasses import dataclass

import numpy as np

DEFAULT_MISSING_TOKENS = ("", "na", "nan")


class MissingDataError(ValueError):
    """Raised when the observedness structure makes a quantity undefined."""


class CsvParseError(ValueError):
    """Raised for a malformed CSV cell; carries 1-based row/column."""

    def __init__(self, message, row=None, column=None):
        super().__init__(message)
        self.row = row
        self.column = column


class MaskedMatrix:
    """An ``N x d`` data matrix with an observedness mask.

    Parameters
    ----------
    values : array_like, shape (N, d)
        Data values. Entries where ``mask`` is False are overwritten by NaN.
    mask : array_like of bool, shape (N, d)
        True where the cell is observed.

    Attributes
    ----------
    n_obs_per_var : ndarray of int, shape (d,)
        Number of rows in which each variable is observed.
    patterns : ndarray of bool, shape (P, d)
        Distinct mask rows.
    pattern_index : ndarray of int, shape (N,)
        Row n has mask ``patterns[pattern_index[n]]``.
    """

    def __init__(self, values, mask):
        values = np.array(values, dtype=float, copy=True)
        mask = np.array(mask, dtype=bool, copy=True)
        if values.ndim != 2 or values.shape[0] < 1 or values.shape[1] < 1:
            raise MissingDataError("data matrix must be two-dimensional and non-empty")
        if mask.shape != values.shape:
            raise MissingDataError(
                f"mask shape {mask.shape} does not match values shape {values.shape}"
            )
        if not np.all(np.isfinite(values[mask])):
            raise MissingDataError("observed cells must be finite")
        values[~mask] = np.nan
        patterns, pattern_index, pattern_counts = np.unique(
            mask, axis=0, return_inverse=True, return_counts=True
        )
        self.values = values
        self.mask = mask
        self.n_obs_per_var = mask.sum(axis=0)
        self.patterns = patterns
        self.pattern_index = np.asarray(pattern_index).reshape(-1)
        self.pattern_counts = pattern_counts
        self.zero_filled = np.where(mask, values, 0.0)
        self.mask_float = mask.astype(float)
        for arr in (self.values, self.mask, self.n_obs_per_var, self.patterns,
                    self.pattern_index, self.pattern_counts, self.zero_filled, self.mask_float):
            arr.flags.writeable = False

    @property
    def shape(self):
        return self.values.shape

    @property
    def n_rows(self):
        return self.values.shape[0]

    @property
    def n_vars(self):
        return self.values.shape[1]

    @property
    def n_obs_per_row(self):
        return self.mask.sum(axis=1)

    @property
    def is_complete(self):
        return bool(self.mask.all())

    @property
    def n_empty_rows(self):
        """Rows with no observed entry; they carry no likelihood."""
        return int(np.sum(~self.mask.any(axis=1)))

    @property
    def row_patterns(self):
        """Row indices grouped by identical mask row, one array per pattern."""
        order = np.argsort(self.pattern_index, kind="stable")
        bounds = np.cumsum(self.pattern_counts)[:-1]
        return np.split(order, bounds)

    def filled(self, fill=0.0):
        """Values with missing cells replaced by ``fill``."""
        if fill == 0.0:
            return self.zero_filled
        return np.where(self.mask, self.values, fill)

    def drop_empty_rows(self):
        keep = self.mask.any(axis=1)
        if keep.all():
            return self
        if not keep.any():
            raise MissingDataError("every row is fully missing")
        return MaskedMatrix(self.values[keep], self.mask[keep])

    def permute_columns(self, order):
        order = np.asarray(order)
        return MaskedMatrix(self.values[:, order], self.mask[:, order])

    def __repr__(self):
        n, d = self.shape
        frac = 1.0 - self.mask.mean()
        return f"MaskedMatrix(N={n}, d={d}, missing={frac:.3f}, patterns={len(self.patterns)})"


@dataclass(frozen=True)
class MissingRates:
    """Per-variable MCAR deletion probabilities, each in [0, 1)."""

    gamma: np.ndarray

    def __post_init__(self):
        gamma = np.array(self.gamma, dtype=float).reshape(-1)
        if gamma.size == 0:
            raise ValueError("missing-rate vector is empty")
        if np.any(~np.isfinite(gamma)) or np.any(gamma < 0) or np.any(gamma >= 1):
            raise ValueError(f"missing rates must lie in [0, 1), got {gamma.tolist()}")
        gamma.flags.writeable = False
        object.__setattr__(self, "gamma", gamma)

    def __len__(self):
        return self.gamma.size


def from_dense(values, missing=None):
    """Build a :class:`MaskedMatrix` from a dense array.

    ``missing`` is a vectorised predicate on the array returning True for
    missing cells; it defaults to ``np.isnan``.
    """
    values = np.asarray(values, dtype=float)
    if values.ndim != 2 or values.size == 0:
        raise MissingDataError("data matrix must be two-dimensional and non-empty")
    is_missing = np.isnan(values) if missing is None else np.asarray(missing(values), dtype=bool)
    return MaskedMatrix(values, ~is_missing)


def apply_mcar_mask(complete, rates, seed):
    """Delete each cell (n, i) independently with probability ``gamma[i]``."""
    complete = np.asarray(complete, dtype=float)
    if not isinstance(rates, MissingRates):
        rates = MissingRates(rates)
    if complete.ndim != 2 or complete.shape[1] != len(rates):
        raise ValueError(
            f"rate vector has length {len(rates)} but data has {complete.shape[-1]} columns"
        )
    rng = np.random.default_rng(seed)
    deleted = rng.random(complete.shape) < rates.gamma
    return MaskedMatrix(complete, ~deleted)


def observed_means(data):
    counts = data.n_obs_per_var
    if np.any(counts == 0):
        never = np.flatnonzero(counts == 0).tolist()
        raise MissingDataError(f"variables {never} are never observed; their parameters cannot be estimated")
    return data.filled(0.0).sum(axis=0) / counts


def mean_impute(data):
    """Replace every missing cell by the observed mean of its column."""
    means = observed_means(data)
    return np.where(data.mask, data.values, means)


def sorted_counts(data):
    """Stable ascending sort of the per-variable observed counts.

    Returns ``(order, counts)`` where ``order[j]`` is the original (0-based)
    column index placed at sorted position ``j``.
    """
    counts = data.n_obs_per_var if isinstance(data, MaskedMatrix) else np.asarray(data)
    order = np.argsort(counts, kind="stable")
    return order, np.asarray(counts)[order]


def read_csv(path, header=False, missing_tokens=DEFAULT_MISSING_TOKENS, delimiter=","):
    """Read a numeric CSV file with missing cells.

    Tokens are matched case-insensitively after stripping whitespace.
    Returns ``(MaskedMatrix, column_names)``; names are None without header.
    """
    tokens = {t.strip().lower() for t in missing_tokens}
    with open(path, newline="") as fh:
        rows = list(csv.reader(fh, delimiter=delimiter))
    rows = [r for r in rows if r]  # blank lines
    names = None
    start = 0
    if header:
        if not rows:
            raise CsvParseError("file has no header row")
        names = [c.strip() for c in rows[0]]
        start = 1
    body = rows[start:]
    if not body:
        raise CsvParseError("file has no data rows")
    width = len(names) if names is not None else len(body[0])
    values = np.empty((len(body), width))
    mask = np.ones((len(body), width), dtype=bool)
    for i, row in enumerate(body):
        lineno = i + start + 1
        if len(row) != width:
            raise CsvParseError(
                f"row {lineno} has {len(row)} fields, expected {width}", row=lineno
            )
        for j, cell in enumerate(row):
            cell = cell.strip()
            if cell.lower() in tokens:
                mask[i, j] = False
                values[i, j] = np.nan
                continue
            try:
                values[i, j] = float(cell)
            except ValueError:
                raise CsvParseError(
                    f"row {lineno}, column {j + 1}: cannot parse {cell!r} as a number",
                    row=lineno, column=j + 1,
                ) from None
            if not np.isfinite(values[i, j]):
                raise CsvParseError(
                    f"row {lineno}, column {j + 1}: non-finite value {cell!r}",
                    row=lineno, column=j + 1,
                )
    return MaskedMatrix(values, mask), names


def write_csv(path, data, names=None):
    """Write a MaskedMatrix (or dense array) with missing cells as empty fields."""
    if not isinstance(data, MaskedMatrix):
        data = from_dense(data)
    with open(path, "w", newline="") as fh:
        writer = csv.writer(fh)
        if names is not None:
            writer.writerow(names)
        for vals, obs in zip(data.values, data.mask):
            writer.writerow([repr(float(v)) if o else "" for v, o in zip(vals, obs)])
