"""
Correlation and factorability statistics.

Likert responses are treated as continuous and correlated with Pearson's
product-moment coefficient throughout.
"""

from __future__ import annotations

import csv
from dataclasses import dataclass, field
from os import PathLike
from typing import NamedTuple, Sequence

import numpy as np
from scipy import linalg, stats

from .exceptions import NotPositiveDefiniteError, SchemaError

LOADER_TOL = 5e-3


@dataclass(frozen=True)
class CorrelationMatrix:
    """
    A validated correlation matrix.

    Parameters
    ----------
    values : ndarray, shape (p, p)
    item_ids : tuple of str
    n : int, optional
        Number of cases the matrix was computed from.  Required by the tests
        and fits that need a sample size when the matrix was loaded from file.
    """

    values: np.ndarray
    item_ids: tuple
    n: int | None = None

    def __post_init__(self):
        R = np.asarray(self.values, dtype=float)
        object.__setattr__(self, "values", R)
        object.__setattr__(self, "item_ids", tuple(self.item_ids))
        if R.ndim != 2 or R.shape[0] != R.shape[1]:
            raise ValueError("correlation matrix must be square")
        if len(self.item_ids) != R.shape[0]:
            raise ValueError("item_ids length does not match matrix dimension")
        if not np.allclose(R, R.T, atol=1e-12, rtol=0):
            raise ValueError("correlation matrix is not symmetric")
        if not np.allclose(np.diag(R), 1.0, atol=1e-12, rtol=0):
            raise ValueError("correlation matrix must have a unit diagonal")
        if np.any(np.abs(R) > 1 + 1e-12):
            raise ValueError("correlations must lie in [-1, 1]")
        if np.linalg.eigvalsh(R).min() < -1e-8:
            raise NotPositiveDefiniteError("correlation matrix is not positive semidefinite")

    @property
    def p(self) -> int:
        return self.values.shape[0]

    def subset(self, items: Sequence[str]) -> "CorrelationMatrix":
        idx = [self.item_ids.index(i) for i in items]
        return CorrelationMatrix(self.values[np.ix_(idx, idx)], tuple(items), self.n)

    def with_n(self, n: int) -> "CorrelationMatrix":
        return CorrelationMatrix(self.values, self.item_ids, n)

    def to_csv(self, path):
        with open(path, "w", newline="", encoding="utf-8") as fh:
            w = csv.writer(fh, lineterminator="\n")
            w.writerow(["item", *self.item_ids])
            for name, row in zip(self.item_ids, self.values):
                w.writerow([name, *(repr(float(v)) for v in row)])


def load_correlation_csv(path: str | PathLike, n: int | None = None, tol: float = LOADER_TOL) -> CorrelationMatrix:
    """
    Read a square correlation CSV with an item-id header row and column.

    Blank upper-triangle cells are filled from the lower triangle.  Published
    matrices are rounded, so symmetry and the unit diagonal are checked to
    ``tol`` and the result is symmetrized by averaging.
    """
    with open(path, newline="", encoding="utf-8") as fh:
        rows = [r for r in csv.reader(fh) if r]
    header = [h.strip() for h in rows[0][1:]]
    body = rows[1:]
    p = len(header)
    if len(body) != p:
        raise SchemaError(f"{path}: expected {p} data rows, found {len(body)}")
    R = np.full((p, p), np.nan)
    for i, row in enumerate(body):
        if row[0].strip() != header[i]:
            raise SchemaError(f"{path}: row {i + 1} label {row[0]!r} does not match column {header[i]!r}")
        for j, cell in enumerate(row[1:p + 1]):
            if cell.strip():
                R[i, j] = float(cell)
    R = np.where(np.isnan(R), R.T, R)
    if np.isnan(R).any():
        raise SchemaError(f"{path}: matrix has cells missing in both triangles")
    if np.max(np.abs(R - R.T)) > tol:
        raise SchemaError(f"{path}: matrix asymmetric beyond {tol}")
    if np.max(np.abs(np.diag(R) - 1)) > tol:
        raise SchemaError(f"{path}: diagonal deviates from 1 beyond {tol}")
    R = (R + R.T) / 2
    np.fill_diagonal(R, 1.0)
    return CorrelationMatrix(R, tuple(header), n)


def _as_array(matrix):
    values = getattr(matrix, "values", matrix)
    ids = getattr(matrix, "item_ids", None)
    X = np.asarray(values, dtype=float)
    if ids is None:
        ids = tuple(f"i{j + 1}" for j in range(X.shape[1]))
    return X, tuple(ids)


def pearson_matrix(matrix) -> CorrelationMatrix:
    """
    Pearson correlation matrix of the columns of a rating matrix.

    NaN cells are handled pairwise (each coefficient uses the cases complete
    on both columns).
    """
    X, ids = _as_array(matrix)
    n, p = X.shape
    if n < 3:
        raise ValueError("need at least 3 cases")
    if not np.isnan(X).any():
        sd = X.std(axis=0)
        for j in np.flatnonzero(sd == 0):
            raise ValueError(f"item {ids[j]} has zero variance")
        Z = (X - X.mean(axis=0)) / sd
        R = Z.T @ Z / n
    else:
        R = np.eye(p)
        for i in range(p):
            for j in range(i + 1, p):
                ok = ~np.isnan(X[:, i]) & ~np.isnan(X[:, j])
                a, b = X[ok, i], X[ok, j]
                if a.std() == 0 or b.std() == 0:
                    raise ValueError(f"item {ids[i] if a.std() == 0 else ids[j]} has zero variance")
                R[i, j] = R[j, i] = np.corrcoef(a, b)[0, 1]
    R = np.clip((R + R.T) / 2, -1, 1)
    np.fill_diagonal(R, 1.0)
    return CorrelationMatrix(R, ids, n)


@dataclass(frozen=True)
class ItemTotalReport:
    item_ids: tuple
    raw_r: np.ndarray
    corrected_r: np.ndarray

    def as_dict(self) -> dict:
        return {i: {"raw": float(a), "corrected": float(b)}
                for i, a, b in zip(self.item_ids, self.raw_r, self.corrected_r)}


def item_total_correlations(matrix) -> ItemTotalReport:
    """Correlation of each item with the total score, with and without the item itself."""
    X, ids = _as_array(matrix)
    X = X[~np.isnan(X).any(axis=1)]
    if X.shape[1] < 2:
        raise ValueError("need at least 2 items")
    total = X.sum(axis=1)
    if total.std() == 0:
        raise ValueError("total score has zero variance")
    raw, corrected = [], []
    for j in range(X.shape[1]):
        rest = total - X[:, j]
        raw.append(np.corrcoef(X[:, j], total)[0, 1])
        corrected.append(np.nan if rest.std() == 0 or X[:, j].std() == 0 else np.corrcoef(X[:, j], rest)[0, 1])
    return ItemTotalReport(ids, np.array(raw), np.array(corrected))


def item_total_from_correlation(R: CorrelationMatrix) -> ItemTotalReport:
    """Item-total correlations of the standardized items, computable from R alone."""
    M = R.values
    total_var = M.sum()
    raw = M.sum(axis=1) / np.sqrt(total_var)
    rest_cov = M.sum(axis=1) - 1.0
    rest_var = total_var - 2 * M.sum(axis=1) + 1.0
    return ItemTotalReport(R.item_ids, raw, rest_cov / np.sqrt(rest_var))


def load_item_total_csv(path, scale: str) -> ItemTotalReport:
    """Read a published raw/corrected item-total table (columns ``<scale>_raw``, ``<scale>_corrected``)."""
    ids, raw, cor = [], [], []
    with open(path, newline="", encoding="utf-8") as fh:
        for row in csv.DictReader(fh):
            if row[f"{scale}_raw"]:
                ids.append(row["item"])
                raw.append(float(row[f"{scale}_raw"]))
                cor.append(float(row[f"{scale}_corrected"]))
    return ItemTotalReport(tuple(ids), np.array(raw), np.array(cor))


def flag_low_correlation_items(report: ItemTotalReport, threshold: float = 0.30) -> list:
    """Items whose corrected item-total correlation falls below ``threshold``.  Flags only."""
    return [i for i, r in zip(report.item_ids, report.corrected_r) if r < threshold]


def chi_square_sf(x: float, df: int) -> float:
    """Upper-tail probability of the chi-square distribution."""
    if df < 1:
        raise ValueError("df must be a positive integer")
    if x < 0:
        raise ValueError("x must be nonnegative")
    return float(stats.chi2.sf(x, df))


def format_p(p: float) -> str:
    return "< 0.001" if p < 0.001 else f"{p:.3f}"


def _cholesky(R):
    try:
        return linalg.cho_factor(R, lower=True)
    except linalg.LinAlgError:
        raise NotPositiveDefiniteError("determinant nonpositive: matrix is not positive definite") from None


def log_det(R) -> float:
    c, _ = _cholesky(np.asarray(R, dtype=float))
    return float(2 * np.log(np.diag(c)).sum())


class BartlettResult(NamedTuple):
    chi2: float
    df: int
    p: float


def bartlett_test(R: CorrelationMatrix, n: int | None = None) -> BartlettResult:
    """
    Bartlett's test of sphericity: chi2 = -(n - 1 - (2p + 5)/6) ln|R|.
    """
    n = n if n is not None else R.n
    if n is None:
        raise ValueError("sample size n is required")
    M = getattr(R, "values", R)
    p = M.shape[0]
    if n <= p:
        raise ValueError("n must exceed the number of items")
    chi2 = -(n - 1 - (2 * p + 5) / 6) * log_det(M)
    chi2 = max(chi2, 0.0)
    df = p * (p - 1) // 2
    return BartlettResult(float(chi2), df, chi_square_sf(chi2, df))


def anti_image_correlations(R) -> np.ndarray:
    M = getattr(R, "values", R)
    c = _cholesky(M)
    Q = linalg.cho_solve(c, np.eye(M.shape[0]))
    d = np.sqrt(np.diag(Q))
    A = -Q / np.outer(d, d)
    np.fill_diagonal(A, 1.0)
    return A


def kmo(R: CorrelationMatrix):
    """
    Kaiser-Meyer-Olkin sampling adequacy.

    Returns
    -------
    overall : float
    per_item : ndarray
        Item-level measures of sampling adequacy (MSA).

    Raises
    ------
    ValueError
        If R has no off-diagonal correlation at all, where the index is 0/0.
    """
    M = getattr(R, "values", R)
    A = anti_image_correlations(M)
    r2 = M ** 2
    a2 = A ** 2
    np.fill_diagonal(r2, 0)
    np.fill_diagonal(a2, 0)
    row_r, row_a = r2.sum(axis=1), a2.sum(axis=1)
    tiny = np.finfo(float).tiny
    if r2.sum() + a2.sum() <= tiny:
        raise ValueError("KMO undefined: matrix has no off-diagonal correlation")
    per_item = np.divide(row_r, row_r + row_a, out=np.full_like(row_r, 0.5), where=(row_r + row_a) > tiny)
    return float(r2.sum() / (r2.sum() + a2.sum())), per_item


@dataclass
class FactorabilityReport:
    bartlett_chi2: float
    bartlett_df: int
    bartlett_p: float
    kmo_overall: float
    kmo_per_item: dict
    low_correlation_items: list = field(default_factory=list)
    item_total: dict | None = None
    n: int | None = None

    def to_dict(self) -> dict:
        return {
            "n": self.n,
            "bartlett": {"chi2": self.bartlett_chi2, "df": self.bartlett_df, "p": self.bartlett_p,
                         "p_display": format_p(self.bartlett_p)},
            "kmo": {"overall": self.kmo_overall, "per_item": self.kmo_per_item},
            "low_correlation_items": list(self.low_correlation_items),
            "item_total": self.item_total,
        }


def factorability(R: CorrelationMatrix, n: int | None = None, item_total: ItemTotalReport | None = None,
                  threshold: float = 0.30) -> FactorabilityReport:
    """Bartlett, KMO and low item-total flags in one report."""
    n = n if n is not None else R.n
    b = bartlett_test(R, n)
    overall, per_item = kmo(R)
    if item_total is None:
        item_total = item_total_from_correlation(R)
    return FactorabilityReport(
        bartlett_chi2=b.chi2,
        bartlett_df=b.df,
        bartlett_p=b.p,
        kmo_overall=overall,
        kmo_per_item={i: float(v) for i, v in zip(R.item_ids, per_item)},
        low_correlation_items=flag_low_correlation_items(item_total, threshold),
        item_total=item_total.as_dict(),
        n=n,
    )
