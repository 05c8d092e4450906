"""
Exploratory factor analysis.

Maximum-likelihood extraction profiles the loadings out of the likelihood:
for fixed uniquenesses psi the optimal loadings come from the leading
eigenvectors of ``psi^-1/2 R psi^-1/2``, leaving a bounded problem in psi
alone that is solved with L-BFGS-B.  Rotation is varimax (Kaiser-normalized,
pairwise planar rotations) optionally followed by Promax.
"""

from __future__ import annotations

import json
from dataclasses import dataclass, field
from typing import NamedTuple, Sequence

import numpy as np
from scipy import linalg, optimize

from .corrstats import CorrelationMatrix
from .exceptions import AnalysisError

HEYWOOD_BOUND = 0.005
ROTATIONS = ("none", "varimax", "promax")


@dataclass(frozen=True)
class EfaConfig:
    n_factors: int | str = "auto"
    extraction: str = "maximum_likelihood"
    rotation: str = "promax"
    promax_kappa: int = 4
    max_iter: int = 1000
    tol: float = 1e-10
    min_loading: float = 0.32
    cross_loading: float = 0.32
    min_items_per_factor: int = 3

    def __post_init__(self):
        if self.rotation not in ROTATIONS:
            raise ValueError(f"rotation must be one of {ROTATIONS}")
        if self.extraction != "maximum_likelihood":
            raise ValueError("only maximum_likelihood extraction is supported")
        if self.min_loading <= 0 or self.min_items_per_factor < 1 or self.tol <= 0:
            raise ValueError("invalid EFA thresholds")
        if self.n_factors != "auto" and (not isinstance(self.n_factors, (int, np.integer)) or self.n_factors < 1):
            raise ValueError("n_factors must be a positive integer or 'auto'")


def eigenvalues(R) -> np.ndarray:
    """Eigenvalues of a correlation matrix in descending order."""
    M = getattr(R, "values", R)
    return np.linalg.eigvalsh(M)[::-1].copy()


class FactorCountSuggestion(NamedTuple):
    kaiser: int
    elbow: int
    converged: bool


def scree_elbow(values) -> int:
    """
    Number of factors before the scree elbow, located by the largest
    second difference ``e[i-1] - 2 e[i] + e[i+1]``.  Returns 0 for a flat scree.
    """
    e = np.asarray(values, dtype=float)
    if len(e) < 3:
        return 0
    d2 = e[:-2] - 2 * e[1:-1] + e[2:]
    if d2.max() <= 1e-12:
        return 0
    return int(np.argmax(d2)) + 1


def suggest_n_factors(R) -> FactorCountSuggestion:
    e = eigenvalues(R)
    if len(e) < 3:
        raise ValueError("need at least 3 items")
    kaiser = int(np.sum(e > 1.0 + 1e-12))
    elbow = scree_elbow(e)
    return FactorCountSuggestion(kaiser, elbow, kaiser == elbow)


class MlExtraction(NamedTuple):
    loadings: np.ndarray
    uniquenesses: np.ndarray
    fit: float
    converged: bool
    iterations: int
    heywood: bool


def ml_degrees_of_freedom(p: int, k: int) -> float:
    return ((p - k) ** 2 - p - k) / 2


def _scaled_eigen(psi, M):
    sc = 1.0 / np.sqrt(psi)
    return np.linalg.eigh(M * np.outer(sc, sc))


def _ml_objective(psi, M, k):
    e, _ = _scaled_eigen(psi, M)
    rest = e[: len(e) - k]
    return float(np.sum(rest - np.log(rest) - 1.0))


def _ml_loadings(psi, M, k):
    e, V = _scaled_eigen(psi, M)
    e, V = e[::-1][:k], V[:, ::-1][:, :k]
    return np.sqrt(psi)[:, None] * V * np.sqrt(np.maximum(e - 1.0, 0.0))


def _ml_gradient(psi, M, k):
    L = _ml_loadings(psi, M, k)
    return (np.sum(L ** 2, axis=1) + psi - np.diag(M)) / psi ** 2


def extract_ml(R, k: int, max_iter: int = 1000, tol: float = 1e-10, lower: float = HEYWOOD_BOUND) -> MlExtraction:
    """
    Maximum-likelihood factor extraction.

    Minimizes ``ln|S| + tr(R S^-1) - ln|R| - p`` over ``S = L L' + diag(psi)``.

    Parameters
    ----------
    R : CorrelationMatrix or ndarray
    k : int
        Number of factors.
    max_iter, tol : optimizer controls.
    lower : float
        Lower bound on every uniqueness (Heywood guard).

    Returns
    -------
    MlExtraction
        Unrotated loadings, uniquenesses, discrepancy at the minimum,
        convergence flag, iteration count and whether a bound was hit.
    """
    M = np.asarray(getattr(R, "values", R), dtype=float)
    p = M.shape[0]
    if not 1 <= k < p:
        raise ValueError("need 1 <= k < p")
    if ml_degrees_of_freedom(p, k) < 0:
        raise AnalysisError("model over-parameterized: negative degrees of freedom")
    try:
        smc_complement = 1.0 / np.diag(linalg.inv(M))
    except linalg.LinAlgError:
        smc_complement = np.full(p, 0.5)
    start = np.clip(smc_complement, lower, 1.0)
    res = optimize.minimize(
        _ml_objective, start, args=(M, k), jac=_ml_gradient, method="L-BFGS-B",
        bounds=[(lower, 1.0)] * p,
        options={"maxiter": max_iter, "ftol": tol * 1e-4, "gtol": tol},
    )
    psi = res.x
    loadings = _ml_loadings(psi, M, k)
    heywood = bool(np.any(psi <= lower * (1 + 1e-6)))
    return MlExtraction(loadings, psi, float(res.fun), bool(res.success), int(res.nit), heywood)


def varimax_criterion(L) -> float:
    p = L.shape[0]
    sq = L ** 2
    return float(np.sum(p * np.sum(sq ** 2, axis=0) - np.sum(sq, axis=0) ** 2) / p ** 2)


def rotate_varimax(L, normalize: bool = True, tol: float = 1e-12, max_sweeps: int = 500, trace=None):
    """
    Varimax rotation by pairwise planar rotations.

    Parameters
    ----------
    L : ndarray, shape (p, k)
    normalize : bool
        Kaiser row normalization during the rotation.
    trace : list, optional
        If given, the criterion after every sweep is appended to it.

    Returns
    -------
    rotated : ndarray
    T : ndarray, shape (k, k)
        Orthogonal matrix with ``rotated = L @ T``.
    """
    L = np.asarray(L, dtype=float)
    p, k = L.shape
    if k < 2:
        return L.copy(), np.eye(k)
    h = np.sqrt(np.sum(L ** 2, axis=1)) if normalize else np.ones(p)
    h = np.where(h > 0, h, 1.0)
    A = L / h[:, None]
    T = np.eye(k)
    crit = varimax_criterion(A)
    for _ in range(max_sweeps):
        for a in range(k - 1):
            for b in range(a + 1, k):
                x, y = A[:, a], A[:, b]
                u = x ** 2 - y ** 2
                v = 2 * x * y
                num = 2 * np.sum(u * v) - 2 * np.sum(u) * np.sum(v) / p
                den = np.sum(u ** 2 - v ** 2) - (np.sum(u) ** 2 - np.sum(v) ** 2) / p
                phi = np.arctan2(num, den) / 4
                if abs(phi) < 1e-15:
                    continue
                c, s = np.cos(phi), np.sin(phi)
                G = np.eye(k)
                G[a, a], G[b, a], G[a, b], G[b, b] = c, s, -s, c
                A = A @ G
                T = T @ G
        new = varimax_criterion(A)
        if trace is not None:
            trace.append(new)
        if new - crit <= tol * max(1.0, abs(crit)):
            crit = new
            break
        crit = new
    return A * h[:, None], T


class PromaxResult(NamedTuple):
    pattern: np.ndarray
    structure: np.ndarray
    phi: np.ndarray
    rotation: np.ndarray


def rotate_promax(L, kappa: int = 4) -> PromaxResult:
    """
    Promax: varimax, then a least-squares fit to the target ``V |V|^(kappa-1)``.

    Returns the pattern, the structure (pattern @ phi), the factor
    correlations and the full transform ``U`` with ``pattern = L @ U``.
    """
    L = np.asarray(L, dtype=float)
    if L.shape[1] < 2:
        raise ValueError("promax needs at least 2 factors")
    V, T = rotate_varimax(L)
    target = V * np.abs(V) ** (kappa - 1)
    VtV = V.T @ V
    if np.linalg.cond(VtV) > 1e12:
        raise AnalysisError("degenerate target: singular normal equations")
    U = linalg.solve(VtV, V.T @ target, assume_a="sym")
    UtU = U.T @ U
    if np.linalg.cond(UtU) > 1e12:
        raise AnalysisError("degenerate target: singular transform")
    d = np.diag(linalg.inv(UtU))
    U = U @ np.diag(np.sqrt(d))
    pattern = V @ U
    full = T @ U
    ui = linalg.inv(full)
    phi = ui @ ui.T
    phi = (phi + phi.T) / 2
    return PromaxResult(pattern, pattern @ phi, phi, full)


class ItemAssignment(NamedTuple):
    factor: int | None
    status: str  # "assigned", "low_loading" or "cross_loading"
    primary: float
    gap: float


def assign_items(pattern, config: EfaConfig = EfaConfig(), item_ids: Sequence[str] | None = None) -> dict:
    """
    Map each item to the factor of its largest absolute loading.

    An item is flagged ``low_loading`` when that loading is below
    ``config.min_loading`` and ``cross_loading`` when any other loading
    exceeds ``config.cross_loading``.
    """
    P = np.atleast_2d(np.asarray(pattern, dtype=float))
    ids = list(item_ids) if item_ids is not None else [f"i{j + 1}" for j in range(P.shape[0])]
    out = {}
    for name, row in zip(ids, np.abs(P)):
        j = int(np.argmax(row))
        primary = float(row[j])
        others = np.delete(row, j)
        second = float(others.max()) if others.size else 0.0
        if primary < config.min_loading:
            out[name] = ItemAssignment(None, "low_loading", primary, primary - second)
        elif others.size and second > config.cross_loading:
            out[name] = ItemAssignment(None, "cross_loading", primary, primary - second)
        else:
            out[name] = ItemAssignment(j, "assigned", primary, primary - second)
    return out


def variance_accounting(pattern):
    """
    Sum of squared pattern loadings per factor and its share of the p items.

    Returns
    -------
    ss, proportion, cumulative : ndarray
    """
    P = np.asarray(pattern, dtype=float)
    ss = np.sum(P ** 2, axis=0)
    prop = ss / P.shape[0]
    return ss, prop, np.cumsum(prop)


def canonicalize(pattern, phi, rotation=None):
    """Order factors by descending SS loadings and make every column sum nonnegative."""
    ss = np.sum(pattern ** 2, axis=0)
    order = np.argsort(-ss, kind="stable")
    signs = np.where(pattern[:, order].sum(axis=0) < 0, -1.0, 1.0)
    P = pattern[:, order] * signs
    Phi = phi[np.ix_(order, order)] * np.outer(signs, signs)
    rot = None if rotation is None else rotation[:, order] * signs
    return P, Phi, rot


@dataclass
class FactorSolution:
    item_ids: tuple
    pattern: np.ndarray
    phi: np.ndarray
    structure: np.ndarray
    communalities: np.ndarray
    uniquenesses: np.ndarray
    eigenvalues: np.ndarray
    ss_loadings: np.ndarray
    proportion_variance: np.ndarray
    cumulative_variance: np.ndarray
    assignment: dict
    rotation: str
    converged: bool
    iterations: int
    fit: float
    heywood: bool
    rotation_matrix: np.ndarray | None = None
    n: int | None = None

    @property
    def n_factors(self) -> int:
        return self.pattern.shape[1]

    def implied_correlation(self) -> np.ndarray:
        S = self.pattern @ self.phi @ self.pattern.T
        S[np.diag_indices_from(S)] += self.uniquenesses
        return S

    def factor_items(self) -> dict:
        """Factor label (F1, F2, ...) -> items assigned to it."""
        out = {f"F{j + 1}": [] for j in range(self.n_factors)}
        for item, a in self.assignment.items():
            if a.status == "assigned":
                out[f"F{a.factor + 1}"].append(item)
        return out

    def to_dict(self) -> dict:
        return {
            "items": list(self.item_ids),
            "n_factors": self.n_factors,
            "rotation": self.rotation,
            "pattern": {i: [float(v) for v in row] for i, row in zip(self.item_ids, self.pattern)},
            "structure": {i: [float(v) for v in row] for i, row in zip(self.item_ids, self.structure)},
            "phi": self.phi.tolist(),
            "communalities": dict(zip(self.item_ids, map(float, self.communalities))),
            "uniquenesses": dict(zip(self.item_ids, map(float, self.uniquenesses))),
            "eigenvalues": [float(v) for v in self.eigenvalues],
            "ss_loadings": [float(v) for v in self.ss_loadings],
            "proportion_variance": [float(v) for v in self.proportion_variance],
            "cumulative_variance": [float(v) for v in self.cumulative_variance],
            "assignment": {i: {"factor": None if a.factor is None else f"F{a.factor + 1}", "status": a.status}
                           for i, a in self.assignment.items()},
            "converged": self.converged,
            "iterations": self.iterations,
            "fit": self.fit,
            "heywood": self.heywood,
            "n": self.n,
        }

    def to_json(self) -> str:
        return json.dumps(self.to_dict(), indent=2, sort_keys=True)


def _rotate(L, config):
    k = L.shape[1]
    if config.rotation == "none" or k == 1:
        return L, np.eye(k), np.eye(k)
    if config.rotation == "varimax":
        V, T = rotate_varimax(L)
        return V, np.eye(k), T
    res = rotate_promax(L, config.promax_kappa)
    return res.pattern, res.phi, res.rotation


def resolve_n_factors(R, config: EfaConfig) -> int:
    if config.n_factors != "auto":
        return int(config.n_factors)
    s = suggest_n_factors(R)
    if not s.converged:
        raise AnalysisError(
            f"eigenvalue rule suggests {s.kaiser} factors but the scree elbow suggests {s.elbow}; "
            "set n_factors explicitly"
        )
    if s.kaiser < 1:
        raise AnalysisError("no factor has an eigenvalue above 1")
    return s.kaiser


def fit_efa(R: CorrelationMatrix, config: EfaConfig = EfaConfig(), n_factors: int | None = None) -> FactorSolution:
    """ML extraction, rotation, canonical ordering and item assignment."""
    k = n_factors if n_factors is not None else resolve_n_factors(R, config)
    ext = extract_ml(R, k, config.max_iter, config.tol)
    pattern, phi, rot = _rotate(ext.loadings, config)
    pattern, phi, rot = canonicalize(pattern, phi, rot)
    structure = pattern @ phi
    communalities = np.einsum("ij,jk,ik->i", pattern, phi, pattern)
    ss, prop, cum = variance_accounting(pattern)
    return FactorSolution(
        item_ids=tuple(R.item_ids),
        pattern=pattern,
        phi=phi,
        structure=structure,
        communalities=communalities,
        uniquenesses=ext.uniquenesses,
        eigenvalues=eigenvalues(R),
        ss_loadings=ss,
        proportion_variance=prop,
        cumulative_variance=cum,
        assignment=assign_items(pattern, config, R.item_ids),
        rotation=config.rotation if k > 1 else "none",
        converged=ext.converged,
        iterations=ext.iterations,
        fit=ext.fit,
        heywood=ext.heywood,
        rotation_matrix=rot,
        n=R.n,
    )


@dataclass(frozen=True)
class ReductionStep:
    item: str | None
    criterion: str  # low_loading, cross_loading, small_factor_collapse, manual
    n_factors: int
    n_items: int
    detail: dict = field(default_factory=dict)

    def to_dict(self) -> dict:
        return {"item": self.item, "criterion": self.criterion, "n_factors": self.n_factors,
                "n_items": self.n_items, "detail": self.detail}


@dataclass
class ReductionResult:
    items: tuple
    trace: list
    solution: FactorSolution

    @property
    def removed(self) -> list:
        return [s.item for s in self.trace if s.item is not None]

    def to_dict(self) -> dict:
        return {"final_items": list(self.items), "trace": [s.to_dict() for s in self.trace],
                "solution": self.solution.to_dict()}


def reduce_items(R: CorrelationMatrix, config: EfaConfig = EfaConfig(), n_factors: int | None = None,
                 keep: Sequence[str] = (), drop: Sequence[str] = ()) -> ReductionResult:
    """
    Iterative a-priori item reduction.

    Manual drops are applied first.  Each round refits the EFA and then
    removes the single weakest low-loading item; once none is left it removes
    the cross-loading item with the smallest gap between its two largest
    loadings.  When a factor keeps fewer than ``min_items_per_factor``
    assigned items the factor count drops by one.  Items in ``keep`` are never
    removed automatically.
    """
    unknown = [i for i in (*keep, *drop) if i not in R.item_ids]
    if unknown:
        raise ValueError(f"unknown items in keep/drop lists: {unknown}")
    k = n_factors if n_factors is not None else resolve_n_factors(R, config)
    items = [i for i in R.item_ids if i not in set(drop)]
    trace = [ReductionStep(i, "manual", k, len(items), {"reason": "drop list"}) for i in R.item_ids if i in set(drop)]
    keep = set(keep)

    while True:
        if len(items) <= k or ml_degrees_of_freedom(len(items), k) < 0:
            raise AnalysisError("reduction exhausted: too few items left for the factor model")
        sol = fit_efa(R.subset(items), config, n_factors=k)
        a = sol.assignment
        low = [i for i in items if a[i].status == "low_loading" and i not in keep]
        if low:
            worst = min(low, key=lambda i: (a[i].primary, items.index(i)))
            items.remove(worst)
            trace.append(ReductionStep(worst, "low_loading", k, len(items), {"max_abs_loading": a[worst].primary}))
            continue
        cross = [i for i in items if a[i].status == "cross_loading" and i not in keep]
        if cross:
            worst = min(cross, key=lambda i: (a[i].gap, items.index(i)))
            items.remove(worst)
            trace.append(ReductionStep(worst, "cross_loading", k, len(items), {"loading_gap": a[worst].gap}))
            continue
        counts = np.bincount([v.factor for v in a.values() if v.status == "assigned"], minlength=k)
        if counts.min() < config.min_items_per_factor:
            if k == 1:
                raise AnalysisError("reduction exhausted: single factor has too few items")
            trace.append(ReductionStep(None, "small_factor_collapse", k - 1, len(items),
                                       {"items_per_factor": counts.tolist()}))
            k -= 1
            continue
        return ReductionResult(tuple(items), trace, sol)
