"""
Confirmatory factor analysis with normal-theory and Satorra-Bentler statistics.

The model covariance is ``Sigma = Lambda Phi Lambda' + Psi`` with each item
loading on exactly one factor.  Parameters are estimated by minimizing the ML
discrepancy with :func:`fuscale.optimize.minimize_bfgs` using the analytic
gradient ``Delta' vech_w(Sigma^-1 - Sigma^-1 S Sigma^-1)``, where Delta is the
Jacobian of the non-duplicated covariance elements.
"""

from __future__ import annotations

import json
import warnings
from dataclasses import dataclass
from typing import NamedTuple, Sequence

import numpy as np
from scipy import linalg

from .corrstats import CorrelationMatrix, chi_square_sf
from .exceptions import AnalysisError, NotPositiveDefiniteError
from .instruments import InstrumentDefinition
from .optimize import minimize_bfgs

HEYWOOD_BOUND = 1e-3


def vech_indices(p: int):
    """Row/column indices of the lower triangle, column by column."""
    rows, cols = [], []
    for j in range(p):
        for i in range(j, p):
            rows.append(i)
            cols.append(j)
    return np.array(rows), np.array(cols)


def vech(A) -> np.ndarray:
    r, c = vech_indices(A.shape[0])
    return A[r, c]


def duplication_matrix(p: int) -> np.ndarray:
    """D with vec(A) = D vech(A) for symmetric A (vec is column-major)."""
    r, c = vech_indices(p)
    D = np.zeros((p * p, len(r)))
    for k, (i, j) in enumerate(zip(r, c)):
        D[j * p + i, k] = 1.0
        D[i * p + j, k] = 1.0
    return D


@dataclass(frozen=True)
class CfaModel:
    """
    Simple-structure CFA model.

    ``factors`` may be empty, which gives the independence (baseline) model
    with free variances and zero covariances.
    """

    items: tuple
    factors: tuple
    loading_map: dict
    markers: dict
    identification: str = "marker"

    @property
    def p(self) -> int:
        return len(self.items)

    @property
    def k(self) -> int:
        return len(self.factors)

    def factor_items(self, factor) -> list:
        return [i for i in self.items if self.loading_map[i] == factor]

    @property
    def free_loadings(self) -> list:
        """(item index, factor index) of every free loading."""
        out = []
        if not self.factors:
            return out
        for i, item in enumerate(self.items):
            f = self.factors.index(self.loading_map[item])
            if self.identification == "variance" or self.markers[self.loading_map[item]] != item:
                out.append((i, f))
        return out

    @property
    def free_phi(self) -> list:
        """(f, g) with f >= g of every free factor (co)variance."""
        out = []
        for g in range(self.k):
            for f in range(g, self.k):
                if self.identification == "variance" and f == g:
                    continue
                out.append((f, g))
        return out

    @property
    def n_free(self) -> int:
        return len(self.free_loadings) + len(self.free_phi) + self.p

    @property
    def df(self) -> int:
        return self.p * (self.p + 1) // 2 - self.n_free

    @property
    def labels(self) -> list:
        lab = [f"{self.factors[f]}=~{self.items[i]}" for i, f in self.free_loadings]
        lab += [f"{self.factors[g]}~~{self.factors[f]}" for f, g in self.free_phi]
        lab += [f"{item}~~{item}" for item in self.items]
        return lab

    def unpack(self, theta):
        theta = np.asarray(theta, dtype=float)
        L = np.zeros((self.p, self.k))
        if self.identification == "marker":
            for f, name in enumerate(self.factors):
                L[self.items.index(self.markers[name]), f] = 1.0
        nl = len(self.free_loadings)
        for t, (i, f) in zip(theta[:nl], self.free_loadings):
            L[i, f] = t
        Phi = np.eye(self.k)
        nphi = len(self.free_phi)
        for t, (f, g) in zip(theta[nl:nl + nphi], self.free_phi):
            Phi[f, g] = Phi[g, f] = t
        psi = theta[nl + nphi:]
        return L, Phi, psi

    def implied(self, theta) -> np.ndarray:
        L, Phi, psi = self.unpack(theta)
        Sigma = L @ Phi @ L.T
        Sigma[np.diag_indices(self.p)] += psi
        return Sigma

    def jacobian(self, theta) -> np.ndarray:
        """Delta: d vech(Sigma) / d theta, shape (p*, q)."""
        L, Phi, _ = self.unpack(theta)
        p = self.p
        LPhi = L @ Phi
        cols = []
        for i, f in self.free_loadings:
            M = np.zeros((p, p))
            M[i, :] = LPhi[:, f]
            cols.append(vech(M + M.T))
        for f, g in self.free_phi:
            M = np.outer(L[:, f], L[:, g])
            cols.append(vech(M + M.T if f != g else M))
        for i in range(p):
            M = np.zeros((p, p))
            M[i, i] = 1.0
            cols.append(vech(M))
        return np.column_stack(cols) if cols else np.zeros((p * (p + 1) // 2, 0))

    def lower_bounds(self) -> np.ndarray:
        lo = np.full(self.n_free, -np.inf)
        lo[-self.p:] = HEYWOOD_BOUND
        return lo

    def start_values(self, S) -> np.ndarray:
        s = np.diag(S)
        vals = []
        for i, f in self.free_loadings:
            if self.identification == "marker":
                m = self.items.index(self.markers[self.factors[f]])
                vals.append(0.7 * np.sqrt(s[i] / s[m]))
            else:
                vals.append(0.7 * np.sqrt(s[i]))
        for f, g in self.free_phi:
            if f == g:
                m = self.items.index(self.markers[self.factors[f]])
                vals.append(0.5 * s[m])
            else:
                vals.append(0.0)
        vals.extend(0.5 * s)
        return np.array(vals, dtype=float)

    def permuted(self, order: Sequence[str]) -> "CfaModel":
        return CfaModel(tuple(order), self.factors, self.loading_map, self.markers, self.identification)

    def to_dict(self) -> dict:
        return {"items": list(self.items), "factors": list(self.factors), "loading_map": dict(self.loading_map),
                "markers": dict(self.markers), "identification": self.identification, "df": self.df,
                "n_free": self.n_free}


def build_cfa(items, structure: dict | None = None, markers: dict | None = None,
              identification: str = "marker", factors: Sequence[str] | None = None) -> CfaModel:
    """
    Build a simple-structure CFA model.

    Parameters
    ----------
    items : InstrumentDefinition or sequence of item ids
        With an instrument and no ``structure``, the instrument's subscales
        become the factors.
    structure : dict, optional
        Item id -> factor name.
    markers : dict, optional
        Factor name -> marker item.  Defaults to each factor's first item.
    identification : {"marker", "variance"}
    factors : sequence, optional
        Explicit factor order; every listed factor must receive items.
    """
    if isinstance(items, InstrumentDefinition):
        if structure is None:
            structure = items.structure()
        items = [i for i in items.item_ids if i in structure]
    items = tuple(items)
    if structure is None:
        raise ValueError("structure is required when items are given as ids")
    missing = [i for i in items if i not in structure]
    if missing:
        raise ValueError(f"items without a factor: {missing}")
    if identification not in ("marker", "variance"):
        raise ValueError("identification must be 'marker' or 'variance'")
    order = []
    for i in items:
        if structure[i] not in order:
            order.append(structure[i])
    if factors is not None:
        for f in factors:
            if f not in order:
                raise ValueError(f"factor {f!r} has zero items")
        order = list(factors)
    loading_map = {i: structure[i] for i in items}
    mk = {}
    for f in order:
        members = [i for i in items if loading_map[i] == f]
        if len(members) < 2:
            raise ValueError(f"factor {f!r} needs at least 2 items for identification")
        if len(members) < 3:
            warnings.warn(f"factor {f!r} has only {len(members)} items; estimates may be unstable", stacklevel=2)
        m = (markers or {}).get(f, members[0])
        if m not in members:
            raise ValueError(f"marker {m!r} does not load on {f!r}")
        mk[f] = m
    model = CfaModel(items, tuple(order), loading_map, mk, identification)
    if model.df < 0:
        raise AnalysisError(f"model has negative degrees of freedom ({model.df})")
    return model


def independence_model(items: Sequence[str]) -> CfaModel:
    return CfaModel(tuple(items), (), {i: None for i in items}, {}, "marker")


def one_factor_model(items: Sequence[str], name: str = "F") -> CfaModel:
    return build_cfa(list(items), {i: name for i in items})


def load_structure(path) -> dict:
    """
    Read a model specification JSON.

    Accepted layouts: ``{"loadings": {item: factor}, "markers": {factor: item}}``
    or ``{"factors": {factor: [items]}, "markers": {...}}``.
    """
    with open(path, encoding="utf-8") as fh:
        d = json.load(fh)
    if "loadings" in d:
        structure = dict(d["loadings"])
    elif "factors" in d:
        structure = {i: f for f, members in d["factors"].items() for i in members}
    else:
        structure = {k: v for k, v in d.items() if isinstance(v, str)}
    return {"structure": structure, "markers": d.get("markers"), "identification": d.get("identification", "marker")}


def ml_discrepancy(S, Sigma) -> float:
    try:
        c = linalg.cho_factor(Sigma, lower=True)
    except linalg.LinAlgError:
        return np.inf
    ld_sigma = 2 * np.log(np.diag(c[0])).sum()
    ld_s = np.linalg.slogdet(S)[1]
    return float(ld_sigma + np.trace(linalg.cho_solve(c, S)) - ld_s - S.shape[0])


def _weighted_vech(G):
    W = 2 * G
    W[np.diag_indices_from(W)] = np.diag(G)
    return vech(W)


def ml_gradient(model: CfaModel, theta, S) -> np.ndarray:
    Sigma = model.implied(theta)
    Si = linalg.inv(Sigma)
    G = Si - Si @ S @ Si
    return model.jacobian(theta).T @ _weighted_vech(G)


def standardized_residuals(S, Sigma) -> np.ndarray:
    d = np.sqrt(np.diag(S))
    return (S - Sigma) / np.outer(d, d)


class FitIndices(NamedTuple):
    cfi: float | None
    tli: float | None
    rmsea: float
    srmr: float | None


def fit_indices(T, df, T_base, df_base, n, residuals=None) -> FitIndices:
    """
    CFI, TLI, RMSEA and SRMR.

    CFI and TLI are ``None`` when the baseline does not misfit
    (``T_base <= df_base``).  SRMR is the root mean square of the standardized
    residuals over the p(p+1)/2 non-duplicated entries.
    """
    if df <= 0 or df_base <= 0:
        raise ValueError("df and df_base must be positive")
    if T_base <= df_base:
        cfi = tli = None
    else:
        denom = max(T_base - df_base, T - df, 0.0)
        cfi = 1.0 - max(T - df, 0.0) / denom if denom > 0 else 1.0
        tli = ((T_base / df_base) - (T / df)) / ((T_base / df_base) - 1.0)
    rmsea = float(np.sqrt(max(T - df, 0.0) / (df * (n - 1))))
    srmr = None
    if residuals is not None:
        srmr = float(np.sqrt(np.mean(vech(np.asarray(residuals)) ** 2)))
    return FitIndices(cfi, tli, rmsea, srmr)


@dataclass
class RobustBlock:
    scaling_factor: float
    T_scaled: float
    p_value: float
    baseline_scaling_factor: float
    baseline_T_scaled: float
    cfi: float | None
    tli: float | None
    rmsea: float

    def to_dict(self) -> dict:
        return dict(self.__dict__)


@dataclass
class CfaFit:
    model: CfaModel
    estimates: np.ndarray
    S: np.ndarray
    n: int
    n_eff: int
    F: float
    T: float
    df: int
    p_value: float | None
    baseline_T: float
    baseline_df: int
    indices: FitIndices
    converged: bool
    iterations: int
    gradient_max: float
    heywood: list
    analyzed: str
    baseline_estimates: np.ndarray | None = None
    robust: RobustBlock | None = None

    @property
    def Sigma(self) -> np.ndarray:
        return self.model.implied(self.estimates)

    @property
    def parameters(self) -> dict:
        return dict(zip(self.model.labels, map(float, self.estimates)))

    def to_dict(self) -> dict:
        d = {
            "model": self.model.to_dict(),
            "analyzed": self.analyzed,
            "n": self.n,
            "parameters": self.parameters,
            "chi2": self.T,
            "df": self.df,
            "p": self.p_value,
            "baseline": {"chi2": self.baseline_T, "df": self.baseline_df},
            "naive": self.indices._asdict(),
            "converged": self.converged,
            "iterations": self.iterations,
            "gradient_max": self.gradient_max,
            "heywood": list(self.heywood),
        }
        if self.model.k:
            std = standardize(self)
            d["standardized"] = {
                "loadings_std_lv": dict(zip(self.model.items, map(float, std.loadings_lv))),
                "loadings_std_all": dict(zip(self.model.items, map(float, std.loadings_all))),
                "factor_correlations": std.factor_correlations.tolist(),
            }
        d["robust"] = self.robust.to_dict() if self.robust is not None else None
        return d

    def to_json(self) -> str:
        return json.dumps(self.to_dict(), indent=2, sort_keys=True)


def _as_cov(S):
    if isinstance(S, CorrelationMatrix):
        return S.values, "correlation", S.n
    M = np.asarray(S, dtype=float)
    is_corr = np.allclose(np.diag(M), 1.0)
    return M, ("correlation" if is_corr else "covariance"), None


def _estimate(model: CfaModel, S, max_iter, gtol):
    def fun(t):
        return ml_discrepancy(S, model.implied(t))

    def grad(t):
        return ml_gradient(model, t, S)

    res = minimize_bfgs(fun, grad, model.start_values(S), lower=model.lower_bounds(), max_iter=max_iter, gtol=gtol)
    return res


def fit_ml(model: CfaModel, S, n: int | None = None, multiplier: str = "n-1", max_iter: int = 5000,
           gtol: float = 1e-9) -> CfaFit:
    """
    Normal-theory maximum-likelihood CFA.

    Parameters
    ----------
    model : CfaModel
    S : CorrelationMatrix or ndarray
        Covariance matrix in ``model.items`` order.  A correlation matrix is
        analysed as if it were a covariance matrix; the fit records this in
        ``analyzed``.
    n : int
        Sample size (taken from a CorrelationMatrix when omitted).
    multiplier : {"n-1", "n"}
        Chi-square is ``(n - 1) F`` or ``n F`` at the minimum.
    """
    M, analyzed, n_from = _as_cov(S)
    n = n if n is not None else n_from
    if n is None:
        raise ValueError("sample size n is required")
    p = M.shape[0]
    if p != model.p:
        raise ValueError("S dimension does not match the model")
    if n <= p:
        raise ValueError("n must exceed the number of items")
    if np.linalg.eigvalsh(M).min() <= 0:
        raise NotPositiveDefiniteError("sample covariance matrix is not positive definite")
    n_eff = n - 1 if multiplier == "n-1" else n

    res = _estimate(model, M, max_iter, gtol)
    F = float(res.fun)
    T = n_eff * F

    base = independence_model(model.items)
    bres = _estimate(base, M, max_iter, gtol)
    T_base = n_eff * float(bres.fun)
    df_base = base.df

    df = model.df
    p_value = chi_square_sf(max(T, 0.0), df) if df > 0 else None
    Sigma = model.implied(res.x)
    if df > 0:
        indices = fit_indices(T, df, T_base, df_base, n_eff + 1, standardized_residuals(M, Sigma))
    else:
        indices = FitIndices(None, None, 0.0, float(np.sqrt(np.mean(vech(standardized_residuals(M, Sigma)) ** 2))))
    psi = res.x[-p:]
    heywood = [item for item, v in zip(model.items, psi) if v <= HEYWOOD_BOUND * (1 + 1e-6)]
    return CfaFit(
        model=model, estimates=res.x, S=M, n=n, n_eff=n_eff, F=F, T=T, df=df, p_value=p_value,
        baseline_T=T_base, baseline_df=df_base, indices=indices, converged=res.converged,
        iterations=res.iterations, gradient_max=res.projected_grad_max, heywood=heywood,
        analyzed=analyzed, baseline_estimates=bres.x,
    )


class StandardizedSolution(NamedTuple):
    loadings_lv: np.ndarray
    loadings_all: np.ndarray
    factor_correlations: np.ndarray


def standardize(fit: CfaFit) -> StandardizedSolution:
    """
    Rescale to unit factor variances (``loadings_lv``) and additionally to
    unit item variances (``loadings_all``); factor covariances become
    correlations.
    """
    model = fit.model
    L, Phi, _ = model.unpack(fit.estimates)
    fv = np.diag(Phi)
    if np.any(fv <= 0):
        raise AnalysisError("nonpositive factor variance estimate")
    Sigma = fit.Sigma
    iv = np.diag(Sigma)
    if np.any(iv <= 0):
        raise AnalysisError("nonpositive item variance estimate")
    lv = np.array([L[i, model.factors.index(model.loading_map[item])] for i, item in enumerate(model.items)])
    sd_f = np.sqrt(fv)
    owner = [model.factors.index(model.loading_map[item]) for item in model.items]
    lv = lv * sd_f[owner]
    return StandardizedSolution(lv, lv / np.sqrt(iv), Phi / np.outer(sd_f, sd_f))


@dataclass(frozen=True)
class GammaMatrix:
    values: np.ndarray
    n: int
    p: int


def _centered(raw):
    X = np.asarray(getattr(raw, "values", raw), dtype=float)
    if np.isnan(X).any():
        raise ValueError("raw data contains missing cells; apply listwise deletion first")
    if X.ndim != 2 or X.shape[0] < 2:
        raise ValueError("raw data must be an n x p matrix with n >= 2")
    if np.any(X.std(axis=0) == 0):
        raise ValueError("raw data has a constant column")
    return X - X.mean(axis=0)


def estimate_gamma(raw, chunk_size: int | None = None) -> GammaMatrix:
    """
    Distribution-free estimate of the asymptotic covariance of the sample
    covariances: ``m_ijkl - s_ij s_kl`` with 1/n moments.

    Cases are accumulated in chunks of ``chunk_size`` rows.
    """
    Z = _centered(raw)
    n, p = Z.shape
    if n <= p * (p + 1) // 2:
        warnings.warn("fewer cases than non-duplicated covariances; Gamma is rank deficient", stacklevel=2)
    r, c = vech_indices(p)
    step = chunk_size or n
    total = np.zeros(len(r))
    cross = np.zeros((len(r), len(r)))
    for start in range(0, n, step):
        block = Z[start:start + step]
        V = block[:, r] * block[:, c]
        total += V.sum(axis=0)
        cross += V.T @ V
    s = total / n
    G = cross / n - np.outer(s, s)
    return GammaMatrix((G + G.T) / 2, n, p)


def normal_theory_gamma(Sigma) -> np.ndarray:
    """``2 D+ (Sigma kron Sigma) D+'``, the Gamma of a multivariate normal population."""
    p = Sigma.shape[0]
    D = duplication_matrix(p)
    Dp = linalg.pinv(D)
    return 2 * Dp @ np.kron(Sigma, Sigma) @ Dp.T


def normal_theory_weight(Sigma) -> np.ndarray:
    p = Sigma.shape[0]
    D = duplication_matrix(p)
    Si = linalg.inv(Sigma)
    return 0.5 * D.T @ np.kron(Si, Si) @ D


def _scaling(model: CfaModel, theta, gamma_values):
    Sigma = model.implied(theta)
    W = normal_theory_weight(Sigma)
    Delta = model.jacobian(theta)
    WD = W @ Delta
    U = W - WD @ linalg.solve(Delta.T @ WD, WD.T, assume_a="sym")
    return float(np.trace(U @ gamma_values)) / model.df


def satorra_bentler(fit: CfaFit, gamma: GammaMatrix | np.ndarray, model: CfaModel | None = None) -> RobustBlock:
    """
    Satorra-Bentler scaled chi-square and robust fit indices.

    The scaling factor is ``tr(U Gamma) / df`` with
    ``U = W - W Delta (Delta' W Delta)^-1 Delta' W`` evaluated at the
    estimates.  The baseline statistic is rescaled the same way for the
    robust CFI and TLI.  The block is also stored on ``fit.robust``.
    """
    model = model or fit.model
    G = gamma.values if isinstance(gamma, GammaMatrix) else np.asarray(gamma, dtype=float)
    if G.shape[0] != model.p * (model.p + 1) // 2:
        raise ValueError("Gamma dimension does not match the model")
    if model.df <= 0:
        raise AnalysisError("scaling needs positive degrees of freedom")
    c = _scaling(model, fit.estimates, G)
    if not c > 0:
        raise AnalysisError(f"invalid scaling factor {c}")
    base = independence_model(model.items)
    cb = _scaling(base, fit.baseline_estimates, G)
    if not cb > 0:
        raise AnalysisError(f"invalid baseline scaling factor {cb}")
    T_s = fit.T / c
    Tb_s = fit.baseline_T / cb
    idx = fit_indices(T_s, model.df, Tb_s, base.df, fit.n_eff + 1)
    block = RobustBlock(c, T_s, chi_square_sf(T_s, model.df), cb, Tb_s, idx.cfi, idx.tli, idx.rmsea)
    fit.robust = block
    return block


class ScaledDifference(NamedTuple):
    T_d: float
    df_d: int
    p: float
    c_d: float
    unscaled: float


class ScaledDifferenceError(AnalysisError):
    def __init__(self, message, unscaled, df_d):
        super().__init__(message)
        self.unscaled = unscaled
        self.df_d = df_d


def scaled_chisq_diff(fit_restricted: CfaFit, fit_full: CfaFit) -> ScaledDifference:
    """
    Satorra-Bentler scaled chi-square difference between nested models.

    Uses each fit's robust scaling factor (1 when no robust block is attached).
    """
    df0, df1 = fit_restricted.df, fit_full.df
    if df0 <= df1:
        raise ValueError("restricted model must have more degrees of freedom than the full model")
    if fit_restricted.n != fit_full.n:
        raise ValueError("models were fitted to different samples")
    c0 = fit_restricted.robust.scaling_factor if fit_restricted.robust else 1.0
    c1 = fit_full.robust.scaling_factor if fit_full.robust else 1.0
    diff = fit_restricted.T - fit_full.T
    df_d = df0 - df1
    c_d = (df0 * c0 - df1 * c1) / df_d
    if c_d <= 0:
        raise ScaledDifferenceError(f"scaled difference undefined (c_d = {c_d:.4g}); unscaled difference {diff:.4f}",
                                    diff, df_d)
    T_d = diff / c_d
    return ScaledDifference(T_d, df_d, chi_square_sf(max(T_d, 0.0), df_d), c_d, diff)
