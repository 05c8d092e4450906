"""Subscale reliability and per-feature understandability scores."""

from __future__ import annotations

import csv
import io
import json
import warnings
from dataclasses import asdict, dataclass, replace
from typing import Sequence

import numpy as np

from .instruments import InstrumentDefinition


def _loadings(loadings) -> np.ndarray:
    lam = np.asarray(loadings, dtype=float).ravel()
    if lam.size == 0:
        raise ValueError("empty loading list")
    if lam.size < 2:
        raise ValueError("at least 2 items are required")
    if np.any(np.abs(lam) > 1 + 1e-12):
        raise ValueError("standardized loadings must satisfy |loading| <= 1")
    return lam


def mcdonald_omega(loadings, uniquenesses=None) -> float:
    """
    McDonald's omega of a congeneric subscale.

    Parameters
    ----------
    loadings : array_like
        Standardized loadings of the subscale's items on their factor.
    uniquenesses : array_like, optional
        Defaults to ``1 - loadings**2``.

    Returns
    -------
    float
        ``(sum l)^2 / ((sum l)^2 + sum psi)``.
    """
    lam = _loadings(loadings)
    psi = 1.0 - lam**2 if uniquenesses is None else np.asarray(uniquenesses, dtype=float)
    common = lam.sum() ** 2
    total = common + psi.sum()
    return float(common / total) if total > 0 else 0.0


def ave(loadings) -> float:
    """Average variance extracted: the mean squared standardized loading."""
    return float(np.mean(_loadings(loadings) ** 2))


def cronbach_alpha(R) -> float:
    """Standardized alpha ``k rbar / (1 + (k - 1) rbar)`` from a correlation block."""
    R = np.asarray(getattr(R, "values", R), dtype=float)
    k = R.shape[0]
    if k < 2:
        raise ValueError("alpha needs at least 2 items")
    rbar = (R.sum() - np.trace(R)) / (k * (k - 1))
    return float(k * rbar / (1 + (k - 1) * rbar))


@dataclass
class FactorReliability:
    factor: str
    items: list
    omega: float
    ave: float
    alpha: float | None


@dataclass
class ReliabilityReport:
    stage: str
    factors: list

    def to_dict(self) -> dict:
        return {"stage": self.stage, "factors": [asdict(f) for f in self.factors]}

    def by_factor(self) -> dict:
        return {f.factor: f for f in self.factors}


def reliability_report(groups: dict, R=None, stage: str = "efa", uniquenesses: dict | None = None) -> ReliabilityReport:
    """
    Omega, AVE and (with a correlation matrix) alpha for each factor.

    Parameters
    ----------
    groups : dict
        Factor name -> (item ids, standardized loadings).
    R : CorrelationMatrix, optional
        Supplies the item correlations for alpha.
    uniquenesses : dict, optional
        Factor name -> uniquenesses, overriding ``1 - loading**2``.
    """
    out = []
    for name, (items, lam) in groups.items():
        alpha = cronbach_alpha(R.subset(list(items))) if R is not None else None
        psi = None if uniquenesses is None else uniquenesses.get(name)
        out.append(FactorReliability(name, list(items), mcdonald_omega(lam, psi), ave(lam), alpha))
    return ReliabilityReport(stage, out)


def efa_reliability(solution, R=None) -> ReliabilityReport:
    """Reliability of each EFA factor from the items assigned to it."""
    groups = {}
    for j, (name, items) in enumerate(solution.factor_items().items()):
        if len(items) < 2:
            continue
        idx = [solution.item_ids.index(i) for i in items]
        groups[name] = (items, solution.pattern[idx, j])
    return reliability_report(groups, R, stage="efa")


def cfa_reliability(fit, R=None) -> ReliabilityReport:
    """Reliability from completely standardized CFA loadings."""
    from .cfa import standardize

    std = standardize(fit)
    model = fit.model
    groups = {}
    for f in model.factors:
        items = model.factor_items(f)
        idx = [model.items.index(i) for i in items]
        groups[f] = (items, std.loadings_all[idx])
    return reliability_report(groups, R, stage="cfa")


@dataclass(frozen=True)
class UnderstandabilityScore:
    feature_id: str
    instrument_id: str
    subscales: dict
    overall: float
    n_ratings: int
    rank: int | None = None

    def to_dict(self) -> dict:
        return asdict(self)


def score_features(records, instrument: InstrumentDefinition, features: Sequence[str] | None = None) -> list:
    """
    Mean Likert response per feature, overall and per subscale.

    Only records of ``instrument`` are used and missing responses are skipped.
    Features listed in ``features`` without any retained rating are left out
    with a warning.
    """
    by_feature: dict = {}
    for r in records:
        if r.instrument_id == instrument.id:
            by_feature.setdefault(r.feature_id, []).append(r)
    wanted = list(features) if features is not None else sorted(by_feature)
    scores = []
    for fid in wanted:
        recs = by_feature.get(fid, [])
        if not recs:
            warnings.warn(f"feature {fid!r} has no retained ratings; excluded", stacklevel=2)
            continue
        subs = {}
        for sub in instrument.subscales:
            idx = [it.index for it in instrument.subscale_items(sub.id)]
            vals = [r.responses.get(k) for r in recs for k in idx]
            vals = [v for v in vals if v is not None]
            subs[sub.id] = float(np.mean(vals)) if vals else None
        allv = [r.responses.get(it.index) for r in recs for it in instrument.items]
        allv = [v for v in allv if v is not None]
        if not allv:
            warnings.warn(f"feature {fid!r} has no answered items; excluded", stacklevel=2)
            continue
        scores.append(UnderstandabilityScore(fid, instrument.id, subs, float(np.mean(allv)), len(recs)))
    return scores


def rank_features(scores: Sequence[UnderstandabilityScore]) -> list:
    """Sort by descending overall mean (ties by ascending feature id) and assign ranks 1..m."""
    ordered = sorted(scores, key=lambda s: (-s.overall, s.feature_id))
    return [replace(s, rank=i) for i, s in enumerate(ordered, start=1)]


def scores_to_csv(scores: Sequence[UnderstandabilityScore], subscales: Sequence[str] | None = None) -> str:
    if subscales is None:
        subscales = []
        for s in scores:
            subscales.extend(k for k in s.subscales if k not in subscales)
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(["feature_id", "instrument", *subscales, "overall", "n_ratings", "rank"])
    for s in scores:
        cells = ["" if s.subscales.get(k) is None else f"{s.subscales[k]:.6f}" for k in subscales]
        w.writerow([s.feature_id, s.instrument_id, *cells, f"{s.overall:.6f}", s.n_ratings,
                    "" if s.rank is None else s.rank])
    return buf.getvalue()


def scores_to_json(scores: Sequence[UnderstandabilityScore]) -> str:
    return json.dumps([s.to_dict() for s in scores], indent=2, sort_keys=True)
