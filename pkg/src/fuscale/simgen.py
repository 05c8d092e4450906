"""
Synthetic Likert respondents from known factor models.

Latent responses follow a standardized Gaussian factor model and are cut into
five ordered categories (a Gaussian copula with thresholds).  Every feature
draws from its own random stream, seeded by ``SeedSequence([seed,
crc32(feature_id)])``, so a feature's data do not depend on which other
features are generated or in which order.  Respondent allocation, attention
failures and durations use further named streams derived the same way.
"""

from __future__ import annotations

import json
import zlib
from dataclasses import dataclass
from importlib import resources
from os import PathLike
from typing import Mapping, Sequence

import numpy as np
from scipy import stats

from .exceptions import ConfigError
from .ingest import RatingRecord
from .instruments import BUILTIN_INSTRUMENTS, FEATURES, get_instrument

DEFAULT_THRESHOLDS = (-2.0, -1.2, -0.3, 0.9)
SYMMETRIC_THRESHOLDS = (-1.5, -0.5, 0.5, 1.5)


def _stream(seed: int, *keys) -> np.random.Generator:
    entropy = [int(seed) & 0xFFFFFFFFFFFFFFFF] + [zlib.crc32(str(k).encode("utf-8")) for k in keys]
    return np.random.default_rng(np.random.SeedSequence(entropy))


def psd_sqrt(phi) -> np.ndarray:
    """Symmetric square root of a PSD matrix; raises on negative eigenvalues."""
    w, V = np.linalg.eigh(phi)
    if w.min() < -1e-10:
        raise ValueError("factor correlation matrix is not positive semidefinite")
    return (V * np.sqrt(np.clip(w, 0, None))) @ V.T


@dataclass
class PopulationModel:
    """
    Standardized factor model with Likert cut points.

    ``uniquenesses`` defaults to ``1 - diag(L Phi L')``.  ``thresholds`` is one
    increasing row of four cut points per item (a single row is broadcast).
    """

    loadings: np.ndarray
    phi: np.ndarray
    thresholds: np.ndarray = None
    uniquenesses: np.ndarray = None
    item_ids: tuple = None
    seed: int = 0

    def __post_init__(self):
        self.loadings = np.atleast_2d(np.asarray(self.loadings, dtype=float))
        p, k = self.loadings.shape
        self.phi = np.atleast_2d(np.asarray(self.phi, dtype=float))
        if self.phi.shape != (k, k) or not np.allclose(self.phi, self.phi.T):
            raise ValueError("phi must be a symmetric k x k matrix")
        if not np.allclose(np.diag(self.phi), 1.0):
            raise ValueError("phi must have a unit diagonal")
        psd_sqrt(self.phi)
        common = np.einsum("ij,jk,ik->i", self.loadings, self.phi, self.loadings)
        if self.uniquenesses is None:
            if np.any(common > 1 + 1e-12):
                raise ValueError("communality above 1")
            self.uniquenesses = np.clip(1.0 - common, 0.0, None)
        self.uniquenesses = np.asarray(self.uniquenesses, dtype=float)
        if self.uniquenesses.shape != (p,) or np.any(self.uniquenesses < 0):
            raise ValueError("uniquenesses must be p nonnegative values")
        if not np.allclose(common + self.uniquenesses, 1.0, atol=1e-8):
            raise ValueError("model must be standardized: diag(L Phi L') + psi = 1")
        t = DEFAULT_THRESHOLDS if self.thresholds is None else self.thresholds
        t = np.atleast_2d(np.asarray(t, dtype=float))
        if t.shape[0] == 1:
            t = np.repeat(t, p, axis=0)
        validate_thresholds(t)
        if t.shape[0] != p:
            raise ValueError("need one threshold row per item")
        self.thresholds = t
        if self.item_ids is None:
            self.item_ids = tuple(f"i{j + 1}" for j in range(p))
        self.item_ids = tuple(self.item_ids)
        if len(self.item_ids) != p:
            raise ValueError("item_ids length must equal the number of items")
        if not 0 <= int(self.seed) < 2**64:
            raise ValueError("seed must be a 64-bit unsigned integer")

    @property
    def p(self) -> int:
        return self.loadings.shape[0]

    @property
    def k(self) -> int:
        return self.loadings.shape[1]

    def correlation(self) -> np.ndarray:
        S = self.loadings @ self.phi @ self.loadings.T
        S[np.diag_indices(self.p)] += self.uniquenesses
        return S

    def shifted(self, delta: float) -> "PopulationModel":
        """Same model with every latent mean moved by ``delta`` (thresholds move by ``-delta``)."""
        return PopulationModel(self.loadings, self.phi, self.thresholds - delta, self.uniquenesses, self.item_ids,
                               self.seed)

    def expected_item_means(self) -> np.ndarray:
        """Exact expected Likert response per item: ``1 + sum_c P(v > t_c)``."""
        return 1.0 + stats.norm.sf(self.thresholds).sum(axis=1)

    def to_dict(self) -> dict:
        return {"loadings": self.loadings.tolist(), "phi": self.phi.tolist(),
                "thresholds": self.thresholds.tolist(), "uniquenesses": self.uniquenesses.tolist(),
                "item_ids": list(self.item_ids), "seed": int(self.seed)}

    @classmethod
    def from_dict(cls, d: dict) -> "PopulationModel":
        return cls(d["loadings"], d["phi"], d.get("thresholds"), d.get("uniquenesses"), d.get("item_ids"),
                   d.get("seed", 0))


def validate_thresholds(thresholds) -> np.ndarray:
    t = np.atleast_2d(np.asarray(thresholds, dtype=float))
    if not np.all(np.isfinite(t)):
        raise ValueError("thresholds must be finite")
    if t.shape[1] and np.any(np.diff(t, axis=1) <= 0):
        raise ValueError("thresholds must be strictly increasing")
    return t


def generate_factor_data(model: PopulationModel, n: int, seed: int | None = None,
                         rng: np.random.Generator | None = None) -> np.ndarray:
    """
    Draw ``n`` latent response vectors from ``model``.

    Factor scores are ``Z Phi^(1/2)`` for standard normal ``Z``; errors have
    variances ``psi``.  With neither ``rng`` nor ``seed`` the model's seed is used.
    """
    if n < 1:
        raise ValueError("n must be at least 1")
    if rng is None:
        rng = np.random.default_rng(model.seed if seed is None else seed)
    scores = rng.standard_normal((n, model.k)) @ psd_sqrt(model.phi)
    errors = rng.standard_normal((n, model.p)) * np.sqrt(model.uniquenesses)
    return scores @ model.loadings.T + errors


def discretize_likert(data, thresholds) -> np.ndarray:
    """Map latent values to ``1 + (number of cut points below the value)``."""
    X = np.asarray(data, dtype=float)
    t = validate_thresholds(thresholds)
    if t.shape[0] == 1:
        t = np.repeat(t, X.shape[-1] if X.ndim > 1 else 1, axis=0)
    if X.ndim == 1:
        return 1 + (X[:, None] > t[0][None, :]).sum(axis=1)
    if t.shape[0] != X.shape[1]:
        raise ValueError("need one threshold row per column")
    return 1 + (X[:, :, None] > t[None, :, :]).sum(axis=2)


@dataclass
class FeatureSpec:
    """A feature to simulate: its instrument and its latent mean shift."""

    id: str
    instrument_id: str
    shift: float = 0.0


@dataclass
class FixtureSpec:
    """
    Everything needed to regenerate a rating fixture.

    ``models`` maps instrument id to the population model of that instrument;
    each feature uses its instrument's model shifted by the feature's shift.
    ``attention_failures`` (instrument id -> exact count) overrides
    ``attention_fail_rate`` when given.
    """

    models: dict
    features: list
    seed: int = 0
    attention_fail_rate: float = 0.0
    attention_failures: dict | None = None
    ratings_per_respondent: int = 3
    duration_median: float = 170.0
    duration_sigma: float = 0.5
    respondent_prefix: str = "R"

    def to_dict(self) -> dict:
        return {
            "seed": int(self.seed),
            "models": {k: m.to_dict() for k, m in sorted(self.models.items())},
            "features": [{"id": f.id, "instrument": f.instrument_id, "shift": f.shift} for f in self.features],
            "attention_fail_rate": self.attention_fail_rate,
            "attention_failures": self.attention_failures,
            "ratings_per_respondent": self.ratings_per_respondent,
            "duration_median": self.duration_median,
            "duration_sigma": self.duration_sigma,
            "respondent_prefix": self.respondent_prefix,
        }

    def to_json(self) -> str:
        return json.dumps(self.to_dict(), indent=2, sort_keys=True)

    @classmethod
    def from_dict(cls, d: dict) -> "FixtureSpec":
        try:
            models = {k: PopulationModel.from_dict(v) for k, v in d["models"].items()}
            features = [FeatureSpec(f["id"], f["instrument"], float(f.get("shift", 0.0))) for f in d["features"]]
        except (KeyError, TypeError, ValueError) as exc:
            raise ConfigError(f"invalid fixture specification: {exc}") from exc
        return cls(models, features, int(d.get("seed", 0)), float(d.get("attention_fail_rate", 0.0)),
                   d.get("attention_failures"), int(d.get("ratings_per_respondent", 3)),
                   float(d.get("duration_median", 170.0)), float(d.get("duration_sigma", 0.5)),
                   d.get("respondent_prefix", "R"))


def load_fixture_spec(path: str | PathLike) -> FixtureSpec:
    with open(path, encoding="utf-8") as fh:
        return FixtureSpec.from_dict(json.load(fh))


def _allocate_respondents(features: Sequence[str], n_per_feature: int, per_respondent: int, rng):
    """
    Balanced design: in each round every feature is rated once, in a random
    order, and consecutive groups of ``per_respondent`` slots form one
    respondent, so nobody rates the same feature twice.
    """
    m = len(features)
    if per_respondent < 1 or m % per_respondent:
        raise ValueError("the number of features must be a multiple of ratings_per_respondent")
    slots = []
    for _ in range(n_per_feature):
        slots.extend(features[i] for i in rng.permutation(m))
    return [slots[i:i + per_respondent] for i in range(0, len(slots), per_respondent)]


def generate_rating_fixture(spec: FixtureSpec, n_per_feature: int, instruments=None) -> list:
    """
    Simulate complete rating records for every feature of ``spec``.

    Parameters
    ----------
    spec : FixtureSpec
    n_per_feature : int
        Ratings per feature.
    instruments : mapping or iterable of InstrumentDefinition, optional
        Defaults to the built-in instruments.

    Returns
    -------
    list of RatingRecord
        Ordered by respondent then administration order.
    """
    if n_per_feature < 1:
        raise ValueError("n_per_feature must be positive")
    if not 0.0 <= spec.attention_fail_rate <= 1.0:
        raise ValueError("attention_fail_rate must lie in [0, 1]")
    ins_map = dict(BUILTIN_INSTRUMENTS)
    if instruments is not None:
        ins_map.update(instruments if isinstance(instruments, Mapping) else {i.id: i for i in instruments})
    ids = [f.id for f in spec.features]
    if len(set(ids)) != len(ids):
        raise ValueError("duplicate feature ids")

    responses = {}
    for f in spec.features:
        if f.instrument_id not in spec.models:
            raise ValueError(f"no population model for instrument {f.instrument_id!r}")
        ins = get_instrument(ins_map.get(f.instrument_id, f.instrument_id))
        model = spec.models[f.instrument_id].shifted(f.shift)
        if model.p != ins.n_items:
            raise ValueError(f"model for {ins.id!r} has {model.p} items, instrument has {ins.n_items}")
        latent = generate_factor_data(model, n_per_feature, rng=_stream(spec.seed, "feature", f.id))
        responses[f.id] = (ins, discretize_likert(latent, model.thresholds))

    groups = _allocate_respondents(ids, n_per_feature, spec.ratings_per_respondent,
                                   _stream(spec.seed, "design"))
    width = max(5, len(str(len(groups))))
    counters = {fid: 0 for fid in ids}
    slots = []
    for r, feats in enumerate(groups, start=1):
        rid = f"{spec.respondent_prefix}{r:0{width}d}"
        for fid in feats:
            slots.append((rid, fid, counters[fid]))
            counters[fid] += 1

    fail = _attention_failures(spec, slots, {fid: responses[fid][0] for fid in ids})
    durations = np.round(stats.lognorm.rvs(spec.duration_sigma, scale=spec.duration_median, size=len(slots),
                                           random_state=_stream(spec.seed, "duration")), 1)
    att_rng = _stream(spec.seed, "attention-values")
    records = []
    for s, (rid, fid, row) in enumerate(slots):
        ins, resp = responses[fid]
        attention = ins.attention_value
        if s in fail:
            wrong = [v for v in range(ins.likert_min, ins.likert_max + 1) if v != ins.attention_value]
            attention = int(wrong[att_rng.integers(len(wrong))])
        values = {k + 1: int(v) for k, v in enumerate(resp[row])}
        records.append(RatingRecord(rid, fid, ins.id, values, attention, float(durations[s])))
    return records


def _attention_failures(spec: FixtureSpec, slots, ins_by_feature) -> set:
    rng = _stream(spec.seed, "attention")
    if spec.attention_failures is None:
        draws = rng.random(len(slots))
        return {i for i, u in enumerate(draws) if u < spec.attention_fail_rate}
    chosen = set()
    for ins_id in sorted(spec.attention_failures):
        count = int(spec.attention_failures[ins_id])
        pool = [i for i, (_, fid, _) in enumerate(slots) if ins_by_feature[fid].id == ins_id]
        if count > len(pool):
            raise ValueError(f"cannot fail {count} of {len(pool)} {ins_id!r} ratings")
        chosen.update(pool[i] for i in rng.choice(len(pool), size=count, replace=False))
    return chosen


# Generating values of the built-in fixtures.  Loadings and factor correlations
# are the published EFA estimates of the final instruments.
_NUMERICAL_LOADINGS = ((0.63, 0), (0.66, 0), (0.85, 0), (0.83, 0), (0.78, 0), (0, 0.88), (0, 0.85), (0, 0.87))
_CATEGORICAL_LOADINGS = ((0.87, 0), (0.87, 0), (0.67, 0), (0.80, 0), (0.78, 0), (0.73, 0), (0, 0.79), (0, 0.74),
                         (0, 0.87))
_FEATURE_SHIFTS = {
    "personality_score": -0.35, "bmi": 0.25, "total_cholesterol": -0.10, "credit_score": 0.40, "debt": 0.05,
    "recruitment_strategy": -0.45, "degree": 0.30, "neoplasm_stage": -0.20, "business_or_commercial": 0.10,
}


def builtin_population(instrument_id: str, seed: int = 0) -> PopulationModel:
    if instrument_id == "fus-numerical":
        L, r = _NUMERICAL_LOADINGS, 0.48
    elif instrument_id == "fus-categorical":
        L, r = _CATEGORICAL_LOADINGS, 0.65
    else:
        raise ValueError(f"no built-in population for {instrument_id!r}")
    ins = BUILTIN_INSTRUMENTS[instrument_id]
    return PopulationModel(np.array(L), np.array([[1.0, r], [r, 1.0]]), DEFAULT_THRESHOLDS, item_ids=ins.item_ids,
                           seed=seed)


def default_fixture_spec(seed: int = 20250828, attention_fail_rate: float = 19 / 2160) -> FixtureSpec:
    """The nine built-in features on the two final instruments."""
    models = {i: builtin_population(i, seed) for i in ("fus-numerical", "fus-categorical")}
    feats = [FeatureSpec(f.id, f.instrument_id, _FEATURE_SHIFTS[f.id]) for f in FEATURES]
    return FixtureSpec(models, feats, seed, attention_fail_rate)


def expected_feature_means(spec: FixtureSpec) -> dict:
    """Exact population mean response per feature over all instrument items."""
    return {f.id: float(spec.models[f.instrument_id].shifted(f.shift).expected_item_means().mean())
            for f in spec.features}


def derive_population_model(R, n_factors: int, thresholds=DEFAULT_THRESHOLDS, seed: int = 0,
                            decimals: int = 3) -> PopulationModel:
    """
    Population model from an ML + promax EFA of a correlation matrix.

    Loadings and factor correlations are rounded to ``decimals`` so that the
    model does not depend on floating-point noise of the fit.
    """
    from .efa import EfaConfig, fit_efa

    sol = fit_efa(R, EfaConfig(n_factors=n_factors), n_factors)
    L = np.round(sol.pattern, decimals)
    phi = np.round(sol.phi, decimals)
    np.fill_diagonal(phi, 1.0)
    return PopulationModel(L, phi, thresholds, item_ids=tuple(R.item_ids), seed=seed)


EFA_PHASE_SPEC = "efa_phase_spec.json"
EFA_PHASE_FIXTURE = "efa_phase_fixture.csv"


def build_efa_phase_spec(seed: int = 20250828) -> FixtureSpec:
    """
    Specification of the bundled EFA-phase fixture: the nine features rated on
    the unreduced item pools (240 ratings each), with 1 numerical and 18
    categorical attention failures.
    """
    from .corrstats import load_correlation_csv

    data = resources.files("fuscale") / "data"
    num = load_correlation_csv(data / "numerical_pre_efa.csv", n=1199)
    cat = load_correlation_csv(data / "categorical_pre_efa.csv", n=942)
    models = {
        "fus-numerical-draft": derive_population_model(num, 3, seed=seed),
        "fus-categorical-draft": derive_population_model(cat, 2, seed=seed),
    }
    feats = [FeatureSpec(f.id, f.instrument_id + "-draft", _FEATURE_SHIFTS[f.id]) for f in FEATURES]
    return FixtureSpec(models, feats, seed, 0.0, {"fus-numerical-draft": 1, "fus-categorical-draft": 18})


def bundled_path(name: str):
    return resources.files("fuscale") / "data" / name


def load_bundled_spec(name: str = EFA_PHASE_SPEC) -> FixtureSpec:
    return load_fixture_spec(bundled_path(name))
