import io
import json

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st
from numpy.testing import assert_allclose

from fuscale.exceptions import ConfigError
from fuscale.ingest import write_responses
from fuscale.simgen import (EFA_PHASE_FIXTURE, SYMMETRIC_THRESHOLDS, FeatureSpec, FixtureSpec, PopulationModel,
                            build_efa_phase_spec, builtin_population, bundled_path, default_fixture_spec,
                            discretize_likert, expected_feature_means, generate_factor_data,
                            generate_rating_fixture, load_bundled_spec, validate_thresholds)
from oracles import likert_marginals

L2 = np.array([[.8, 0], [.7, 0], [.6, 0], [0, .8], [0, .7], [0, .6]])
PHI = np.array([[1, .3], [.3, 1.0]])


def test_model_validation():
    with pytest.raises(ValueError, match="communality"):
        PopulationModel(np.array([[1.2]]), np.eye(1))
    with pytest.raises(ValueError):
        PopulationModel(L2, np.array([[1, 2], [2, 1.0]]))
    with pytest.raises(ValueError):
        PopulationModel(L2, np.array([[2, .3], [.3, 1.0]]))
    with pytest.raises(ValueError):
        validate_thresholds([0.0, -1.0, 1.0, 2.0])


def test_model_round_trip():
    m = PopulationModel(L2, PHI, SYMMETRIC_THRESHOLDS, seed=11)
    m2 = PopulationModel.from_dict(json.loads(json.dumps(m.to_dict())))
    assert_allclose(m2.correlation(), m.correlation())
    assert m2.seed == 11 and m2.item_ids == m.item_ids


def test_seed_determinism():
    m = PopulationModel(L2, PHI, seed=3)
    assert_allclose(generate_factor_data(m, 50), generate_factor_data(m, 50))
    assert not np.allclose(generate_factor_data(m, 50), generate_factor_data(m, 50, seed=4))


def test_population_correlation_recovered():
    m = PopulationModel(L2, PHI, seed=1)
    X = generate_factor_data(m, 50000)
    assert np.max(np.abs(np.corrcoef(X, rowvar=False) - m.correlation())) < 0.02


def test_null_model_gives_uncorrelated_items():
    m = PopulationModel(np.zeros((4, 1)), np.eye(1), seed=2)
    X = generate_factor_data(m, 20000)
    R = np.corrcoef(X, rowvar=False)
    assert np.max(np.abs(R - np.eye(4))) < 0.03


def test_discretize_boundaries():
    assert discretize_likert(np.array([-9, -1.5, -1.49, 0, 9]), [SYMMETRIC_THRESHOLDS]).tolist() == [1, 1, 2, 3, 5]


@pytest.mark.parametrize("thresholds", [SYMMETRIC_THRESHOLDS, (-2.0, -1.2, -0.3, 0.9)])
def test_likert_marginals_match_oracle(thresholds):
    m = PopulationModel(np.array([[.7]]), np.eye(1), thresholds, seed=9)
    x = discretize_likert(generate_factor_data(m, 40000), m.thresholds)[:, 0]
    freq = np.bincount(x, minlength=6)[1:] / len(x)
    assert_allclose(freq, likert_marginals(thresholds), atol=0.01)
    assert x.mean() == pytest.approx(m.expected_item_means()[0], abs=0.02)


def test_expected_means_closed_form():
    m = PopulationModel(np.array([[.5]]), np.eye(1), SYMMETRIC_THRESHOLDS)
    assert m.expected_item_means()[0] == pytest.approx(3.0)
    assert m.shifted(0.4).expected_item_means()[0] > 3.0


def test_builtin_populations():
    num, cat = builtin_population("fus-numerical"), builtin_population("fus-categorical")
    assert num.p == 8 and cat.p == 9
    assert num.phi[0, 1] == 0.48 and cat.phi[0, 1] == 0.65
    with pytest.raises(ValueError):
        builtin_population("nope")


def test_rating_fixture_design():
    spec = default_fixture_spec()
    recs = generate_rating_fixture(spec, 24)
    assert len(recs) == 9 * 24
    by_resp = {}
    for r in recs:
        by_resp.setdefault(r.respondent_id, []).append(r.feature_id)
    assert all(len(v) == 3 and len(set(v)) == 3 for v in by_resp.values())
    counts = {}
    for r in recs:
        counts[r.feature_id] = counts.get(r.feature_id, 0) + 1
    assert set(counts.values()) == {24}


def test_feature_streams_are_independent_of_other_features():
    spec = default_fixture_spec()
    sub = FixtureSpec(spec.models, [f for f in spec.features if f.instrument_id == "fus-numerical"][:3], spec.seed)
    full = {}
    for r in generate_rating_fixture(spec, 30):
        full.setdefault(r.feature_id, []).append(r.responses)
    part = {}
    for r in generate_rating_fixture(sub, 30):
        part.setdefault(r.feature_id, []).append(r.responses)
    for fid, rows in part.items():
        assert rows == full[fid]


def test_exact_attention_failures():
    spec = default_fixture_spec()
    spec.attention_failures = {"fus-numerical": 2, "fus-categorical": 3}
    recs = generate_rating_fixture(spec, 12)
    bad = [r for r in recs if r.attention_response != 3]
    assert len(bad) == 5
    spec.attention_failures = {"fus-numerical": 10**6}
    with pytest.raises(ValueError):
        generate_rating_fixture(spec, 3)


def test_fixture_spec_validation():
    with pytest.raises(ConfigError):
        FixtureSpec.from_dict({"features": []})
    spec = default_fixture_spec()
    spec.features = spec.features + [FeatureSpec("x", "fus-unknown")]
    with pytest.raises(ValueError):
        generate_rating_fixture(spec, 3)


def test_bundled_spec_matches_builder():
    assert load_bundled_spec().to_dict() == json.loads(build_efa_phase_spec().to_json())


def test_bundled_fixture_regenerates_byte_identically():
    spec = load_bundled_spec()
    buf = io.StringIO()
    write_responses(generate_rating_fixture(spec, 240), buf, 22)
    assert buf.getvalue() == bundled_path(EFA_PHASE_FIXTURE).read_text(encoding="utf-8")


def test_feature_means_recovered_in_large_samples():
    spec = default_fixture_spec()
    expected = expected_feature_means(spec)
    recs = generate_rating_fixture(spec, 3000)
    for fid, mu in expected.items():
        vals = [v for r in recs if r.feature_id == fid for v in r.responses.values()]
        assert np.mean(vals) == pytest.approx(mu, abs=0.03)


@settings(max_examples=30, deadline=None)
@given(st.lists(st.floats(-3, 3), min_size=4, max_size=4, unique=True), st.integers(0, 10**6))
def test_discretized_values_in_range(t, seed):
    t = sorted(t)
    if min(np.diff(t)) < 1e-6:
        return
    X = np.random.default_rng(seed).normal(size=(100, 3))
    v = discretize_likert(X, [t])
    assert v.min() >= 1 and v.max() <= 5
    # monotone: larger latent value never maps to a lower category
    order = np.argsort(X[:, 0])
    assert np.all(np.diff(v[order, 0]) >= 0)
