import json
import warnings

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st
from numpy.testing import assert_allclose

from fuscale.cfa import (ScaledDifferenceError, build_cfa, duplication_matrix, estimate_gamma, fit_indices, fit_ml,
                         independence_model, load_structure, ml_discrepancy, ml_gradient, normal_theory_gamma,
                         one_factor_model, satorra_bentler, scaled_chisq_diff, standardize, vech)
from fuscale.exceptions import AnalysisError
from fuscale.instruments import get_instrument
from fuscale.simgen import PopulationModel, discretize_likert, generate_factor_data
from oracles import central_gradient, gamma_loop, normal_gamma_elementwise

ITEMS = tuple(f"i{j}" for j in range(1, 9))
STRUCT = {i: ("A" if j < 4 else "B") for j, i in enumerate(ITEMS)}
L_TRUE = np.array([[.8, 0], [.7, 0], [.75, 0], [.6, 0], [0, .8], [0, .7], [0, .65], [0, .75]])
PHI_TRUE = np.array([[1, .4], [.4, 1.0]])


def population():
    S = L_TRUE @ PHI_TRUE @ L_TRUE.T
    np.fill_diagonal(S, 1.0)
    return S


def test_df_from_builtin_instruments():
    num, cat = get_instrument("fus-numerical"), get_instrument("fus-categorical")
    assert build_cfa(num).df == 19 and one_factor_model(num.item_ids).df == 20
    assert build_cfa(cat).df == 26 and one_factor_model(cat.item_ids).df == 27
    assert independence_model(ITEMS).df == 28


@pytest.mark.filterwarnings("ignore:factor")
def test_model_validation():
    with pytest.raises(ValueError, match="at least 2"):
        build_cfa(["a", "b", "c"], {"a": "F", "b": "F", "c": "G"})
    with pytest.raises(ValueError, match="zero items"):
        build_cfa(["a", "b"], {"a": "F", "b": "F"}, factors=["F", "G"])
    with pytest.raises(ValueError, match="marker"):
        build_cfa(["a", "b"], {"a": "F", "b": "F"}, markers={"F": "zz"})
    with pytest.warns(UserWarning):
        build_cfa(["a", "b", "c", "d", "e"], {"a": "F", "b": "F", "c": "G", "d": "G", "e": "G"})
    with pytest.raises(AnalysisError, match="negative degrees"):
        with warnings.catch_warnings():
            warnings.simplefilter("ignore")
            build_cfa(["a", "b"], {"a": "F", "b": "F"})


def test_labels_are_lavaan_style():
    m = build_cfa(ITEMS, STRUCT)
    assert "A=~i2" in m.labels and "A~~B" in m.labels and "i1~~i1" in m.labels
    assert "A=~i1" not in m.labels and m.n_free == len(m.labels) == 17


def test_duplication_matrix():
    A = np.array([[1, 2, 3], [2, 4, 5], [3, 5, 6.0]])
    assert_allclose(duplication_matrix(3) @ vech(A), A.reshape(-1, order="F"))


def test_exact_population_recovered():
    fit = fit_ml(build_cfa(ITEMS, STRUCT), population(), n=500)
    assert fit.converged and fit.T == pytest.approx(0.0, abs=1e-6)
    std = standardize(fit)
    assert_allclose(std.loadings_all, L_TRUE.sum(1), atol=1e-4)
    assert std.factor_correlations[0, 1] == pytest.approx(0.4, abs=1e-4)
    assert fit.indices.rmsea == 0.0 and fit.indices.cfi == 1.0


def test_gradient_matches_finite_differences(num_final):
    model = build_cfa(get_instrument("fus-numerical"))
    S = num_final.values
    theta = model.start_values(S) * 1.1
    an = ml_gradient(model, theta, S)
    fd = central_gradient(lambda t: ml_discrepancy(S, model.implied(t)), theta)
    assert_allclose(an, fd, rtol=1e-5, atol=1e-7)


def test_independence_closed_form(num_final):
    fit = fit_ml(build_cfa(get_instrument("fus-numerical")), num_final)
    assert fit.baseline_T == pytest.approx(-(1198 - 1) * np.linalg.slogdet(num_final.values)[1], rel=1e-8)
    assert fit.baseline_df == 28


def test_multiplier_option():
    S = population() + 0.02 * np.eye(8)
    S[0, 5] = S[5, 0] = 0.2
    m = build_cfa(ITEMS, STRUCT)
    a, b = fit_ml(m, S, n=400), fit_ml(m, S, n=400, multiplier="n")
    assert b.T / a.T == pytest.approx(400 / 399)


def test_one_factor_fits_worse(num_final):
    two = fit_ml(build_cfa(get_instrument("fus-numerical")), num_final)
    one = fit_ml(one_factor_model(num_final.item_ids), num_final)
    assert one.T >= two.T and one.indices.cfi < two.indices.cfi


def test_fit_indices_boundaries():
    perfect = fit_indices(5.0, 10, 500.0, 28, 300)
    assert perfect.cfi == 1.0 and perfect.rmsea == 0.0 and perfect.tli > 1
    assert fit_indices(20.0, 10, 25.0, 28, 300).cfi is None
    assert fit_indices(100.0, 10, 500.0, 28, 300).cfi == pytest.approx(1 - 90 / 472)
    with pytest.raises(ValueError):
        fit_indices(1.0, 0, 10.0, 3, 100)


def test_standardize_worked_example():
    m = build_cfa(["a", "b", "c"], {"a": "F", "b": "F", "c": "F"})
    S = np.array([[1, .56, .48], [.56, 1, .42], [.48, .42, 1.0]])  # loadings .8 .7 .6
    std = standardize(fit_ml(m, S, n=200))
    assert_allclose(std.loadings_all, [.8, .7, .6], atol=1e-5)
    assert_allclose(std.loadings_lv, [.8, .7, .6], atol=1e-5)


def test_serialization_round_trip(num_final):
    fit = fit_ml(build_cfa(get_instrument("fus-numerical")), num_final)
    d = json.loads(fit.to_json())
    assert d["df"] == 19 and d["baseline"]["df"] == 28 and d["robust"] is None
    assert d["chi2"] == pytest.approx(fit.T)
    assert d["standardized"]["factor_correlations"][0][1] == pytest.approx(standardize(fit).factor_correlations[0, 1])


def test_load_structure(tmp_path):
    p = tmp_path / "s.json"
    p.write_text(json.dumps({"factors": {"A": ["a", "b", "c"]}, "markers": {"A": "b"}}))
    s = load_structure(p)
    assert s["structure"] == {"a": "A", "b": "A", "c": "A"} and s["markers"] == {"A": "b"}


def test_gamma_matches_loop_oracle_and_chunking():
    X = np.random.default_rng(0).exponential(size=(300, 4))
    G = estimate_gamma(X)
    assert_allclose(G.values, gamma_loop(X), atol=1e-12)
    assert_allclose(estimate_gamma(X, chunk_size=7).values, G.values, atol=1e-12)


def test_gamma_input_validation():
    with pytest.raises(ValueError):
        estimate_gamma(np.array([[1.0, np.nan], [2, 3], [3, 4]]))
    with pytest.raises(ValueError):
        estimate_gamma(np.array([[1.0, 1], [2, 1], [3, 1]]))
    with pytest.warns(UserWarning):
        estimate_gamma(np.random.default_rng(1).normal(size=(5, 3)))


def test_normal_theory_gamma_oracle():
    S = population()
    assert_allclose(normal_theory_gamma(S), normal_gamma_elementwise(S), atol=1e-12)


@pytest.mark.slow
def test_sample_gamma_converges_to_normal_theory():
    S = population()
    X = np.random.default_rng(2).multivariate_normal(np.zeros(8), S, size=50000)
    # largest element SE is sqrt(96 / n) ~ 0.044; allow about 4 SE
    assert np.max(np.abs(estimate_gamma(X).values - normal_theory_gamma(S))) < 0.18


def _sample_fit(X):
    m = build_cfa(ITEMS, STRUCT)
    fit = fit_ml(m, np.cov(X, rowvar=False, bias=True), n=len(X))
    return fit, satorra_bentler(fit, estimate_gamma(X))


def test_normal_theory_gamma_gives_unit_scaling():
    X = generate_factor_data(PopulationModel(L_TRUE, PHI_TRUE, seed=3), 800)
    fit = fit_ml(build_cfa(ITEMS, STRUCT), np.cov(X, rowvar=False, bias=True), n=800)
    rb = satorra_bentler(fit, normal_theory_gamma(fit.Sigma))
    assert rb.scaling_factor == pytest.approx(1.0, abs=1e-6)
    assert rb.T_scaled == pytest.approx(fit.T, rel=1e-6)


def test_normal_data_scaling_near_one():
    X = generate_factor_data(PopulationModel(L_TRUE, PHI_TRUE, seed=4), 2000)
    _, rb = _sample_fit(X)
    assert 0.9 <= rb.scaling_factor <= 1.1


def test_skewed_data_scaling_departs_from_one():
    model = PopulationModel(L_TRUE, PHI_TRUE, thresholds=(-2.0, -1.6, -1.3, -1.0), seed=5)
    X = discretize_likert(generate_factor_data(model, 2000), model.thresholds).astype(float)
    _, rb = _sample_fit(X)
    assert abs(rb.scaling_factor - 1.0) > 0.1


def test_scaled_difference_reduces_to_plain_difference():
    X = generate_factor_data(PopulationModel(L_TRUE, PHI_TRUE, seed=6), 600)
    S = np.cov(X, rowvar=False, bias=True)
    two = fit_ml(build_cfa(ITEMS, STRUCT), S, n=600)
    one = fit_ml(one_factor_model(ITEMS), S, n=600)
    satorra_bentler(two, normal_theory_gamma(two.Sigma))
    satorra_bentler(one, normal_theory_gamma(one.Sigma))
    d = scaled_chisq_diff(one, two)
    assert d.df_d == 1 and d.T_d == pytest.approx(one.T - two.T, rel=1e-5)


def test_scaled_difference_degenerate():
    X = generate_factor_data(PopulationModel(L_TRUE, PHI_TRUE, seed=7), 600)
    S = np.cov(X, rowvar=False, bias=True)
    two = fit_ml(build_cfa(ITEMS, STRUCT), S, n=600)
    one = fit_ml(one_factor_model(ITEMS), S, n=600)
    satorra_bentler(two, normal_theory_gamma(two.Sigma))
    satorra_bentler(one, normal_theory_gamma(one.Sigma))
    one.robust.scaling_factor = 0.1
    with pytest.raises(ScaledDifferenceError) as exc:
        scaled_chisq_diff(one, two)
    assert exc.value.unscaled == pytest.approx(one.T - two.T) and exc.value.df_d == 1
    with pytest.raises(ValueError):
        scaled_chisq_diff(two, one)


@pytest.mark.slow
def test_chi_square_mean_matches_df():
    rng = np.random.default_rng(8)
    S0, n = population(), 400
    m = build_cfa(ITEMS, STRUCT)
    Ts = []
    for _ in range(200):
        X = rng.multivariate_normal(np.zeros(8), S0, size=n)
        Ts.append(fit_ml(m, np.cov(X, rowvar=False), n=n).T)
    assert np.mean(Ts) == pytest.approx(m.df, rel=0.1)


@settings(max_examples=15, deadline=None)
@given(st.permutations(range(8)))
def test_permutation_invariance(perm):
    S = population() + 0.05 * np.eye(8)
    S[1, 6] = S[6, 1] = 0.15
    base = fit_ml(build_cfa(ITEMS, STRUCT), S, n=300)
    order = [ITEMS[i] for i in perm]
    markers = {"A": "i1", "B": "i5"}
    pm = build_cfa(order, STRUCT, markers=markers, factors=["A", "B"])
    fit = fit_ml(pm, S[np.ix_(perm, perm)], n=300)
    assert fit.T == pytest.approx(base.T, rel=1e-5, abs=1e-7)
