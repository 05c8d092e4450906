# %% [markdown]
# # Reliability and feature scores
# Omega and AVE from published-style loadings, then per-feature
# understandability scores on a simulated rating fixture.

# %%
from fuscale.instruments import get_instrument
from fuscale.reliability import ave, mcdonald_omega, rank_features, score_features, scores_to_csv
from fuscale.simgen import default_fixture_spec, expected_feature_means, generate_rating_fixture

groups = {"um": [0.63, 0.66, 0.85, 0.83, 0.78], "for": [0.88, 0.85, 0.87]}
for name, lam in groups.items():
    print(f"{name}: omega {mcdonald_omega(lam):.3f}, AVE {ave(lam):.3f}")

# %%
spec = default_fixture_spec()
records = generate_rating_fixture(spec, 240)
expected = expected_feature_means(spec)
ins = get_instrument("fus-numerical")
scores = rank_features(score_features(records, ins))
print(scores_to_csv(scores, [s.id for s in ins.subscales]))
for s in scores:
    print(f"{s.feature_id}: observed {s.overall:.3f}, population {expected[s.feature_id]:.3f}")
