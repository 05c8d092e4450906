# %% [markdown]
# # Factorability of the draft item pools
# Bartlett's sphericity test, KMO sampling adequacy and item-total
# correlations on the bundled pre-reduction correlation matrices.

# %%
from importlib import resources

from fuscale.corrstats import factorability, flag_low_correlation_items, load_correlation_csv, load_item_total_csv

DATA = resources.files("fuscale") / "data"
num = load_correlation_csv(DATA / "numerical_pre_efa.csv", n=1199)
cat = load_correlation_csv(DATA / "categorical_pre_efa.csv", n=942)

# %%
for name, R in (("numerical", num), ("categorical", cat)):
    rep = factorability(R)
    print(f"{name}: chi2({rep.bartlett_df}) = {rep.bartlett_chi2:.2f}, KMO = {rep.kmo_overall:.3f}")

# %% [markdown]
# Items whose corrected item-total correlation falls below 0.30 are flagged.

# %%
for kind in ("numerical", "categorical"):
    rep = load_item_total_csv(DATA / "item_total_pre_efa.csv", kind)
    print(kind, "flagged:", flag_low_correlation_items(rep))
