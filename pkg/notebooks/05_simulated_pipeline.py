# %% [markdown]
# # End-to-end pipeline on a simulated study
# Simulate 2160 ratings, then run quality filtering, the EFA/CFA split,
# reliability and scoring through the same entry point as the CLI.

# %%
import tempfile
from pathlib import Path

from fuscale import cli
from fuscale.pipeline import PipelineConfig, run_pipeline, summary_text

work = Path(tempfile.mkdtemp())
fixture = work / "fixture.csv"
cli.main(["simulate", "--n-per-feature", "240", "--seed", "99", "--out", str(fixture)])

# %%
report = run_pipeline(PipelineConfig(responses=str(fixture), instrument="fus-numerical", n_factors=2, seed=5))
print(summary_text(report))
print("timing:", {k: round(v, 3) for k, v in report["_metadata"]["timing_seconds"].items()})
