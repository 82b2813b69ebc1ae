# %% [markdown]
# # From MAP readings to an alert threshold
#
# A small synthetic cohort walked through every stage with the library API.
# Run with `python notebooks/01_walkthrough.py`; cells also work in Jupyter/VS Code.

# %%
import tempfile
from pathlib import Path

import numpy as np

from vasoinit.explain import global_importance, tree_shap
from vasoinit.ingest import read_cohort
from vasoinit.learn import GbtConfig, calibrate, fit_isotonic, train_baseline, train_gbt
from vasoinit.metrics import band_auc, calibration_stats, roc_auroc, threshold_table
from vasoinit.pipeline import build_dataset
from vasoinit.synth import SynthConfig, generate_cohort, write_cohort

work = Path(tempfile.mkdtemp(prefix="vasoinit_nb_"))

# %% [markdown]
# ## Cohort
# 600 patients keeps this quick. Prevalence is per 15-minute window, so it is tiny.

# %%
cohort = generate_cohort(SynthConfig(seed=11, n_patients=600))
write_cohort(work / "cohort", cohort)
print(len(cohort.patients), "patients,", len(cohort.stays), "stays,", len(cohort.map_readings), "MAP readings")
print("window prevalence %.4f%%" % (100 * cohort.prevalence))

# %%
events = read_cohort(work / "cohort")
ds = build_dataset(events)
fm = ds.features
summary = ds.summary()
print(summary["split_windows"], summary["split_positives"])

# %% [markdown]
# Positive windows sit lower and fall faster than the rest.

# %%
y = fm.y.astype(bool)
for name in ("last", "min", "slope"):
    col = fm.column(name)
    print(f"{name:>6}: positives {np.nanmedian(col[y]):9.4g}   negatives {np.nanmedian(col[~y]):9.4g}")

# %% [markdown]
# ## Model
# Boosted trees with early stopping on the validation split, then an isotonic map
# fitted on validation predictions. The last-MAP logistic model is the reference.

# %%
tr, va, te = (fm.split == s for s in ("train", "valid", "test"))
model, log = train_gbt(fm.X[tr], fm.y[tr], fm.X[va], fm.y[va], GbtConfig(), fm.schema_hash, fm.feature_names)
print("rounds", log.n_rounds, "best", log.best_round)
iso = fit_isotonic(model.predict(fm.X[va]), fm.y[va])
base = train_baseline(fm.column("last")[tr], fm.y[tr])

raw = model.predict(fm.X[te])
cal = calibrate(iso, raw)
ref = base.predict(fm.column("last")[te])

# %%
for name, s in (("gbt", cal), ("gbt raw", raw), ("last MAP", ref)):
    curve, auc = roc_auroc(s, fm.y[te])
    c = calibration_stats(s, fm.y[te])
    print(f"{name:>9}: AUROC {auc:.3f}  band AUC {band_auc(curve):.3f}  ECE {c.ece:.2e}  Brier {c.brier:.2e}")

# %% [markdown]
# ## Operating points
# Thresholds chosen for target sensitivities on the test split, plus Youden's J.

# %%
for r in threshold_table(cal, fm.y[te]):
    print(f"{r.policy:>18}  t={r.threshold:.5f}  sens={r.sens:.2f}  spec={r.spec:.3f}  ppv={r.ppv:.4f}")

# %% [markdown]
# ## Attributions
# TreeSHAP on the raw margin. Values plus the base value add up to the log-odds.

# %%
attr = tree_shap(model, fm.X[te][:500], fm.schema_hash)
print("max local accuracy gap", np.abs(attr.base + attr.shap.sum(1) - attr.raw).max())
imp = global_importance(attr.shap, fm.feature_names)
for feat, v in imp.top(10):
    print(f"{feat:>22}  {v:.4f}")
