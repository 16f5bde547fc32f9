"""
Quickstart: train, score and evaluate
=====================================

Generate a synthetic benchmark, fit the VAE regressor and check whether the
latent confidence score ranks test rows by how wrong the model is.
"""

# %%
# A synthetic dataset with a known distribution shift. Test rows from the
# shifted clusters are drawn with a larger noise level.
import numpy as np

from latentconf import (
    SynthConfig, VaeConfig, apply_scaler, build_report, fit, fit_scaler,
    generate, init_model, partition_reliable, project, score,
)

train, test, meta = generate(SynthConfig(seed=42))
print(train.n_features, "features;", len(train.ids), "train rows,", len(test.ids), "test rows")
print("shifted test rows:", int(meta.shifted[len(train.ids):].sum()))

# %%
# Standardize with training statistics only, then fit.
scaler = fit_scaler(train)
train_s, test_s = apply_scaler(scaler, train), apply_scaler(scaler, test)

model, history = fit(init_model(VaeConfig(input_dim=train.n_features, seed=42), scaler), train_s)
print("final loss %.2f (regression %.2f, kl %.3f)"
      % (history.total[-1], history.regression[-1], history.kl[-1]))

# %%
# Project both splits into the latent space. Training rows whose absolute
# error is at most the mean training error form the reliable reference set.
z_train, z_test = project(model, train_s), project(model, test_s)
part = partition_reliable(z_train)
print("T = %.3f, reliable rows: %d / %d" % (part.threshold, part.reliable_count, len(z_train.ids)))

# %%
# The score is the mean distance to the 3 nearest reliable points: small
# means the test row looks like something the model got right.
conf = score("latent", train_s, z_train, test_s, z_test, part, M=3)
report = build_report(conf, z_test, fraction=0.2)
print(report.to_text())

# %%
# The most confident fifth should have a much smaller error than the least
# confident fifth.
order = np.argsort(conf.scores, kind="stable")
shifted_test = meta.shifted[len(train.ids):]
print("shifted share, most confident 20%%:  %.2f" % shifted_test[order[:100]].mean())
print("shifted share, least confident 20%%: %.2f" % shifted_test[order[-100:]].mean())
