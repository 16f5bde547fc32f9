"""
Latent, feature and geographic confidence
=========================================

The same nearest-neighbour score computed in three coordinate systems, with
and without restricting the reference set to reliable training rows.
"""

# %%
from latentconf import (
    SynthConfig, VaeConfig, apply_scaler, build_report, fit, fit_scaler,
    generate, init_model, partition_reliable, project, score,
)

train, test, _ = generate(SynthConfig(seed=0))
scaler = fit_scaler(train)
train_s, test_s = apply_scaler(scaler, train), apply_scaler(scaler, test)
model, _ = fit(init_model(VaeConfig(input_dim=train.n_features, seed=0), scaler), train_s)
z_train, z_test = project(model, train_s), project(model, test_s)
part = partition_reliable(z_train)

# %%
# Geographic coordinates are drawn independently of the regime in this
# generator, so the geographic score should carry almost no signal.
print("%-11s %-9s %7s %9s %11s" % ("space", "reference", "r", "MAE low", "MAE high"))
for space in ("latent", "feature", "geographic"):
    for reference in ("reliable", "all"):
        conf = score(space, train_s, z_train, test_s, z_test, part, M=3, reference=reference)
        rep = build_report(conf, z_test)
        print("%-11s %-9s %7.3f %9.2f %11.2f" % (
            space, reference, rep.correlation, rep.mae_most_reliable, rep.mae_most_unreliable))

# %%
# Sweep the neighbourhood size in latent space.
for M in (1, 3, 5, 10, 25):
    rep = build_report(score("latent", train_s, z_train, test_s, z_test, part, M=M), z_test)
    print("M=%-3d r=%.3f" % (M, rep.correlation))
