"""
Command-line pipeline
=====================

Drive the ``latentconf`` subcommands from Python and inspect what each step
writes. The same argument lists work from a shell.
"""

# %%
import csv
import tempfile
from pathlib import Path

from latentconf.cli import main

work = Path(tempfile.mkdtemp())
data, model = work / "data.csv", work / "model.vaec"

# %%
# synth writes the observations plus a sidecar with the true regime labels.
main(["synth", "--out", str(data), "--seed", "42"])
print(sorted(p.name for p in work.iterdir()))

# %%
# train splits on the date cutoff (default 2020-12-31) and writes a
# per-epoch loss history next to the model.
main(["train", "--data", str(data), "--model-out", str(model), "--epochs", "50"])

# %%
# score prints T and the reliable count, and writes one row per test point.
scores = work / "scores.csv"
main(["score", "--model", str(model), "--data", str(data), "--out", str(scores), "--m", "5"])
with open(scores, newline="") as fh:
    for row in list(csv.DictReader(fh))[:3]:
        print(row)

# %%
# eval needs the test errors; here they come from the model and data.
main(["eval", "--scores", str(scores), "--model", str(model), "--data", str(data)])

# %%
# export-latent dumps latent coordinates for external analysis.
latent = work / "latent.csv"
main(["export-latent", "--model", str(model), "--data", str(data), "--out", str(latent)])
print(latent.read_text().splitlines()[0])
