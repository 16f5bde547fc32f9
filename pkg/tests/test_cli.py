import csv

import numpy as np
import pytest

from latentconf.cli import main
from latentconf.vae import load_model

SMALL = ["--n-train", "300", "--n-test", "80"]
QUICK = ["--epochs", "5", "--encoder-hidden", "16", "--decoder-hidden", "16", "--latent-dim", "3"]


def run(capsys, *argv):
    code = main([str(a) for a in argv])
    out = capsys.readouterr()
    return code, out.out, out.err


@pytest.fixture
def workdir(tmp_path, capsys):
    data = tmp_path / "d.csv"
    model = tmp_path / "m.vaec"
    assert run(capsys, "synth", "--out", data, "--seed", 1, *SMALL)[0] == 0
    assert run(capsys, "train", "--data", data, "--model-out", model, "--seed", 1, *QUICK)[0] == 0
    return tmp_path


def read_rows(path):
    with open(path, newline="") as fh:
        return list(csv.DictReader(fh))


def test_synth_writes_two_csvs(tmp_path, capsys):
    code, _, _ = run(capsys, "synth", "--out", tmp_path / "d.csv", "--seed", 42,
                     "--n-train", 2000, "--n-test", 500)
    assert code == 0
    assert len(read_rows(tmp_path / "d.csv")) == 2500
    assert len(read_rows(tmp_path / "d.meta.csv")) == 2500


def test_synth_usage_errors(tmp_path, capsys):
    with pytest.raises(SystemExit) as exc:
        main(["synth", "--seed", "1"])
    assert exc.value.code == 2
    assert "--out" in capsys.readouterr().err
    assert run(capsys, "synth", "--out", tmp_path / "d.csv", "--shifted-fraction", "2")[0] == 2


def test_synth_unwritable(tmp_path, capsys):
    code, _, err = run(capsys, "synth", "--out", tmp_path / "missing" / "d.csv")
    assert code == 1 and "No such file" in err


def test_train_outputs(workdir, capsys):
    model = load_model(workdir / "m.vaec")
    assert model.config.latent_dim == 3 and model.config.epochs == 5
    history = read_rows(workdir / "m.vaec.history.csv")
    assert [r["epoch"] for r in history] == ["1", "2", "3", "4", "5"]


def test_train_zero_epochs_warns(workdir, capsys):
    code, out, err = run(capsys, "train", "--data", workdir / "d.csv",
                         "--model-out", workdir / "z.vaec", "--epochs", 0)
    assert code == 0 and "warning" in err
    assert load_model(workdir / "z.vaec").config.epochs == 0


def test_train_allows_empty_test(workdir, capsys):
    code, _, _ = run(capsys, "train", "--data", workdir / "d.csv", "--cutoff", "2030-01-01",
                     "--model-out", workdir / "all.vaec", *QUICK)
    assert code == 0


def test_train_without_standardization(workdir, capsys):
    code, _, _ = run(capsys, "train", "--data", workdir / "d.csv", "--standardize", "false",
                     "--model-out", workdir / "raw.vaec", *QUICK)
    assert code == 0
    scaler = load_model(workdir / "raw.vaec").scaler
    assert not scaler.means.any() and np.all(scaler.stds == 1.0)


@pytest.mark.parametrize("space", ["latent", "feature", "geo"])
def test_score_each_space(workdir, capsys, space):
    out = workdir / f"s_{space}.csv"
    code, stdout, _ = run(capsys, "score", "--model", workdir / "m.vaec", "--data",
                          workdir / "d.csv", "--space", space, "--m", 3, "--out", out)
    assert code == 0 and "T=" in stdout and "reliable=" in stdout
    rows = read_rows(out)
    assert len(rows) == 80
    assert list(rows[0]) == ["id", "score", "space", "M", "T", "degenerate_k"]
    assert rows[0]["M"] == "3" and rows[0]["degenerate_k"] == "0"
    assert all(float(r["score"]) >= 0 for r in rows)


def test_score_m_zero_is_usage_error(workdir, capsys):
    with pytest.raises(SystemExit) as exc:
        main(["score", "--model", str(workdir / "m.vaec"), "--data", str(workdir / "d.csv"),
              "--m", "0", "--out", str(workdir / "s.csv")])
    assert exc.value.code == 2


def test_score_arity_mismatch(workdir, capsys):
    other = workdir / "o.csv"
    assert run(capsys, "synth", "--out", other, "--n-features", 5, *SMALL)[0] == 0
    code, _, err = run(capsys, "score", "--model", workdir / "m.vaec", "--data", other,
                       "--out", workdir / "s.csv")
    assert code == 1 and "feature columns" in err


def test_score_threads_same_output(workdir, capsys):
    base = ["score", "--model", workdir / "m.vaec", "--data", workdir / "d.csv"]
    run(capsys, *base, "--out", workdir / "a.csv")
    run(capsys, *base, "--out", workdir / "b.csv", "--threads", 3)
    assert (workdir / "a.csv").read_bytes() == (workdir / "b.csv").read_bytes()


def test_eval_routes_agree(workdir, capsys):
    scores = workdir / "s.csv"
    run(capsys, "score", "--model", workdir / "m.vaec", "--data", workdir / "d.csv", "--out", scores)
    run(capsys, "export-latent", "--model", workdir / "m.vaec", "--data", workdir / "d.csv",
        "--split", "test", "--out", workdir / "zt.csv")
    code, via_model, _ = run(capsys, "eval", "--scores", scores, "--model", workdir / "m.vaec",
                             "--data", workdir / "d.csv", "--csv-out", workdir / "sweep.csv")
    assert code == 0
    code, via_latent, _ = run(capsys, "eval", "--scores", scores, "--latent", workdir / "zt.csv")
    assert code == 0 and via_model == via_latent
    keys = [line.split("=")[0] for line in via_model.splitlines()]
    for key in ("overall_mae", "mae_most_reliable", "mae_most_unreliable", "correlation"):
        assert key in keys
    assert "fraction=0.2" in via_model
    assert len(read_rows(workdir / "sweep.csv")) == 1


def test_eval_disjoint_ids(workdir, capsys):
    scores = workdir / "s.csv"
    run(capsys, "score", "--model", workdir / "m.vaec", "--data", workdir / "d.csv", "--out", scores)
    text = scores.read_text().replace("obs000300", "zzz")
    scores.write_text(text)
    code, _, err = run(capsys, "eval", "--scores", scores, "--model", workdir / "m.vaec",
                       "--data", workdir / "d.csv")
    assert code == 1 and "'zzz'" in err


def test_export_latent(workdir, capsys):
    out = workdir / "z.csv"
    assert run(capsys, "export-latent", "--model", workdir / "m.vaec", "--data",
               workdir / "d.csv", "--split", "train", "--out", out)[0] == 0
    rows = read_rows(out)
    assert len(rows) == 300
    assert list(rows[0]) == ["id", "dim_0", "dim_1", "dim_2", "prediction", "target", "abs_error"]


def test_export_latent_unlabeled(workdir, capsys):
    lines = (workdir / "d.csv").read_text().splitlines()
    unlabeled = workdir / "u.csv"
    unlabeled.write_text("\n".join(l.rsplit(",", 1)[0] for l in lines) + "\n")
    out = workdir / "zu.csv"
    assert run(capsys, "export-latent", "--model", workdir / "m.vaec", "--data", unlabeled,
               "--out", out)[0] == 0
    assert list(read_rows(out)[0]) == ["id", "dim_0", "dim_1", "dim_2", "prediction"]


def test_config_file_and_precedence(workdir, capsys):
    cfg = workdir / "run.cfg"
    cfg.write_text("# quick run\nepochs = 2\nlatent-dim=2\nencoder_hidden=4\ndecoder_hidden=4\n")
    code, _, err = run(capsys, "train", "--config", cfg, "--data", workdir / "d.csv",
                       "--model-out", workdir / "c.vaec", "--latent-dim", 3, "--verbose")
    assert code == 0
    m = load_model(workdir / "c.vaec")
    assert m.config.epochs == 2 and m.config.latent_dim == 3
    assert "epochs=2 (config)" in err and "latent_dim=3 (flag)" in err
    assert "batch_size=64 (default)" in err


def test_config_file_unknown_key(workdir, capsys):
    cfg = workdir / "bad.cfg"
    cfg.write_text("epochz=2\n")
    with pytest.raises(SystemExit) as exc:
        main(["train", "--config", str(cfg), "--data", str(workdir / "d.csv"),
              "--model-out", str(workdir / "c.vaec")])
    assert exc.value.code == 2
    assert "epochz" in capsys.readouterr().err


def test_help_lists_defaults(capsys):
    with pytest.raises(SystemExit) as exc:
        main(["train", "--help"])
    assert exc.value.code == 0
    text = capsys.readouterr().out
    assert "--kl-weight" in text and "default: 0.001" in text
