"""End-to-end tests of the command-line interface."""

import subprocess
import sys

import numpy as np
import pytest

from fadecast import cli
from fadecast.predictor import TrainingConfig

TINY = ["hidden_size=4", "batches_per_epoch=32", "batch_size=16", "min_epochs=1", "max_epochs=1",
        "dataset_size=100", "horizon=5", "val_sequences=10"]


def run(*argv):
    return cli.main([str(a) for a in argv])


def body(path):
    return [ln for ln in path.read_text().splitlines() if not ln.startswith("#")]


def comments(path):
    return [ln[2:] for ln in path.read_text().splitlines() if ln.startswith("# ")]


@pytest.fixture(scope="module")
def workdir(tmp_path_factory):
    return tmp_path_factory.mktemp("cli")


@pytest.fixture(scope="module")
def model(workdir):
    path = workdir / "m.fcp"
    args = ["train", "--preset", "desk", "--seed", "3", "--out", path]
    for item in TINY:
        args += ["--set", item]
    assert run(*args) == cli.EXIT_OK
    return path


@pytest.fixture(scope="module")
def lut(workdir, model):
    path = workdir / "lut.csv"
    assert run("build-lut", "--model", model, "--trials", 20, "--n-grid", "5:5:15",
               "--d-grid", "50", "--snr-grid", "0:10:20", "--out", path, "--seed", 1) == cli.EXIT_OK
    return path


class TestHelpers:
    def test_parse_sweep(self):
        assert cli.parse_sweep("0:2:6") == [0, 2, 4, 6]
        assert cli.parse_sweep("5,10") == [5, 10]
        assert cli.parse_sweep("7") == [7]
        assert cli.parse_sweep("0:0.1:0.3") == [0, 0.1, 0.2, 0.3]
        with pytest.raises(cli.UsageError):
            cli.parse_sweep("0:0:5")

    def test_seed_precedence(self, monkeypatch):
        monkeypatch.setenv("FADECAST_SEED", "11")
        assert cli.resolve_seed(4, 2) == 4
        assert cli.resolve_seed(None, 2) == 11
        monkeypatch.delenv("FADECAST_SEED")
        assert cli.resolve_seed(None, 2) == 2
        monkeypatch.setenv("FADECAST_SEED", "abc")
        with pytest.raises(cli.UsageError):
            cli.resolve_seed(None)

    def test_header_lists_sorted_config(self):
        lines = cli.header("x", {"b": 1, "a": 2}, 5, "ff")
        assert lines[1:] == ["command=x", "seed=5", "model_fingerprint=ff", "config.a=2", "config.b=1"]


class TestGenChannel:
    def test_flat_trace(self, tmp_path):
        out = tmp_path / "h.csv"
        assert run("gen-channel", "--fd", 50, "--n", 64, "--seed", 2, "--out", out) == 0
        rows = body(out)
        assert rows[0] == "idx,re,im" and len(rows) == 65
        assert "seed=2" in comments(out) and "config.fd=50.0" in comments(out)

    def test_multipath_trace(self, tmp_path):
        out = tmp_path / "h.csv"
        assert run("gen-channel", "--fd", 50, "--n", 16, "--profile", "EPA", "--ts", 1e-7, "--out", out) == 0
        assert body(out)[0] == "idx,tap,re,im"

    def test_deterministic(self, tmp_path):
        a, b = tmp_path / "a.csv", tmp_path / "b.csv"
        run("gen-channel", "--fd", 10, "--n", 32, "--seed", 1, "--out", a)
        run("gen-channel", "--fd", 10, "--n", 32, "--seed", 1, "--out", b)
        assert a.read_bytes() == b.read_bytes()

    def test_env_seed(self, tmp_path, monkeypatch):
        a, b = tmp_path / "a.csv", tmp_path / "b.csv"
        run("gen-channel", "--fd", 10, "--n", 8, "--seed", 9, "--out", a)
        monkeypatch.setenv("FADECAST_SEED", "9")
        run("gen-channel", "--fd", 10, "--n", 8, "--out", b)
        assert body(a) == body(b)


class TestTrainPredict:
    def test_model_and_report(self, model):
        report = model.with_suffix(".train.csv")
        lines = comments(report)
        assert "seed=3" in lines and "stop_reason=max_epochs" in lines
        assert any(ln.startswith("model_fingerprint=") for ln in lines)
        assert body(report)[0] == "epoch,train_loss,val_loss,lr" and len(body(report)) == 2

    def test_paper_preset_values(self):
        cfg = TrainingConfig.preset("paper")
        assert (cfg.start_lr, cfg.batches_per_epoch, cfg.min_epochs, cfg.max_epochs) == (0.01, 4500, 200, 1000)

    def test_config_file(self, tmp_path):
        cfg = tmp_path / "t.cfg"
        cfg.write_text("\n".join(TINY) + "\n")
        out = tmp_path / "m.fcp"
        assert run("train", "--config", cfg, "--out", out, "--report", tmp_path / "r.csv") == 0
        assert "config.hidden_size=4" in comments(tmp_path / "r.csv")

    def test_bad_override(self, tmp_path):
        assert run("train", "--set", "nope=1", "--out", tmp_path / "m.fcp") == cli.EXIT_INVALID
        assert run("train", "--set", "nope", "--out", tmp_path / "m.fcp") == cli.EXIT_USAGE

    def test_divergence_exit_code(self, tmp_path):
        args = ["train", "--out", tmp_path / "m.fcp", "--report", tmp_path / "r.csv",
                "--set", "start_lr=1e300", "--set", "use_lr_schedule=false"]
        for item in TINY:
            args += ["--set", item]
        with np.errstate(all="ignore"):
            assert run(*args) == cli.EXIT_DIVERGED
        assert (tmp_path / "r.csv").exists()

    def test_predict(self, model, tmp_path):
        trace = tmp_path / "h.csv"
        run("gen-channel", "--fd", 50, "--n", 20, "--out", trace)
        out = tmp_path / "p.csv"
        assert run("predict", "--model", model, "--estimates", trace, "--n-preds", 4, "--out", out) == 0
        assert len(body(out)) == 5

    def test_predict_short_input(self, model, tmp_path):
        trace = tmp_path / "h.csv"
        run("gen-channel", "--fd", 50, "--n", 5, "--out", trace)
        assert run("predict", "--model", model, "--estimates", trace, "--n-preds", 4,
                   "--out", tmp_path / "p.csv") == cli.EXIT_INVALID


class TestSweeps:
    def test_lut_header(self, lut, model):
        from fadecast.predictor import PredictorNet
        assert f"fingerprint={PredictorNet.load(model).fingerprint()}" in comments(lut)

    @pytest.mark.parametrize("scheme,extra", [("adaptive", []), ("datadriven", ["--k", 2]),
                                              ("fixed", ["--n-preds", 5]), ("perfect", ["--n-preds", 5]),
                                              ("ar2", ["--n-preds", 5]), ("lmmse-li", ["--n-preds", 5])])
    def test_run_ber_schemes(self, scheme, extra, model, lut, tmp_path):
        out = tmp_path / "ber.csv"
        code = run("run-ber", "--scheme", scheme, "--model", model, "--lut", lut, "--ebn0", "0:10:20",
                   "--trials", 20, "--min-errors", 0, "--seed", 4, "--out", out, *extra)
        assert code == 0
        rows = body(out)
        assert rows[0].split(",") == cli.BER_COLUMNS and len(rows) == 4

    def test_run_ber_deterministic_across_jobs(self, model, lut, tmp_path):
        a, b = tmp_path / "a.csv", tmp_path / "b.csv"
        common = ["run-ber", "--scheme", "adaptive", "--model", model, "--lut", lut, "--ebn0", "10",
                  "--trials", 400, "--seed", 4]
        run(*common, "--out", a, "--jobs", 1)
        run(*common, "--out", b, "--jobs", 2)
        assert body(a) == body(b)

    def test_run_cpsc(self, model, tmp_path):
        out = tmp_path / "c.csv"
        assert run("run-cpsc", "--model", model, "--snr", "10,20", "--trials", 20, "--np", 4,
                   "--out", out) == 0
        rows = body(out)
        assert rows[0].split(",") == cli.CPSC_COLUMNS and rows[1].split(",")[2] == "4"

    def test_run_cpsc_needs_model(self, tmp_path):
        assert run("run-cpsc", "--out", tmp_path / "c.csv") == cli.EXIT_USAGE


class TestErrors:
    def test_unknown_flag(self):
        assert run("gen-channel", "--bogus") == cli.EXIT_USAGE

    def test_missing_file(self, tmp_path):
        assert run("predict", "--model", tmp_path / "none.fcp", "--estimates", "x.csv",
                   "--n-preds", 1, "--out", tmp_path / "p.csv") == cli.EXIT_MISSING_FILE

    def test_fingerprint_mismatch(self, lut, tmp_path):
        other = tmp_path / "o.fcp"
        args = ["train", "--seed", "99", "--out", other]
        for item in TINY:
            args += ["--set", item]
        run(*args)
        assert run("run-ber", "--model", other, "--lut", lut, "--ebn0", "10", "--trials", 5,
                   "--out", tmp_path / "b.csv") == cli.EXIT_FINGERPRINT

    def test_scheme_requirements(self, model, tmp_path):
        assert run("run-ber", "--scheme", "adaptive", "--model", model, "--out", tmp_path / "b.csv") == 2
        assert run("run-ber", "--scheme", "fixed", "--out", tmp_path / "b.csv") == 2

    def test_bad_modulation(self, tmp_path):
        assert run("run-cpsc", "--csi", "perfect", "--mod", "7psk", "--out", tmp_path / "c.csv") == 5

    def test_console_script(self):
        proc = subprocess.run([sys.executable, "-m", "fadecast.cli", "--version"], capture_output=True, text=True)
        assert proc.returncode == 0 and proc.stdout.startswith("fadecast")


class TestReport:
    def test_merge_two_points(self, model, lut, tmp_path):
        paths = []
        for i, e in enumerate(("20", "0")):
            p = tmp_path / f"{i}.csv"
            run("run-ber", "--scheme", "adaptive", "--model", model, "--lut", lut, "--ebn0", e,
                "--trials", 10, "--out", p)
            paths.append(p)
        out = tmp_path / "merged.csv"
        assert run("report", *paths, "--out", out) == 0
        rows = body(out)
        assert len(rows) == 3 and rows[1].startswith("0,") and rows[2].startswith("20,")
        again = tmp_path / "again.csv"
        run("report", *paths, "--out", again)
        assert body(again) == rows

    def test_pivot(self, tmp_path):
        a = tmp_path / "a.csv"
        a.write_text("ebn0_db,scheme,ber\n0,x,0.1\n0,y,0.2\n10,x,0.01\n")
        out = tmp_path / "p.csv"
        assert run("report", a, "--pivot", "ber", "--out", out) == 0
        assert body(out) == ["ebn0_db,ber[x],ber[y]", "0,0.1,0.2", "10,0.01,nan"]

    def test_schema_mismatch_lists_columns(self, tmp_path, capsys):
        a, b = tmp_path / "a.csv", tmp_path / "b.csv"
        a.write_text("x,y\n1,2\n")
        b.write_text("x,z\n1,2\n")
        assert run("report", a, b) == cli.EXIT_INVALID
        err = capsys.readouterr().err
        assert "'y'" in err and "'z'" in err

    def test_empty_input(self):
        assert run("report") == cli.EXIT_INVALID

    def test_stdout(self, tmp_path, capsys):
        a = tmp_path / "a.csv"
        a.write_text("# c\nx,y\n2,b\n1,a\n")
        assert run("report", a) == 0
        assert capsys.readouterr().out == "x,y\n1,a\n2,b\n"
