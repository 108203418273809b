import json
import subprocess
import sys

import numpy as np
import pytest

from cfuad import cli, store
from cfuad.neuralnet import Network


def run(*argv):
    return cli.main([str(a) for a in argv])


TOY = ["--set", "num_aps=2", "--set", "num_users=8", "--set", "pilot_len=4",
       "--set", "area_side_m=150", "--set", "activity_prob=0.4"]


@pytest.fixture(scope="module")
def toy(tmp_path_factory):
    d = tmp_path_factory.mktemp("cli")
    assert run("generate", *TOY, "--count", 60, "--seed", 1, "--out", d / "train.cfad") == 0
    assert run("generate", *TOY, "--count", 40, "--seed", 2, "--out", d / "test.cfad") == 0
    assert run("train", "--data", d / "train.cfad", "--val", d / "test.cfad", "--epochs", 2,
               "--batch", 16, "--seed", 3, "--out-model", d / "m.ckpt") == 0
    return d


def manifest(path):
    return json.loads((path.parent / f"{path.name}.manifest.json").read_text())


class TestGenerate:
    def test_defaults(self, tmp_path):
        out = tmp_path / "d.cfad"
        assert run("generate", "--count", 0, "--out", out) == 0
        cfg = store.read_dataset(out).config
        assert (cfg.num_aps, cfg.num_users, cfg.pilot_len, cfg.activity_prob) == (20, 200, 40, 0.1)
        m = manifest(out)
        assert m["command"] == "generate" and m["seed"] == 0
        assert m["config"]["num_aps"] == 20

    def test_config_file(self, tmp_path):
        cfg = tmp_path / "c.cfg"
        cfg.write_text("num_aps = 3\nnum_users = 5  # small\npilot_len = 4\n")
        out = tmp_path / "d.cfad"
        assert run("generate", "--config", cfg, "--count", 2, "--out", out) == 0
        assert store.read_dataset(out).header.dims == (3, 1, 5, 4)

    def test_identical_digests(self, tmp_path):
        for name in ("a", "b"):
            assert run("generate", *TOY, "--count", 5, "--seed", 4, "--out", tmp_path / name) == 0
        da = manifest(tmp_path / "a")["outputs"][str(tmp_path / "a")]
        db = manifest(tmp_path / "b")["outputs"][str(tmp_path / "b")]
        assert da == db == cli.file_digest(tmp_path / "a")

    def test_unknown_key(self, tmp_path, capsys):
        cfg = tmp_path / "c.cfg"
        cfg.write_text("num_aps = 3\nnum_wizards = 2\n")
        assert run("generate", "--config", cfg, "--count", 1, "--out", tmp_path / "x") == 1
        assert "num_wizards" in capsys.readouterr().err
        assert run("generate", "--set", "bogus=1", "--count", 1, "--out", tmp_path / "x") == 1
        assert run("generate", "--set", "noequals", "--count", 1, "--out", tmp_path / "x") == 1
        assert run("generate", "--count", -1, "--out", tmp_path / "x") == 1
        assert run("generate", "--config", tmp_path / "missing", "--count", 1,
                   "--out", tmp_path / "x") == 1

    def test_usage_errors(self):
        with pytest.raises(SystemExit) as exc:
            run("generate")
        assert exc.value.code == 1
        with pytest.raises(SystemExit) as exc:
            run("frobnicate")
        assert exc.value.code == 1


class TestTrain:
    def test_epochs_zero(self, toy, tmp_path):
        out = tmp_path / "init.ckpt"
        assert run("train", "--data", toy / "train.cfad", "--epochs", 0, "--seed", 9,
                   "--out-model", out) == 0
        lines = (tmp_path / "init.ckpt.loss.csv").read_text().splitlines()
        assert lines == ["epoch,train_loss,val_loss"]
        net = store.load_checkpoint(out)
        fresh = Network(1, 8, 2, rng=store.stream(9, 2))
        for (_, p), (_, q) in zip(net.named_params(), fresh.named_params()):
            np.testing.assert_array_equal(p, q)

    def test_rerun_identical(self, toy, tmp_path):
        out = tmp_path / "again.ckpt"
        assert run("train", "--data", toy / "train.cfad", "--val", toy / "test.cfad", "--epochs", 2,
                   "--batch", 16, "--seed", 3, "--out-model", out) == 0
        assert out.read_bytes() == (toy / "m.ckpt").read_bytes()
        assert (tmp_path / "again.ckpt.loss.csv").read_bytes() == (toy / "m.ckpt.loss.csv").read_bytes()

    def test_loss_csv(self, toy):
        lines = (toy / "m.ckpt.loss.csv").read_text().splitlines()
        assert lines[0] == "epoch,train_loss,val_loss" and len(lines) == 3
        assert all(np.isfinite(float(v)) for row in lines[1:] for v in row.split(","))

    def test_dim_mismatch(self, toy, tmp_path):
        other = tmp_path / "o.cfad"
        assert run("generate", *TOY, "--set", "num_users=9", "--count", 3, "--out", other) == 0
        assert run("train", "--data", toy / "train.cfad", "--val", other, "--epochs", 1,
                   "--out-model", tmp_path / "x.ckpt") == 2
        assert run("eval", "--model", toy / "m.ckpt", "--data", other, "--threshold", 0.5) == 2

    def test_keep_best_needs_val(self, toy, tmp_path):
        assert run("train", "--data", toy / "train.cfad", "--epochs", 1, "--keep-best",
                   "--out-model", tmp_path / "x.ckpt") == 1
        assert run("train", "--data", toy / "train.cfad", "--val", toy / "test.cfad", "--epochs", 2,
                   "--batch", 16, "--keep-best", "--out-model", tmp_path / "kb.ckpt") == 0
        assert manifest(tmp_path / "kb.ckpt")["inputs"]["keep_best"] == "True"

    def test_missing_data(self, tmp_path):
        assert run("train", "--data", tmp_path / "nope.cfad", "--out-model", tmp_path / "m") == 2


class TestEvalRoc:
    def test_eval_target_fa(self, toy, tmp_path):
        out = tmp_path / "ev.csv"
        assert run("eval", "--model", toy / "m.ckpt", "--data", toy / "test.cfad",
                   "--target-fa", 0.1, "--out-csv", out) == 0
        header, row = out.read_text().splitlines()
        assert header == "threshold,recall,fa,tp,fp,tn,fn"
        fa = float(row.split(",")[2])
        assert fa <= 0.1
        report = (tmp_path / "ev.csv.txt").read_text()
        assert "recall=" in report and "false_alarm=" in report

    def test_eval_repeatable(self, toy, tmp_path):
        for name in ("a.csv", "b.csv"):
            assert run("eval", "--model", toy / "m.ckpt", "--data", toy / "test.cfad",
                       "--threshold", 0.3, "--out-csv", tmp_path / name) == 0
        assert (tmp_path / "a.csv").read_bytes() == (tmp_path / "b.csv").read_bytes()
        assert (tmp_path / "a.csv.txt").read_text() == (tmp_path / "b.csv.txt").read_text()

    def test_eval_single_class(self, toy, tmp_path):
        d = tmp_path / "zero.cfad"
        assert run("generate", *TOY, "--set", "activity_prob=0", "--count", 5, "--out", d) == 0
        assert run("eval", "--model", toy / "m.ckpt", "--data", d, "--target-fa", 0.1,
                   "--out-csv", tmp_path / "e.csv") == 2

    def test_numeric_failure(self, toy, tmp_path, monkeypatch):
        monkeypatch.setattr(Network, "predict", lambda self, x, batch_size=1024: np.full(
            (len(x), self.num_users), np.nan))
        assert run("eval", "--model", toy / "m.ckpt", "--data", toy / "test.cfad",
                   "--threshold", 0.5, "--out-csv", tmp_path / "e.csv") == 3

    def test_roc_model_csv(self, toy, tmp_path):
        out = tmp_path / "roc.csv"
        assert run("roc", "--model", toy / "m.ckpt", "--data", toy / "test.cfad",
                   "--out-csv", out) == 0
        lines = out.read_text().splitlines()
        assert lines[0] == "threshold,fa,recall" and lines[-1].startswith("# auc=")
        assert 0.0 <= float(lines[-1].split("=")[1]) <= 1.0
        assert manifest(out)["command"] == "roc"

    def test_baseline_high_snr(self, tmp_path):
        d = tmp_path / "b.cfad"
        # one AP, short distances: every active user is far above the noise
        assert run("generate", "--set", "num_aps=1", "--set", "num_users=6", "--set",
                   "pilot_len=6", "--set", "area_side_m=100", "--set", "activity_prob=0.5",
                   "--count", 40, "--seed", 5, "--out", d) == 0
        out = tmp_path / "roc.csv"
        assert run("roc", "--baseline", "--data", d, "--out-csv", out) == 0
        auc = float(out.read_text().splitlines()[-1].split("=")[1])
        assert auc > 0.95

    def test_untrained_model_null_auc(self, tmp_path):
        d = tmp_path / "bal.cfad"
        assert run("generate", *TOY, "--set", "activity_prob=0.5", "--count", 300, "--seed", 6,
                   "--out", d) == 0
        assert run("train", "--data", d, "--epochs", 0, "--seed", 1,
                   "--out-model", tmp_path / "init.ckpt") == 0
        out = tmp_path / "roc.csv"
        assert run("roc", "--model", tmp_path / "init.ckpt", "--data", d, "--out-csv", out) == 0
        auc = float(out.read_text().splitlines()[-1].split("=")[1])
        assert abs(auc - 0.5) < 0.05


class TestBaseline:
    def test_scores_file_and_determinism(self, toy, tmp_path):
        for name in ("a.csv", "b.csv"):
            assert run("baseline", "--data", toy / "test.cfad", "--sweeps", 5,
                       "--out-scores", tmp_path / name) == 0
        text = (tmp_path / "a.csv").read_text()
        assert text == (tmp_path / "b.csv").read_text()
        lines = text.splitlines()
        assert lines[0] == "sample," + ",".join(f"user{i}" for i in range(8))
        assert len(lines) == 41
        assert all(float(v) >= 0 for v in lines[1].split(",")[1:])

    def test_single_ap_scores(self, tmp_path):
        from cfuad import covdet
        d = tmp_path / "one.cfad"
        assert run("generate", *TOY, "--set", "num_aps=1", "--count", 4, "--out", d) == 0
        out = tmp_path / "s.csv"
        assert run("baseline", "--data", d, "--out-scores", out) == 0
        got = np.loadtxt(out, delimiter=",", skiprows=1)[:, 1:]
        ds = store.read_dataset(d)
        ref = covdet.coordinate_descent(ds.header.pilots, ds.frames(range(4))[:, 0])
        np.testing.assert_allclose(got, ref, rtol=1e-15)


def test_entry_point(tmp_path):
    out = subprocess.run([sys.executable, "-m", "cfuad.cli", "--threads", "1", "generate",
                          "--count", "1", *TOY, "--out", str(tmp_path / "e.cfad")],
                         capture_output=True, text=True)
    assert out.returncode == 0, out.stderr
    assert len(store.read_dataset(tmp_path / "e.cfad")) == 1
