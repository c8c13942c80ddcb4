"""CLI contract: subcommands, determinism, overwrite protection, exit codes."""
import csv
import subprocess
import sys

import numpy as np
import pytest

from dpno.cli import main
from dpno.tensor_io import load_tensor


def run_cli(*argv):
    return main(list(argv))


def gen_args(out, n_train=6, n_test=2, res=32, solve=32, seed=7, extra=()):
    return ["gen-data", "--problem", "burgers", "--n-train", str(n_train),
            "--n-test", str(n_test), "--resolution", str(res),
            "--solve-resolution", str(solve), "--seed", str(seed),
            "--out", str(out), *extra]


class TestGenData:
    def test_creates_bundle_files(self, tmp_path, capsys):
        assert run_cli(*gen_args(tmp_path / "d")) == 0
        names = sorted(p.name for p in (tmp_path / "d").iterdir())
        assert names == ["a_test.dpno", "a_train.dpno", "metadata.txt",
                         "u_test.dpno", "u_train.dpno"]

    def test_rerun_is_byte_identical(self, tmp_path):
        run_cli(*gen_args(tmp_path / "d1"))
        run_cli(*gen_args(tmp_path / "d2"))
        for name in ("a_train.dpno", "u_train.dpno", "a_test.dpno",
                     "u_test.dpno", "metadata.txt"):
            assert (tmp_path / "d1" / name).read_bytes() == \
                (tmp_path / "d2" / name).read_bytes()

    def test_non_power_of_two_resolution_fails(self, tmp_path, capsys):
        rc = run_cli("gen-data", "--problem", "burgers", "--n-train", "1",
                     "--n-test", "0", "--resolution", "65", "--out", str(tmp_path / "d"))
        assert rc != 0
        assert "power of two" in capsys.readouterr().err

    def test_no_overwrite_without_force(self, tmp_path, capsys):
        assert run_cli(*gen_args(tmp_path / "d")) == 0
        assert run_cli(*gen_args(tmp_path / "d")) != 0
        assert "--force" in capsys.readouterr().err
        assert run_cli(*gen_args(tmp_path / "d", extra=("--force",))) == 0


@pytest.fixture(scope="module")
def bundle_dir(tmp_path_factory):
    d = tmp_path_factory.mktemp("bundle") / "burgers"
    assert run_cli(*gen_args(d, n_train=8, n_test=4, res=32, solve=64, seed=1)) == 0
    return d


def train_args(bundle, out, metrics=None, model="fno", extra=()):
    args = ["train", "--data", str(bundle), "--model", model, "--out", str(out),
            "--epochs", "4", "--test-every", "2", "--batch-size", "4",
            "--width", "4", "--modes", "3", "--seed", "0"]
    if metrics:
        args += ["--metrics", str(metrics)]
    return args + list(extra)


class TestTrain:
    def test_train_writes_checkpoint_and_metrics(self, bundle_dir, tmp_path, capsys):
        ckpt = tmp_path / "m.ckpt"
        metrics = tmp_path / "m.csv"
        assert run_cli(*train_args(bundle_dir, ckpt, metrics)) == 0
        assert ckpt.exists()
        with open(metrics) as f:
            rows = list(csv.DictReader(f))
        assert [r["epoch"] for r in rows] == ["1", "2", "3", "4"]
        assert all((r["test_rel_l2"] != "") == (int(r["epoch"]) % 2 == 0) for r in rows)

    def test_metrics_values_reproducible(self, bundle_dir, tmp_path):
        vals = []
        for tag in ("a", "b"):
            run_cli(*train_args(bundle_dir, tmp_path / f"{tag}.ckpt", tmp_path / f"{tag}.csv"))
            with open(tmp_path / f"{tag}.csv") as f:
                vals.append([row[:3] for row in csv.reader(f)])
        assert vals[0] == vals[1]

    def test_checkpoint_overwrite_guard(self, bundle_dir, tmp_path, capsys):
        ckpt = tmp_path / "m.ckpt"
        assert run_cli(*train_args(bundle_dir, ckpt)) == 0
        assert run_cli(*train_args(bundle_dir, ckpt)) != 0
        assert run_cli(*train_args(bundle_dir, ckpt, extra=("--force",))) == 0

    def test_dual_path_block_defaults(self, bundle_dir, tmp_path):
        ckpt = tmp_path / "dp.ckpt"
        assert run_cli(*train_args(bundle_dir, ckpt, model="dp-fno")) == 0
        from dpno.tensor_io import load_checkpoint

        _, config = load_checkpoint(ckpt)
        assert config["arch"]["res_blocks"] == 4
        assert config["arch"]["dense_blocks"] == 3

    def test_invalid_schedule_fails(self, bundle_dir, tmp_path, capsys):
        rc = run_cli("train", "--data", str(bundle_dir), "--model", "fno",
                     "--out", str(tmp_path / "x.ckpt"), "--epochs", "5",
                     "--test-every", "2")
        assert rc != 0
        assert "divide" in capsys.readouterr().err


class TestEval:
    def test_eval_reports_and_matches_logged_train_loss(self, bundle_dir, tmp_path, capsys):
        ckpt = tmp_path / "m.ckpt"
        metrics = tmp_path / "m.csv"
        run_cli(*train_args(bundle_dir, ckpt, metrics))
        with open(metrics) as f:
            final_train = float(list(csv.DictReader(f))[-1]["train_rel_l2"])
        capsys.readouterr()
        assert run_cli("eval", "--checkpoint", str(ckpt), "--data", str(bundle_dir),
                       "--split", "train") == 0
        out = capsys.readouterr().out
        reported = float(out.split("mean relative L2:")[1].split()[0])
        assert abs(reported - final_train) < 1e-6

    def test_error_field_dump(self, bundle_dir, tmp_path, capsys):
        ckpt = tmp_path / "m.ckpt"
        run_cli(*train_args(bundle_dir, ckpt))
        dump = tmp_path / "errs"
        assert run_cli("eval", "--checkpoint", str(ckpt), "--data", str(bundle_dir),
                       "--dump-error-fields", str(dump)) == 0
        with open(dump / "manifest.csv") as f:
            rows = list(csv.DictReader(f))
        assert len(rows) == 4  # test split size
        arr = load_tensor(dump / rows[0]["file"])
        assert arr.shape == (32,)
        assert np.all(arr >= 0.0)

    def test_missing_bundle_is_clean_error(self, tmp_path, capsys):
        rc = run_cli("eval", "--checkpoint", str(tmp_path / "none.ckpt"),
                     "--data", str(tmp_path / "none"))
        assert rc != 0
        err = capsys.readouterr().err
        assert err.startswith("error:")


def test_console_entrypoint_runs():
    proc = subprocess.run([sys.executable, "-m", "dpno.cli", "--help"],
                          capture_output=True, text=True)
    assert proc.returncode == 0
    assert "gen-data" in proc.stdout
