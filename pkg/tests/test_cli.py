import json

import numpy as np
import pytest

from app.core.workflow import CHECKPOINT_FILE, REPORT_JSON_FILE, REPORT_TEXT_FILE, TRAIN_LOG_FILE
from app.utils.data_io import read_features
from main import SYNTHETIC_FILE, main

BENCH_FLAGS = ["--n-seen", "4", "--n-unseen", "3", "--dim", "6", "--attr-dim", "5", "--samples-per-class", "40"]
FAST = [
    "--set", "flow.blocks=2",
    "--set", "flow.hidden_width=8",
    "--set", "train.epochs=2",
    "--set", "train.batch_size=32",
    "--set", "train.learning_rate=1e-3",
    "--set", "synth.per_class_count=10",
    "--set", "classifier.epochs=3",
]


@pytest.fixture(scope="module")
def bench_dir(tmp_path_factory):
    out = tmp_path_factory.mktemp("bench")
    assert main(["gen-bench", *BENCH_FLAGS, "--out", str(out), "--seed", "3"]) == 0
    return out


def _train(bench_dir, out):
    assert main(["train", "--data-dir", str(bench_dir), "--out", str(out), "--seed", "1", *FAST]) == 0


def test_selftest_passes():
    assert main(["selftest", "--seed", "0"]) == 0


def test_train_with_missing_data_dir_exits_1(tmp_path, capsys):
    missing = tmp_path / "no-such-dir"
    assert main(["train", "--data-dir", str(missing), "--out", str(tmp_path / "out")]) == 1
    assert str(missing) in capsys.readouterr().err


def test_unknown_config_key_exits_1(bench_dir, tmp_path, capsys):
    code = main(["train", "--data-dir", str(bench_dir), "--out", str(tmp_path), "--set", "flow.depth=3"])
    assert code == 1
    assert "flow.depth" in capsys.readouterr().err


def test_usage_errors_exit_1():
    with pytest.raises(SystemExit) as exc:
        main(["train"])
    assert exc.value.code == 1


def test_gen_bench_writes_data_directory(bench_dir):
    for name in ("features.bin", "attributes.txt", "split.txt", "truth.json"):
        assert (bench_dir / name).is_file()


def test_gen_bench_is_byte_identical_under_seed(bench_dir, tmp_path):
    assert main(["gen-bench", *BENCH_FLAGS, "--out", str(tmp_path), "--seed", "3"]) == 0
    for name in ("features.bin", "attributes.txt", "split.txt", "truth.json"):
        assert (tmp_path / name).read_bytes() == (bench_dir / name).read_bytes()


def test_train_writes_checkpoint_and_log(bench_dir, tmp_path):
    _train(bench_dir, tmp_path)
    assert (tmp_path / CHECKPOINT_FILE).is_file()
    lines = (tmp_path / TRAIN_LOG_FILE).read_text().splitlines()
    assert lines[0] == "epoch,nll,geom_loss,total"
    assert len(lines) == 3


def test_train_evaluate_is_deterministic(bench_dir, tmp_path):
    reports = []
    for run in ("a", "b"):
        out = tmp_path / run
        _train(bench_dir, out)
        checkpoint = out / CHECKPOINT_FILE
        assert main(["evaluate", "--checkpoint", str(checkpoint), "--data-dir", str(bench_dir), "--seed", "1", *FAST]) == 0
        reports.append(((out / REPORT_TEXT_FILE).read_bytes(), (out / REPORT_JSON_FILE).read_bytes()))
    assert reports[0] == reports[1]

    report = json.loads(reports[0][1])
    for key in ("czsl_acc", "seen_acc", "unseen_acc", "harmonic_mean"):
        assert 0.0 <= report[key] <= 1.0
    assert report["variance_ratio"] is not None
    assert report["bayes_harmonic_mean"] is not None


def test_synthesize_writes_gsmx_features(bench_dir, tmp_path):
    _train(bench_dir, tmp_path / "model")
    out = tmp_path / "synthetic"
    code = main(["synthesize", "--checkpoint", str(tmp_path / "model" / CHECKPOINT_FILE), "--out", str(out), *FAST])
    assert code == 0
    features, labels = read_features(out / SYNTHETIC_FILE)
    assert features.shape == (30, 6)
    assert labels.tolist() == [4] * 10 + [5] * 10 + [6] * 10


def test_evaluate_with_missing_checkpoint_exits_1(bench_dir, tmp_path, capsys):
    missing = tmp_path / "absent.gsmf"
    assert main(["evaluate", "--checkpoint", str(missing), "--data-dir", str(bench_dir)]) == 1
    assert str(missing) in capsys.readouterr().err


def test_corrupt_checkpoint_exits_2(bench_dir, tmp_path):
    bad = tmp_path / "bad.gsmf"
    bad.write_bytes(b"GSMF" + b"\x00" * 8)
    assert main(["evaluate", "--checkpoint", str(bad), "--data-dir", str(bench_dir)]) == 2


def test_run_prints_report_table(bench_dir, tmp_path, capsys):
    assert main(["run", "--data-dir", str(bench_dir), "--out", str(tmp_path), *FAST]) == 0
    printed = capsys.readouterr().out
    assert "harmonic_mean" in printed
    assert (tmp_path / REPORT_TEXT_FILE).is_file()
    assert (tmp_path / CHECKPOINT_FILE).is_file()


def test_evaluate_rejects_checkpoint_for_other_data(bench_dir, tmp_path):
    _train(bench_dir, tmp_path / "model")
    other = tmp_path / "other"
    assert main(["gen-bench", "--n-seen", "4", "--n-unseen", "3", "--dim", "7", "--attr-dim", "5",
                 "--samples-per-class", "40", "--out", str(other)]) == 0
    checkpoint = tmp_path / "model" / CHECKPOINT_FILE
    assert main(["evaluate", "--checkpoint", str(checkpoint), "--data-dir", str(other)]) == 1


def test_synthesized_class_means_are_finite(bench_dir, tmp_path):
    _train(bench_dir, tmp_path / "model")
    out = tmp_path / "syn"
    assert main(["synthesize", "--checkpoint", str(tmp_path / "model" / CHECKPOINT_FILE), "--out", str(out)]) == 0
    features, _ = read_features(out / SYNTHETIC_FILE)
    assert np.isfinite(features).all()
