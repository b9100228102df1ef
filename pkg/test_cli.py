#!/usr/bin/env python3
"""
Tests for the sdbert command line: output formats, artifacts and exit codes.
"""

import json

import pytest

from sdbert.checkpoint import save_checkpoint
from sdbert.data import Example, build_vocab, save_tsv, synth_dataset
from sdbert.errors import DegenerateRowError, NumericError
from sdbert.main import main, run_command
from sdbert.model import init_params
from sdbert.state import ModelConfig, RunConfig, TrainReport

SMALL_RUN = """
# small enough for a unit test
teacher.num_layers = 1
teacher.num_heads = 2
teacher.d_model = 8
teacher.d_ff = 16
teacher.vocab_size = 60
teacher.max_len = 16
student.num_layers = 1
student.num_heads = 1
student.d_model = 8
student.d_ff = 8
student.vocab_size = 60
student.max_len = 16
sparsity.g = 1
sparsity.w = 2
sparsity.r = 1
training.epochs = 1
training.batch_size = 8
distill.epochs = 1
distill.batch_size = 8
synth.count = 40
synth.eval_count = 10
"""

@pytest.fixture
def run_file(tmp_path):
    path = tmp_path / "run.cfg"
    path.write_text(SMALL_RUN, encoding="utf-8")
    return path

def test_mask_dump_golden(capsys):
    assert main(["mask-dump", "--n", "4", "--g", "1", "--w", "1", "--r", "0"]) == 0
    assert capsys.readouterr().out == "0 1 2 3\n0 1 2\n0 1 2 3\n0 2 3\n"

def test_mask_dump_all_global(capsys):
    assert main(["mask-dump", "--n", "2", "--g", "2"]) == 0
    assert capsys.readouterr().out == "0 1\n0 1\n"

def test_mask_dump_is_repeatable(capsys):
    argv = ["mask-dump", "--n", "30", "--g", "2", "--w", "3", "--r", "4", "--seed", "9"]
    main(argv)
    first = capsys.readouterr().out
    main(argv)
    assert capsys.readouterr().out == first
    assert len(first.splitlines()) == 30

def test_mask_dump_global_exceeds_length():
    assert main(["mask-dump", "--n", "3", "--g", "4"]) == 2
    assert main(["mask-dump", "--n", "3", "--w", "-1"]) == 2

def test_params_base_preset(capsys):
    assert main(["params", "--preset", "base"]) == 0
    summary = json.loads(capsys.readouterr().out)
    assert summary["student"] < summary["teacher"]
    assert summary["ratio"] <= 0.45
    assert summary["reduction"] == pytest.approx(1 - summary["ratio"])

@pytest.mark.parametrize("error", [NumericError("overflow"), DegenerateRowError("row 3 is fully masked")])
def test_numeric_failures_exit_3(error):
    def explode(args):
        raise error

    assert run_command(explode, None) == 3

def test_run_config_overlays_desk_preset(run_file):
    run = RunConfig.from_file(str(run_file))
    assert run.teacher.d_model == 8
    assert run.student.sparsity == run.teacher.sparsity == run.sparsity
    assert run.distill.alpha == 0.5
    assert run.training.learning_rate == 2e-3
    assert run.distill.epochs == 1

def test_unknown_key_exits_2(tmp_path):
    path = tmp_path / "bad.cfg"
    path.write_text("teacher.depth = 3\n", encoding="utf-8")
    assert main(["train-teacher", "--config", str(path), "--output-dir", str(tmp_path / "out")]) == 2

def test_missing_data_path_exits_2_before_training(tmp_path, run_file):
    path = tmp_path / "missing.cfg"
    path.write_text(run_file.read_text() + "data.train = /nonexistent/train.tsv\n", encoding="utf-8")
    out = tmp_path / "out"
    assert main(["train-teacher", "--config", str(path), "--output-dir", str(out)]) == 2
    assert not (out / "teacher.ckpt").exists()

def test_missing_config_exits_2(tmp_path):
    assert main(["pipeline", "--config", str(tmp_path / "nope.cfg"), "--output-dir", str(tmp_path)]) == 2

def test_eval_constant_model_on_balanced_data(tmp_path, capsys):
    config = ModelConfig(num_layers=1, num_heads=1, d_model=4, d_ff=4, vocab_size=30, max_len=8)
    params = init_params(config, 0)
    params["classifier.w"].values[:] = 0.0
    params["classifier.b"].values[:] = [1.0, -1.0]
    data = synth_dataset(20, seed=0)
    save_checkpoint(str(tmp_path / "c.ckpt"), config, params, build_vocab(data, 30))
    save_tsv(data, str(tmp_path / "data.tsv"))

    assert main(["eval", "--ckpt", str(tmp_path / "c.ckpt"), "--data", str(tmp_path / "data.tsv")]) == 0
    assert capsys.readouterr().out == "0.5000\n"

def test_eval_failures_exit_2(tmp_path):
    config = ModelConfig(num_layers=1, num_heads=1, d_model=4, d_ff=4, vocab_size=30, max_len=8)
    save_checkpoint(str(tmp_path / "c.ckpt"), config, init_params(config, 0),
                    build_vocab([Example(text="x", label=0)], 30))
    (tmp_path / "empty.tsv").write_text("", encoding="utf-8")
    (tmp_path / "bad.tsv").write_text("7\tnope\n", encoding="utf-8")

    ckpt = str(tmp_path / "c.ckpt")
    assert main(["eval", "--ckpt", ckpt, "--data", str(tmp_path / "empty.tsv")]) == 2
    assert main(["eval", "--ckpt", ckpt, "--data", str(tmp_path / "bad.tsv")]) == 2
    assert main(["eval", "--ckpt", ckpt, "--data", str(tmp_path / "absent.tsv")]) == 2
    assert main(["eval", "--ckpt", str(tmp_path / "absent.ckpt"), "--data", str(tmp_path / "bad.tsv")]) == 2

def test_train_distill_eval(tmp_path, run_file, capsys):
    out = tmp_path / "out"
    assert main(["train-teacher", "--config", str(run_file), "--output-dir", str(out)]) == 0
    for name in ("teacher.ckpt", "teacher_report.json", "vocab.txt"):
        assert (out / name).is_file()
    first = TrainReport.load(str(out / "teacher_report.json"))
    assert first.role == "teacher"

    assert main(["train-teacher", "--config", str(run_file), "--output-dir", str(out)]) == 0
    again = TrainReport.load(str(out / "teacher_report.json"))
    assert again.accuracy == first.accuracy
    assert again.steps == first.steps

    assert main(["distill", "--config", str(run_file), "--teacher", str(out / "teacher.ckpt"),
                 "--output-dir", str(out)]) == 0
    student = TrainReport.load(str(out / "student_report.json"))
    assert student.parameter_count < first.parameter_count
    assert any(epoch.distill > 0 for epoch in student.epochs)

    save_tsv(synth_dataset(10, seed=8), str(tmp_path / "test.tsv"))
    capsys.readouterr()
    assert main(["eval", "--ckpt", str(out / "student.ckpt"), "--data", str(tmp_path / "test.tsv")]) == 0
    printed = capsys.readouterr().out.strip()
    assert len(printed.split(".")[1]) == 4
    assert 0.0 <= float(printed) <= 1.0

def test_distill_rejects_larger_student(tmp_path, run_file):
    out = tmp_path / "out"
    assert main(["train-teacher", "--config", str(run_file), "--output-dir", str(out)]) == 0
    bigger = tmp_path / "bigger.cfg"
    bigger.write_text(run_file.read_text() + "student.num_layers = 2\n", encoding="utf-8")
    assert main(["distill", "--config", str(bigger), "--teacher", str(out / "teacher.ckpt"),
                 "--output-dir", str(out)]) == 2
    other_vocab = tmp_path / "vocab.cfg"
    other_vocab.write_text(run_file.read_text() + "student.vocab_size = 70\n", encoding="utf-8")
    assert main(["distill", "--config", str(other_vocab), "--teacher", str(out / "teacher.ckpt"),
                 "--output-dir", str(out)]) == 2

def test_eval_memorized_training_set(tmp_path, capsys):
    lines = [f"1\tgreat {w}" for w in ("film", "plot", "cast", "score")]
    lines += [f"0\tawful {w}" for w in ("film", "plot", "cast", "score")]
    (tmp_path / "train.tsv").write_text("\n".join(lines) + "\n", encoding="utf-8")
    cfg = tmp_path / "memorize.cfg"
    cfg.write_text("\n".join([
        "teacher.num_layers = 1", "teacher.num_heads = 1", "teacher.d_model = 8", "teacher.d_ff = 16",
        "teacher.vocab_size = 20", "teacher.max_len = 8",
        "training.epochs = 60", "training.batch_size = 8", "training.learning_rate = 0.01",
        f"data.train = {tmp_path / 'train.tsv'}", f"data.eval = {tmp_path / 'train.tsv'}",
    ]) + "\n", encoding="utf-8")
    out = tmp_path / "out"

    assert main(["train-teacher", "--config", str(cfg), "--output-dir", str(out)]) == 0
    capsys.readouterr()
    assert main(["eval", "--ckpt", str(out / "teacher.ckpt"), "--data", str(tmp_path / "train.tsv")]) == 0
    assert capsys.readouterr().out == "1.0000\n"
