#!/usr/bin/env python3
"""
Tests for the cross-entropy / logit-distance objective and the two training phases.
"""

import numpy as np
import numpy.testing as npt
import pytest

from sdbert.data import Example, batch_iter, build_vocab, synth_dataset
from sdbert.distill import (
    ce_loss,
    combined_loss,
    distill_loss,
    distill_student,
    evaluate,
    logits_for,
    train_teacher,
)
from sdbert.errors import ConfigError, ContractError, DataError, DimensionError
from sdbert.model import forward, init_params
from sdbert.optim import Adam
from sdbert.state import DistillConfig, ModelConfig, SparsityConfig, TrainReport
from sdbert.tensor import Tape, Tensor, backward, grad_check

SPARSITY = SparsityConfig(g=1, w=2, r=1, seed=0)
TEACHER = ModelConfig(num_layers=2, num_heads=2, d_model=8, d_ff=16, vocab_size=60, max_len=16, sparsity=SPARSITY)
STUDENT = ModelConfig(num_layers=1, num_heads=1, d_model=8, d_ff=16, vocab_size=60, max_len=16, sparsity=SPARSITY)
QUICK = DistillConfig(alpha=0.5, epochs=1, batch_size=8, learning_rate=1e-3, seed=7)

@pytest.fixture(scope="module")
def corpus():
    train = synth_dataset(40, seed=1)
    evaluation = synth_dataset(12, seed=2)
    return train, evaluation, build_vocab(train, TEACHER.vocab_size)

@pytest.fixture(scope="module")
def teacher(corpus):
    train, evaluation, vocab = corpus
    return train_teacher(train, evaluation, vocab, TEACHER, QUICK)

def test_ce_examples():
    assert ce_loss(Tensor([[0.0, 0.0]]), [0]).item() == pytest.approx(np.log(2), abs=1e-12)
    assert ce_loss(Tensor([[0.0, 0.0]]), [1]).item() == pytest.approx(0.6931, abs=1e-4)
    assert ce_loss(Tensor([[30.0, -30.0]]), [0]).item() <= 1e-9
    assert ce_loss(Tensor([[1.0, -1.0]]), [0]).item() == pytest.approx(0.1269, abs=1e-4)

def test_ce_label_out_of_range():
    with pytest.raises(ContractError):
        ce_loss(Tensor([[0.0, 0.0]]), [2])

def test_distill_examples():
    z = Tensor([[0.3, -0.2]])
    assert distill_loss(z, np.array([[0.3, -0.2]])).item() == 0.0
    student = Tensor([[0.0, 0.0]], requires_grad=True)
    with Tape() as tape:
        loss = distill_loss(student, np.array([[1.0, -1.0]]))
    assert loss.item() == 2.0
    backward(loss, tape)
    npt.assert_array_equal(student.grad, [[-2.0, 2.0]])

def test_distill_shape_mismatch():
    with pytest.raises(DimensionError):
        distill_loss(Tensor([[0.0, 0.0]]), np.zeros((2, 2)))

def test_combined_examples():
    z_s = Tensor([[0.0, 0.0]])
    z_b = np.array([[1.0, -1.0]])
    assert combined_loss(1.0, z_s, [0], z_b).combined == pytest.approx(np.log(2))
    assert combined_loss(0.0, Tensor(z_b.copy()), [0], z_b).combined == 0.0
    assert combined_loss(0.5, z_s, [0], z_b).combined == pytest.approx(1.3466, abs=1e-3)

def test_combined_rejects_bad_alpha():
    for alpha in (-0.1, 1.5):
        with pytest.raises(ConfigError):
            combined_loss(alpha, Tensor([[0.0, 0.0]]), [0], np.zeros((1, 2)))

@pytest.mark.parametrize("seed", range(5))
def test_combined_endpoints_are_bitwise(seed):
    rng = np.random.default_rng(seed)
    z_s = Tensor(rng.normal(size=(4, 3)))
    z_b = rng.normal(size=(4, 3))
    labels = rng.integers(0, 3, size=4)
    assert combined_loss(1.0, z_s, labels, z_b).combined == ce_loss(z_s, labels).item()
    assert combined_loss(0.0, z_s, labels, z_b).combined == distill_loss(z_s, z_b).item()

def test_combined_is_linear_in_alpha():
    rng = np.random.default_rng(9)
    z_s = Tensor(rng.normal(size=(5, 2)))
    z_b = rng.normal(size=(5, 2))
    labels = rng.integers(0, 2, size=5)
    ce, dl = ce_loss(z_s, labels).item(), distill_loss(z_s, z_b).item()
    for alpha in (0.0, 0.25, 0.5, 0.75, 1.0):
        breakdown = combined_loss(alpha, z_s, labels, z_b)
        assert breakdown.combined == pytest.approx(alpha * (ce - dl) + dl, abs=1e-12)
        assert breakdown.ce >= 0 and breakdown.distill >= 0

@pytest.mark.parametrize("seed", range(20))
def test_combined_gradient(seed):
    rng = np.random.default_rng(seed)
    z_b = rng.uniform(-1, 1, size=(3, 4))
    labels = rng.integers(0, 4, size=3)
    for f in (lambda z: ce_loss(z, labels), lambda z: distill_loss(z, z_b),
              lambda z: combined_loss(0.3, z, labels, z_b).loss):
        assert grad_check(f, Tensor(rng.uniform(-1, 1, size=(3, 4)))) <= 1e-4

def constant_model():
    """Classifier that always outputs [+1, -1]."""
    params = init_params(STUDENT, 0)
    params["classifier.w"].values[:] = 0.0
    params["classifier.b"].values[:] = [1.0, -1.0]
    return params

def test_evaluate_constant_model(corpus):
    _, _, vocab = corpus
    params = constant_model()
    zeros = [Example(text="film story", label=0)] * 10
    ones = [Example(text="film story", label=1)] * 10
    assert evaluate(params, STUDENT, zeros, vocab) == 1.0
    assert evaluate(params, STUDENT, ones, vocab) == 0.0
    assert evaluate(params, STUDENT, zeros[:3] + ones[:7], vocab) == pytest.approx(0.3)
    with pytest.raises(DataError):
        evaluate(params, STUDENT, [], vocab)

def test_adam_first_step_moves_by_learning_rate():
    params = init_params(STUDENT, 0)
    before = params["classifier.b"].values.copy()
    for _, t in params.items():
        t.grad = np.ones_like(t.values)
    Adam(params, learning_rate=0.01).step()
    npt.assert_allclose(params["classifier.b"].values, before - 0.01, atol=1e-9)
    assert params["classifier.b"].grad is None

def test_train_teacher_one_update_per_batch(corpus):
    train, evaluation, vocab = corpus
    config = QUICK.model_copy(update={"batch_size": len(train)})
    _, report = train_teacher(train, evaluation, vocab, STUDENT, config)
    assert report.updates == 1
    assert len(report.steps) == 1
    assert [e.epoch for e in report.epochs] == [1]
    assert 0.0 <= report.accuracy <= 1.0
    assert report.wall_clock_seconds > 0

def test_train_teacher_is_deterministic(corpus, teacher):
    train, evaluation, vocab = corpus
    params, report = train_teacher(train, evaluation, vocab, TEACHER, QUICK)
    first_params, first_report = teacher
    assert params.digest() == first_params.digest()
    assert report.steps == first_report.steps
    assert report.accuracy == first_report.accuracy

def test_train_teacher_rejects_empty_data(corpus):
    _, evaluation, vocab = corpus
    with pytest.raises(DataError):
        train_teacher([], evaluation, vocab, STUDENT, QUICK)

def test_distill_keeps_teacher_frozen(corpus, teacher):
    train, evaluation, vocab = corpus
    teacher_params, _ = teacher
    before = teacher_params.digest()
    _, report = distill_student(teacher_params, TEACHER, STUDENT, train, evaluation, vocab, QUICK)
    assert teacher_params.digest() == before
    assert report.role == "student"
    assert any(e.distill > 0 for e in report.epochs)
    assert report.parameter_count < teacher[1].parameter_count

def test_teacher_logits_line_up_with_shuffled_batches(corpus, teacher):
    train, _, vocab = corpus
    teacher_params, _ = teacher
    cached = logits_for(teacher_params, TEACHER, train, vocab, STUDENT.max_len)
    assert cached.shape == (len(train), TEACHER.num_classes)
    for batch in batch_iter(train, vocab, STUDENT.max_len, 8, shuffle_seed=QUICK.seed + 1):
        direct = forward(teacher_params, TEACHER, batch.token_ids, batch.pad_mask).values
        npt.assert_allclose(cached[batch.positions], direct, rtol=0, atol=1e-10)

def test_distill_with_alpha_one_matches_supervised(corpus, teacher):
    train, evaluation, vocab = corpus
    teacher_params, _ = teacher
    config = QUICK.model_copy(update={"alpha": 1.0})
    _, distilled = distill_student(teacher_params, TEACHER, STUDENT, train, evaluation, vocab, config)
    _, supervised = train_teacher(train, evaluation, vocab, STUDENT, config)
    assert distilled.steps == supervised.steps
    assert distilled.accuracy == supervised.accuracy

def test_distill_rejects_mismatched_student(corpus, teacher):
    train, evaluation, vocab = corpus
    teacher_params, _ = teacher
    for bad in (STUDENT.model_copy(update={"vocab_size": 61}),
                STUDENT.model_copy(update={"num_classes": 3}),
                STUDENT.model_copy(update={"max_len": 32})):
        with pytest.raises(ConfigError):
            distill_student(teacher_params, TEACHER, bad, train, evaluation, vocab, QUICK)

def test_train_report_json_round_trip(tmp_path, teacher):
    _, report = teacher
    path = tmp_path / "report.json"
    report.save(str(path))
    loaded = TrainReport.load(str(path))
    assert loaded == report
    assert loaded.final_accuracy == report.accuracy
