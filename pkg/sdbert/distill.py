"""
Supervised teacher training and logit distillation into a smaller student.

The student objective mixes cross-entropy on the true labels with the squared
distance to the frozen teacher's logits:

    combined = alpha * ce + (1 - alpha) * distill

where `distill` is the squared Euclidean norm of (teacher - student) logits,
summed over classes and averaged over the batch. There is no temperature: raw
logits are matched.
"""

import logging
import time
from typing import List, Optional, Sequence, Tuple, Union

import numpy as np

from .data import Example, Vocabulary, batch_iter
from .errors import ConfigError, ContractError, DataError, DimensionError
from .model import Parameters, count_parameters, forward, init_params
from .optim import Adam
from .state import DistillConfig, EpochLoss, LossBreakdown, ModelConfig, TrainReport
from .tensor import Tape, Tensor, add, backward, log_softmax_rows, mean, mul, pick_columns, reduce_sum, scale, sub

logger = logging.getLogger(__name__)

EVAL_BATCH_SIZE = 128


def ce_loss(student_logits: Tensor, labels: Sequence[int]) -> Tensor:
    """Batch mean of -log softmax(logits)[label]."""
    labels = np.asarray(labels, dtype=np.int64)
    batch, classes = student_logits.shape
    if labels.shape != (batch,):
        raise DimensionError(f"expected {batch} labels, got shape {labels.shape}")
    if labels.size and (labels.min() < 0 or labels.max() >= classes):
        raise ContractError(f"labels must lie in [0, {classes})")
    return scale(mean(pick_columns(log_softmax_rows(student_logits), labels)), -1.0)


def distill_loss(student_logits: Tensor, teacher_logits: Union[Tensor, np.ndarray]) -> Tensor:
    """Batch mean of ||z_teacher - z_student||²; the teacher side is a constant."""
    target = teacher_logits.values if isinstance(teacher_logits, Tensor) else np.asarray(teacher_logits, dtype=np.float64)
    if target.shape != student_logits.shape:
        raise DimensionError(f"logit shapes differ: student {student_logits.shape}, teacher {target.shape}")
    diff = sub(student_logits, Tensor(target))
    return scale(reduce_sum(mul(diff, diff)), 1.0 / student_logits.shape[0])


def combined_loss(alpha: float, student_logits: Tensor, labels: Sequence[int],
                  teacher_logits: Optional[Union[Tensor, np.ndarray]] = None) -> LossBreakdown:
    """
    alpha * ce + (1 - alpha) * distill, with the differentiable value in `.loss`.

    teacher_logits may be omitted only when alpha == 1.
    """
    if not 0.0 <= alpha <= 1.0:
        raise ConfigError(f"alpha must lie in [0, 1], got {alpha}")
    ce = ce_loss(student_logits, labels)
    if teacher_logits is None:
        if alpha != 1.0:
            raise ContractError("teacher logits are required when alpha < 1")
        loss = scale(ce, alpha)
        return LossBreakdown(ce=ce.item(), distill=0.0, combined=loss.item(), loss=loss)
    dl = distill_loss(student_logits, teacher_logits)
    loss = add(scale(ce, alpha), scale(dl, 1.0 - alpha))
    return LossBreakdown(ce=ce.item(), distill=dl.item(), combined=loss.item(), loss=loss)


def logits_for(params: Parameters, config: ModelConfig, examples: Sequence[Example], vocab: Vocabulary,
               n: Optional[int] = None) -> np.ndarray:
    """Logits [len(examples), C] in input order, sequences encoded to length n (default max_len)."""
    chunks = [
        forward(params, config, batch.token_ids, batch.pad_mask).values
        for batch in batch_iter(examples, vocab, n or config.max_len, EVAL_BATCH_SIZE)
    ]
    return np.concatenate(chunks) if chunks else np.zeros((0, config.num_classes))


def predict(params: Parameters, config: ModelConfig, examples: Sequence[Example],
            vocab: Vocabulary) -> np.ndarray:
    """Argmax class per example (ties go to the lower index)."""
    return np.argmax(logits_for(params, config, examples, vocab), axis=-1)


def evaluate(params: Parameters, config: ModelConfig, data: Sequence[Example], vocab: Vocabulary) -> float:
    """Fraction of examples whose argmax logit equals the label."""
    if not data:
        raise DataError("cannot evaluate on an empty dataset")
    labels = np.array([ex.label for ex in data])
    return float(np.mean(predict(params, config, data, vocab) == labels))


def _check_data(train_data: Sequence[Example], eval_data: Sequence[Example]) -> None:
    if not train_data:
        raise DataError("training data is empty")
    if not eval_data:
        raise DataError("evaluation data is empty")


def _fit(role: str, config: ModelConfig, train_config: DistillConfig, train_data: Sequence[Example],
         eval_data: Sequence[Example], vocab: Vocabulary,
         teacher: Optional[Tuple[Parameters, ModelConfig]] = None) -> Tuple[Parameters, TrainReport]:
    """Shared mini-batch loop; with a teacher the student minimizes the combined loss."""
    _check_data(train_data, eval_data)
    params = init_params(config, train_config.seed)
    optimizer = Adam.from_config(params, train_config)
    alpha = train_config.alpha if teacher is not None else 1.0
    started = time.perf_counter()
    # the teacher is frozen, so its logits are computed once per example
    cached_logits = None
    if teacher is not None:
        teacher_params, teacher_config = teacher
        cached_logits = logits_for(teacher_params, teacher_config, train_data, vocab, config.max_len)
    epochs: List[EpochLoss] = []
    steps: List[float] = []

    for epoch in range(1, train_config.epochs + 1):
        totals = np.zeros(3)
        batches = 0
        for batch in batch_iter(train_data, vocab, config.max_len, train_config.batch_size,
                                shuffle_seed=train_config.seed + epoch):
            teacher_logits = None if cached_logits is None else cached_logits[batch.positions]
            with Tape() as tape:
                logits = forward(params, config, batch.token_ids, batch.pad_mask)
                breakdown = combined_loss(alpha, logits, batch.labels, teacher_logits)
            backward(breakdown.loss, tape)
            optimizer.step()
            totals += (breakdown.ce, breakdown.distill, breakdown.combined)
            batches += 1
            steps.append(breakdown.combined)
        ce, dl, combined = totals / batches
        epochs.append(EpochLoss(epoch=epoch, ce=ce, distill=dl, combined=combined))
        logger.info("%s epoch %d: ce=%.4f distill=%.4f combined=%.4f", role, epoch, ce, dl, combined)

    accuracy = evaluate(params, config, eval_data, vocab)
    elapsed = max(time.perf_counter() - started, 1e-9)
    logger.info("%s finished: accuracy=%.4f in %.1fs", role, accuracy, elapsed)
    report = TrainReport(
        role=role,
        accuracy=accuracy,
        wall_clock_seconds=elapsed,
        epochs=epochs,
        steps=steps,
        updates=optimizer.steps,
        parameter_count=count_parameters(config),
    )
    return params, report


def train_teacher(train_data: Sequence[Example], eval_data: Sequence[Example], vocab: Vocabulary,
                  model_config: ModelConfig, train_config: DistillConfig) -> Tuple[Parameters, TrainReport]:
    """Minimize cross-entropy alone; train_config.alpha is ignored."""
    return _fit("teacher", model_config, train_config, train_data, eval_data, vocab)


def distill_student(teacher_params: Parameters, teacher_config: ModelConfig, student_config: ModelConfig,
                    train_data: Sequence[Example], eval_data: Sequence[Example], vocab: Vocabulary,
                    distill_config: DistillConfig) -> Tuple[Parameters, TrainReport]:
    """Train a freshly initialized student against the frozen teacher's logits."""
    if teacher_config.vocab_size != student_config.vocab_size:
        raise ConfigError(
            f"vocabulary sizes differ: teacher {teacher_config.vocab_size}, student {student_config.vocab_size}"
        )
    if teacher_config.num_classes != student_config.num_classes:
        raise ConfigError(
            f"class counts differ: teacher {teacher_config.num_classes}, student {student_config.num_classes}"
        )
    if student_config.max_len > teacher_config.max_len:
        raise ConfigError(
            f"student max_len {student_config.max_len} exceeds teacher max_len {teacher_config.max_len}"
        )
    before = teacher_params.digest()
    teacher_params.requires_grad_(False)
    try:
        result = _fit("student", student_config, distill_config, train_data, eval_data, vocab,
                      teacher=(teacher_params, teacher_config))
    finally:
        teacher_params.requires_grad_(True)
    if teacher_params.digest() != before:
        raise ContractError("teacher parameters changed during distillation")
    return result
