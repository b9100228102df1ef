import logging
import os
from typing import List, NamedTuple, Optional, Tuple

from .checkpoint import load_checkpoint, save_checkpoint
from .data import Example, Vocabulary, build_vocab, load_tsv, split_examples, synth_dataset
from .distill import distill_student, train_teacher
from .errors import ConfigError, DataError
from .model import count_parameters
from .state import ModelConfig, RunConfig, TrainReport

logger = logging.getLogger(__name__)

class TrainOutcome(NamedTuple):
    """Where a training run left its artifacts, and its report."""
    checkpoint: str
    report_path: str
    report: TrainReport

class RunExecutor:
    """Carries out the training steps of one RunConfig inside one output directory."""

    def __init__(self, run: RunConfig, output_dir: str):
        self.run = run
        self.output_dir = output_dir
        self._data: Optional[Tuple[List[Example], List[Example]]] = None

    def path(self, filename: str) -> str:
        return os.path.join(self.output_dir, filename)

    def load_data(self) -> Tuple[List[Example], List[Example]]:
        """Training and evaluation examples as the data/synth sections describe."""
        if self._data is not None:
            return self._data
        self.run.validate_paths()
        data, synth = self.run.data, self.run.synth

        if data.train == "synth":
            train = synth_dataset(synth.count, synth.seed, synth.noise)
        else:
            train = load_tsv(data.train)

        if data.eval == "synth":
            evaluation = synth_dataset(synth.eval_count, synth.eval_seed, synth.eval_noise)
        elif data.eval == "split":
            if not train:
                raise DataError(f"training data {data.train} is empty")
            train, evaluation = split_examples(train, data.eval_fraction, data.split_seed)
        else:
            evaluation = load_tsv(data.eval)

        if not train:
            raise DataError(f"training data {data.train} is empty")
        if not evaluation:
            raise DataError(f"evaluation data {data.eval} is empty")
        logger.info("Data ready: %d train / %d eval examples", len(train), len(evaluation))
        self._data = (train, evaluation)
        return self._data

    def train_teacher(self, name: str = "teacher", model_config: Optional[ModelConfig] = None) -> TrainOutcome:
        """Build the vocabulary, train a teacher, and write checkpoint, report and vocab file."""
        config = model_config or self.run.teacher
        train, evaluation = self.load_data()
        vocab = build_vocab(train, config.vocab_size)
        vocab.save(self.path("vocab.txt"))

        params, report = train_teacher(train, evaluation, vocab, config, self.run.training)
        report = report.model_copy(update={"role": name})
        return self._write(name, config, params, vocab, report)

    def distill(self, teacher_checkpoint: str, name: str = "student", use_teacher: bool = True) -> TrainOutcome:
        """
        Train the configured student from a teacher checkpoint's vocabulary.

        With use_teacher=False the same student is trained on labels alone
        (alpha forced to 1, no teacher forward passes).
        """
        teacher = load_checkpoint(teacher_checkpoint)
        student = self.run.student
        self.check_student(teacher.config, student)
        train, evaluation = self.load_data()

        if use_teacher:
            params, report = distill_student(
                teacher.params, teacher.config, student, train, evaluation, teacher.vocab, self.run.distill
            )
        else:
            plain = self.run.distill.model_copy(update={"alpha": 1.0})
            params, report = train_teacher(train, evaluation, teacher.vocab, student, plain)
        report = report.model_copy(update={"role": name})
        return self._write(name, student, params, teacher.vocab, report)

    @staticmethod
    def check_student(teacher: ModelConfig, student: ModelConfig) -> None:
        """The student must share vocabulary and classes and be no larger than the teacher."""
        if teacher.vocab_size != student.vocab_size:
            raise ConfigError(f"student vocab_size={student.vocab_size} does not match teacher checkpoint {teacher.vocab_size}")
        if teacher.num_classes != student.num_classes:
            raise ConfigError(f"student num_classes={student.num_classes} does not match teacher {teacher.num_classes}")
        if student.num_layers > teacher.num_layers or student.num_heads > teacher.num_heads:
            raise ConfigError(
                f"student ({student.num_layers}L/{student.num_heads}H) is larger than teacher "
                f"({teacher.num_layers}L/{teacher.num_heads}H)"
            )
        if student.max_len > teacher.max_len:
            raise ConfigError(f"student max_len={student.max_len} exceeds teacher max_len={teacher.max_len}")
        if count_parameters(student) >= count_parameters(teacher):
            raise ConfigError("student must have fewer parameters than the teacher")

    def _write(self, name: str, config: ModelConfig, params, vocab: Vocabulary, report: TrainReport) -> TrainOutcome:
        checkpoint = self.path(f"{name}.ckpt")
        report_path = self.path(f"{name}_report.json")
        save_checkpoint(checkpoint, config, params, vocab)
        report.save(report_path)
        logger.info("%s: accuracy %.4f, report %s", name, report.accuracy, report_path)
        return TrainOutcome(checkpoint, report_path, report)
