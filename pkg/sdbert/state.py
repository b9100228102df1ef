from typing import List, Dict, Any, Optional
from pathlib import Path
from enum import Enum

from pydantic import BaseModel, ConfigDict, Field, ValidationError, field_validator, model_validator

from .errors import ConfigError

class AttentionMode(str, Enum):
    """How encoder layers restrict attention."""
    FULL = "full"
    SPARSE = "sparse"

class SparsityConfig(BaseModel):
    """Global / sliding-window / random token pattern."""
    model_config = ConfigDict(frozen=True, extra="forbid")

    g: int = Field(default=1, ge=0, description="Global tokens (the first g positions)")
    w: int = Field(default=4, ge=0, description="Window radius on each side")
    r: int = Field(default=2, ge=0, description="Random keys per query row")
    seed: int = Field(default=0, ge=0, lt=2**64, description="Seed for random-key sampling")

class ModelConfig(BaseModel):
    """Encoder classifier hyperparameters."""
    model_config = ConfigDict(frozen=True, extra="forbid", use_enum_values=True)

    num_layers: int = Field(ge=1)
    num_heads: int = Field(ge=1)
    d_model: int = Field(ge=1)
    d_ff: int = Field(ge=1)
    vocab_size: int = Field(ge=4)
    max_len: int = Field(ge=1)
    num_classes: int = Field(default=2, ge=2)
    attention_mode: AttentionMode = Field(default=AttentionMode.SPARSE)
    sparsity: SparsityConfig = Field(default_factory=SparsityConfig)

    @model_validator(mode="after")
    def _heads_divide_width(self) -> "ModelConfig":
        if self.d_model % self.num_heads:
            raise ValueError(f"d_model={self.d_model} is not divisible by num_heads={self.num_heads}")
        return self

    @property
    def head_dim(self) -> int:
        return self.d_model // self.num_heads

    @property
    def is_sparse(self) -> bool:
        return self.attention_mode == AttentionMode.SPARSE

class DistillConfig(BaseModel):
    """Optimization settings for one training phase; alpha weighs the supervised term."""
    model_config = ConfigDict(frozen=True, extra="forbid")

    alpha: float = Field(default=0.5, ge=0.0, le=1.0)
    epochs: int = Field(default=3, ge=1)
    batch_size: int = Field(default=32, ge=1)
    learning_rate: float = Field(default=3e-4, gt=0.0)
    beta1: float = Field(default=0.9, ge=0.0, lt=1.0)
    beta2: float = Field(default=0.999, ge=0.0, lt=1.0)
    eps: float = Field(default=1e-8, gt=0.0)
    seed: int = Field(default=0, ge=0)

class LossBreakdown(BaseModel):
    """Both loss terms and their mix; `loss` is the differentiable combined value."""
    model_config = ConfigDict(arbitrary_types_allowed=True)

    ce: float = Field(ge=0.0)
    distill: float = Field(ge=0.0)
    combined: float
    loss: Optional[Any] = Field(default=None, exclude=True, repr=False)

class EpochLoss(BaseModel):
    """Mean loss terms over one epoch's batches."""
    epoch: int
    ce: float
    distill: float
    combined: float

class TrainReport(BaseModel):
    """Outcome of one training run."""
    role: str = Field(default="teacher")
    accuracy: float = Field(ge=0.0, le=1.0)
    wall_clock_seconds: float = Field(gt=0.0)
    epochs: List[EpochLoss] = Field(default_factory=list)
    steps: List[float] = Field(default_factory=list, description="Combined loss per batch, in update order")
    updates: int = Field(default=0, ge=0)
    parameter_count: int = Field(default=0, ge=0)

    @property
    def final_accuracy(self) -> float:
        return self.accuracy

    def save(self, path: str) -> None:
        Path(path).write_text(self.model_dump_json(indent=2) + "\n", encoding="utf-8")

    @classmethod
    def load(cls, path: str) -> "TrainReport":
        return cls.model_validate_json(Path(path).read_text(encoding="utf-8"))

class BenchResult(BaseModel):
    """Attention forward timings per sequence length with fitted log-log slopes."""
    lengths: List[int]
    repetitions: int = Field(ge=3)
    d_model: int
    heads: int
    sparsity: SparsityConfig
    full_seconds: List[float]
    sparse_seconds: List[float]
    full_slope: float
    sparse_slope: float

    @field_validator("lengths")
    @classmethod
    def _strictly_increasing(cls, lengths: List[int]) -> List[int]:
        if len(lengths) < 2 or any(b <= a for a, b in zip(lengths, lengths[1:])):
            raise ValueError("lengths must hold at least two strictly increasing values")
        return lengths

class DataConfig(BaseModel):
    """Where examples come from: a TSV path, `synth`, or (eval only) `split`."""
    model_config = ConfigDict(extra="forbid")

    train: str = "synth"
    eval: str = "synth"
    eval_fraction: float = Field(default=0.2, gt=0.0, lt=1.0)
    split_seed: int = Field(default=0, ge=0)

class SynthConfig(BaseModel):
    """Synthetic sentiment task sizes, seeds and label noise."""
    model_config = ConfigDict(extra="forbid")

    count: int = Field(default=2000, ge=2)
    seed: int = Field(default=7, ge=0)
    noise: float = Field(default=0.05, ge=0.0, lt=0.5)
    eval_count: int = Field(default=500, ge=2)
    eval_seed: int = Field(default=8, ge=0)
    eval_noise: float = Field(default=0.0, ge=0.0, lt=0.5)

MODEL_PRESETS: Dict[str, Dict[str, Any]] = {
    "desk-teacher": dict(num_layers=2, num_heads=4, d_model=64, d_ff=256, vocab_size=2000, max_len=128),
    "desk-student": dict(num_layers=1, num_heads=2, d_model=64, d_ff=256, vocab_size=2000, max_len=128),
    "base-teacher": dict(num_layers=12, num_heads=12, d_model=768, d_ff=3072, vocab_size=30522, max_len=512),
    "base-student": dict(num_layers=3, num_heads=4, d_model=768, d_ff=3072, vocab_size=30522, max_len=512),
}

DESK_SPARSITY = SparsityConfig(g=1, w=4, r=2, seed=0)
DESK_TRAINING = DistillConfig(alpha=1.0, epochs=5, batch_size=32, learning_rate=2e-3, seed=7)
DESK_DISTILL = DistillConfig(alpha=0.5, epochs=3, batch_size=32, learning_rate=2e-3, seed=7)

def model_preset(name: str, **overrides: Any) -> ModelConfig:
    """Build a named ModelConfig preset, optionally overriding fields."""
    if name not in MODEL_PRESETS:
        raise ConfigError(f"Unknown model preset: {name}. Available: {', '.join(MODEL_PRESETS)}")
    fields = dict(MODEL_PRESETS[name], sparsity=DESK_SPARSITY)
    fields.update(overrides)
    return ModelConfig(**fields)

def _parse_lines(lines: List[str], source: str) -> Dict[str, Any]:
    """Turn `a.b = value` lines into a nested dict of strings."""
    tree: Dict[str, Any] = {}
    for line_no, raw in enumerate(lines, start=1):
        line = raw.split("#", 1)[0].strip()
        if not line:
            continue
        if "=" not in line:
            raise ConfigError(f"{source}:{line_no}: expected key=value, got {raw.strip()!r}")
        key, value = (part.strip() for part in line.split("=", 1))
        if not key:
            raise ConfigError(f"{source}:{line_no}: empty key")
        node = tree
        *parents, leaf = key.split(".")
        for part in parents:
            child = node.setdefault(part, {})
            if not isinstance(child, dict):
                raise ConfigError(f"{source}:{line_no}: {key} conflicts with an earlier scalar key")
            node = child
        if isinstance(node.get(leaf), dict):
            raise ConfigError(f"{source}:{line_no}: {key} names a section, not a field")
        node[leaf] = value
    return tree

def _overlay(base: Dict[str, Any], overrides: Dict[str, Any]) -> Dict[str, Any]:
    merged = dict(base)
    for key, value in overrides.items():
        if isinstance(value, dict) and isinstance(merged.get(key), dict):
            merged[key] = _overlay(merged[key], value)
        else:
            merged[key] = value
    return merged

class RunConfig(BaseModel):
    """Everything one CLI run needs, overlaid on the `desk` preset."""
    model_config = ConfigDict(extra="forbid")

    teacher: ModelConfig = Field(default_factory=lambda: model_preset("desk-teacher"))
    student: ModelConfig = Field(default_factory=lambda: model_preset("desk-student"))
    sparsity: SparsityConfig = Field(default=DESK_SPARSITY)
    training: DistillConfig = Field(default=DESK_TRAINING)
    distill: DistillConfig = Field(default=DESK_DISTILL)
    data: DataConfig = Field(default_factory=DataConfig)
    synth: SynthConfig = Field(default_factory=SynthConfig)

    @classmethod
    def from_lines(cls, lines: List[str], source: str = "<config>") -> "RunConfig":
        """Parse key=value lines; unknown keys and bad values raise ConfigError."""
        overrides = _parse_lines(lines, source)
        merged = _overlay(cls().model_dump(mode="json"), overrides)
        # one sparsity section drives both models
        for role in ("teacher", "student"):
            if isinstance(merged.get(role), dict):
                merged[role]["sparsity"] = merged.get("sparsity")
        try:
            return cls.model_validate(merged)
        except ValidationError as e:
            problems = "; ".join(
                f"{'.'.join(str(p) for p in err['loc'])}: {err['msg']}" for err in e.errors()
            )
            raise ConfigError(f"{source}: {problems}") from e

    @classmethod
    def from_file(cls, path: str) -> "RunConfig":
        try:
            text = Path(path).read_text(encoding="utf-8")
        except OSError as e:
            raise ConfigError(f"Cannot read config {path}: {e}") from e
        return cls.from_lines(text.splitlines(), source=str(path))

    def data_paths(self) -> List[str]:
        """TSV paths referenced by the data section."""
        return [value for value in (self.data.train, self.data.eval) if value not in ("synth", "split")]

    def validate_paths(self) -> None:
        """Fail before any compute if a referenced data file is missing."""
        if self.data.train == "split":
            raise ConfigError("data.train cannot be 'split'")
        for path in self.data_paths():
            if not Path(path).is_file():
                raise ConfigError(f"Data path not found: {path}")

class ComparisonRow(BaseModel):
    """One model variant's result."""
    name: str
    accuracy: float
    wall_clock_seconds: float
    parameter_count: int

class ComparisonReport(BaseModel):
    """Side-by-side results of the pipeline's model variants."""
    rows: List[ComparisonRow] = Field(default_factory=list)
    retention: Optional[float] = Field(default=None, description="Distilled student accuracy / sparse teacher accuracy")
    time_fraction: Optional[float] = Field(default=None, description="Distilled student time / sparse teacher time")
    parameter_reduction: Optional[float] = Field(default=None, description="1 - student params / teacher params")

    def row(self, name: str) -> Optional[ComparisonRow]:
        return next((row for row in self.rows if row.name == name), None)

    def to_table(self) -> str:
        lines = [f"{'Model':<32} {'Accuracy':>9} {'Time (s)':>10} {'Params':>10}"]
        for row in self.rows:
            lines.append(
                f"{row.name:<32} {row.accuracy:>9.4f} {row.wall_clock_seconds:>10.2f} {row.parameter_count:>10d}"
            )
        return "\n".join(lines)

class PipelineState(BaseModel):
    """State carried through the teacher → student pipeline graph."""
    model_config = ConfigDict(arbitrary_types_allowed=True)

    run: RunConfig = Field(default_factory=RunConfig, description="Resolved run configuration")
    output_dir: str = Field(default="runs", description="Where checkpoints and reports go")
    include_full: bool = Field(default=True, description="Also train a full-attention teacher for reference")

    # Artifacts
    vocab_path: Optional[str] = Field(default=None)
    teacher_checkpoint: Optional[str] = Field(default=None)
    student_checkpoint: Optional[str] = Field(default=None)
    reports: Dict[str, TrainReport] = Field(default_factory=dict)
    comparison: Optional[ComparisonReport] = Field(default=None)

    # Control flow
    completed_stages: List[str] = Field(default_factory=list)
    is_complete: bool = Field(default=False)

    # Error handling
    errors: List[str] = Field(default_factory=list)
    exit_code: int = Field(default=0, description="Highest exit code among recorded errors")

    def add_error(self, error: str, exit_code: int = 2) -> None:
        """Add an error to the error list."""
        self.errors.append(error)
        self.exit_code = max(self.exit_code, exit_code)
