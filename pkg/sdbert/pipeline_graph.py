import logging
import os
from typing import Any, Dict

from langgraph.graph import StateGraph, END

from .errors import SDBertError
from .model import parameter_reduction
from .runner import RunExecutor
from .state import AttentionMode, ComparisonReport, ComparisonRow, ModelConfig, PipelineState, RunConfig

logger = logging.getLogger(__name__)

# Training stages in execution order; "full_attention" runs only when requested.
STAGES = ("prepare", "teacher", "distill", "baseline", "full_attention")

ROW_NAMES = {
    "teacher": "Sparse teacher",
    "student": "Distilled student (KD)",
    "student_no_kd": "Student without KD",
    "teacher_full": "Full-attention teacher",
}

def _executor(state: PipelineState) -> RunExecutor:
    return RunExecutor(state.run, state.output_dir)

def _done(state: PipelineState, stage: str, **updates: Any) -> Dict[str, Any]:
    updates["completed_stages"] = state.completed_stages + [stage]
    return updates

def _failed(state: PipelineState, stage: str, error: Exception) -> Dict[str, Any]:
    exit_code = error.exit_code if isinstance(error, SDBertError) else 2
    message = f"{stage} failed: {error}"
    logger.error(message)
    return {"errors": state.errors + [message], "exit_code": max(state.exit_code, exit_code)}

def _with_report(state: PipelineState, name: str, report) -> Dict[str, Any]:
    reports = dict(state.reports)
    reports[name] = report
    return reports

class PipelineNodes:
    """Node functions of the teacher → student comparison graph."""

    @staticmethod
    def prepare_node(state: PipelineState) -> Dict[str, Any]:
        """Create the output directory and check the data before any training."""
        logger.info("Preparing run in %s", state.output_dir)
        try:
            os.makedirs(state.output_dir, exist_ok=True)
            train, evaluation = _executor(state).load_data()
        except (SDBertError, OSError) as e:
            return _failed(state, "prepare", e)
        logger.info("Prepared %d train / %d eval examples", len(train), len(evaluation))
        return _done(state, "prepare")

    @staticmethod
    def teacher_node(state: PipelineState) -> Dict[str, Any]:
        """Train the sparse-attention teacher."""
        logger.info("Training sparse teacher...")
        try:
            outcome = _executor(state).train_teacher("teacher")
        except (SDBertError, OSError) as e:
            return _failed(state, "teacher", e)
        return _done(
            state,
            "teacher",
            teacher_checkpoint=outcome.checkpoint,
            vocab_path=os.path.join(state.output_dir, "vocab.txt"),
            reports=_with_report(state, "teacher", outcome.report),
        )

    @staticmethod
    def distill_node(state: PipelineState) -> Dict[str, Any]:
        """Distill the student from the teacher's logits."""
        logger.info("Distilling student from %s...", state.teacher_checkpoint)
        try:
            outcome = _executor(state).distill(state.teacher_checkpoint, "student")
        except (SDBertError, OSError) as e:
            return _failed(state, "distill", e)
        return _done(
            state,
            "distill",
            student_checkpoint=outcome.checkpoint,
            reports=_with_report(state, "student", outcome.report),
        )

    @staticmethod
    def baseline_node(state: PipelineState) -> Dict[str, Any]:
        """Train the same student on labels only, for the with/without distillation comparison."""
        logger.info("Training student without distillation...")
        try:
            outcome = _executor(state).distill(state.teacher_checkpoint, "student_no_kd", use_teacher=False)
        except (SDBertError, OSError) as e:
            return _failed(state, "baseline", e)
        return _done(state, "baseline", reports=_with_report(state, "student_no_kd", outcome.report))

    @staticmethod
    def full_attention_node(state: PipelineState) -> Dict[str, Any]:
        """Train the teacher architecture with full attention as a reference."""
        logger.info("Training full-attention teacher...")
        try:
            fields = state.run.teacher.model_dump()
            fields["attention_mode"] = AttentionMode.FULL
            outcome = _executor(state).train_teacher("teacher_full", ModelConfig.model_validate(fields))
        except (SDBertError, OSError) as e:
            return _failed(state, "full_attention", e)
        return _done(state, "full_attention", reports=_with_report(state, "teacher_full", outcome.report))

    @staticmethod
    def finish_node(state: PipelineState) -> Dict[str, Any]:
        """Assemble the comparison and write comparison.json."""
        if state.errors:
            logger.info("Pipeline stopped after errors: %s", "; ".join(state.errors))
            return {"is_complete": True}

        comparison = build_comparison(state.reports, state.run)
        try:
            path = os.path.join(state.output_dir, "comparison.json")
            with open(path, "w", encoding="utf-8") as fh:
                fh.write(comparison.model_dump_json(indent=2) + "\n")
        except OSError as e:
            failed = _failed(state, "finish", e)
            failed["is_complete"] = True
            return failed
        logger.info("Comparison written to %s", path)
        return {"comparison": comparison, "is_complete": True}

def build_comparison(reports: Dict[str, Any], run: RunConfig) -> ComparisonReport:
    """One row per trained variant plus the distilled student's retention against the sparse teacher."""
    rows = [
        ComparisonRow(
            name=ROW_NAMES.get(name, name),
            accuracy=report.accuracy,
            wall_clock_seconds=report.wall_clock_seconds,
            parameter_count=report.parameter_count,
        )
        for name, report in reports.items()
    ]
    comparison = ComparisonReport(rows=rows, parameter_reduction=parameter_reduction(run.teacher, run.student))
    teacher, student = reports.get("teacher"), reports.get("student")
    if teacher is not None and student is not None:
        comparison.retention = student.accuracy / teacher.accuracy if teacher.accuracy > 0 else None
        comparison.time_fraction = student.wall_clock_seconds / teacher.wall_clock_seconds
    return comparison

def should_continue(state: PipelineState) -> str:
    """Pick the next stage, or finish once everything ran or something failed."""
    if state.errors or state.is_complete:
        return "finish"
    for stage in STAGES:
        if stage == "full_attention" and not state.include_full:
            continue
        if stage not in state.completed_stages:
            return stage
    return "finish"

def create_pipeline_graph():
    """Create and configure the LangGraph state machine."""
    workflow = StateGraph(PipelineState)

    workflow.add_node("prepare", PipelineNodes.prepare_node)
    workflow.add_node("teacher", PipelineNodes.teacher_node)
    workflow.add_node("distill", PipelineNodes.distill_node)
    workflow.add_node("baseline", PipelineNodes.baseline_node)
    workflow.add_node("full_attention", PipelineNodes.full_attention_node)
    workflow.add_node("finish", PipelineNodes.finish_node)

    workflow.set_entry_point("prepare")

    routes = {stage: stage for stage in STAGES[1:]}
    routes["finish"] = "finish"
    for stage in STAGES:
        workflow.add_conditional_edges(stage, should_continue, routes)

    workflow.add_edge("finish", END)
    return workflow.compile()

class DistillationPipeline:
    """High-level interface for the comparison pipeline."""

    def __init__(self):
        self.graph = create_pipeline_graph()

    def run(self, run: RunConfig, output_dir: str, include_full: bool = True) -> PipelineState:
        """Run every stage and return the final state."""
        initial_state = PipelineState(run=run, output_dir=output_dir, include_full=include_full)
        logger.info("Starting pipeline (full-attention reference: %s)", include_full)
        result = self.graph.invoke(initial_state)

        # LangGraph hands back the channel values as a dict
        if isinstance(result, dict):
            return PipelineState.model_validate({**initial_state.model_dump(), **result})
        return result
