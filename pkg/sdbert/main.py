#!/usr/bin/env python3
"""
Command-line entry point for sdbert.
Trains a sparse-attention teacher, distills a smaller student from it,
evaluates checkpoints, dumps attention masks and benchmarks attention cost.
"""

import argparse
import json
import logging
import os
import sys
from typing import Callable, List, Optional

from .config import config

# Thread pools must be pinned before numpy is first imported.
for _name, _value in config.thread_env().items():
    os.environ.setdefault(_name, _value)

from pydantic import ValidationError  # noqa: E402

from .attention import build_mask  # noqa: E402
from .bench import BENCH_SPARSITY, run_bench  # noqa: E402
from .checkpoint import load_checkpoint  # noqa: E402
from .data import load_tsv  # noqa: E402
from .distill import evaluate  # noqa: E402
from .errors import ConfigError, SDBertError  # noqa: E402
from .model import count_parameters, parameter_reduction  # noqa: E402
from .pipeline_graph import DistillationPipeline  # noqa: E402
from .runner import RunExecutor  # noqa: E402
from .state import RunConfig, SparsityConfig, model_preset  # noqa: E402

logger = logging.getLogger("sdbert")


def configure_logging(level: Optional[str] = None) -> None:
    """Send log records to stderr so stdout stays machine-readable."""
    name = (level or config.LOG_LEVEL).upper()
    logging.basicConfig(
        level=getattr(logging, name, logging.INFO),
        format=config.LOG_FORMAT,
        stream=sys.stderr,
        force=True,
    )


def _parse_lengths(text: str) -> List[int]:
    try:
        return [int(part) for part in text.split(",") if part.strip()]
    except ValueError as e:
        raise ConfigError(f"--lengths must be comma-separated integers, got {text!r}") from e


def cmd_train_teacher(args: argparse.Namespace) -> int:
    run = RunConfig.from_file(args.config)
    executor = RunExecutor(run, config.output_dir(args.output_dir))
    outcome = executor.train_teacher()
    print(f"✅ Teacher accuracy {outcome.report.accuracy:.4f}")
    print(f"📦 Checkpoint: {outcome.checkpoint}")
    print(f"📝 Report: {outcome.report_path}")
    return 0


def cmd_distill(args: argparse.Namespace) -> int:
    run = RunConfig.from_file(args.config)
    executor = RunExecutor(run, config.output_dir(args.output_dir))
    outcome = executor.distill(args.teacher, use_teacher=not args.no_teacher)
    print(f"✅ Student accuracy {outcome.report.accuracy:.4f}")
    print(f"📦 Checkpoint: {outcome.checkpoint}")
    print(f"📝 Report: {outcome.report_path}")
    return 0


def cmd_eval(args: argparse.Namespace) -> int:
    checkpoint = load_checkpoint(args.ckpt)
    data = load_tsv(args.data)
    accuracy = evaluate(checkpoint.params, checkpoint.config, data, checkpoint.vocab)
    print(f"{accuracy:.4f}")
    return 0


def cmd_mask_dump(args: argparse.Namespace) -> int:
    sparsity = SparsityConfig(g=args.g, w=args.w, r=args.r, seed=args.seed)
    sys.stdout.write(build_mask(sparsity, args.n).to_text())
    return 0


def cmd_bench(args: argparse.Namespace) -> int:
    result = run_bench(
        _parse_lengths(args.lengths),
        d_model=args.d_model,
        heads=args.heads,
        repetitions=args.reps,
        sparsity=BENCH_SPARSITY,
        seed=args.seed,
    )
    print(result.model_dump_json(indent=2))
    return 0


def cmd_params(args: argparse.Namespace) -> int:
    if args.config:
        run = RunConfig.from_file(args.config)
        teacher, student = run.teacher, run.student
    else:
        teacher, student = model_preset(f"{args.preset}-teacher"), model_preset(f"{args.preset}-student")
    summary = {
        "teacher": count_parameters(teacher),
        "student": count_parameters(student),
        "ratio": count_parameters(student) / count_parameters(teacher),
        "reduction": parameter_reduction(teacher, student),
    }
    print(json.dumps(summary, indent=2))
    return 0


def cmd_pipeline(args: argparse.Namespace) -> int:
    run = RunConfig.from_file(args.config)
    output_dir = config.output_dir(args.output_dir)
    final_state = DistillationPipeline().run(run, output_dir, include_full=not args.no_full)

    print("\n" + "=" * 50)
    print("📊 PIPELINE SUMMARY")
    print("=" * 50)
    print(f"✅ Completed stages: {', '.join(final_state.completed_stages) or 'none'}")

    if final_state.errors:
        print("\n❌ Errors:")
        for error in final_state.errors:
            print(f"  • {error}")
        return final_state.exit_code or 2

    comparison = final_state.comparison
    print()
    print(comparison.to_table())
    if comparison.retention is not None:
        print(f"\n🎯 Retention: {comparison.retention:.1%} of the sparse teacher's accuracy")
        print(f"⏱️  Training time: {comparison.time_fraction:.1%} of the sparse teacher's")
    print(f"📉 Parameter reduction: {comparison.parameter_reduction:.1%}")
    return 0


def run_command(command: Callable[[argparse.Namespace], int], args: argparse.Namespace) -> int:
    """Run one subcommand and map failures to exit codes."""
    try:
        return command(args)
    except SDBertError as e:
        print(f"❌ {type(e).__name__}: {e}", file=sys.stderr)
        return e.exit_code
    except ValidationError as e:
        print(f"❌ Invalid configuration: {e}", file=sys.stderr)
        return 2
    except OSError as e:
        print(f"❌ {e}", file=sys.stderr)
        return 2


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="sdbert",
        description="Sparse-attention teacher training and logit distillation",
        formatter_class=argparse.RawDescriptionHelpFormatter,
        epilog="""
Examples:
  python -m sdbert.main train-teacher --config run.cfg
  python -m sdbert.main distill --config run.cfg --teacher runs/teacher.ckpt
  python -m sdbert.main eval --ckpt runs/student.ckpt --data test.tsv
  python -m sdbert.main mask-dump --n 16 --g 1 --w 2 --r 1 --seed 0
  python -m sdbert.main bench --lengths 128,256,512,1024,2048
  python -m sdbert.main pipeline --config run.cfg --no-full
        """,
    )
    parser.add_argument("--log-level", help="Override SDBERT_LOG_LEVEL")
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("train-teacher", help="Train the sparse-attention teacher")
    p.add_argument("--config", required=True, help="Run configuration file")
    p.add_argument("--output-dir", help="Override SDBERT_OUTPUT_DIR")
    p.set_defaults(func=cmd_train_teacher)

    p = sub.add_parser("distill", help="Distill a student from a teacher checkpoint")
    p.add_argument("--config", required=True, help="Run configuration file")
    p.add_argument("--teacher", required=True, help="Teacher checkpoint")
    p.add_argument("--no-teacher", action="store_true", help="Train the student on labels only")
    p.add_argument("--output-dir", help="Override SDBERT_OUTPUT_DIR")
    p.set_defaults(func=cmd_distill)

    p = sub.add_parser("eval", help="Print a checkpoint's accuracy on a TSV file")
    p.add_argument("--ckpt", required=True)
    p.add_argument("--data", required=True)
    p.set_defaults(func=cmd_eval)

    p = sub.add_parser("mask-dump", help="Print one attention mask, one row per line")
    p.add_argument("--n", type=int, required=True)
    p.add_argument("--g", type=int, default=1)
    p.add_argument("--w", type=int, default=4)
    p.add_argument("--r", type=int, default=2)
    p.add_argument("--seed", type=int, default=0)
    p.set_defaults(func=cmd_mask_dump)

    p = sub.add_parser("bench", help="Time full versus sparse attention across lengths")
    p.add_argument("--lengths", default=config.BENCH_LENGTHS)
    p.add_argument("--d-model", type=int, default=64)
    p.add_argument("--heads", type=int, default=4)
    p.add_argument("--reps", type=int, default=config.BENCH_REPETITIONS)
    p.add_argument("--seed", type=int, default=0)
    p.set_defaults(func=cmd_bench)

    p = sub.add_parser("params", help="Teacher and student parameter counts")
    p.add_argument("--config", help="Run configuration file (default: a named preset)")
    p.add_argument("--preset", choices=["desk", "base"], default="desk")
    p.set_defaults(func=cmd_params)

    p = sub.add_parser("pipeline", help="Teacher, distilled student and baselines side by side")
    p.add_argument("--config", required=True, help="Run configuration file")
    p.add_argument("--no-full", action="store_true", help="Skip the full-attention teacher")
    p.add_argument("--output-dir", help="Override SDBERT_OUTPUT_DIR")
    p.set_defaults(func=cmd_pipeline)

    return parser


def main(argv: Optional[List[str]] = None) -> int:
    """Main entry point."""
    args = build_parser().parse_args(argv)
    configure_logging(args.log_level)
    return run_command(args.func, args)


if __name__ == "__main__":
    sys.exit(main())
