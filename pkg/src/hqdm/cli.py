#!/usr/bin/env python3
"""
Command-line entry point for hqdm
Configuration comes from [tool.hqdm] in pyproject.toml, --config FILE, then flags
"""
import argparse
import logging
import sys
from pathlib import Path
from typing import List, Optional

from .commands.analyze import AnalyzeCommand
from .commands.bench import BenchCommand
from .commands.distill import DistillCommand
from .commands.sample import SampleCommand
from .commands.selftest import SelftestCommand
from .commands.train_teacher import TrainTeacherCommand
from .config import HqdmConfig, defaults_epilog
from .errors import ValidationError
from .utils.logging import SUCCESS_LEVEL, configure_logging

EXIT_OK = 0
EXIT_VALIDATION = 1
EXIT_RUNTIME = 2

COMMANDS = {
    "selftest": SelftestCommand,
    "train-teacher": TrainTeacherCommand,
    "distill": DistillCommand,
    "sample": SampleCommand,
    "analyze": AnalyzeCommand,
    "bench": BenchCommand,
}


class ArgumentParser(argparse.ArgumentParser):
    """argparse that reports usage errors with the validation exit code"""

    def error(self, message):
        self.print_usage(sys.stderr)
        self.exit(EXIT_VALIDATION, f"{self.prog}: error: {message}\n")


def _int_list(text: str) -> List[int]:
    try:
        return [int(part) for part in text.split(",") if part.strip()]
    except ValueError:
        raise argparse.ArgumentTypeError(f"expected comma-separated integers, got '{text}'")


def _str_list(text: str) -> List[str]:
    return [part.strip() for part in text.split(",") if part.strip()]


def build_parser() -> argparse.ArgumentParser:
    parser = ArgumentParser(
        prog="hqdm",
        description="Hadamard-transformed low-bit quantization and distillation of a toy diffusion model",
        formatter_class=argparse.RawDescriptionHelpFormatter,
        epilog=f"""
Examples:
  hqdm selftest
  hqdm train-teacher
  hqdm distill --scheme single_hadamard --wbits 4 --abits 4
  hqdm distill --scheme plain --wbits 4 --abits 4
  hqdm distill --sweep-k 3,4,5,6
  hqdm sample --steps 20 --n 16
  hqdm analyze --layers fc1,fc2
  hqdm bench --dims 256,1024 --bits 4,8

Environment:
  HQDM_THREADS  caps worker threads (set to 1 for bitwise-repeatable runs)

{defaults_epilog()}
""",
    )
    parser.add_argument("--verbose", "-v", action="store_true", help="Enable verbose output")
    parser.add_argument("--config", help="TOML run configuration (overrides pyproject.toml)")
    parser.add_argument("--project-root", default=".", help="Project root directory (default: current directory)")
    parser.add_argument("--seed", type=int, help="Root seed for every random stream")
    parser.add_argument("--output-dir", help="Directory for run outputs")

    subparsers = parser.add_subparsers(dest="command", help="Available commands")

    subparsers.add_parser("selftest", help="Run the fast invariant suite")

    teacher_parser = subparsers.add_parser("train-teacher", help="Train the full-precision toy teacher")
    teacher_parser.add_argument("--epochs", type=int, help="Training epochs")
    teacher_parser.add_argument("--output", help="Checkpoint directory (default: teacher_dir)")

    distill_parser = subparsers.add_parser("distill", help="Calibrate and distill a quantized student")
    distill_parser.add_argument("--teacher", help="Teacher checkpoint directory (default: teacher_dir)")
    distill_parser.add_argument("--output", help="Run root directory (default: output_dir)")
    distill_parser.add_argument("--scheme", choices=["plain", "single_hadamard"], help="Quantization scheme")
    distill_parser.add_argument("--wbits", type=int, dest="w_bits", help="Weight bit-width")
    distill_parser.add_argument("--abits", type=int, dest="a_bits", help="Activation bit-width")
    distill_parser.add_argument("--k", type=int, dest="hadamard_k_preferred", help="Preferred Hadamard order")
    distill_parser.add_argument("--sweep-k", type=_int_list, help="Comma-separated Hadamard orders to sweep")
    distill_parser.add_argument("--epochs", type=int, help="Distillation epochs")
    distill_parser.add_argument("--lora-rank", type=int, help="LoRA rank (capped per layer)")
    distill_parser.add_argument("--resume", action="store_true", help="Continue from the saved run state")
    distill_parser.add_argument("--no-quantize", action="store_true",
                                help="Disable quantization (student reproduces the teacher)")

    sample_parser = subparsers.add_parser("sample", help="Draw DDIM samples from a checkpoint")
    sample_parser.add_argument("--checkpoint", help="Teacher or student directory (default: teacher_dir)")
    sample_parser.add_argument("--output", help="Sample directory")
    sample_parser.add_argument("--n", type=int, help="Number of samples")
    sample_parser.add_argument("--steps", type=int, help="DDIM steps")
    sample_parser.add_argument("--int-path", action="store_true", help="Run a student on the integer kernels")

    analyze_parser = subparsers.add_parser("analyze", help="Outlier statistics and scheme comparison")
    analyze_parser.add_argument("--checkpoint", help="Teacher directory (default: teacher_dir)")
    analyze_parser.add_argument("--output", help="Report directory")
    analyze_parser.add_argument("--layers", type=_str_list, help="Comma-separated layer names")
    analyze_parser.add_argument("--timesteps", type=_int_list, help="Comma-separated timesteps")

    bench_parser = subparsers.add_parser("bench", help="Time the integer linear kernels")
    bench_parser.add_argument("--output", help="CSV path")
    bench_parser.add_argument("--dims", type=_int_list, help="Comma-separated feature dimensions")
    bench_parser.add_argument("--bits", type=_int_list, help="Comma-separated bit-widths")
    bench_parser.add_argument("--schemes", type=_str_list, help="Comma-separated schemes")
    bench_parser.add_argument("--reps", type=int, help="Timed repetitions")
    return parser


def _command_options(args: argparse.Namespace) -> dict:
    if args.command == "train-teacher":
        return {"output": args.output, "epochs": args.epochs}
    if args.command == "distill":
        return {
            "teacher": args.teacher, "output": args.output, "sweep_k": args.sweep_k, "resume": args.resume,
            "scheme": args.scheme, "w_bits": args.w_bits, "a_bits": args.a_bits,
            "hadamard_k_preferred": args.hadamard_k_preferred, "epochs": args.epochs,
            "lora_rank": args.lora_rank, "quantize": False if args.no_quantize else None,
        }
    if args.command == "sample":
        return {"checkpoint": args.checkpoint, "output": args.output, "n": args.n, "steps": args.steps,
                "int_path": args.int_path}
    if args.command == "analyze":
        return {"checkpoint": args.checkpoint, "output": args.output, "layers": args.layers,
                "timesteps": args.timesteps}
    if args.command == "bench":
        return {"output": args.output, "dims": args.dims, "bits": args.bits, "schemes": args.schemes,
                "reps": args.reps}
    return {}


def main(argv: Optional[List[str]] = None) -> None:
    sys.exit(run(argv))


def run(argv: Optional[List[str]] = None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    if args.command is None:
        parser.print_help()
        return EXIT_VALIDATION

    config = HqdmConfig()
    try:
        config.load_config(Path(args.project_root))
        if args.config:
            config.load_file(Path(args.config))
        config.apply_overrides({"seed": args.seed, "output_dir": args.output_dir})
    except ValidationError as e:
        configure_logging(logging.INFO)
        logging.getLogger(__name__).error(f"💥 Invalid configuration: {e}")
        return EXIT_VALIDATION

    log_level = logging.DEBUG if args.verbose or config.verbose_logging else logging.INFO
    configure_logging(log_level, show_tracebacks=log_level == logging.DEBUG)
    logger = logging.getLogger(__name__)

    command = COMMANDS[args.command](config)
    try:
        success = command.execute(**_command_options(args))
    except KeyboardInterrupt:
        logger.warning(f"⚠️  {args.command} interrupted by user")
        return EXIT_RUNTIME

    if success:
        logger.log(SUCCESS_LEVEL, f"🎉 {args.command} completed successfully")
        return EXIT_OK
    if isinstance(command.error, ValidationError):
        return EXIT_VALIDATION
    return EXIT_RUNTIME


if __name__ == "__main__":
    main()
