import csv
import logging

import numpy as np
import pytest

from hqdm import cli
from hqdm.cli import EXIT_OK, EXIT_RUNTIME, EXIT_VALIDATION, build_parser, run
from hqdm.commands import SelftestCommand
from hqdm.commands.base import Command
from hqdm.commands.sample import write_pgm
from hqdm.errors import ValidationError
from hqdm.tensor import read_tensor

SMALL_PROJECT = """
[tool.hqdm]
seed = 1
timesteps = 20
beta_start = 0.01
beta_end = 0.5
dataset_size = 16
teacher_epochs = 1
teacher_batch_size = 8
teacher_dir = "teacher"
output_dir = "runs"
lora_rank = 2
distill_epochs = 1
distill_batch_size = 4
samples_per_epoch = 4
n_calib = 4
sampling_steps = 4
n_samples = 2
analysis_samples = 2
bench_dims = [32]
bench_bits = [4]
bench_reps = 2
bench_rows = 8
"""


@pytest.fixture(autouse=True)
def restore_logging():
    root = logging.getLogger()
    handlers, level = root.handlers[:], root.level
    yield
    root.handlers[:] = handlers
    root.setLevel(level)


@pytest.fixture
def project(tmp_path):
    (tmp_path / "pyproject.toml").write_text(SMALL_PROJECT)
    return tmp_path


def hqdm(project, *args):
    return run(["--project-root", str(project), *args])


def test_no_command_prints_help(capsys):
    assert run([]) == EXIT_VALIDATION
    assert "selftest" in capsys.readouterr().out


def test_usage_error_exits_with_validation_code():
    with pytest.raises(SystemExit) as info:
        run(["distill", "--scheme", "double_hadamard"])
    assert info.value.code == EXIT_VALIDATION


def test_bad_integer_list():
    with pytest.raises(SystemExit) as info:
        run(["bench", "--dims", "32,abc"])
    assert info.value.code == EXIT_VALIDATION


def test_parser_collects_options():
    args = build_parser().parse_args(["distill", "--wbits", "8", "--sweep-k", "3,4", "--no-quantize"])
    assert args.w_bits == 8
    assert args.sweep_k == [3, 4]
    assert args.no_quantize


def test_selftest_passes(project):
    assert hqdm(project, "selftest") == EXIT_OK


def test_invalid_config_file(project):
    bad = project / "bad.toml"
    bad.write_text("not_a_key = 1\n")
    assert hqdm(project, "--config", str(bad), "selftest") == EXIT_VALIDATION


def test_missing_teacher_is_a_validation_error(project):
    assert hqdm(project, "distill") == EXIT_VALIDATION


def test_runtime_failure_exit_code(project, monkeypatch):
    class Broken(Command):
        def run(self):
            raise RuntimeError("boom")

    monkeypatch.setitem(cli.COMMANDS, "selftest", Broken)
    assert hqdm(project, "selftest") == EXIT_RUNTIME


def test_command_remembers_its_error():
    class Invalid(Command):
        def run(self):
            raise ValidationError("nope")

    command = Invalid(config=None)
    assert command.execute() is False
    assert isinstance(command.error, ValidationError)


def test_selftest_command_directly():
    from hqdm.config import HqdmConfig

    assert SelftestCommand(HqdmConfig()).execute() is True


def test_write_pgm(tmp_path):
    path = write_pgm(tmp_path / "img.pgm", np.array([[-1.0, 0.0], [1.0, 2.0]]))
    lines = path.read_text().splitlines()
    assert lines[:3] == ["P2", "2 2", "255"]
    assert lines[3:] == ["0 128", "255 255"]


def test_write_pgm_needs_2d(tmp_path):
    with pytest.raises(ValidationError):
        write_pgm(tmp_path / "img.pgm", np.zeros((1, 2, 2)))


@pytest.mark.slow
def test_end_to_end_pipeline(project):
    assert hqdm(project, "train-teacher") == EXIT_OK
    assert (project / "teacher" / "manifest.json").exists()

    assert hqdm(project, "distill") == EXIT_OK
    run_dir = project / "runs" / "single_hadamard_W4A4_k5"
    with open(run_dir / "summary.csv", newline="") as f:
        header, row = list(csv.reader(f))
    assert header == ["scheme", "bits", "k", "ptq_loss", "final_loss"]
    assert row[:3] == ["single_hadamard", "W4A4", "5"]
    assert (run_dir / "metrics.csv").exists()

    out = str(project / "s")
    assert hqdm(project, "sample", "--checkpoint", str(run_dir), "--int-path", "--output", out) == EXIT_OK
    samples = read_tensor(project / "s" / "samples.hqt")
    assert samples.shape == (2, 1, 16, 16)
    assert (project / "s" / "sample_001.pgm").exists()

    assert hqdm(project, "sample") == EXIT_OK
    assert (project / "runs" / "samples" / "samples.hqt").exists()

    assert hqdm(project, "analyze", "--layers", "fc1,mid") == EXIT_OK
    assert (project / "runs" / "analysis" / "outliers.csv").exists()
    assert (project / "runs" / "analysis" / "schemes.csv").exists()
    assert hqdm(project, "analyze", "--layers", "bogus") == EXIT_VALIDATION

    assert hqdm(project, "bench") == EXIT_OK
    with open(project / "runs" / "bench.csv", newline="") as f:
        rows = list(csv.DictReader(f))
    assert [r["scheme"] for r in rows] == ["plain", "single_hadamard", "double_hadamard"]


@pytest.mark.slow
def test_k_sweep_writes_ablation(project):
    assert hqdm(project, "train-teacher") == EXIT_OK
    assert hqdm(project, "distill", "--sweep-k", "2,3", "--epochs", "0") == EXIT_OK
    with open(project / "runs" / "ablation_k.csv", newline="") as f:
        rows = list(csv.DictReader(f))
    assert [r["k"] for r in rows] == ["2", "3"]
