from .analyze import AnalyzeCommand
from .bench import BenchCommand
from .distill import DistillCommand
from .sample import SampleCommand
from .selftest import SelftestCommand
from .train_teacher import TrainTeacherCommand

__all__ = [
    'AnalyzeCommand',
    'BenchCommand',
    'DistillCommand',
    'SampleCommand',
    'SelftestCommand',
    'TrainTeacherCommand',
]
