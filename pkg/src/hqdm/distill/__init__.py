from .calibrate import calibrate_ptq
from .config import DistillConfig
from .state import RunState, load_run_state, load_student, save_run_state
from .student import QuantOps, QuantStudent
from .trainer import DistillResult, distill_run, distill_step, evaluate_loss, generate_inputs

__all__ = [
    'DistillConfig',
    'DistillResult',
    'QuantOps',
    'QuantStudent',
    'RunState',
    'calibrate_ptq',
    'distill_run',
    'distill_step',
    'evaluate_loss',
    'generate_inputs',
    'load_run_state',
    'load_student',
    'save_run_state',
]
