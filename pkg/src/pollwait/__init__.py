"""Mean waiting time in polling systems: closed-form engine and simulator."""
from .analytic import AnalyticReport, SwitchMatrix, analyze, mean_wait, moving_term_closed, moving_term_general, residual_term, switch_matrix
from .dists import Deterministic, Exponential, Hyperexponential2, Uniform, dist_from_dict
from .model import (
    Discipline,
    LoadProfile,
    PollingOrder,
    Policy,
    QueueSpec,
    SystemConfig,
    aggregate_moments,
    config_from_dict,
    load_config,
    validate,
)
from .sim import SimReport, pool, replicate, run

__version__ = "0.1.0"
