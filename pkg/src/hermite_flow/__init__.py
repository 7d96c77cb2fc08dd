"""Online SGD for extensive-width two-layer networks with Hermite activations."""

from .hermite import (
    Activation,
    activation_deriv,
    activation_eval,
    activation_from_coeffs,
    correlation_kernel,
    expand_activation,
    hermite_activation,
    hermite_deriv_eval,
    hermite_eval,
)
from .model import (
    DegenerateNeuronError,
    StudentState,
    TeacherModel,
    mc_population_loss,
    model_output,
    overlap_view,
    population_grad,
    population_loss,
    power_law_teacher,
    sample_grad,
    sample_loss,
    teacher_output,
)
from .selection import SelectionMap, gap_stats, greedy_select, init_gap_distribution
from .dynamics import (
    DivergenceError,
    RunConfig,
    TrajectoryLog,
    detect_emergence,
    diagnostics_check,
    gd_step,
    init_student,
    run,
    run_replicas,
    sgd_step,
)
from .theory import (
    fit_slope,
    idealized_loss,
    ode_overlap,
    predicted_time,
    scaling_exponents,
)
from .config import ConfigError, ExperimentSpec, parse_config, spec_from_dict
from .experiments import Report, run_experiment

__version__ = "0.1.0"
