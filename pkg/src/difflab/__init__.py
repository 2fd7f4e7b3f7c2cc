"""difflab: fast diffusion-model ODE samplers validated on analytic score models."""

from .amed import (
    PredictorOutput,
    PredictorParams,
    TrainConfig,
    TrainResult,
    amed_plugin_step,
    amed_sample,
    amed_step,
    endpoint_errors,
    load_predictor,
    predict,
    save_predictor,
    train,
)
from .geometry import (
    AlignmentResult,
    BoundParams,
    PcaResult,
    bound_report,
    cumulative_variance,
    fit_bound_params,
    grid_align,
    logistic_bound,
    mc_shell_check,
    pca_trajectory,
    plane_deviations,
    projection_error,
    shell_radius,
    shell_sigma2,
)
from .harness import ConfigError, MetricsReport, RunConfig, nfe_to_steps, run_experiment
from .metrics import order_estimate, sliced_wasserstein
from .rng import stream
from .schedules import TimeSchedule, geometric_intermediate, make_schedule, refine_teacher
from .score_models import (
    FEATURE_DIM,
    DivergenceError,
    GaussianMixture,
    ModelEval,
    eval_model,
    exact_trajectory,
    load_model,
    oracle_solve,
    sample_data,
    save_model,
)
from .solvers import (
    SolverKind,
    StepPlan,
    Trajectory,
    afs_direction,
    sample,
    step_dpm2,
    step_dpmpp_2m,
    step_euler,
    step_heun,
    step_ipndm,
)
from .trajectory import read_trajectory_csv, write_trajectory_csv

__version__ = "0.1.0"
