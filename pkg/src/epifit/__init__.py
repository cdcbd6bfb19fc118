"""Bayesian inference for discrete-time SEIR/SEIRS epidemic models."""

from .core import (
    DelayPMF,
    LatentPaths,
    ModelConfig,
    ModelFlags,
    ParamVector,
    births_per_day,
    discretize_delay,
    rate_at,
    reproduction_series,
    simulate_paths,
    vaccination_removals,
    waning_reentry,
)
from .cutfeedback import loess_smooth, observed_proportion
from .data import Dataset, export_dataset, generate_synthetic, load_dataset
from .diagnostics import diagnostics, ess, split_rhat
from .observation import (
    AgeCaseMatrix,
    DeathCountPosterior,
    PriorSpec,
    elicit_ifr,
    mixture_loglik,
    negbin_logpmf,
)
from .phaseplane import (
    SirField,
    Trajectory,
    conserved_q,
    course_from_paths,
    daily_course,
    effectiveness_displacement,
    effectiveness_work,
    natural_course,
    speed_series,
    work,
)
from .pipeline import fit_posterior, run_pipeline
from .runconfig import RunConfig
from .sampling import (
    ChainDraws,
    SamplerConfig,
    geometric_schedule,
    grad,
    hmc_sample,
    simulated_annealing,
)
from .selection import (
    ModelScore,
    bayes_factor,
    bridge_log_ml,
    endemicity_diagnostic,
    information_criteria,
)

__version__ = "0.1.0"
