"""Uncertainty benchmark for diffusion-prior inverse-problem solvers.

A linear-Gaussian inverse problem with a Gaussian-mixture prior has an
analytic posterior, score, and denoiser. This package uses that tractable
setting to measure whether plug-and-play diffusion samplers recover the true
posterior uncertainty, comparing each solver's coverage and subspace
variances against the exact references.
"""

__version__ = "0.1.0"

from .gmm import (
    GaussianMixture,
    ToyPriorSpec,
    build_toy_prior,
    exact_posterior,
    mixture_logpdf,
    mixture_moments,
    noisy_marginal,
    sample_mixture,
    score_and_denoise,
)
from .operators import (
    LinearOperatorSVD,
    Measurement,
    apply_forward,
    apply_pinv,
    build_operator,
    synthesize_measurement,
)
from .diffusion import (
    NoiseSchedule,
    ReverseConfig,
    ReverseKernel,
    build_schedule,
    level_index_for_sigma,
    reverse_sample,
)
from .seeding import derive_seed
from .solvers import (
    SOLVER_NAMES,
    SampleBatch,
    SamplingContext,
    SolverSpec,
    resolve_solver,
    run_batch,
    sample_one,
)
from .diagnostics import (
    AccuracyReport,
    CoverageReport,
    ObsNullReport,
    coverage_eval,
    obs_null_variance,
    oracle_reference,
    rmse_eval,
    variance_vs_k,
)
from .config import ExperimentConfig, load_config
from .harness import ResultRow, run_experiment, write_report
