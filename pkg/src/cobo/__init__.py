"""Collaborative Bayesian optimization without raw-data sharing.

Agents model a common black-box objective with private Gaussian processes,
share only grid-discretized posteriors, and a server fuses those into a
central model (the 2-Wasserstein barycenter) to pick a batch of query points
per iteration through a collaborative knowledge-gradient acquisition.
"""

from .acquisition import (
    AcqConfig,
    AcquisitionState,
    BetaSchedule,
    FantasyDraws,
    JointDecision,
    baseline_acquisition,
    cokg_estimate,
    kg_local_estimate,
    local_kg_decisions,
    optimize_cokg,
    sigma_central,
    sigma_local,
)
from .barycenter import (
    BarycenterConfig,
    CentralGP,
    barycenter,
    barycenter_in_basis,
    covariance_barycenter,
    mean_barycenter,
    sqrtm_psd,
    w2_gaussian,
)
from .gp import (
    DiscretizedGP,
    KernelSpec,
    LocalAgent,
    Observation,
    discretize,
    kernel_eval,
    kernel_matrix,
    mle_noise_variance,
    posterior_eval,
    server_noise_variance,
)
from .grid import Grid, unit_grid
from .objectives import (
    ObjectiveSpec,
    eval_f1,
    eval_f2,
    external_eval,
    grid_optimum,
    make_objective,
    noisy_observe,
)
from .orchestrator import (
    FRAMEWORKS,
    IterationRecord,
    RunConfig,
    RunResult,
    finalize,
    run,
    run_repetitions,
    warmup,
)

__version__ = "0.1.0"
