"""Exact Gaussian-process regression with an RBF kernel.

Each agent keeps a private dataset and a zero-mean GP prior; posteriors are
computed by Cholesky solves of the noisy kernel matrix and can be restricted
("discretized") onto a fixed grid, which is the only representation an agent
ever shares.
"""

import math
from dataclasses import dataclass, field

import numpy as np
import scipy.linalg
import scipy.optimize

from .grid import Grid
from .linalg import cholesky_with_jitter, symmetrize

__all__ = [
    "KernelSpec",
    "Observation",
    "LocalAgent",
    "DiscretizedGP",
    "kernel_eval",
    "kernel_matrix",
    "posterior_eval",
    "discretize",
    "posterior_mean_on_grid",
    "mle_noise_variance",
    "server_noise_variance",
]

NOISE_VAR_MIN = 1e-6
NOISE_VAR_MAX = 1.0


@dataclass(frozen=True)
class KernelSpec:
    """Squared-exponential kernel k(a, b) = amplitude * exp(-|a-b|^2 / lengthscale_sq)."""

    lengthscale_sq: float = 0.1
    amplitude: float = 1.0

    def __post_init__(self):
        if self.lengthscale_sq <= 0 or self.amplitude <= 0:
            raise ValueError("kernel hyperparameters must be positive")


@dataclass(frozen=True)
class Observation:
    x: np.ndarray
    y: float


@dataclass
class DiscretizedGP:
    """Posterior mean vector and covariance matrix restricted to the grid."""

    mean: np.ndarray
    cov: np.ndarray


@dataclass
class LocalAgent:
    """One collaborating agent: private data plus its GP configuration.

    ``data`` is append-only within a run; use :meth:`add_observation`.
    """

    id: int
    kernel: KernelSpec
    noise_var: float
    data: list[Observation] = field(default_factory=list)
    diagnostics: dict = field(default_factory=dict)
    _cache: dict = field(default_factory=dict, repr=False)

    def add_observation(self, x: np.ndarray, y: float) -> None:
        self.data.append(Observation(x=np.asarray(x, dtype=float), y=float(y)))

    def n_observations(self) -> int:
        return len(self.data)


def kernel_eval(kernel: KernelSpec, a: np.ndarray, b: np.ndarray) -> float:
    """Kernel value for a single pair of points."""
    a = np.asarray(a, dtype=float)
    b = np.asarray(b, dtype=float)
    if a.shape != b.shape:
        raise ValueError(f"dimension mismatch: {a.shape} vs {b.shape}")
    sq = float(np.sum((a - b) ** 2))
    return kernel.amplitude * math.exp(-sq / kernel.lengthscale_sq)


def kernel_matrix(kernel: KernelSpec, a: np.ndarray, b: np.ndarray) -> np.ndarray:
    """Kernel matrix between two point sets of shape (n, d) and (m, d)."""
    a = np.atleast_2d(np.asarray(a, dtype=float))
    b = np.atleast_2d(np.asarray(b, dtype=float))
    if a.shape[1] != b.shape[1]:
        raise ValueError(f"dimension mismatch: {a.shape} vs {b.shape}")
    sq = ((a[:, None, :] - b[None, :, :]) ** 2).sum(axis=-1)
    return kernel.amplitude * np.exp(-sq / kernel.lengthscale_sq)


def _data_arrays(agent: LocalAgent):
    xs = np.array([o.x for o in agent.data], dtype=float)
    ys = np.array([o.y for o in agent.data], dtype=float)
    return xs, ys


def _posterior_factors(agent: LocalAgent):
    """Cholesky factor of (K_t + noise I) and the weight vector for the mean.

    Cached per dataset size; the dataset is append-only so the size is a
    sufficient key.
    """
    t = len(agent.data)
    cached = agent._cache.get("factors")
    if cached is not None and cached[0] == t:
        return cached[1], cached[2], cached[3]
    xs, ys = _data_arrays(agent)
    kmat = kernel_matrix(agent.kernel, xs, xs)
    L, jitter = cholesky_with_jitter(kmat + agent.noise_var * np.eye(t))
    alpha = scipy.linalg.cho_solve((L, True), ys)
    agent.diagnostics["jitter"] = jitter
    agent._cache["factors"] = (t, xs, L, alpha)
    return xs, L, alpha


def posterior_eval(agent: LocalAgent, query_a: np.ndarray, query_b: np.ndarray):
    """Posterior mean at ``query_a`` and posterior covariance between the two
    query points, conditioned on the agent's data.

    With no data this recovers the prior: mean 0 and the prior kernel value.
    """
    query_a = np.asarray(query_a, dtype=float)
    query_b = np.asarray(query_b, dtype=float)
    if not agent.data:
        return 0.0, kernel_eval(agent.kernel, query_a, query_b)
    xs, L, alpha = _posterior_factors(agent)
    k_a = kernel_matrix(agent.kernel, query_a[None, :], xs)[0]
    k_b = kernel_matrix(agent.kernel, query_b[None, :], xs)[0]
    mean = float(k_a @ alpha)
    v_a = scipy.linalg.solve_triangular(L, k_a, lower=True)
    v_b = scipy.linalg.solve_triangular(L, k_b, lower=True)
    cov = kernel_eval(agent.kernel, query_a, query_b) - float(v_a @ v_b)
    return mean, cov


def discretize(agent: LocalAgent, grid: Grid,
               prior_cov: np.ndarray | None = None) -> DiscretizedGP:
    """Restrict the agent's posterior to the grid.

    The covariance is symmetrized before return; entries agree with
    :func:`posterior_eval` at the grid points. ``prior_cov`` may carry a
    precomputed prior kernel matrix on the grid (it is recomputed otherwise).
    """
    pts = grid.points
    prior = kernel_matrix(agent.kernel, pts, pts) if prior_cov is None else prior_cov
    if not agent.data:
        return DiscretizedGP(mean=np.zeros(len(grid)), cov=symmetrize(prior))
    if grid.dim != agent.data[0].x.shape[0]:
        raise ValueError(
            f"grid dimension {grid.dim} does not match data dimension {agent.data[0].x.shape[0]}"
        )
    xs, L, alpha = _posterior_factors(agent)
    k_xt = kernel_matrix(agent.kernel, pts, xs)
    mean = k_xt @ alpha
    v = scipy.linalg.solve_triangular(L, k_xt.T, lower=True)
    cov = prior - v.T @ v
    return DiscretizedGP(mean=mean, cov=symmetrize(cov))


def posterior_mean_on_grid(agent: LocalAgent, grid: Grid) -> np.ndarray:
    """Posterior mean restricted to the grid (no covariance; cheap)."""
    if not agent.data:
        return np.zeros(len(grid))
    xs, _, alpha = _posterior_factors(agent)
    return kernel_matrix(agent.kernel, grid.points, xs) @ alpha


def _gaussian_nll(eigvals: np.ndarray, coeffs_sq: np.ndarray, noise_var: float) -> float:
    lam = eigvals + noise_var
    return 0.5 * float(np.sum(coeffs_sq / lam) + np.sum(np.log(lam)))


def mle_noise_variance(data: list[Observation], kernel: KernelSpec) -> float:
    """Maximum-likelihood noise variance of y under the zero-mean GP prior.

    Scalar search on log noise-variance over [1e-6, 1.0] (tolerance 1e-4 in
    log space); the boundary values are compared explicitly so the estimate
    clamps exactly when the likelihood is maximized at an endpoint.
    """
    if len(data) < 2:
        raise ValueError(f"need at least 2 observations for the noise MLE, got {len(data)}")
    xs = np.array([o.x for o in data], dtype=float)
    ys = np.array([o.y for o in data], dtype=float)
    kmat = kernel_matrix(kernel, xs, xs)
    eigvals, vecs = np.linalg.eigh(symmetrize(kmat))
    eigvals = np.clip(eigvals, 0.0, None)
    coeffs_sq = (vecs.T @ ys) ** 2

    def nll_log(u: float) -> float:
        return _gaussian_nll(eigvals, coeffs_sq, math.exp(u))

    lo, hi = math.log(NOISE_VAR_MIN), math.log(NOISE_VAR_MAX)
    res = scipy.optimize.minimize_scalar(
        nll_log, bounds=(lo, hi), method="bounded", options={"xatol": 1e-4}
    )
    candidates = [(nll_log(lo), NOISE_VAR_MIN), (nll_log(hi), NOISE_VAR_MAX),
                  (float(res.fun), math.exp(float(res.x)))]
    candidates.sort(key=lambda c: c[0])
    return min(max(candidates[0][1], NOISE_VAR_MIN), NOISE_VAR_MAX)


def server_noise_variance(estimates) -> float:
    """Arithmetic mean of the per-agent noise-variance estimates."""
    estimates = list(estimates)
    if not estimates:
        raise ValueError("no noise-variance estimates supplied")
    return float(np.mean(estimates))
