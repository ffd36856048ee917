"""Fusion of discretized GP posteriors via the 2-Wasserstein barycenter.

The fused mean is the plain average of the shared mean vectors; the fused
covariance solves the Gaussian-barycenter matrix equation

    sum_n (S^(1/2) C_n S^(1/2))^(1/2) = N * S

by the standard fixed-point map

    S_{k+1} = S_k^(-1/2) ((1/N) sum_n (S_k^(1/2) C_n S_k^(1/2))^(1/2))^2 S_k^(-1/2)

initialized at the arithmetic mean of the inputs.
"""

import logging
from dataclasses import dataclass

import numpy as np

from .gp import DiscretizedGP
from .linalg import check_symmetric, symmetrize

logger = logging.getLogger(__name__)

__all__ = [
    "BarycenterConfig",
    "CentralGP",
    "sqrtm_psd",
    "mean_barycenter",
    "covariance_barycenter",
    "w2_gaussian",
    "barycenter",
    "barycenter_in_basis",
]


@dataclass(frozen=True)
class BarycenterConfig:
    """Stopping rule for the covariance fixed point.

    ``tol`` bounds the relative Frobenius residual of the barycenter equation,
    ``|sum_n roots - N S|_F / (N |S|_F)``.
    """

    tol: float = 1e-7
    max_iter: int = 200
    jitter: float = 1e-8

    def __post_init__(self):
        if self.tol <= 0 or self.max_iter < 1 or self.jitter <= 0:
            raise ValueError("invalid barycenter configuration")


@dataclass
class CentralGP:
    """The fused model living on the grid, with solver diagnostics."""

    mean: np.ndarray
    cov: np.ndarray
    residual: float
    iterations_used: int


def sqrtm_psd(a: np.ndarray) -> np.ndarray:
    """Symmetric PSD square root via eigendecomposition.

    Eigenvalues below zero (numerical noise) are clamped to zero before
    rooting. Raises ValueError on inputs asymmetric beyond 1e-8.
    """
    check_symmetric(a, name="sqrtm_psd input")
    w, u = np.linalg.eigh(symmetrize(a))
    w = np.clip(w, 0.0, None)
    return symmetrize((u * np.sqrt(w)) @ u.T)


def _sqrt_and_invsqrt(a: np.ndarray, floor: float):
    """Both S^(1/2) and S^(-1/2) from one eigendecomposition.

    Eigenvalues are floored at ``floor`` for the inverse root so that
    near-singular iterates never blow up.
    """
    w, u = np.linalg.eigh(symmetrize(a))
    w_root = np.sqrt(np.clip(w, 0.0, None))
    w_inv = 1.0 / np.sqrt(np.clip(w, floor, None))
    return (u * w_root) @ u.T, (u * w_inv) @ u.T


def mean_barycenter(means) -> np.ndarray:
    """Entrywise arithmetic mean of the shared mean vectors."""
    means = [np.asarray(m, dtype=float) for m in means]
    if not means:
        raise ValueError("no mean vectors supplied")
    length = means[0].shape
    if any(m.shape != length for m in means):
        raise ValueError("mean vectors have mismatched lengths")
    return np.mean(np.stack(means, axis=0), axis=0)


def covariance_barycenter(covs, cfg: BarycenterConfig = BarycenterConfig(),
                          residual_history: list | None = None):
    """Solve the barycenter covariance equation for N PSD matrices.

    Every input receives ``cfg.jitter`` diagonal inflation up front (agent
    posteriors approach singular as data accumulates and the barycenter is
    only defined for non-degenerate Gaussians).

    Returns ``(cov, residual, iterations)``. On non-convergence the best
    iterate seen is returned with its residual (> tol) and a warning is
    logged; the caller decides whether to accept it. ``residual_history``,
    when given, collects the residual of every iterate.
    """
    covs = [np.asarray(c, dtype=float) for c in covs]
    if not covs:
        raise ValueError("no covariance matrices supplied")
    d = covs[0].shape[0]
    if any(c.shape != (d, d) for c in covs):
        raise ValueError("covariance matrices have mismatched shapes")
    n = len(covs)
    eye = np.eye(d)
    covs = [symmetrize(c) + cfg.jitter * eye for c in covs]

    s = np.mean(np.stack(covs, axis=0), axis=0)
    best = None
    for it in range(1, cfg.max_iter + 1):
        root_s, inv_root_s = _sqrt_and_invsqrt(s, cfg.jitter)
        # Fixed summation order (agent index) keeps the reduction deterministic.
        roots_sum = np.zeros_like(s)
        for c in covs:
            roots_sum += sqrtm_psd(root_s @ c @ root_s)
        s_norm = np.linalg.norm(s)
        residual = float(np.linalg.norm(roots_sum - n * s) / (n * s_norm)) if s_norm > 0 else 0.0
        if residual_history is not None:
            residual_history.append(residual)
        if best is None or residual < best[1]:
            best = (s, residual, it)
        if residual <= cfg.tol:
            return symmetrize(s), residual, it
        mean_root = roots_sum / n
        s = symmetrize(inv_root_s @ (mean_root @ mean_root) @ inv_root_s)

    s, residual, it = best
    logger.warning(
        "covariance barycenter did not converge: residual %.3e > tol %.1e after %d iterations",
        residual, cfg.tol, cfg.max_iter,
    )
    return symmetrize(s), residual, it


def w2_gaussian(m1: np.ndarray, c1: np.ndarray, m2: np.ndarray, c2: np.ndarray) -> float:
    """2-Wasserstein distance between two Gaussians (diagnostic use)."""
    m1 = np.asarray(m1, dtype=float)
    m2 = np.asarray(m2, dtype=float)
    root1 = sqrtm_psd(c1)
    cross = sqrtm_psd(symmetrize(root1 @ c2 @ root1))
    sq = float(np.sum((m1 - m2) ** 2) + np.trace(c1) + np.trace(c2) - 2.0 * np.trace(cross))
    return float(np.sqrt(max(sq, 0.0)))


def barycenter(models, cfg: BarycenterConfig = BarycenterConfig()) -> CentralGP:
    """Fuse N discretized GPs into the central model.

    A single model is passed through unchanged.
    """
    models = list(models)
    if not models:
        raise ValueError("no models supplied")
    if len(models) == 1:
        m = models[0]
        return CentralGP(mean=m.mean.copy(), cov=m.cov.copy(), residual=0.0, iterations_used=0)
    mean = mean_barycenter([m.mean for m in models])
    cov, residual, iterations = covariance_barycenter([m.cov for m in models], cfg)
    return CentralGP(mean=mean, cov=cov, residual=residual, iterations_used=iterations)


def barycenter_in_basis(models, cfg: BarycenterConfig, basis: np.ndarray) -> CentralGP:
    """Fuse models whose covariances all live in the span of ``basis``.

    ``basis`` is a (D, r) matrix with orthonormal columns. When every input
    covariance satisfies C_n = V B_n V^T (as grid posteriors under a shared
    prior kernel do), the fixed point decouples: the complement of the span
    carries only the jitter and stays at jitter * I, so solving the r-by-r
    projected problem and lifting back reproduces the full-size solution
    while avoiding O(D^3) eigendecompositions per step.
    """
    models = list(models)
    if len(models) == 1:
        return barycenter(models, cfg)
    v = basis
    projected = [v.T @ m.cov @ v for m in models]
    reduced, residual, iterations = covariance_barycenter(projected, cfg)
    d = models[0].cov.shape[0]
    cov = v @ reduced @ v.T
    cov += cfg.jitter * (np.eye(d) - v @ v.T)
    mean = mean_barycenter([m.mean for m in models])
    return CentralGP(mean=mean, cov=symmetrize(cov), residual=residual,
                     iterations_used=iterations)


def shared_prior_basis(prior_cov: np.ndarray, rel_cutoff: float = 1e-10) -> np.ndarray:
    """Orthonormal basis of the numerically significant range of a prior
    kernel matrix.

    Grid posteriors conditioned on on-grid data stay inside this range, which
    is what makes :func:`barycenter_in_basis` exact for them.
    """
    w, u = np.linalg.eigh(symmetrize(prior_cov))
    keep = w > rel_cutoff * w[-1]
    return np.ascontiguousarray(u[:, keep][:, ::-1])
