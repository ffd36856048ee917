"""Shared dense linear-algebra helpers for covariance matrices."""

import numpy as np

__all__ = [
    "FactorizationError",
    "cholesky_with_jitter",
    "symmetrize",
    "check_symmetric",
]

# Escalation ladder used before declaring a covariance matrix unusable.
JITTER_START = 1e-8
JITTER_MAX = 1e-4
SYMMETRY_TOL = 1e-8


class FactorizationError(np.linalg.LinAlgError):
    """Raised when a covariance matrix cannot be factorized even after jitter."""


def symmetrize(a: np.ndarray) -> np.ndarray:
    """Return the symmetric part (a + a.T) / 2."""
    return 0.5 * (a + a.T)


def check_symmetric(a: np.ndarray, tol: float = SYMMETRY_TOL, name: str = "matrix") -> None:
    """Raise ValueError if ``a`` is not square-symmetric within ``tol``."""
    if a.ndim != 2 or a.shape[0] != a.shape[1]:
        raise ValueError(f"{name} must be square, got shape {a.shape}")
    dev = np.abs(a - a.T).max() if a.size else 0.0
    if dev > tol:
        raise ValueError(f"{name} is asymmetric: max |a - a.T| = {dev:.3e} > {tol:.1e}")


def cholesky_with_jitter(a: np.ndarray, start: float = JITTER_START,
                         max_jitter: float = JITTER_MAX):
    """Lower Cholesky factor of a symmetric PSD matrix, inflating the diagonal
    only as needed.

    The factorization is attempted unmodified first so that well-conditioned
    inputs are reproduced exactly; on failure the diagonal is inflated by an
    escalating jitter (``start`` times 10 per attempt, up to ``max_jitter``).

    Returns
    -------
    (L, jitter) : the factor and the diagonal inflation that was used (0.0 if
    the plain factorization succeeded).

    Raises
    ------
    FactorizationError
        if the matrix still fails at the maximum jitter; the message carries
        a condition-number diagnostic.
    """
    try:
        return np.linalg.cholesky(a), 0.0
    except np.linalg.LinAlgError:
        pass
    eye = np.eye(a.shape[0])
    jitter = start
    while jitter <= max_jitter * (1 + 1e-12):
        try:
            return np.linalg.cholesky(a + jitter * eye), jitter
        except np.linalg.LinAlgError:
            jitter *= 10.0
    eigs = np.linalg.eigvalsh(symmetrize(a))
    raise FactorizationError(
        "Cholesky failed after jitter escalation to "
        f"{max_jitter:.1e}: eigenvalue range [{eigs.min():.3e}, {eigs.max():.3e}], "
        f"condition estimate {abs(eigs.max()) / max(abs(eigs.min()), 1e-300):.3e}"
    )


def solve_lower(L: np.ndarray, b: np.ndarray) -> np.ndarray:
    """Forward substitution with a small lower-triangular factor.

    Plain row-by-row elimination (vectorized over right-hand-side columns),
    so the result is the literal IEEE evaluation of the substitution formula
    rather than whatever blocking the installed BLAS picks.
    """
    n = L.shape[0]
    b = np.asarray(b, dtype=float)
    out = np.empty_like(b)
    for i in range(n):
        acc = b[i].copy() if b.ndim > 1 else np.float64(b[i])
        for k in range(i):
            acc = acc - L[i, k] * out[k]
        out[i] = acc / L[i, i]
    return out
