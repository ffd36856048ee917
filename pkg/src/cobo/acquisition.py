"""Collaborative knowledge-gradient acquisition over a discretized feasible set.

The acquisition scores a joint decision (one grid point per agent) as the
Monte Carlo average, over shared standard-normal fantasy draws, of

    max_z [central fantasy mean at z]
      + beta * sum_n max_z [agent n fantasy mean at z]

where the fantasy means reparameterize the effect of the not-yet-collected
batch of observations. Draw m's entry n is shared between the central term
and agent n's local term.
"""

import itertools
import math
from dataclasses import dataclass

import numpy as np

from . import _kernels
from .barycenter import CentralGP
from .gp import DiscretizedGP
from .linalg import cholesky_with_jitter, solve_lower

__all__ = [
    "BetaSchedule",
    "FantasyDraws",
    "JointDecision",
    "AcqConfig",
    "AcquisitionState",
    "sigma_central",
    "sigma_local",
    "cokg_estimate",
    "kg_local_estimate",
    "optimize_cokg",
    "local_kg_decisions",
    "baseline_acquisition",
]

BETA_KINDS = ("log_increasing", "exp_decreasing", "constant")


@dataclass(frozen=True)
class BetaSchedule:
    """Collaboration weight as a function of the iteration number t >= 1."""

    kind: str = "log_increasing"

    def __post_init__(self):
        if self.kind not in BETA_KINDS:
            raise ValueError(f"unknown beta schedule {self.kind!r}, expected one of {BETA_KINDS}")

    def value(self, t: int) -> float:
        if t < 1:
            raise ValueError(f"iteration number must be >= 1, got {t}")
        if self.kind == "log_increasing":
            return math.log(2 * t + 1)
        if self.kind == "exp_decreasing":
            return math.exp(-t / 2)
        return 1.0


@dataclass(frozen=True)
class FantasyDraws:
    """Shared standard-normal draws, one row per fantasy sample.

    When ``antithetic`` the second half of the rows is the negation of the
    first half, which restores per-pair non-negativity of the knowledge
    gradient.
    """

    xi: np.ndarray
    antithetic: bool = True

    def __post_init__(self):
        if self.xi.ndim != 2:
            raise ValueError("draws must be an (M, N) matrix")
        m = self.xi.shape[0]
        if self.antithetic:
            if m % 2 != 0:
                raise ValueError("antithetic draws need an even number of rows")
            half = m // 2
            if not np.array_equal(self.xi[half:], -self.xi[:half]):
                raise ValueError("antithetic draws must satisfy xi[m + M/2] == -xi[m]")

    @property
    def m(self) -> int:
        return self.xi.shape[0]

    @property
    def n_agents(self) -> int:
        return self.xi.shape[1]

    @classmethod
    def sample(cls, m: int, n_agents: int, rng: np.random.Generator,
               antithetic: bool = True) -> "FantasyDraws":
        if antithetic:
            if m % 2 != 0:
                raise ValueError("antithetic draws need an even M")
            half = rng.standard_normal((m // 2, n_agents))
            return cls(xi=np.vstack([half, -half]), antithetic=True)
        return cls(xi=rng.standard_normal((m, n_agents)), antithetic=False)


@dataclass(frozen=True, order=True)
class JointDecision:
    """Grid indices assigned to the agents, one per agent (duplicates allowed)."""

    indices: tuple[int, ...]

    def __post_init__(self):
        object.__setattr__(self, "indices", tuple(int(i) for i in self.indices))

    @property
    def array(self) -> np.ndarray:
        return np.asarray(self.indices, dtype=np.int64)


@dataclass(frozen=True)
class AcqConfig:
    """Monte Carlo and outer-search budget for the acquisition optimizer."""

    m_draws: int = 64
    restarts: int = 8
    exhaustive_threshold: int = 4096

    def __post_init__(self):
        if self.m_draws < 2 or self.m_draws % 2 != 0:
            raise ValueError("m_draws must be even and >= 2")
        if self.restarts < 1:
            raise ValueError("restarts must be >= 1")


def _central_rows(central: CentralGP, indices: np.ndarray, noise_var: float) -> np.ndarray:
    """sigma^c(x, z) for all grid z, stacked as an (N, D) matrix."""
    sub = central.cov[np.ix_(indices, indices)] + noise_var * np.eye(len(indices))
    lower, _ = cholesky_with_jitter(sub)
    rows = central.cov[indices, :]
    return solve_lower(lower, rows)


def sigma_central(central: CentralGP, x: JointDecision, z_index: int,
                  noise_var: float) -> np.ndarray:
    """Fantasy weight vector of the central model for one target grid point.

    One triangular solve against the Cholesky factor of the batch covariance
    (central covariance at the chosen indices plus observation noise).
    """
    idx = x.array
    sub = central.cov[np.ix_(idx, idx)] + noise_var * np.eye(len(idx))
    lower, _ = cholesky_with_jitter(sub)
    k = central.cov[idx, z_index]
    return solve_lower(lower, k)


def _local_variance(model: DiscretizedGP, x_index: int) -> float:
    var = float(model.cov[x_index, x_index])
    if var < -1e-8:
        raise ValueError(f"negative posterior variance {var:.3e} at grid index {x_index}")
    return max(var, 0.0)


def sigma_local(model: DiscretizedGP, x_index: int, z_index: int, noise_var: float) -> float:
    """Fantasy weight of one local model: cov(x, z) / sqrt(cov(x, x) + noise)."""
    denom = math.sqrt(_local_variance(model, x_index) + noise_var)
    if denom == 0.0:
        return 0.0
    return float(model.cov[x_index, z_index]) / denom


def _sigma_local_row(model: DiscretizedGP, x_index: int, noise_var: float) -> np.ndarray:
    denom = math.sqrt(_local_variance(model, x_index) + noise_var)
    if denom == 0.0:
        return np.zeros_like(model.cov[x_index])
    return model.cov[x_index] / denom


def _sigma_local_matrix(model: DiscretizedGP, noise_var: float) -> np.ndarray:
    diag = np.diag(model.cov)
    if diag.min() < -1e-8:
        raise ValueError(f"negative posterior variance {diag.min():.3e} on the grid")
    denom = np.sqrt(np.clip(diag, 0.0, None) + noise_var)
    denom[denom == 0.0] = np.inf
    return model.cov / denom[:, None]


def cokg_estimate(central: CentralGP, locals_, x: JointDecision, beta: float,
                  draws: FantasyDraws, noise_var: float) -> float:
    """Monte Carlo value of the collaborative acquisition at one joint decision.

    Every inner maximum is an exhaustive scan of the grid; the estimate is a
    pure function of its inputs (two calls with equal inputs are identical).
    """
    xi = draws.xi
    m = xi.shape[0]
    n = xi.shape[1]
    idx = x.array
    if len(idx) != n:
        raise ValueError(f"decision has {len(idx)} indices but draws carry {n} agents")
    sig = _central_rows(central, idx, noise_var)
    fantasy = np.tile(central.mean, (m, 1))
    for j in range(n):
        fantasy += xi[:, j:j + 1] * sig[j]
    central_term = float(np.mean(np.max(fantasy, axis=1)))
    if beta == 0.0:
        return central_term
    if locals_ is None or len(locals_) != n:
        raise ValueError("local models are required when beta != 0")
    local_sum = 0.0
    for j, model in enumerate(locals_):
        row = _sigma_local_row(model, idx[j], noise_var)
        g = model.mean[None, :] + xi[:, j:j + 1] * row[None, :]
        local_sum += float(np.mean(np.max(g, axis=1)))
    return central_term + beta * local_sum


def _sequential_mean(values: np.ndarray) -> float:
    """Left-to-right accumulation, matching the compiled scan kernels so the
    plain and table-based paths agree bit for bit (argmax ties included)."""
    acc = 0.0
    for v in values:
        acc += float(v)
    return acc / len(values)


def kg_local_estimate(model: DiscretizedGP, x_index: int, draws_1d: np.ndarray,
                      noise_var: float) -> float:
    """Knowledge gradient of one local model, baseline-subtracted.

    With antithetic draws this is non-negative up to rounding: each pair
    (xi, -xi) averages to at least the current best posterior mean.
    """
    draws_1d = np.asarray(draws_1d, dtype=float)
    row = _sigma_local_row(model, x_index, noise_var)
    g = model.mean[None, :] + draws_1d[:, None] * row[None, :]
    return _sequential_mean(np.max(g, axis=1)) - float(np.max(model.mean))


def _local_table(model: DiscretizedGP, xi_col: np.ndarray, noise_var: float) -> np.ndarray:
    sig_rows = np.ascontiguousarray(_sigma_local_matrix(model, noise_var))
    xi_col = np.ascontiguousarray(xi_col)
    wmax = float(np.abs(xi_col).max()) if xi_col.size else 0.0
    return _kernels.local_value_table(model.mean, sig_rows, xi_col, wmax)


def _beta_tables(locals_, draws: FantasyDraws, noise_var: float, beta: float, d: int):
    """Per-agent candidate tables beta * mean_m max_z (mu_n + sigma_n * xi_mn).

    The local term of the acquisition depends on each agent's coordinate
    alone, so these tables turn local terms into O(1) lookups.
    """
    n = draws.n_agents
    if beta == 0.0 or locals_ is None:
        return [np.zeros(d) for _ in range(n)]
    return [beta * _local_table(model, draws.xi[:, j], noise_var)
            for j, model in enumerate(locals_)]


def optimize_cokg(central: CentralGP, locals_, beta: float, cfg: AcqConfig,
                  draws: FantasyDraws, noise_var: float,
                  rng: np.random.Generator | None = None, history: list | None = None):
    """Maximize the collaborative acquisition over joint decisions.

    Small outer spaces (D^N within ``cfg.exhaustive_threshold``) are scanned
    exhaustively in row-major order. Otherwise coordinate ascent runs from
    ``cfg.restarts`` seeded random decisions, re-optimizing one coordinate at
    a time by exhaustive scan until no coordinate moves; the best restart
    wins, with ties broken toward the smallest index vector. The returned
    value is always re-evaluated through :func:`cokg_estimate`, so it never
    exceeds the true exhaustive optimum.

    ``history``, when given, collects the running acquisition value after
    each accepted ascent step.
    """
    n = draws.n_agents
    d = central.mean.shape[0]
    if float(d) ** n <= cfg.exhaustive_threshold:
        best_val = -np.inf
        best_idx = None
        for combo in itertools.product(range(d), repeat=n):
            val = cokg_estimate(central, locals_, JointDecision(combo), beta, draws, noise_var)
            if val > best_val:
                best_val, best_idx = val, combo
        return JointDecision(best_idx), best_val

    if rng is None:
        rng = np.random.default_rng(0)
    kc = np.ascontiguousarray(central.cov)
    mu_c = np.ascontiguousarray(central.mean)
    xi = np.ascontiguousarray(draws.xi)
    norm_caps, norm_counts = _norm_quantiles(xi)
    tables = _beta_tables(locals_, draws, noise_var, beta, d)

    scan_cache: dict = {}

    def scan(x: np.ndarray, coord: int):
        key = (coord, tuple(x[j] for j in range(n) if j != coord))
        out = scan_cache.get(key)
        if out is None:
            out = _kernels.scan_coordinate(kc, mu_c, xi, norm_caps, norm_counts,
                                           x, coord, noise_var, tables[coord])
            scan_cache[key] = out
        return out

    candidates = []
    for _ in range(cfg.restarts):
        x = rng.integers(0, d, size=n).astype(np.int64)
        for _cycle in range(1000):
            moved = False
            for coord in range(n):
                # the scan returns the smallest exact-argmax of the coordinate,
                # so staying put is optimal (ties included) iff it equals x[coord]
                best_c, best_val = scan(x, coord)
                if best_c >= 0 and best_c != x[coord]:
                    x[coord] = best_c
                    moved = True
                    if history is not None:
                        fixed = sum(tables[j][x[j]] for j in range(n) if j != coord)
                        history.append(float(best_val + fixed))
            if not moved:
                break
        decision = JointDecision(tuple(int(v) for v in x))
        value = cokg_estimate(central, locals_, decision, beta, draws, noise_var)
        candidates.append((value, decision))

    best_value = max(v for v, _ in candidates)
    best_decision = min(dec for v, dec in candidates if v == best_value)
    return best_decision, best_value


def local_kg_decisions(locals_, draws: FantasyDraws, noise_var: float):
    """Independent per-agent knowledge-gradient maximization.

    Agent n scans the grid with its own draw column; ties break toward the
    smallest grid index. Returns the joint decision and the summed maxima.
    """
    indices = []
    total = 0.0
    for j, model in enumerate(locals_):
        row_best = -np.inf
        best_idx = 0
        for c in range(model.mean.shape[0]):
            val = kg_local_estimate(model, c, draws.xi[:, j], noise_var)
            if val > row_best:
                row_best, best_idx = val, c
        indices.append(best_idx)
        total += row_best
    return JointDecision(tuple(indices)), total


def _local_kg_decisions_fast(locals_, draws: FantasyDraws, noise_var: float):
    """Table-based equivalent of :func:`local_kg_decisions`.

    The table screens the grid; every candidate within an ulp-safe margin of
    the table maximum is re-scored through :func:`kg_local_estimate`, so the
    selection (ties included) matches the plain path exactly.
    """
    indices = []
    total = 0.0
    for j, model in enumerate(locals_):
        table = _local_table(model, draws.xi[:, j], noise_var)
        margin = 1e-9 * (1.0 + np.abs(table).max())
        candidates = np.flatnonzero(table >= table.max() - margin)
        best_idx, best_val = 0, -np.inf
        for c in candidates:
            val = kg_local_estimate(model, int(c), draws.xi[:, j], noise_var)
            if val > best_val:
                best_idx, best_val = int(c), val
        indices.append(best_idx)
        total += best_val
    return JointDecision(tuple(indices)), total


@dataclass
class AcquisitionState:
    """Everything the selection step may see: shared models only, plus the
    pooled model for the explicitly privacy-violating baseline."""

    locals_: list | None
    central: CentralGP | None
    pooled: DiscretizedGP | None
    noise_var: float
    rng: np.random.Generator | None = None


def baseline_acquisition(kind: str, state: AcquisitionState, cfg: AcqConfig,
                         draws: FantasyDraws) -> JointDecision:
    """Decision rule for the comparison frameworks.

    ``barycenter_qkg`` is the collaborative acquisition with beta = 0;
    ``no_collaboration`` is independent per-agent KG maximization;
    ``data_communication`` runs the beta = 0 path on a single model fit to
    the pooled data (privacy deliberately violated for this baseline only).
    """
    if kind == "barycenter_qkg":
        decision, _ = optimize_cokg(state.central, state.locals_, 0.0, cfg, draws,
                                    state.noise_var, rng=state.rng)
        return decision
    if kind == "no_collaboration":
        decision, _ = _local_kg_decisions_fast(state.locals_, draws, state.noise_var)
        return decision
    if kind == "data_communication":
        pooled = state.pooled
        central = CentralGP(mean=pooled.mean, cov=pooled.cov, residual=0.0, iterations_used=0)
        decision, _ = optimize_cokg(central, None, 0.0, cfg, draws, state.noise_var,
                                    rng=state.rng)
        return decision
    raise ValueError(f"unknown baseline acquisition {kind!r}")
