"""The collaborative optimization loop: warm-up, iterate, finalize.

Each iteration the agents share their discretized posteriors, the server
fuses them and selects a batch of grid points (one per agent) by maximizing
the collaborative acquisition, and every agent observes its assigned point
and updates its private posterior. Only discretized models and scalar noise
estimates ever cross the agent/server boundary; the ``data_communication``
baseline is the single, explicitly labeled exception.
"""

import time
from dataclasses import dataclass, field
from typing import Optional, Sequence

import numpy as np

from .acquisition import (
    AcqConfig,
    BetaSchedule,
    FantasyDraws,
    JointDecision,
    _local_kg_decisions_fast,
    optimize_cokg,
)
from .barycenter import (
    BarycenterConfig,
    CentralGP,
    barycenter,
    barycenter_in_basis,
    shared_prior_basis,
)
from .gp import (
    DiscretizedGP,
    KernelSpec,
    LocalAgent,
    discretize,
    kernel_matrix,
    mle_noise_variance,
    posterior_mean_on_grid,
    server_noise_variance,
)
from .grid import Grid, unit_grid
from .objectives import ObjectiveSpec, grid_optimum, make_objective, noisy_observe

__all__ = [
    "FRAMEWORKS",
    "RunConfig",
    "IterationRecord",
    "RunResult",
    "warmup",
    "run",
    "finalize",
    "run_repetitions",
]

FRAMEWORKS = ("cokg", "barycenter_qkg", "no_collaboration", "data_communication")

# Stream roles for the counter-based seed fan-out.
_ROLE_WARMUP = 0
_ROLE_NOISE = 1
_ROLE_DRAWS = 2
_ROLE_RESTARTS = 3


def _stream(seed: int, rep: int, role: int, tag: int = 0) -> np.random.Generator:
    """Independent deterministic stream for (repetition, role, tag)."""
    return np.random.default_rng(np.random.SeedSequence(entropy=seed, spawn_key=(rep, role, tag)))


@dataclass(frozen=True)
class RunConfig:
    """Full experiment configuration; the defaults reproduce the standard
    four-agent study (20x20 grid, 30 iterations, 5 warm-up points each)."""

    n_agents: int = 4
    grid_per_axis: tuple[int, ...] | int = 20
    iterations: int = 30
    warmup_per_agent: int = 5
    beta: BetaSchedule = BetaSchedule("log_increasing")
    acq: AcqConfig = AcqConfig()
    barycenter: BarycenterConfig = BarycenterConfig()
    kernel: KernelSpec = KernelSpec()
    objective: str = "f1"
    noise_var: float = 0.02
    framework: str = "cokg"
    seed: int = 0
    use_shared_basis: bool = True
    external_command: Optional[str] = None
    external_timeout: float = 300.0
    external_minimize: bool = False

    def __post_init__(self):
        if self.n_agents < 1 or self.iterations < 0 or self.warmup_per_agent < 1:
            raise ValueError("agent/iteration/warm-up counts out of range")
        if self.warmup_per_agent < 2:
            raise ValueError("warmup_per_agent must be >= 2 (noise MLE needs two points)")
        if self.framework not in FRAMEWORKS:
            raise ValueError(f"unknown framework {self.framework!r}, expected one of {FRAMEWORKS}")

    def make_objective(self) -> ObjectiveSpec:
        kwargs = {}
        if self.objective == "external":
            kwargs = dict(external_command=self.external_command,
                          external_timeout=self.external_timeout,
                          external_minimize=self.external_minimize)
        return make_objective(self.objective, noise_var=self.noise_var, **kwargs)

    def make_grid(self) -> Grid:
        return unit_grid(self.grid_per_axis, dim=self.make_objective().dim)


@dataclass
class IterationRecord:
    t: int
    indices: tuple[int, ...]
    observed: tuple[float, ...]
    beta_t: float
    acquisition_value: float
    barycenter_residual: Optional[float]
    barycenter_iterations: Optional[int]
    value_diff: float
    wall_ms: float


@dataclass
class RunResult:
    records: list[IterationRecord]
    x_star: np.ndarray
    per_agent: list[tuple[np.ndarray, float]]
    final_value_diff: float
    total_wall_s: float
    diagnostics: dict = field(default_factory=dict)


def _warmup_full(cfg: RunConfig, rep: int):
    grid = cfg.make_grid()
    spec = cfg.make_objective()
    noise_streams = [_stream(cfg.seed, rep, _ROLE_NOISE, a) for a in range(cfg.n_agents)]
    datasets = []
    for a in range(cfg.n_agents):
        point_rng = _stream(cfg.seed, rep, _ROLE_WARMUP, a)
        idxs = point_rng.choice(len(grid), size=cfg.warmup_per_agent, replace=False)
        datasets.append([(grid.points[i], noisy_observe(spec, grid.points[i], noise_streams[a]))
                         for i in idxs])
    agents = []
    estimates = []
    for a, rows in enumerate(datasets):
        agent = LocalAgent(id=a, kernel=cfg.kernel, noise_var=cfg.noise_var)
        for x, y in rows:
            agent.add_observation(x, y)
        estimates.append(mle_noise_variance(agent.data, cfg.kernel))
        agents.append(agent)
    noise_var = server_noise_variance(estimates)
    for agent in agents:
        agent.noise_var = noise_var
    return grid, spec, agents, noise_var, noise_streams


def warmup(cfg: RunConfig, rep: int = 0):
    """Seeded warm-up: each agent privately collects its initial observations.

    Returns the agents and the server-averaged noise-variance estimate. The
    warm-up points are never transmitted anywhere.
    """
    _, _, agents, noise_var, _ = _warmup_full(cfg, rep)
    return agents, noise_var


def _server_fuse(models: Sequence[DiscretizedGP], cfg: BarycenterConfig,
                 basis: Optional[np.ndarray]) -> CentralGP:
    """Server-side model fusion; sees shared discretized models only."""
    if basis is not None:
        return barycenter_in_basis(models, cfg, basis)
    return barycenter(models, cfg)


def _server_select(framework: str, models: Sequence[DiscretizedGP],
                   central: Optional[CentralGP], pooled: Optional[DiscretizedGP],
                   beta_t: float, acq_cfg: AcqConfig, draws: FantasyDraws,
                   noise_var: float, rng: np.random.Generator):
    """Server-side decision step; sees shared models and scalars only.

    The pooled model is only ever non-None for the explicitly labeled
    data_communication baseline.
    """
    if framework == "cokg":
        return optimize_cokg(central, list(models), beta_t, acq_cfg, draws, noise_var, rng=rng)
    if framework == "barycenter_qkg":
        return optimize_cokg(central, list(models), 0.0, acq_cfg, draws, noise_var, rng=rng)
    if framework == "no_collaboration":
        return _local_kg_decisions_fast(list(models), draws, noise_var)
    if framework == "data_communication":
        central = CentralGP(mean=pooled.mean, cov=pooled.cov, residual=0.0, iterations_used=0)
        return optimize_cokg(central, None, 0.0, acq_cfg, draws, noise_var, rng=rng)
    raise ValueError(f"unknown framework {framework!r}")


def _pooled_agent(agents: Sequence[LocalAgent], kernel: KernelSpec,
                  noise_var: float) -> LocalAgent:
    """Union of all private datasets. Privacy deliberately violated: used by
    the data_communication baseline only."""
    pooled = LocalAgent(id=-1, kernel=kernel, noise_var=noise_var)
    for agent in agents:
        for obs in agent.data:
            pooled.add_observation(obs.x, obs.y)
    return pooled


def _report(agents: Sequence[LocalAgent], grid: Grid):
    """Each agent's posterior-mean argmax (smallest grid index on ties) and
    the winning agent under the largest reported mean."""
    per_agent = []
    best_agent = 0
    best_mu = -np.inf
    for i, agent in enumerate(agents):
        mean = posterior_mean_on_grid(agent, grid)
        j = int(np.argmax(mean))
        mu = float(mean[j])
        per_agent.append((grid.points[j], mu))
        if mu > best_mu:
            best_agent, best_mu = i, mu
    return per_agent, best_agent


def finalize(agents: Sequence[LocalAgent], grid: Grid, objective: ObjectiveSpec):
    """Final report: the decision maximizing the agents' reported posterior
    means, and its optimal-value difference against the grid optimum."""
    per_agent, best_agent = _report(agents, grid)
    x_star = per_agent[best_agent][0]
    _, opt_val = grid_optimum(objective, grid)
    return x_star, opt_val - objective.evaluate(x_star)


def run(cfg: RunConfig, rep: int = 0) -> RunResult:
    """Execute the full loop for one repetition; deterministic given the seed
    (wall-clock fields aside)."""
    t_start = time.perf_counter()
    grid, spec, agents, noise_var, noise_streams = _warmup_full(cfg, rep)
    _, opt_val = grid_optimum(spec, grid)

    prior = kernel_matrix(cfg.kernel, grid.points, grid.points)
    needs_central = cfg.framework in ("cokg", "barycenter_qkg")
    basis = None
    if needs_central and cfg.use_shared_basis:
        basis = shared_prior_basis(prior)

    warmup_max_var = [float(np.max(np.diag(discretize(a, grid, prior).cov)))
                      for a in agents]
    incumbent_track: list[list[float]] = [[] for _ in agents]

    records = []
    for t in range(1, cfg.iterations + 1):
        t_iter = time.perf_counter()
        models = [discretize(agent, grid, prior) for agent in agents]
        draws = FantasyDraws.sample(cfg.acq.m_draws, cfg.n_agents,
                                    _stream(cfg.seed, rep, _ROLE_DRAWS, t))
        beta_t = cfg.beta.value(t)
        acq_rng = _stream(cfg.seed, rep, _ROLE_RESTARTS, t)

        central = None
        pooled = None
        if needs_central:
            central = _server_fuse(models, cfg.barycenter, basis)
        elif cfg.framework == "data_communication":
            pooled = discretize(_pooled_agent(agents, cfg.kernel, noise_var), grid, prior)
        decision, acq_value = _server_select(
            cfg.framework, models, central, pooled, beta_t, cfg.acq, draws, noise_var, acq_rng,
        )

        observed = []
        for a, agent in enumerate(agents):
            x = grid.points[decision.indices[a]]
            y = noisy_observe(spec, x, noise_streams[a])
            agent.add_observation(x, y)
            observed.append(y)

        per_agent, best_agent = _report(agents, grid)
        for a, (_, mu) in enumerate(per_agent):
            incumbent_track[a].append(mu)
        x_hat = per_agent[best_agent][0]
        value_diff = opt_val - spec.evaluate(x_hat)

        records.append(IterationRecord(
            t=t,
            indices=decision.indices,
            observed=tuple(observed),
            beta_t=beta_t,
            acquisition_value=float(acq_value),
            barycenter_residual=None if central is None else float(central.residual),
            barycenter_iterations=None if central is None else int(central.iterations_used),
            value_diff=float(value_diff),
            wall_ms=(time.perf_counter() - t_iter) * 1e3,
        ))

    per_agent, best_agent = _report(agents, grid)
    x_star = per_agent[best_agent][0]
    final_value_diff = float(opt_val - spec.evaluate(x_star))
    final_max_var = [float(np.max(np.diag(discretize(a, grid, prior).cov)))
                     for a in agents]

    return RunResult(
        records=records,
        x_star=x_star,
        per_agent=per_agent,
        final_value_diff=final_value_diff,
        total_wall_s=time.perf_counter() - t_start,
        diagnostics={
            "noise_var": noise_var,
            "warmup_max_grid_var": warmup_max_var,
            "final_max_grid_var": final_max_var,
            "incumbent_means": incumbent_track,
            "dataset_sizes": [agent.n_observations() for agent in agents],
        },
    )


def run_repetitions(cfg: RunConfig, reps: int):
    """Independent seeded repetitions; per-iteration mean and population
    standard deviation of the optimal-value difference."""
    if reps < 1:
        raise ValueError("reps must be >= 1")
    curves = []
    for rep in range(reps):
        result = run(cfg, rep=rep)
        curves.append([rec.value_diff for rec in result.records])
    arr = np.asarray(curves, dtype=float)
    return arr.mean(axis=0), arr.std(axis=0, ddof=0)
