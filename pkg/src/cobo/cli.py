"""Experiment harness: config loading, execution, CSV emission, CLI.

The config file is YAML with a strict schema; unknown keys are rejected by
name. Outputs are plain CSV (LF line endings, floats at 17 significant
digits) so any plotting tool can consume them.
"""

import argparse
import csv
import os
import statistics
import sys
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass, field, replace

import numpy as np
import yaml

from .acquisition import AcqConfig, BetaSchedule, BETA_KINDS
from .barycenter import BarycenterConfig
from .gp import KernelSpec
from .grid import unit_grid
from .objectives import OBJECTIVE_IDS, grid_optimum, make_objective
from .orchestrator import FRAMEWORKS, RunConfig, run

__all__ = [
    "ConfigError",
    "ExperimentFile",
    "load_config",
    "serialize_config",
    "run_experiments",
    "summarize",
    "bench_grid",
    "main",
]

SEED_ENV_VAR = "COBO_SEED"

METRICS_COLUMNS = [
    "experiment", "repetition", "iteration", "optimal_value_difference",
    "beta_t", "acquisition_value", "barycenter_residual",
    "barycenter_iterations", "wall_ms",
]
SUMMARY_COLUMNS = ["experiment", "iteration", "mean", "std"]
PLOT_COLUMNS = ["experiment", "iteration", "mean", "band_lo", "band_hi"]
ERROR_COLUMNS = ["experiment", "repetition", "error"]


class ConfigError(ValueError):
    pass


@dataclass
class ExperimentFile:
    experiments: list  # list of (name, RunConfig)
    reps: int = 10
    seed: int = 0
    output_dir: str = "results"


_TOP_KEYS = {"experiments", "reps", "seed", "output_dir"}
_EXP_KEYS = {
    "name", "framework", "objective", "beta", "n_agents", "grid_per_axis",
    "iterations", "warmup_per_agent", "noise_var", "use_shared_basis",
    "kernel", "acq", "barycenter", "external",
}
_KERNEL_KEYS = {"lengthscale_sq", "amplitude"}
_ACQ_KEYS = {"m_draws", "restarts", "exhaustive_threshold"}
_BARY_KEYS = {"tol", "max_iter", "jitter"}
_EXTERNAL_KEYS = {"command", "timeout", "minimize"}


def _check_keys(mapping: dict, allowed: set, where: str) -> None:
    for key in mapping:
        if key not in allowed:
            raise ConfigError(f"unknown key {key!r} in {where}")


def _build_run_config(entry: dict, where: str) -> RunConfig:
    _check_keys(entry, _EXP_KEYS, where)
    kwargs = {}
    if "framework" in entry:
        if entry["framework"] not in FRAMEWORKS:
            raise ConfigError(f"unknown framework {entry['framework']!r} in {where}")
        kwargs["framework"] = entry["framework"]
    if "objective" in entry:
        if entry["objective"] not in OBJECTIVE_IDS:
            raise ConfigError(f"unknown objective {entry['objective']!r} in {where}")
        kwargs["objective"] = entry["objective"]
    if "beta" in entry:
        if entry["beta"] not in BETA_KINDS:
            raise ConfigError(f"unknown beta schedule {entry['beta']!r} in {where}")
        kwargs["beta"] = BetaSchedule(entry["beta"])
    for key in ("n_agents", "iterations", "warmup_per_agent"):
        if key in entry:
            kwargs[key] = int(entry[key])
    if "grid_per_axis" in entry:
        g = entry["grid_per_axis"]
        kwargs["grid_per_axis"] = tuple(int(v) for v in g) if isinstance(g, (list, tuple)) else int(g)
    if "noise_var" in entry:
        kwargs["noise_var"] = float(entry["noise_var"])
    if "use_shared_basis" in entry:
        kwargs["use_shared_basis"] = bool(entry["use_shared_basis"])
    if "kernel" in entry:
        _check_keys(entry["kernel"], _KERNEL_KEYS, f"{where}.kernel")
        kwargs["kernel"] = KernelSpec(**{k: float(v) for k, v in entry["kernel"].items()})
    if "acq" in entry:
        _check_keys(entry["acq"], _ACQ_KEYS, f"{where}.acq")
        kwargs["acq"] = AcqConfig(**{k: int(v) for k, v in entry["acq"].items()})
    if "barycenter" in entry:
        _check_keys(entry["barycenter"], _BARY_KEYS, f"{where}.barycenter")
        bary = dict(entry["barycenter"])
        if "max_iter" in bary:
            bary["max_iter"] = int(bary["max_iter"])
        for k in ("tol", "jitter"):
            if k in bary:
                bary[k] = float(bary[k])
        kwargs["barycenter"] = BarycenterConfig(**bary)
    if "external" in entry:
        _check_keys(entry["external"], _EXTERNAL_KEYS, f"{where}.external")
        ext = entry["external"]
        if "command" in ext:
            kwargs["external_command"] = str(ext["command"])
        if "timeout" in ext:
            kwargs["external_timeout"] = float(ext["timeout"])
        if "minimize" in ext:
            kwargs["external_minimize"] = bool(ext["minimize"])
    try:
        return RunConfig(**kwargs)
    except ValueError as exc:
        raise ConfigError(f"invalid configuration in {where}: {exc}") from exc


def load_config(path: str) -> ExperimentFile:
    """Parse and validate an experiment file; defaults fill every omitted key."""
    with open(path, encoding="utf-8") as fh:
        try:
            raw = yaml.safe_load(fh)
        except yaml.YAMLError as exc:
            raise ConfigError(f"cannot parse {path}: {exc}") from exc
    if not isinstance(raw, dict):
        raise ConfigError(f"{path} must hold a mapping at the top level")
    _check_keys(raw, _TOP_KEYS, path)
    entries = raw.get("experiments")
    if not isinstance(entries, list) or not all(isinstance(e, dict) for e in entries):
        raise ConfigError(f"{path} must define an 'experiments' list of mappings")
    experiments = []
    seen = set()
    for i, entry in enumerate(entries):
        name = entry.get("name")
        if not name:
            raise ConfigError(f"experiment #{i} has no name")
        if name in seen:
            raise ConfigError(f"duplicate experiment name {name!r}")
        seen.add(name)
        experiments.append((name, _build_run_config(entry, f"experiment {name!r}")))
    return ExperimentFile(
        experiments=experiments,
        reps=int(raw.get("reps", 10)),
        seed=int(raw.get("seed", 0)),
        output_dir=str(raw.get("output_dir", "results")),
    )


def serialize_config(ef: ExperimentFile) -> dict:
    """Inverse of :func:`load_config` (round-trips through YAML)."""
    out = {"seed": ef.seed, "reps": ef.reps, "output_dir": ef.output_dir, "experiments": []}
    for name, cfg in ef.experiments:
        entry = {
            "name": name,
            "framework": cfg.framework,
            "objective": cfg.objective,
            "beta": cfg.beta.kind,
            "n_agents": cfg.n_agents,
            "grid_per_axis": list(cfg.grid_per_axis) if isinstance(cfg.grid_per_axis, tuple)
                             else cfg.grid_per_axis,
            "iterations": cfg.iterations,
            "warmup_per_agent": cfg.warmup_per_agent,
            "noise_var": cfg.noise_var,
            "use_shared_basis": cfg.use_shared_basis,
            "kernel": {"lengthscale_sq": cfg.kernel.lengthscale_sq,
                       "amplitude": cfg.kernel.amplitude},
            "acq": {"m_draws": cfg.acq.m_draws, "restarts": cfg.acq.restarts,
                    "exhaustive_threshold": cfg.acq.exhaustive_threshold},
            "barycenter": {"tol": cfg.barycenter.tol, "max_iter": cfg.barycenter.max_iter,
                           "jitter": cfg.barycenter.jitter},
        }
        if cfg.objective == "external":
            entry["external"] = {"command": cfg.external_command,
                                 "timeout": cfg.external_timeout,
                                 "minimize": cfg.external_minimize}
        out["experiments"].append(entry)
    return out


def _fmt(value) -> str:
    if value is None:
        return ""
    if isinstance(value, float):
        return f"{value:.17g}"
    return str(value)


def _write_csv(path: str, columns, rows) -> None:
    with open(path, "w", newline="", encoding="utf-8") as fh:
        writer = csv.writer(fh, lineterminator="\n")
        writer.writerow(columns)
        for row in rows:
            writer.writerow([_fmt(v) for v in row])


def _run_cell(payload):
    """One (experiment, repetition) cell; must stay importable for workers."""
    name, cfg, rep = payload
    try:
        result = run(cfg, rep=rep)
    except Exception as exc:  # cell failures are recorded, not fatal
        return name, rep, None, f"{type(exc).__name__}: {exc}"
    rows = [
        (name, rep, rec.t, rec.value_diff, rec.beta_t, rec.acquisition_value,
         rec.barycenter_residual, rec.barycenter_iterations, rec.wall_ms)
        for rec in result.records
    ]
    return name, rep, rows, None


def _aggregate(rows):
    """Group metric rows by (experiment, iteration): mean and population std."""
    groups: dict = {}
    for row in rows:
        groups.setdefault((row[0], row[2]), []).append(float(row[3]))
    out = []
    for (name, iteration), vals in sorted(groups.items(), key=lambda kv: (kv[0][0], kv[0][1])):
        mean = float(np.mean(vals))
        std = float(np.std(vals, ddof=0))
        out.append((name, iteration, mean, std))
    return out


def run_experiments(ef: ExperimentFile, parallelism: int = 1,
                    out_dir: str | None = None, base_seed: int | None = None) -> int:
    """Execute every (experiment, repetition) cell and write the CSV outputs.

    Content is deterministic for a given base seed regardless of parallelism
    (wall-clock columns excepted). Returns a nonzero exit status if any cell
    failed; failures land in errors.csv and never silently drop a cell.
    """
    if base_seed is None:
        base_seed = int(os.environ.get(SEED_ENV_VAR, ef.seed))
    out_dir = out_dir or ef.output_dir
    os.makedirs(out_dir, exist_ok=True)

    order = {name: i for i, (name, _) in enumerate(ef.experiments)}
    cells = [(name, replace(cfg, seed=base_seed), rep)
             for name, cfg in ef.experiments for rep in range(ef.reps)]

    if parallelism > 1 and len(cells) > 1:
        with ProcessPoolExecutor(max_workers=parallelism) as pool:
            outcomes = list(pool.map(_run_cell, cells))
    else:
        outcomes = [_run_cell(cell) for cell in cells]

    rows = []
    errors = []
    for name, rep, cell_rows, err in outcomes:
        if err is not None:
            errors.append((name, rep, err))
        else:
            rows.extend(cell_rows)
    rows.sort(key=lambda r: (order[r[0]], r[1], r[2]))
    errors.sort(key=lambda r: (order[r[0]], r[1]))

    _write_csv(os.path.join(out_dir, "metrics.csv"), METRICS_COLUMNS, rows)
    summary = _aggregate(rows)
    summary.sort(key=lambda r: (order[r[0]], r[1]))
    _write_csv(os.path.join(out_dir, "summary.csv"), SUMMARY_COLUMNS, summary)
    plot_rows = [(name, it, mean, mean - std, mean + std) for name, it, mean, std in summary]
    _write_csv(os.path.join(out_dir, "plot_data.csv"), PLOT_COLUMNS, plot_rows)
    if errors:
        _write_csv(os.path.join(out_dir, "errors.csv"), ERROR_COLUMNS, errors)
    return 1 if errors else 0


def summarize(metrics_path: str):
    """Recompute the per-(experiment, iteration) summary from metrics.csv."""
    with open(metrics_path, newline="", encoding="utf-8") as fh:
        reader = csv.reader(fh)
        header = next(reader, None)
        if header != METRICS_COLUMNS:
            raise ValueError(f"schema mismatch in {metrics_path}: {header}")
        rows = [(r[0], int(r[1]), int(r[2]), float(r[3])) for r in reader]
    groups: dict = {}
    names_in_order = []
    for name, _rep, iteration, diff in rows:
        if name not in groups:
            names_in_order.append(name)
            groups[name] = {}
        groups[name].setdefault(iteration, []).append(diff)
    out = []
    for name in names_in_order:
        for iteration in sorted(groups[name]):
            vals = groups[name][iteration]
            out.append((name, iteration, float(np.mean(vals)), float(np.std(vals, ddof=0))))
    return out


def bench_grid(grids=(10, 20, 30), iterations: int = 5, seed: int = 0):
    """Median per-iteration wall time for increasing grid resolutions.

    Absolute values are machine-dependent; intended for ratio comparisons.
    """
    rows = []
    for g in grids:
        cfg = RunConfig(grid_per_axis=int(g), iterations=iterations, seed=seed)
        result = run(cfg)
        med = statistics.median(rec.wall_ms for rec in result.records)
        rows.append({"grid": int(g), "median_iteration_ms": med})
    for i, row in enumerate(rows):
        row["ratio_to_previous"] = (
            row["median_iteration_ms"] / rows[i - 1]["median_iteration_ms"] if i else None
        )
    return rows


def main(argv=None) -> int:
    parser = argparse.ArgumentParser(prog="cobo",
                                     description="Collaborative BO experiment harness")
    sub = parser.add_subparsers(dest="command", required=True)

    p_run = sub.add_parser("run", help="run an experiment file")
    p_run.add_argument("config")
    p_run.add_argument("--seed", type=int, default=None)
    p_run.add_argument("--parallelism", type=int, default=1)
    p_run.add_argument("--out", default=None)

    p_sum = sub.add_parser("summarize", help="recompute the summary from a metrics.csv")
    p_sum.add_argument("metrics")

    p_oracle = sub.add_parser("oracle", help="print the grid optimum of an objective")
    p_oracle.add_argument("objective", choices=[o for o in OBJECTIVE_IDS if o != "external"])
    p_oracle.add_argument("--grid", type=int, default=20)

    p_bench = sub.add_parser("bench-grid", help="per-iteration timing across grid sizes")
    p_bench.add_argument("--grids", default="10,20,30")
    p_bench.add_argument("--iterations", type=int, default=5)
    p_bench.add_argument("--seed", type=int, default=0)

    args = parser.parse_args(argv)

    if args.command == "run":
        try:
            ef = load_config(args.config)
        except (ConfigError, OSError) as exc:
            print(f"error: {exc}", file=sys.stderr)
            return 2
        return run_experiments(ef, parallelism=args.parallelism, out_dir=args.out,
                               base_seed=args.seed)

    if args.command == "summarize":
        for name, iteration, mean, std in summarize(args.metrics):
            print(f"{name},{iteration},{_fmt(mean)},{_fmt(std)}")
        return 0

    if args.command == "oracle":
        spec = make_objective(args.objective)
        grid = unit_grid(args.grid, dim=spec.dim)
        idx, val = grid_optimum(spec, grid)
        point = ", ".join(f"{v:.6g}" for v in grid.points[idx])
        print(f"objective={args.objective} grid={args.grid} argmax_index={idx} "
              f"argmax=({point}) value={_fmt(val)}")
        return 0

    if args.command == "bench-grid":
        grids = tuple(int(g) for g in args.grids.split(","))
        rows = bench_grid(grids=grids, iterations=args.iterations, seed=args.seed)
        print("grid  median_iteration_ms  ratio_to_previous")
        for row in rows:
            ratio = "" if row["ratio_to_previous"] is None else f"{row['ratio_to_previous']:.2f}"
            print(f"{row['grid']:>4}  {row['median_iteration_ms']:>19.1f}  {ratio:>17}")
        return 0

    return 2


if __name__ == "__main__":
    sys.exit(main())
