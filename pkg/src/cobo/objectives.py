"""Benchmark objectives, the noisy observation channel, and the external
black-box protocol.

All evaluation happens on the normalized unit box; an objective declares its
native box and the affine map is applied internally. The optimization
direction is always maximize: external tasks reporting a loss are negated.
"""

import json
import math
import shlex
import subprocess
from dataclasses import dataclass, field

import numpy as np

from .grid import Grid, from_unit_box

__all__ = [
    "ObjectiveSpec",
    "ExternalEvalError",
    "ExternalTimeoutError",
    "ExternalProtocolError",
    "ExternalProcessError",
    "eval_f1",
    "eval_f2",
    "noisy_observe",
    "grid_optimum",
    "external_eval",
    "make_objective",
    "OBJECTIVE_IDS",
]

OBJECTIVE_IDS = ("f1", "f2_rosenbrock", "external")

DEFAULT_EXTERNAL_TIMEOUT = 300.0


class ExternalEvalError(RuntimeError):
    """Base class for failures of the external-objective protocol (fatal)."""


class ExternalTimeoutError(ExternalEvalError):
    pass


class ExternalProtocolError(ExternalEvalError):
    pass


class ExternalProcessError(ExternalEvalError):
    pass


def eval_f1(x) -> float:
    """Quadratic-plus-trigonometric test surface on [0, 1]^2."""
    x = np.asarray(x, dtype=float)
    if x.shape != (2,):
        raise ValueError(f"f1 expects a 2-d point, got shape {x.shape}")
    return float(x[0] ** 2 + x[1] ** 2 + math.sin(2 * math.pi * x[0])
                 + math.cos(2 * math.pi * x[1]))


def eval_f2(x) -> float:
    """Rosenbrock surface on [0, 1]^2 (maximized at (0, 1) on the unit box)."""
    x = np.asarray(x, dtype=float)
    if x.shape != (2,):
        raise ValueError(f"f2 expects a 2-d point, got shape {x.shape}")
    return float((1 - x[0]) ** 2 + 100 * (x[1] - x[0] ** 2) ** 2)


def external_eval(command: str, x, timeout: float = DEFAULT_EXTERNAL_TIMEOUT) -> float:
    """One evaluation through the child-process protocol.

    Writes one JSON line ``{"x": [...]}`` to the child's stdin and reads one
    JSON line ``{"y": <number>}`` from its stdout. Timeouts, malformed
    replies and nonzero exits raise distinct fatal errors.
    """
    x = np.asarray(x, dtype=float)
    request = json.dumps({"x": [float(v) for v in x]}) + "\n"
    proc = subprocess.Popen(
        shlex.split(command), stdin=subprocess.PIPE, stdout=subprocess.PIPE,
        stderr=subprocess.DEVNULL, text=True,
    )
    try:
        out, _ = proc.communicate(input=request, timeout=timeout)
    except subprocess.TimeoutExpired as exc:
        proc.kill()
        proc.wait()
        raise ExternalTimeoutError(f"external objective timed out after {timeout}s") from exc
    if proc.returncode != 0:
        raise ExternalProcessError(f"external objective exited with status {proc.returncode}")
    line = out.strip().splitlines()[0] if out.strip() else ""
    try:
        reply = json.loads(line)
        y = reply["y"]
        if not isinstance(y, (int, float)) or isinstance(y, bool):
            raise TypeError
    except (TypeError, KeyError, ValueError) as exc:
        raise ExternalProtocolError(f"malformed external reply: {line!r}") from exc
    return float(y)


@dataclass(frozen=True)
class ObjectiveSpec:
    """A maximization target plus its Gaussian observation channel."""

    id: str
    native_box: np.ndarray = field(default_factory=lambda: np.array([[0.0, 1.0]] * 2))
    noise_var: float = 0.02
    external_command: str | None = None
    external_timeout: float = DEFAULT_EXTERNAL_TIMEOUT
    external_minimize: bool = False

    def __post_init__(self):
        if self.id not in OBJECTIVE_IDS:
            raise ValueError(f"unknown objective id {self.id!r}, expected one of {OBJECTIVE_IDS}")
        if self.noise_var < 0:
            raise ValueError("noise_var must be non-negative")
        box = np.asarray(self.native_box, dtype=float)
        if box.ndim != 2 or box.shape[1] != 2 or not np.all(np.isfinite(box)):
            raise ValueError("native_box must be a finite (d, 2) array of [lo, hi] rows")
        if self.id == "external" and not self.external_command:
            raise ValueError("external objective requires a command")
        object.__setattr__(self, "native_box", box)

    @property
    def dim(self) -> int:
        return self.native_box.shape[0]

    def evaluate(self, x_unit) -> float:
        """Noiseless objective value at a point of the unit box."""
        native = from_unit_box(np.asarray(x_unit, dtype=float), self.native_box)
        if self.id == "f1":
            return eval_f1(native)
        if self.id == "f2_rosenbrock":
            return eval_f2(native)
        y = external_eval(self.external_command, native, self.external_timeout)
        return -y if self.external_minimize else y


def noisy_observe(spec: ObjectiveSpec, x_unit, rng: np.random.Generator) -> float:
    """Objective value plus one Gaussian noise draw from the given stream."""
    y = spec.evaluate(x_unit)
    if spec.noise_var == 0.0:
        return y
    return y + float(rng.normal(0.0, math.sqrt(spec.noise_var)))


def grid_optimum(spec: ObjectiveSpec, grid: Grid):
    """Exhaustive noiseless maximum over the grid; smallest index wins ties."""
    best_idx = 0
    best_val = -np.inf
    for i in range(len(grid)):
        val = spec.evaluate(grid.points[i])
        if val > best_val:
            best_idx, best_val = i, val
    return best_idx, best_val


def make_objective(objective_id: str, noise_var: float = 0.02, **kwargs) -> ObjectiveSpec:
    """Objective registry used by the run configuration."""
    if objective_id in ("f1", "f2_rosenbrock"):
        return ObjectiveSpec(id=objective_id, noise_var=noise_var, **kwargs)
    if objective_id == "external":
        return ObjectiveSpec(id="external", noise_var=noise_var, **kwargs)
    raise ValueError(f"unknown objective id {objective_id!r}, expected one of {OBJECTIVE_IDS}")
