"""Feasible-set discretization: uniform grids on the normalized unit box.

A point is a plain 1-d numpy array of coordinates in [0, 1]; the grid stores
all points in canonical row-major order (first axis slowest).
"""

from dataclasses import dataclass

import numpy as np

__all__ = ["Grid", "unit_grid", "to_unit_box", "from_unit_box"]


@dataclass(frozen=True)
class Grid:
    """Ordered list of grid points on [0, 1]^d.

    ``points`` has shape (D, d) with D = prod(per_axis); the ordering is the
    row-major sweep of the per-axis linspaces and is stable across runs.
    """

    points: np.ndarray
    per_axis: tuple[int, ...]

    def __post_init__(self):
        d = len(self.per_axis)
        expected = int(np.prod(self.per_axis))
        if self.points.shape != (expected, d):
            raise ValueError(
                f"grid shape {self.points.shape} inconsistent with per_axis {self.per_axis}"
            )

    def __len__(self) -> int:
        return self.points.shape[0]

    @property
    def dim(self) -> int:
        return self.points.shape[1]

    def point(self, index: int) -> np.ndarray:
        return self.points[index]


def unit_grid(per_axis, dim: int | None = None) -> Grid:
    """Uniform meshgrid on [0, 1]^d including both endpoints.

    ``per_axis`` may be a single resolution (applied to every axis of ``dim``)
    or an explicit tuple, one resolution per axis.
    """
    if np.isscalar(per_axis):
        if dim is None:
            raise ValueError("dim is required when per_axis is a scalar")
        per_axis = (int(per_axis),) * dim
    else:
        per_axis = tuple(int(r) for r in per_axis)
    if any(r < 1 for r in per_axis):
        raise ValueError(f"per-axis resolution must be >= 1, got {per_axis}")
    axes = [np.linspace(0.0, 1.0, r) if r > 1 else np.array([0.5]) for r in per_axis]
    mesh = np.meshgrid(*axes, indexing="ij")
    points = np.stack([m.reshape(-1) for m in mesh], axis=-1)
    return Grid(points=points, per_axis=per_axis)


def to_unit_box(x: np.ndarray, box: np.ndarray) -> np.ndarray:
    """Affine map from a native box (rows of [lo, hi]) onto [0, 1]^d."""
    lo, hi = box[:, 0], box[:, 1]
    return (np.asarray(x, dtype=float) - lo) / (hi - lo)


def from_unit_box(u: np.ndarray, box: np.ndarray) -> np.ndarray:
    """Inverse of :func:`to_unit_box`."""
    lo, hi = box[:, 0], box[:, 1]
    return lo + np.asarray(u, dtype=float) * (hi - lo)
