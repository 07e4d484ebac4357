"""Shared numeric conventions: tolerances, NaN trapping and grid derivative estimators."""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .errors import BoundaryIndex, ValidationError

PHI_INFINITY = 1e12
LOG_PHI_INFINITY = float(np.log(PHI_INFINITY))


@dataclass(frozen=True)
class Tolerances:
    convexity_tol: float = 1e-8
    tie_tol: float = 1e-9
    dual_tol: float | None = None
    kink_factor: float = 10.0

    def __post_init__(self):
        for name in ("convexity_tol", "tie_tol", "kink_factor"):
            if not getattr(self, name) > 0:
                raise ValidationError(f"{name} must be positive")
        if self.dual_tol is not None and not self.dual_tol > 0:
            raise ValidationError("dual_tol must be positive")

    def dual_tolerance(self, grid: np.ndarray, lipschitz: float = 1.0) -> float:
        """Explicit dual_tol, else 5 x max spacing x Lipschitz estimate."""
        if self.dual_tol is not None:
            return self.dual_tol
        spacing = float(np.max(np.diff(np.asarray(grid, dtype=float))))
        return 5.0 * spacing * max(abs(lipschitz), 1e-12)


DEFAULT_TOLERANCES = Tolerances()


def trap_nan(values, what: str = "values") -> np.ndarray:
    arr = np.asarray(values, dtype=float)
    if np.isnan(arr).any():
        raise ValidationError(f"NaN found in {what}")
    return arr


def _grid_and_values(f):
    grid = np.asarray(f.grid, dtype=float)
    values = np.asarray(f.values, dtype=float)
    return grid, values


def _check_interior(n: int, i: int) -> None:
    if i <= 0 or i >= n - 1:
        raise BoundaryIndex(f"index {i} is not interior to a grid of {n} nodes")


def one_sided_slopes(f, i: int) -> tuple[float, float]:
    """Backward and forward difference quotients at interior node i."""
    x, y = _grid_and_values(f)
    _check_interior(len(x), i)
    left = (y[i] - y[i - 1]) / (x[i] - x[i - 1])
    right = (y[i + 1] - y[i]) / (x[i + 1] - x[i])
    return float(left), float(right)


def second_difference(f, i: int) -> float:
    """Three-point second derivative on a nonuniform grid; exact for quadratics."""
    x, y = _grid_and_values(f)
    _check_interior(len(x), i)
    h0 = x[i] - x[i - 1]
    h1 = x[i + 1] - x[i]
    return float(2.0 * ((y[i + 1] - y[i]) / h1 - (y[i] - y[i - 1]) / h0) / (h0 + h1))


def second_differences(x: np.ndarray, y: np.ndarray) -> np.ndarray:
    """Vectorised second_difference at all interior nodes."""
    h = np.diff(x)
    s = np.diff(y) / h
    return 2.0 * np.diff(s) / (h[:-1] + h[1:])


def central_first_differences(x: np.ndarray, y: np.ndarray) -> np.ndarray:
    """Second-order first derivative at interior nodes of a nonuniform grid."""
    h0 = x[1:-1] - x[:-2]
    h1 = x[2:] - x[1:-1]
    return (
        -h1 / (h0 * (h0 + h1)) * y[:-2]
        + (h1 - h0) / (h0 * h1) * y[1:-1]
        + h0 / (h1 * (h0 + h1)) * y[2:]
    )


def left_derivative3(x: np.ndarray, y: np.ndarray, i: int) -> float:
    """Second-order backward derivative at node i using nodes i-2, i-1, i."""
    if i < 2:
        return float((y[i] - y[i - 1]) / (x[i] - x[i - 1]))
    a = x[i] - x[i - 1]
    b = x[i] - x[i - 2]
    return float(
        y[i] * (a + b) / (a * b) - y[i - 1] * b / (a * (b - a)) + y[i - 2] * a / (b * (b - a))
    )


def right_derivative3(x: np.ndarray, y: np.ndarray, i: int) -> float:
    """Second-order forward derivative at node i using nodes i, i+1, i+2."""
    if i + 2 >= len(x):
        return float((y[i + 1] - y[i]) / (x[i + 1] - x[i]))
    a = x[i + 1] - x[i]
    b = x[i + 2] - x[i]
    return float(
        -y[i] * (a + b) / (a * b) + y[i + 1] * b / (a * (b - a)) - y[i + 2] * a / (b * (b - a))
    )
