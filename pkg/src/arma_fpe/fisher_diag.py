"""Normalized information matrix, its extreme eigenvalues, and grid suprema of inverse eigenvalue moments."""

from __future__ import annotations

import itertools
import math
from dataclasses import dataclass

import numpy as np

from .arma_core import ArmaParams, ParamSpace, derivative_path, validate_params


@dataclass(frozen=True, eq=False)
class FisherSummary:
    matrix: np.ndarray
    lambda_min: float
    lambda_max: float
    at_params: ArmaParams


def information_from_gradients(grad: np.ndarray) -> np.ndarray:
    """``n^{-1} sum_t g_t g_t'`` for an ``(n, p)`` gradient path, symmetrized."""
    n = grad.shape[0]
    m = grad.T @ grad / n
    return 0.5 * (m + m.T)


def fisher_matrix(params: ArmaParams, y) -> FisherSummary:
    grad = derivative_path(params, y, 1).grad
    m = information_from_gradients(grad)
    eig = np.linalg.eigvalsh(m)
    return FisherSummary(m, float(eig[0]), float(eig[-1]), params)


def _check_symmetric(a: np.ndarray, name: str) -> np.ndarray:
    a = np.asarray(a, dtype=float)
    if a.ndim != 2 or a.shape[0] != a.shape[1]:
        raise ValueError(f"{name} must be a square matrix")
    if not np.allclose(a, a.T, rtol=0.0, atol=1e-12 * max(1.0, float(np.max(np.abs(a))))):
        raise ValueError(f"{name} is not symmetric")
    return a


def min_eig_subadditivity_check(a, b) -> tuple[bool, float]:
    """Check ``lambda_min(a + b) >= lambda_min(a) + lambda_min(b)``.

    Returns ``(holds, slack)`` with ``slack = lhs - rhs``; ``holds`` allows
    ``slack >= -1e-12`` for rounding.
    """
    a = _check_symmetric(a, "a")
    b = _check_symmetric(b, "b")
    if a.shape != b.shape:
        raise ValueError("a and b must have the same shape")
    lhs = np.linalg.eigvalsh(a + b)[0]
    rhs = np.linalg.eigvalsh(a)[0] + np.linalg.eigvalsh(b)[0]
    slack = float(lhs - rhs)
    return slack >= -1e-12, slack


@dataclass(frozen=True, eq=False)
class GridSpec:
    """Tensor grid of ``points_per_axis`` values per coordinate on ``[center - radius, center + radius]``."""

    center: ArmaParams
    radius: float = 0.1
    points_per_axis: int = 5

    def __post_init__(self):
        if self.radius <= 0:
            raise ValueError("radius must be positive")
        if self.points_per_axis < 1 or self.points_per_axis % 2 == 0:
            raise ValueError("points_per_axis must be a positive odd integer")

    def points(self, space: ParamSpace | None = None) -> list[ArmaParams]:
        """Grid points passing validation, in lexicographic axis order."""
        order = self.center.order
        space = space or ParamSpace.default(order)
        c = self.center.vector()
        if self.points_per_axis == 1:
            axes = [[v] for v in c]
        else:
            offsets = np.linspace(-self.radius, self.radius, self.points_per_axis)
            # Exact center on the middle node, so odd grids nest around it.
            offsets[self.points_per_axis // 2] = 0.0
            axes = [list(v + offsets) for v in c]
        out = []
        for combo in itertools.product(*axes):
            pt = ArmaParams.from_vector(combo, order)
            if validate_params(pt, space):
                out.append(pt)
        return out


class EmptyGridError(ValueError):
    pass


@dataclass(frozen=True, eq=False)
class GridSupResult:
    """``value = max_grid lambda_min^{-q}``; ``argmax``/``lambda_min`` locate the maximizer.

    ``value`` is ``inf`` when some grid point has a nonpositive minimum
    eigenvalue; ``argmax`` is then that point.  The finite grid only bounds
    the supremum over the ball from below.
    """

    value: float
    argmax: ArmaParams
    lambda_min: float
    n_points: int

    @property
    def degenerate(self) -> bool:
        return math.isinf(self.value)


def grid_min_eigenvalue(y, grid: GridSpec, space: ParamSpace | None = None) -> tuple[float, ArmaParams, int]:
    """Smallest information eigenvalue over the grid, the point attaining it, and the grid size."""
    pts = grid.points(space)
    if not pts:
        raise EmptyGridError("no grid point passes validation")
    best_lam, best_pt = math.inf, pts[0]
    for pt in pts:
        lam = fisher_matrix(pt, y).lambda_min
        if lam <= 0.0:
            return lam, pt, len(pts)
        if lam < best_lam:
            best_lam, best_pt = lam, pt
    return best_lam, best_pt, len(pts)


def inverse_moment(lam: float, q: float) -> float:
    return math.inf if lam <= 0.0 else lam ** (-q)


def grid_sup_inverse_eig(y, grid: GridSpec, q: float, space: ParamSpace | None = None) -> GridSupResult:
    """Largest ``lambda_min^{-q}`` of the information matrix over the validated grid.

    For positive eigenvalues ``x -> x^{-q}`` is decreasing, so the maximizer
    is the point with the smallest minimum eigenvalue.
    """
    if q < 1:
        raise ValueError("q must be at least 1")
    lam, pt, count = grid_min_eigenvalue(y, grid, space)
    return GridSupResult(inverse_moment(lam, q), pt, lam, count)
