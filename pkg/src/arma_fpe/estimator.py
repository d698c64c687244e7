"""Conditional sum of squares, constrained Levenberg-Marquardt fitting, FPE and order selection."""

from __future__ import annotations

import logging
import math
from dataclasses import dataclass, field
from typing import Callable, Sequence

import numpy as np

from .arma_core import (
    ArmaParams,
    ModelOrder,
    ParamSpace,
    Series,
    derivative_path,
    is_feasible,
    residuals,
    validate_params,
)

logger = logging.getLogger(__name__)

MAX_HALVINGS = 30
MAX_DAMPING = 1e16
GAIN_DAMPING_UP = 2.0


class FitError(ValueError):
    pass


class NoFeasibleStartError(FitError):
    pass


class InsufficientDataError(FitError):
    pass


@dataclass(frozen=True)
class FitConfig:
    max_iters: int = 200
    grad_tol: float = 1e-8
    step_tol: float = 1e-10
    initial_damping: float = 1e-3
    damping_up: float = 10.0
    damping_down: float = 0.5
    starts: tuple[ArmaParams, ...] | None = None
    n_random_starts: int = 4
    seed: int = 0
    curvature: str = "full"

    def __post_init__(self):
        if self.max_iters < 1:
            raise ValueError("max_iters must be at least 1")
        if self.grad_tol <= 0 or self.step_tol <= 0 or self.initial_damping <= 0:
            raise ValueError("tolerances and initial damping must be positive")
        if self.curvature not in ("full", "gauss_newton"):
            raise ValueError("curvature must be 'full' or 'gauss_newton'")
        if not (self.damping_up > 1 and 0 < self.damping_down < 1):
            raise ValueError("need damping_up > 1 and 0 < damping_down < 1")
        if self.starts is not None:
            object.__setattr__(self, "starts", tuple(self.starts))
            if not self.starts:
                raise ValueError("at least one start is required")
        elif self.n_random_starts < 0:
            raise ValueError("n_random_starts must be nonnegative")


@dataclass(frozen=True, eq=False)
class FitReport:
    estimate: ArmaParams
    objective: float
    sigma2_hat: float
    iterations: int
    converged: bool
    info_matrix: np.ndarray
    lambda_min: float
    start_index: int
    n: int
    starts: tuple[ArmaParams, ...] = ()
    start_objectives: tuple[float, ...] = ()

    @property
    def order(self) -> ModelOrder:
        return self.estimate.order


def sum_of_squares(params: ArmaParams, y) -> float:
    """``S_n = sum_t e_t(eta)^2`` with exactly rounded summation (order independent)."""
    eps = residuals(params, y)
    return math.fsum(eps * eps)


def _y_array(y) -> np.ndarray:
    return y.y if isinstance(y, Series) else np.asarray(y, dtype=float).reshape(-1)


def default_starts(space: ParamSpace, seed: int, count: int = 4) -> list[ArmaParams]:
    """Box center followed by ``count`` seeded uniform draws from the space.

    When the center fails validation (a symmetric box centers on the
    all-zero point, which violates the endpoint condition) one extra draw
    takes its place, so ``count + 1`` starts come back either way.
    """
    order = space.order
    out = []
    center = ArmaParams.from_vector(space.center, order)
    if validate_params(center, space):
        out.append(center)
    rng = np.random.default_rng(seed)
    attempts = 0
    while len(out) < count + 1 and attempts < 100_000:
        attempts += 1
        cand = ArmaParams.from_vector(rng.uniform(space.lower, space.upper), order)
        if validate_params(cand, space):
            out.append(cand)
    return out


_feasible = is_feasible


def _damped_solve(normal: np.ndarray, damping: np.ndarray, g: np.ndarray):
    try:
        chol = np.linalg.cholesky(normal + np.diag(damping))
    except np.linalg.LinAlgError:
        return None
    return -np.linalg.solve(chol.T, np.linalg.solve(chol, g))


@dataclass
class _LMResult:
    vec: np.ndarray
    objective: float
    iterations: int
    converged: bool
    accepted: int
    history: list[float] = field(default_factory=list)


def levenberg_marquardt(y: np.ndarray, start: ArmaParams, space: ParamSpace, config: FitConfig) -> _LMResult:
    """Minimize ``S_n`` from one feasible start, keeping every iterate inside the space.

    Steps solve ``(N + mu diag(N)) delta = -J'r`` where ``N = J'J`` (Gauss-Newton)
    or, with ``curvature="full"``, ``N = J'J + sum_t r_t H_t`` whenever that
    damped matrix is positive definite.  The gradient test compares
    ``max |dS_n|`` with ``grad_tol * S_n / n``.  A trial leaving the space is halved
    up to 30 times before the damping is raised; a feasible trial is accepted
    only if it lowers ``S_n``.
    """
    order = space.order
    deriv = 2 if config.curvature == "full" else 1
    vec = start.vector().copy()
    params = start
    path = derivative_path(params, y, deriv)
    obj = math.fsum(path.eps * path.eps)
    fast_obj = float(path.eps @ path.eps)
    history = [obj]
    mu = config.initial_damping
    accepted = 0
    converged = False
    it = 0
    while it < config.max_iters:
        it += 1
        J, r = path.grad, path.eps
        g = J.T @ r
        # Measured against the residual mean square, so the test does not
        # depend on the scale of y (with unit noise it is the absolute test).
        if 2.0 * np.max(np.abs(g)) <= config.grad_tol * obj / y.size:
            converged = True
            break
        JtJ = J.T @ J
        scale = np.maximum(np.diag(JtJ), 1e-12 * max(1.0, float(np.max(np.diag(JtJ)))))
        delta = None
        if deriv == 2:
            normal = JtJ + np.tensordot(r, path.hess, axes=1)
            delta = _damped_solve(normal, mu * scale, g)
        if delta is None:
            normal = JtJ
            delta = _damped_solve(normal, mu * scale, g)
        if delta is None:
            mu *= config.damping_up
            continue
        if np.linalg.norm(delta) < config.step_tol:
            converged = True
            break
        trial = vec + delta
        feasible = _feasible(trial, space)
        halvings = 0
        while not feasible and halvings < MAX_HALVINGS:
            delta *= 0.5
            trial = vec + delta
            feasible = _feasible(trial, space)
            halvings += 1
        if not feasible:
            mu *= config.damping_up
            if mu > MAX_DAMPING:
                break
            continue
        tparams = ArmaParams.from_vector(trial, order)
        tpath = derivative_path(tparams, y, deriv)
        tfast = float(tpath.eps @ tpath.eps)
        if tfast < fast_obj * (1.0 - 1e-12):
            improved = True
        elif tfast > fast_obj * (1.0 + 1e-12):
            improved = False
        else:
            # Too close for a BLAS dot product to decide; settle it with exact rounding.
            improved = math.fsum(tpath.eps * tpath.eps) < obj
        if improved:
            tobj = math.fsum(tpath.eps * tpath.eps)
            vec, params, path, obj, fast_obj = trial, tparams, tpath, tobj, tfast
            history.append(obj)
            accepted += 1
            predicted = -(2.0 * float(delta @ g) + float(delta @ normal @ delta))
            gain = (history[-2] - obj) / predicted if predicted > 0 else 0.0
            if gain > 0.75:
                mu = max(mu * config.damping_down, 1e-15)
            elif gain < 0.25:
                # Accepted, but the linear model overstated the decrease.
                mu *= GAIN_DAMPING_UP
            if np.linalg.norm(delta) < config.step_tol:
                converged = True
                break
        else:
            mu *= config.damping_up
            if mu > MAX_DAMPING:
                break
    return _LMResult(vec, obj, it, converged, accepted, history)


def fit(y, order: ModelOrder, space: ParamSpace | None = None, config: FitConfig | None = None) -> FitReport:
    """Conditional least squares estimate over the parameter space.

    Runs LM from every feasible start; the lowest final objective wins with
    ties going to the earliest start.
    """
    y = _y_array(y)
    space = space or ParamSpace.default(order)
    config = config or FitConfig()
    if space.order != order:
        raise ValueError(f"space is for {space.order}, not {order}")
    n = y.size
    if n <= order.p_bar:
        raise InsufficientDataError(f"need n > p1 + p2 = {order.p_bar}, got n = {n}")
    if config.starts is None:
        starts = default_starts(space, config.seed, config.n_random_starts)
    else:
        starts = list(config.starts)
    feasible = [(k, s) for k, s in enumerate(starts) if s.order == order and validate_params(s, space)]
    if not feasible:
        raise NoFeasibleStartError("no start lies inside the parameter space")

    best = None
    objectives = []
    for k, s in feasible:
        res = levenberg_marquardt(y, s, space, config)
        objectives.append(res.objective)
        if best is None or res.objective < best[1].objective:
            best = (k, res)
    k, res = best
    estimate = ArmaParams.from_vector(res.vec, order)
    grad = derivative_path(estimate, y, 1).grad
    info = grad.T @ grad / n
    info = 0.5 * (info + info.T)
    objective = sum_of_squares(estimate, y)
    return FitReport(
        estimate=estimate,
        objective=objective,
        sigma2_hat=objective / n,
        iterations=res.iterations,
        converged=res.converged,
        info_matrix=info,
        lambda_min=float(np.linalg.eigvalsh(info)[0]),
        start_index=k,
        n=n,
        starts=tuple(starts),
        start_objectives=tuple(objectives),
    )


def predict_one_step(params: ArmaParams, y) -> float:
    """One-step least squares predictor ``g_{n+1}(eta)`` from ``y_1..y_n``."""
    y = _y_array(y)
    eps = residuals(params, y)
    n = y.size
    total = 0.0
    for i, a in enumerate(params.ar, start=1):
        if n + 1 - i >= 1:
            total += a * y[n - i]
    for j, b in enumerate(params.ma, start=1):
        if n + 1 - j >= 1:
            total -= b * eps[n - j]
    return float(total)


def fpe(report, n: int, p_bar: int) -> float:
    """Final prediction error ``(n + p) / ((n - p) n) * S_n``.

    ``report`` is a :class:`FitReport` or a bare objective value.
    """
    if n <= p_bar:
        raise InsufficientDataError(f"FPE needs n > p_bar, got n={n}, p_bar={p_bar}")
    objective = report.objective if isinstance(report, FitReport) else float(report)
    return (n + p_bar) / ((n - p_bar) * n) * objective


@dataclass(frozen=True)
class CandidateResult:
    order: ModelOrder
    fpe: float | None
    report: FitReport | None
    error: str | None = None


@dataclass(frozen=True)
class SelectionResult:
    chosen: ModelOrder
    table: tuple[CandidateResult, ...]

    @property
    def chosen_index(self) -> int:
        return next(i for i, c in enumerate(self.table) if c.order == self.chosen)


def select_order(
    y,
    candidates: Sequence[ModelOrder],
    space_factory: Callable[[ModelOrder], ParamSpace] = ParamSpace.default,
    config: FitConfig | None = None,
    fit_fn: Callable[..., FitReport] = fit,
) -> SelectionResult:
    """Fit every candidate and pick the smallest FPE.

    Exact ties go to the smaller ``p1 + p2``, then to the earlier candidate.
    Candidates whose fit raises are kept in the table with their error.
    """
    if not candidates:
        raise ValueError("candidate list is empty")
    y = _y_array(y)
    n = y.size
    rows = []
    for order in candidates:
        try:
            rep = fit_fn(y, order, space_factory(order), config)
            rows.append(CandidateResult(order, fpe(rep, n, order.p_bar), rep))
        except FitError as exc:
            logger.warning("candidate %s failed: %s", order, exc)
            rows.append(CandidateResult(order, None, None, str(exc)))
    ok = [(c.fpe, c.order.p_bar, i) for i, c in enumerate(rows) if c.fpe is not None]
    if not ok:
        raise FitError("every candidate failed to fit")
    _, _, idx = min(ok)
    return SelectionResult(rows[idx].order, tuple(rows))
