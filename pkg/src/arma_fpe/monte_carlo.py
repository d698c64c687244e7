"""Deterministic Monte Carlo replication engine.

Each replication ``(n, r)`` draws its innovations from a PCG64 stream seeded
by :func:`replication_seed`, a pure function of ``(master_seed, n, r)``.
Replications are independent tasks; results are stored by index and
aggregated in index order, so the output does not depend on how many
workers ran them or in which order they finished.
"""

from __future__ import annotations

import logging
import math
import os
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass, field, replace
from fractions import Fraction
from typing import Callable, Sequence

import numpy as np

from .arma_core import ArmaParams, ModelOrder, NoiseSpec, ParamSpace, simulate, validate_params
from .estimator import FitConfig, FitError, default_starts, fit, predict_one_step, select_order
from .fisher_diag import GridSpec, grid_min_eigenvalue, inverse_moment

logger = logging.getLogger(__name__)

MASK64 = (1 << 64) - 1
NONCONVERGENCE_GATE = 0.02


def splitmix64(x: int) -> int:
    """SplitMix64 finalizer (Steele, Lea & Flood constants)."""
    x = (x + 0x9E3779B97F4A7C15) & MASK64
    x = ((x ^ (x >> 30)) * 0xBF58476D1CE4E5B9) & MASK64
    x = ((x ^ (x >> 27)) * 0x94D049BB133111EB) & MASK64
    return x ^ (x >> 31)


def replication_seed(master_seed: int, n: int, rep: int) -> int:
    """64-bit stream seed for replication ``rep`` at sample size ``n``.

    Independent of the replication count and of execution order.
    """
    h = splitmix64(master_seed & MASK64)
    h = splitmix64(h ^ (n & MASK64))
    return splitmix64(h ^ (rep & MASK64))


class McConfigError(ValueError):
    pass


@dataclass(frozen=True, eq=False)
class McConfig:
    true_params: ArmaParams
    sample_sizes: tuple[int, ...]
    replications: int
    master_seed: int = 0
    noise: NoiseSpec = field(default_factory=NoiseSpec)
    order: ModelOrder | None = None
    space: ParamSpace | None = None
    moment_orders: tuple[float, ...] = (2.0,)
    grid: GridSpec | None = None
    fit_config: FitConfig = field(default_factory=FitConfig)
    candidates: tuple[ModelOrder, ...] = ()

    def __post_init__(self):
        object.__setattr__(self, "sample_sizes", tuple(int(n) for n in self.sample_sizes))
        object.__setattr__(self, "moment_orders", tuple(float(q) for q in self.moment_orders))
        object.__setattr__(self, "candidates", tuple(self.candidates))
        if self.order is None:
            object.__setattr__(self, "order", self.true_params.order)
        if self.space is None:
            object.__setattr__(self, "space", ParamSpace.default(self.order))

    def validate(self) -> None:
        if self.replications < 1:
            raise McConfigError("replications must be at least 1")
        if not self.sample_sizes:
            raise McConfigError("sample_sizes is empty")
        if self.order != self.true_params.order:
            raise McConfigError("order does not match true_params")
        if any(n <= self.order.p_bar for n in self.sample_sizes):
            raise McConfigError("every sample size must exceed p1 + p2")
        if any(q < 1 for q in self.moment_orders):
            raise McConfigError("moment orders must be at least 1")
        if self.moment_orders and self.noise.max_moment() <= max(self.moment_orders):
            raise McConfigError(
                f"noise has finite moments only below {self.noise.max_moment()}, "
                f"but moment order {max(self.moment_orders)} was requested"
            )
        v = validate_params(self.true_params, self.space)
        if not v:
            raise McConfigError("true parameters are not in the parameter space: " + v.describe())

    def fit_starts(self) -> tuple[ArmaParams, ...]:
        """The truth followed by the default multi-start set."""
        fc = self.fit_config
        if fc.starts is not None:
            return (self.true_params, *fc.starts)
        return (self.true_params, *default_starts(self.space, fc.seed, fc.n_random_starts))


@dataclass(frozen=True)
class FitRecord:
    n: int
    rep: int
    seed: int
    converged: bool
    iterations: int
    estimate: tuple[float, ...]
    norm_stat: float
    d: float
    eps_next: float
    y_next: float


@dataclass(frozen=True)
class EigRecord:
    n: int
    rep: int
    seed: int
    lambda_min: float
    argmin: tuple[float, ...]
    grid_points: int
    stats: tuple[float, ...]  # one per moment order


@dataclass(frozen=True)
class SelectRecord:
    n: int
    rep: int
    seed: int
    chosen: int  # candidate index, -1 if every candidate failed
    fpe: tuple[float, ...]  # nan for failed candidates
    failed: tuple[bool, ...]
    converged: tuple[bool, ...]


@dataclass(frozen=True)
class McResult:
    kind: str
    config: McConfig
    records: tuple
    aggregates: tuple[dict, ...]
    starts: tuple[ArmaParams, ...] = ()

    @property
    def nonconverged(self) -> int:
        if self.kind == "eig":
            return 0
        if self.kind == "select":
            return sum(not c for r in self.records for c, f in zip(r.converged, r.failed) if not f)
        return sum(not r.converged for r in self.records)

    @property
    def total_fits(self) -> int:
        if self.kind == "eig":
            return 0
        if self.kind == "select":
            return sum(len(r.failed) for r in self.records)
        return len(self.records)

    @property
    def nonconvergence_rate(self) -> float:
        return self.nonconverged / self.total_fits if self.total_fits else 0.0

    @property
    def quality_ok(self) -> bool:
        return self.nonconvergence_rate < NONCONVERGENCE_GATE


def _mean_se(values: np.ndarray) -> tuple[float, float]:
    values = np.asarray(values, dtype=float)
    mean = math.fsum(values) / values.size
    if values.size < 2:
        return mean, 0.0
    var = math.fsum((values - mean) ** 2) / (values.size - 1)
    return mean, math.sqrt(var / values.size)


def _simulate_replication(config: McConfig, n: int, rep: int, extra: int = 1):
    seed = replication_seed(config.master_seed, n, rep)
    series = simulate(config.true_params, n + extra, config.noise, seed, space=config.space)
    return seed, series


def _fit_task(args) -> FitRecord:
    config, starts, n, rep = args
    seed, series = _simulate_replication(config, n, rep)
    sample = series.head(n)
    fc = replace(config.fit_config, starts=starts)
    report = fit(sample.y, config.order, config.space, fc)
    diff = report.estimate.vector() - config.true_params.vector()
    norm_stat = math.sqrt(n) * float(np.linalg.norm(diff))
    d = predict_one_step(config.true_params, sample.y) - predict_one_step(report.estimate, sample.y)
    return FitRecord(
        n, rep, seed, report.converged, report.iterations,
        tuple(float(v) for v in report.estimate.vector()),
        norm_stat, float(d), float(series.eps[n]), float(series.y[n]),
    )


def _eig_task(args) -> EigRecord:
    config, n, rep = args
    seed, series = _simulate_replication(config, n, rep, extra=0)
    lam, pt, count = grid_min_eigenvalue(series.y, config.grid, config.space)
    stats = tuple(inverse_moment(lam, q) for q in config.moment_orders)
    return EigRecord(n, rep, seed, float(lam), tuple(float(v) for v in pt.vector()), count, stats)


def _select_task(args) -> SelectRecord:
    config, n, rep = args
    seed, series = _simulate_replication(config, n, rep, extra=0)
    try:
        sel = select_order(series.y, config.candidates, _space_for(config), config.fit_config)
        chosen = sel.chosen_index
        rows = sel.table
    except FitError:
        chosen, rows = -1, ()
    if rows:
        fpes = tuple(float("nan") if c.fpe is None else c.fpe for c in rows)
        failed = tuple(c.report is None for c in rows)
        conv = tuple(bool(c.report.converged) if c.report else False for c in rows)
    else:
        k = len(config.candidates)
        fpes, failed, conv = (float("nan"),) * k, (True,) * k, (False,) * k
    return SelectRecord(n, rep, seed, chosen, fpes, failed, conv)


class _SpaceFactory:
    """Picklable order -> space map: the configured space for the true order, defaults otherwise."""

    def __init__(self, config: McConfig):
        self.order = config.order
        self.space = config.space

    def __call__(self, order: ModelOrder) -> ParamSpace:
        if order == self.order:
            return self.space
        return ParamSpace.default(order)


def _space_for(config: McConfig) -> Callable[[ModelOrder], ParamSpace]:
    return _SpaceFactory(config)


def resolve_workers(threads: int | None) -> int:
    if threads is None or threads == 0:
        return os.cpu_count() or 1
    if threads < 0:
        raise ValueError("threads must be nonnegative")
    return threads


def _run_tasks(fn, tasks: Sequence, workers: int) -> list:
    if workers <= 1 or len(tasks) <= 1:
        return [fn(t) for t in tasks]
    chunk = max(1, len(tasks) // (workers * 8))
    with ProcessPoolExecutor(max_workers=workers) as pool:
        return list(pool.map(fn, tasks, chunksize=chunk))


def _fit_records(config: McConfig, workers: int) -> tuple[list[FitRecord], tuple[ArmaParams, ...]]:
    config.validate()
    starts = config.fit_starts()
    tasks = [(config, starts, n, r) for n in config.sample_sizes for r in range(config.replications)]
    return _run_tasks(_fit_task, tasks, workers), starts


def _by_n(records, n):
    return [r for r in records if r.n == n]


def moment_aggregates(records: Sequence[FitRecord], sizes, orders) -> tuple[dict, ...]:
    out = []
    for n in sizes:
        rs = _by_n(records, n)
        norms = np.array([r.norm_stat for r in rs])
        for q in orders:
            est, se = _mean_se(norms ** q)
            out.append({"n": n, "q": q, "estimate": est, "std_err": se,
                        "nonconverged": sum(not r.converged for r in rs)})
    return tuple(out)


def mspe_aggregates(records: Sequence[FitRecord], sizes) -> tuple[dict, ...]:
    out = []
    for n in sizes:
        rs = _by_n(records, n)
        d2 = np.array([r.d for r in rs]) ** 2
        mean, se = _mean_se(d2)
        out.append({"n": n, "D_hat": n * mean, "std_err": n * se,
                    "nonconverged": sum(not r.converged for r in rs)})
    return tuple(out)


def eig_aggregates(records: Sequence[EigRecord], sizes, orders) -> tuple[dict, ...]:
    out = []
    for n in sizes:
        rs = _by_n(records, n)
        for k, q in enumerate(orders):
            vals = np.array([r.stats[k] for r in rs])
            est, se = _mean_se(vals)
            out.append({"n": n, "q": q, "estimate": est, "std_err": se,
                        "infinite": int(np.sum(np.isinf(vals)))})
    return tuple(out)


def selection_aggregates(records: Sequence[SelectRecord], sizes, candidates) -> tuple[dict, ...]:
    out = []
    for n in sizes:
        rs = _by_n(records, n)
        decided = [r for r in rs if r.chosen >= 0]
        total = len(decided)
        for k, order in enumerate(candidates):
            count = sum(r.chosen == k for r in decided)
            freq = Fraction(count, total) if total else Fraction(0)
            out.append({"n": n, "p1": order.p1, "p2": order.p2, "count": count,
                        "frequency": float(freq), "frequency_exact": freq,
                        "failed_fits": sum(r.failed[k] for r in rs),
                        "undecided": len(rs) - total})
    return tuple(out)


def run_moment_experiment(config: McConfig, threads: int | None = 1) -> McResult:
    """Empirical ``E||sqrt(n)(eta_hat - eta0)||^q`` per sample size and moment order.

    Nonconverged fits stay in the averages and are counted.
    """
    records, starts = _fit_records(config, resolve_workers(threads))
    aggs = moment_aggregates(records, config.sample_sizes, config.moment_orders)
    return McResult("moments", config, tuple(records), aggs, starts)


def run_mspe_experiment(config: McConfig, threads: int | None = 1) -> McResult:
    """``D_hat_n = n * mean(d^2)`` with ``d = g_{n+1}(eta0) - g_{n+1}(eta_hat)``.

    Since ``e_{n+1}`` is independent of the fit, ``MSPE = sigma^2 + E d^2``
    exactly, so ``D_hat_n`` estimates ``n (MSPE - sigma^2)`` without the
    ``var(e^2)`` noise a direct average would carry.
    """
    records, starts = _fit_records(config, resolve_workers(threads))
    aggs = mspe_aggregates(records, config.sample_sizes)
    return McResult("mspe", config, tuple(records), aggs, starts)


def run_eig_experiment(config: McConfig, threads: int | None = 1) -> McResult:
    config.validate()
    if config.grid is None:
        raise McConfigError("eig experiment needs a grid")
    tasks = [(config, n, r) for n in config.sample_sizes for r in range(config.replications)]
    records = _run_tasks(_eig_task, tasks, resolve_workers(threads))
    aggs = eig_aggregates(records, config.sample_sizes, config.moment_orders)
    return McResult("eig", config, tuple(records), aggs)


def run_selection_experiment(config: McConfig, candidates: Sequence[ModelOrder] | None = None,
                             threads: int | None = 1) -> McResult:
    """Frequency with which the FPE picks each candidate order."""
    if candidates is not None:
        config = replace(config, candidates=tuple(candidates))
    config.validate()
    if len(config.candidates) < 1:
        raise McConfigError("selection experiment needs candidate orders")
    tasks = [(config, n, r) for n in config.sample_sizes for r in range(config.replications)]
    records = _run_tasks(_select_task, tasks, resolve_workers(threads))
    aggs = selection_aggregates(records, config.sample_sizes, config.candidates)
    return McResult("select", config, tuple(records), aggs)


EXPERIMENTS = {
    "moments": run_moment_experiment,
    "mspe": run_mspe_experiment,
    "eig": run_eig_experiment,
    "select": run_selection_experiment,
}
