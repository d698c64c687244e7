"""Command-line front end: ``arma-fpe {simulate,fit,mc,select}``.

Configuration is a TOML file; tabular output is CSV with 17 significant
digits, structured output is JSON.  Logs go to stderr only.

Exit codes: 0 ok, 2 config parse error, 3 invalid parameters,
4 nonconvergence, 5 data/order mismatch, 6 Monte Carlo quality gate.
"""

from __future__ import annotations

import argparse
import csv
import json
import logging
import os
import sys
import time
from pathlib import Path

import numpy as np

try:
    import tomllib
except ModuleNotFoundError:  # Python < 3.11
    import tomli as tomllib

from . import __version__
from .arma_core import ArmaParams, InvalidParamsError, ModelOrder, NoiseSpec, ParamSpace, simulate, validate_params
from .estimator import FitConfig, FitError, InsufficientDataError, fit, fpe, select_order
from .fisher_diag import GridSpec
from .monte_carlo import EXPERIMENTS, McConfig, McConfigError, McResult

logger = logging.getLogger("arma_fpe")

EXIT_OK = 0
EXIT_PARSE = 2
EXIT_INVALID = 3
EXIT_NONCONVERGED = 4
EXIT_DATA = 5
EXIT_QUALITY = 6

KNOWN_SECTIONS = {"seed", "model", "noise", "simulate", "order", "space", "fit", "mc", "grid", "select"}


class ConfigError(ValueError):
    pass


class CliExit(Exception):
    def __init__(self, code: int, message: str):
        super().__init__(message)
        self.code = code


def fmt(x) -> str:
    """Round-trip decimal text for CSV cells."""
    if isinstance(x, (bool, np.bool_)):
        return "1" if x else "0"
    if isinstance(x, (int, np.integer)):
        return str(int(x))
    return format(float(x), ".17g")


# -- config -----------------------------------------------------------------

def load_config(path) -> dict:
    try:
        with open(path, "rb") as fh:
            cfg = tomllib.load(fh)
    except (OSError, tomllib.TOMLDecodeError) as exc:
        raise ConfigError(f"cannot read config {path}: {exc}") from exc
    unknown = set(cfg) - KNOWN_SECTIONS
    if unknown:
        raise ConfigError(f"unknown config keys: {sorted(unknown)}")
    return cfg


def _section(cfg: dict, name: str, allowed: set[str]) -> dict:
    sec = cfg.get(name, {})
    if not isinstance(sec, dict):
        raise ConfigError(f"[{name}] must be a table")
    extra = set(sec) - allowed
    if extra:
        raise ConfigError(f"unknown keys in [{name}]: {sorted(extra)}")
    return sec


def _float_list(value, what: str) -> list[float]:
    if not isinstance(value, list) or not all(isinstance(v, (int, float)) and not isinstance(v, bool) for v in value):
        raise ConfigError(f"{what} must be a list of numbers")
    return [float(v) for v in value]


def model_params(cfg: dict) -> ArmaParams:
    sec = _section(cfg, "model", {"ar", "ma"})
    if not sec:
        raise ConfigError("missing [model] section")
    ar = _float_list(sec.get("ar", []), "model.ar")
    ma = _float_list(sec.get("ma", []), "model.ma")
    if not ar and not ma:
        raise ConfigError("[model] needs at least one coefficient")
    return ArmaParams(ar, ma)


def model_order(cfg: dict) -> ModelOrder:
    sec = _section(cfg, "order", {"p1", "p2"})
    if sec:
        try:
            return ModelOrder(int(sec.get("p1", 0)), int(sec.get("p2", 0)))
        except (TypeError, ValueError) as exc:
            raise ConfigError(f"bad [order]: {exc}") from exc
    if "model" in cfg:
        return model_params(cfg).order
    raise ConfigError("need an [order] or [model] section")


def noise_spec(cfg: dict) -> NoiseSpec:
    sec = _section(cfg, "noise", {"kind", "sigma2", "df"})
    try:
        return NoiseSpec(str(sec.get("kind", "gaussian")), float(sec.get("sigma2", 1.0)),
                         None if sec.get("df") is None else float(sec["df"]))
    except (TypeError, ValueError) as exc:
        raise ConfigError(f"bad [noise]: {exc}") from exc


def param_space(cfg: dict, order: ModelOrder) -> ParamSpace:
    sec = _section(cfg, "space", {"lower", "upper", "root_margin", "common_root_tol", "endpoint_tol"})
    default = ParamSpace.default(order)
    try:
        return ParamSpace(
            _float_list(sec["lower"], "space.lower") if "lower" in sec else default.lower,
            _float_list(sec["upper"], "space.upper") if "upper" in sec else default.upper,
            order,
            root_margin=float(sec.get("root_margin", default.root_margin)),
            common_root_tol=float(sec.get("common_root_tol", default.common_root_tol)),
            endpoint_tol=float(sec.get("endpoint_tol", default.endpoint_tol)),
        )
    except (TypeError, ValueError) as exc:
        raise ConfigError(f"bad [space]: {exc}") from exc


_FIT_KEYS = {"max_iters", "grad_tol", "step_tol", "initial_damping", "damping_up", "damping_down",
             "n_random_starts", "seed", "curvature", "starts"}


def fit_config(cfg: dict, order: ModelOrder) -> FitConfig:
    sec = dict(_section(cfg, "fit", _FIT_KEYS))
    starts = sec.pop("starts", None)
    try:
        if starts is not None:
            starts = tuple(ArmaParams.from_vector(_float_list(s, "fit.starts entry"), order) for s in starts)
        return FitConfig(starts=starts, **sec)
    except (TypeError, ValueError) as exc:
        raise ConfigError(f"bad [fit]: {exc}") from exc


def master_seed(cfg: dict, override: int | None) -> int:
    seed = override if override is not None else cfg.get("seed", 0)
    if not isinstance(seed, int) or isinstance(seed, bool) or not 0 <= seed < 2**64:
        raise ConfigError("seed must be an unsigned 64-bit integer")
    return seed


def mc_config(cfg: dict, seed: int, kind: str) -> McConfig:
    truth = model_params(cfg)
    order = truth.order
    sec = _section(cfg, "mc", {"sample_sizes", "replications", "moment_orders"})
    try:
        sizes = tuple(int(n) for n in sec["sample_sizes"])
        reps = int(sec["replications"])
    except (KeyError, TypeError, ValueError) as exc:
        raise ConfigError(f"[mc] needs sample_sizes and replications: {exc}") from exc
    orders = tuple(_float_list(sec.get("moment_orders", [2.0]), "mc.moment_orders"))
    grid = None
    gsec = _section(cfg, "grid", {"center", "radius", "points_per_axis"})
    if gsec or kind == "eig":
        try:
            center = (ArmaParams.from_vector(_float_list(gsec["center"], "grid.center"), order)
                      if "center" in gsec else truth)
            grid = GridSpec(center, float(gsec.get("radius", 0.1)), int(gsec.get("points_per_axis", 5)))
        except (TypeError, ValueError) as exc:
            raise ConfigError(f"bad [grid]: {exc}") from exc
    candidates = ()
    ssec = _section(cfg, "select", {"candidates"})
    if ssec or kind == "select":
        candidates = candidate_orders(cfg)
    return McConfig(
        true_params=truth,
        sample_sizes=sizes,
        replications=reps,
        master_seed=seed,
        noise=noise_spec(cfg),
        order=order,
        space=param_space(cfg, order),
        moment_orders=orders,
        grid=grid,
        fit_config=fit_config(cfg, order),
        candidates=candidates,
    )


def candidate_orders(cfg: dict) -> tuple[ModelOrder, ...]:
    sec = _section(cfg, "select", {"candidates"})
    try:
        cands = tuple(ModelOrder(int(p1), int(p2)) for p1, p2 in sec["candidates"])
    except (KeyError, TypeError, ValueError) as exc:
        raise ConfigError(f"[select] needs candidates = [[p1, p2], ...]: {exc}") from exc
    if not cands:
        raise ConfigError("[select] candidates is empty")
    return cands


def _space_json(space: ParamSpace) -> dict:
    return {"lower": space.lower.tolist(), "upper": space.upper.tolist(),
            "root_margin": space.root_margin, "common_root_tol": space.common_root_tol,
            "endpoint_tol": space.endpoint_tol}


def _params_json(p: ArmaParams) -> dict:
    return {"ar": p.ar.tolist(), "ma": p.ma.tolist()}


def _fit_json(fc: FitConfig) -> dict:
    return {"max_iters": fc.max_iters, "grad_tol": fc.grad_tol, "step_tol": fc.step_tol,
            "initial_damping": fc.initial_damping, "damping_up": fc.damping_up,
            "damping_down": fc.damping_down, "n_random_starts": fc.n_random_starts,
            "seed": fc.seed, "curvature": fc.curvature,
            "starts": None if fc.starts is None else [s.vector().tolist() for s in fc.starts]}


def resolved_mc_config(mc: McConfig, kind: str) -> dict:
    out = {
        "seed": mc.master_seed,
        "model": _params_json(mc.true_params),
        "noise": {"kind": mc.noise.kind, "sigma2": mc.noise.sigma2, "df": mc.noise.df},
        "space": _space_json(mc.space),
        "fit": _fit_json(mc.fit_config),
        "mc": {"sample_sizes": list(mc.sample_sizes), "replications": mc.replications,
               "moment_orders": list(mc.moment_orders)},
    }
    if mc.grid is not None:
        out["grid"] = {"center": mc.grid.center.vector().tolist(), "radius": mc.grid.radius,
                       "points_per_axis": mc.grid.points_per_axis}
    if mc.candidates:
        out["select"] = {"candidates": [[c.p1, c.p2] for c in mc.candidates]}
    return out


# -- io ---------------------------------------------------------------------

def write_csv(path: Path, header: list[str], rows) -> None:
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(header)
        for row in rows:
            w.writerow([fmt(v) if not isinstance(v, str) else v for v in row])


def read_series_csv(path) -> np.ndarray:
    try:
        with open(path, newline="") as fh:
            reader = csv.DictReader(fh)
            if reader.fieldnames is None or "t" not in reader.fieldnames or "y" not in reader.fieldnames:
                raise ConfigError(f"{path}: data CSV needs columns t,y")
            rows = [(int(r["t"]), float(r["y"])) for r in reader]
    except OSError as exc:
        raise ConfigError(f"cannot read data {path}: {exc}") from exc
    except (TypeError, ValueError) as exc:
        raise ConfigError(f"{path}: malformed row: {exc}") from exc
    ts = [t for t, _ in rows]
    if ts != list(range(1, len(rows) + 1)):
        raise ConfigError(f"{path}: t must run 1..n in order")
    return np.array([y for _, y in rows], dtype=float)


def write_json(path: Path, obj) -> None:
    with open(path, "w") as fh:
        json.dump(obj, fh, indent=2, allow_nan=True)
        fh.write("\n")


# -- commands ---------------------------------------------------------------

def cmd_simulate(args) -> int:
    cfg = load_config(args.config)
    params = model_params(cfg)
    seed = master_seed(cfg, args.seed)
    sec = _section(cfg, "simulate", {"n"})
    try:
        n = int(sec["n"])
    except (KeyError, TypeError, ValueError) as exc:
        raise ConfigError("[simulate] needs an integer n") from exc
    if n < 1:
        raise ConfigError("simulate.n must be positive")
    noise = noise_spec(cfg)
    space = param_space(cfg, params.order)
    validity = validate_params(params, space)
    if not validity:
        raise CliExit(EXIT_INVALID, "invalid model parameters: " + validity.describe())
    series = simulate(params, n, noise, seed, space=space)
    out = Path(args.out)
    write_csv(out, ["t", "y", "eps"], ((t + 1, series.y[t], series.eps[t]) for t in range(n)))
    logger.info("wrote %d observations to %s", n, out)
    return EXIT_OK


def _fit_summary(report, n: int) -> dict:
    order = report.order
    return {
        "order": {"p1": order.p1, "p2": order.p2},
        "n": n,
        "estimate": _params_json(report.estimate),
        "objective": report.objective,
        "sigma2_hat": report.sigma2_hat,
        "lambda_min": report.lambda_min,
        "info_matrix": report.info_matrix.tolist(),
        "iterations": report.iterations,
        "converged": report.converged,
        "fpe": fpe(report, n, order.p_bar),
        "start_index": report.start_index,
    }


def cmd_fit(args) -> int:
    cfg = load_config(args.config)
    order = model_order(cfg)
    space = param_space(cfg, order)
    fc = fit_config(cfg, order)
    y = read_series_csv(args.data)
    if y.size <= order.p_bar:
        raise CliExit(EXIT_DATA, f"need n > p1 + p2 = {order.p_bar}, data has n = {y.size}")
    try:
        report = fit(y, order, space, fc)
    except InsufficientDataError as exc:
        raise CliExit(EXIT_DATA, str(exc)) from exc
    except FitError as exc:
        raise CliExit(EXIT_INVALID, str(exc)) from exc
    write_json(Path(args.out), _fit_summary(report, y.size))
    if not report.converged:
        logger.warning("fit did not converge after %d iterations", report.iterations)
        return EXIT_NONCONVERGED
    return EXIT_OK


def cmd_select(args) -> int:
    cfg = load_config(args.config)
    cands = candidate_orders(cfg)
    y = read_series_csv(args.data)
    usable = [c for c in cands if y.size > c.p_bar]
    if not usable:
        raise CliExit(EXIT_DATA, f"n = {y.size} is too short for every candidate")
    if "starts" in cfg.get("fit", {}):
        raise ConfigError("[fit] starts cannot be combined with order selection")
    base = fit_config(cfg, usable[0])

    def space_factory(order):
        return param_space(cfg, order) if "space" in cfg else ParamSpace.default(order)

    try:
        sel = select_order(y, cands, space_factory, base)
    except FitError as exc:
        raise CliExit(EXIT_DATA, str(exc)) from exc
    table = []
    for row in sel.table:
        entry = {"p1": row.order.p1, "p2": row.order.p2, "fpe": row.fpe, "error": row.error}
        if row.report is not None:
            entry.update(objective=row.report.objective, converged=row.report.converged,
                         estimate=_params_json(row.report.estimate))
        table.append(entry)
    write_json(Path(args.out), {"n": int(y.size), "chosen": {"p1": sel.chosen.p1, "p2": sel.chosen.p2},
                                "candidates": table})
    return EXIT_OK


def _record_rows(result: McResult):
    kind, cfg = result.kind, result.config
    p = cfg.order.p_bar
    if kind in ("moments", "mspe"):
        header = ["n", "rep", "converged", "norm_stat", "d", "iterations", "seed", "eps_next", "y_next"]
        header += [f"eta_hat_{k + 1}" for k in range(p)]
        rows = [[r.n, r.rep, r.converged, r.norm_stat, r.d, r.iterations, r.seed, r.eps_next, r.y_next,
                 *r.estimate] for r in result.records]
    elif kind == "eig":
        header = ["n", "rep", "lambda_min", "grid_points", "seed"]
        header += [f"grid_stat_q{fmt(q)}" for q in cfg.moment_orders]
        header += [f"argmin_{k + 1}" for k in range(p)]
        rows = [[r.n, r.rep, r.lambda_min, r.grid_points, r.seed, *r.stats, *r.argmin] for r in result.records]
    else:
        names = [f"ar{c.p1}ma{c.p2}" for c in cfg.candidates]
        header = ["n", "rep", "chosen_p1", "chosen_p2", "seed"]
        header += [f"fpe_{nm}" for nm in names] + [f"converged_{nm}" for nm in names]
        rows = []
        for r in result.records:
            chosen = cfg.candidates[r.chosen] if r.chosen >= 0 else None
            rows.append([r.n, r.rep, chosen.p1 if chosen else -1, chosen.p2 if chosen else -1, r.seed,
                         *r.fpe, *[c and not f for c, f in zip(r.converged, r.failed)]])
    return header, rows


def _aggregate_rows(result: McResult):
    if result.kind == "moments":
        header = ["n", "q", "estimate", "std_err", "nonconverged"]
    elif result.kind == "mspe":
        header = ["n", "D_hat", "std_err", "nonconverged"]
    elif result.kind == "eig":
        header = ["n", "q", "estimate", "std_err", "infinite"]
    else:
        header = ["n", "p1", "p2", "count", "frequency", "failed_fits", "undecided"]
    return header, [[a[h] for h in header] for a in result.aggregates]


def cmd_mc(args) -> int:
    started = time.monotonic()
    cfg = load_config(args.config)
    seed = master_seed(cfg, args.seed)
    mc = mc_config(cfg, seed, args.kind)
    try:
        mc.validate()
    except McConfigError as exc:
        code = EXIT_INVALID if "parameter space" in str(exc) else EXIT_PARSE
        raise CliExit(code, str(exc)) from exc
    threads = resolve_threads(args.threads)
    logger.info("running %s experiment with %d worker(s)", args.kind, threads)
    result = EXPERIMENTS[args.kind](mc, threads=threads)
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    rep_path, agg_path, man_path = out / "replications.csv", out / "aggregates.csv", out / "manifest.json"
    write_csv(rep_path, *_record_rows(result))
    write_csv(agg_path, *_aggregate_rows(result))
    manifest = {
        "tool": "arma-fpe",
        "version": __version__,
        "command": f"mc {args.kind}",
        "master_seed": seed,
        "config": resolved_mc_config(mc, args.kind),
        "fit_starts": [s.vector().tolist() for s in result.starts],
        "nonconverged": result.nonconverged,
        "total_fits": result.total_fits,
        "nonconvergence_rate": result.nonconvergence_rate,
        "quality_ok": result.quality_ok,
        "wall_clock_seconds": (time.monotonic() - started) if args.record_timing else None,
        "outputs": {"replications": rep_path.name, "aggregates": agg_path.name, "manifest": man_path.name},
    }
    write_json(man_path, manifest)
    if not result.quality_ok:
        logger.error("nonconvergence rate %.4f exceeds the quality gate", result.nonconvergence_rate)
        return EXIT_QUALITY
    return EXIT_OK


def resolve_threads(flag: int | None) -> int:
    if flag is None:
        env = os.environ.get("ARMA_FPE_THREADS")
        if env is None or env == "":
            flag = 0
        else:
            try:
                flag = int(env)
            except ValueError as exc:
                raise ConfigError("ARMA_FPE_THREADS must be an integer") from exc
    if flag < 0:
        raise ConfigError("--threads must be nonnegative")
    return flag or (os.cpu_count() or 1)


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="arma-fpe", description=__doc__.splitlines()[0])
    parser.add_argument("--version", action="version", version=f"%(prog)s {__version__}")
    parser.add_argument("-v", "--verbose", action="store_true", help="debug logging on stderr")
    sub = parser.add_subparsers(dest="command", required=True)

    def common(p, out_help, seeded=True):
        p.add_argument("--config", required=True, help="TOML configuration file")
        p.add_argument("--out", required=True, help=out_help)
        if seeded:
            p.add_argument("--seed", type=int, default=None, help="override the config seed (u64)")

    p = sub.add_parser("simulate", help="simulate a series to CSV (t,y,eps)")
    common(p, "output CSV path")
    p.set_defaults(func=cmd_simulate)

    p = sub.add_parser("fit", help="conditional least squares fit of a t,y CSV")
    common(p, "output JSON summary path", seeded=False)
    p.add_argument("--data", required=True, help="CSV with t,y columns")
    p.set_defaults(func=cmd_fit)

    p = sub.add_parser("select", help="FPE order selection on a t,y CSV")
    common(p, "output JSON summary path", seeded=False)
    p.add_argument("--data", required=True, help="CSV with t,y columns")
    p.set_defaults(func=cmd_select)

    p = sub.add_parser("mc", help="Monte Carlo experiment")
    p.add_argument("kind", choices=sorted(EXPERIMENTS))
    common(p, "output directory")
    p.add_argument("--threads", type=int, default=None,
                   help="worker processes, 0 = all cores (falls back to ARMA_FPE_THREADS)")
    p.add_argument("--record-timing", action="store_true",
                   help="store wall-clock duration in the manifest (breaks byte-identical reruns)")
    p.set_defaults(func=cmd_mc)
    return parser


def main(argv=None) -> int:
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except SystemExit as exc:
        return EXIT_PARSE if exc.code else EXIT_OK
    logging.basicConfig(level=logging.DEBUG if args.verbose else logging.INFO,
                        stream=sys.stderr, format="%(levelname)s %(name)s: %(message)s")
    try:
        return args.func(args)
    except ConfigError as exc:
        logger.error("%s", exc)
        return EXIT_PARSE
    except InvalidParamsError as exc:
        logger.error("%s", exc)
        return EXIT_INVALID
    except CliExit as exc:
        logger.error("%s", exc)
        return exc.code


if __name__ == "__main__":
    sys.exit(main())
