"""Command-line harness: single runs, n- and h-refinement sweeps and long
stability runs, all driven by a JSON config and writing CSV/JSON outputs.

Exit codes: 0 success, 2 bad config, 3 step failure (partial output is
still written), 4 I/O error.
"""

from __future__ import annotations

import argparse
import csv
import json
import logging
import math
import sys
from concurrent.futures import ProcessPoolExecutor
from dataclasses import asdict, dataclass, field
from pathlib import Path
from typing import Optional

import numpy as np

from specvi.curve import Trajectory, sup_error
from specvi.diagnostics import (
    TooFewPoints,
    discrete_noether_series,
    energy_series,
    fit_geometric,
    fit_order,
    noether_series,
    orbit_deviation,
    step_increments,
)
from specvi.problems import PROBLEMS, EphemerisError, Problem, build_problem
from specvi.stepper import STRATEGIES, IntegrationError, SolverConfig, SpectralStepper


EXIT_OK, EXIT_CONFIG, EXIT_STEP, EXIT_IO = 0, 2, 3, 4
OUTPUTS = ("endpoint-error", "curve-error", "energy", "noether", "discrete-noether")
FLOAT_FMT = "%.17g"


class ConfigError(ValueError):
    pass


@dataclass
class RunConfig:
    problem: str
    n: int
    h: float
    steps: int = 1
    params: dict = field(default_factory=dict)
    m: Optional[int] = None
    solver: dict = field(default_factory=dict)
    outputs: list = field(default_factory=lambda: list(OUTPUTS))
    samples_per_step: int = 16
    ephemeris: Optional[str] = None
    n_list: list = field(default_factory=list)
    h_list: list = field(default_factory=list)
    T: Optional[float] = None
    fit_floor: Optional[float] = None
    fit_ceiling: Optional[float] = None
    seed: Optional[int] = None

    def resolved(self) -> "RunConfig":
        """Copy with defaults filled in (full solver settings, and ``m = 2n``
        unless ``n`` is swept, where an unset ``m`` means ``2n`` per point)."""
        d = asdict(self)
        if self.m is None and not self.n_list:
            d["m"] = 2 * self.n
        d["solver"] = asdict(SolverConfig(**self.solver))
        return RunConfig(**d)

    def solver_config(self) -> SolverConfig:
        return SolverConfig(**self.solver)


def load_config(path, overrides: Optional[dict] = None) -> RunConfig:
    try:
        with open(path, encoding="utf-8") as fh:
            raw = json.load(fh)
    except json.JSONDecodeError as exc:
        raise ConfigError(f"{path}: not valid JSON ({exc})") from None
    return parse_config(raw, overrides)


def parse_config(raw, overrides: Optional[dict] = None) -> RunConfig:
    if not isinstance(raw, dict):
        raise ConfigError("config must be a JSON object")
    raw = dict(raw)
    if overrides:
        raw.update({k: v for k, v in overrides.items() if v is not None})
    prob = raw.pop("problem", None)
    if isinstance(prob, dict):
        raw.setdefault("params", prob.get("params", {}))
        prob = prob.get("name")
    if prob is None:
        raise ConfigError("missing 'problem'")
    try:
        cfg = RunConfig(problem=prob, **raw)
    except TypeError as exc:
        raise ConfigError(f"bad config: {exc}") from None
    _validate(cfg)
    return cfg.resolved()


def _validate(cfg: RunConfig) -> None:
    if cfg.problem not in PROBLEMS:
        raise ConfigError(f"unknown problem {cfg.problem!r}; pick one of {PROBLEMS}")
    for name, val in (("n", cfg.n), ("steps", cfg.steps), ("samples_per_step", cfg.samples_per_step)):
        if not isinstance(val, int) or isinstance(val, bool):
            raise ConfigError(f"{name} must be an integer")
    if cfg.n < 2:
        raise ConfigError("n must be at least 2")
    if cfg.steps < 1:
        raise ConfigError("steps must be at least 1")
    if cfg.samples_per_step < 2:
        raise ConfigError("samples_per_step must be at least 2")
    if not isinstance(cfg.h, (int, float)) or not cfg.h > 0 or not math.isfinite(cfg.h):
        raise ConfigError("h must be a positive number")
    if cfg.m is not None:
        _check_m(cfg.n, cfg.m)
    unknown = set(cfg.outputs) - set(OUTPUTS)
    if unknown:
        raise ConfigError(f"unknown outputs {sorted(unknown)}; pick from {OUTPUTS}")
    try:
        SolverConfig(**cfg.solver)
    except (TypeError, ValueError) as exc:
        raise ConfigError(f"bad solver settings: {exc} (strategies: {STRATEGIES})") from None
    for n in cfg.n_list:
        if not isinstance(n, int) or n < 2:
            raise ConfigError(f"n_list entries must be integers >= 2, got {n!r}")
        if cfg.m is not None:
            _check_m(n, cfg.m)
    for h in cfg.h_list:
        if not isinstance(h, (int, float)) or not h > 0:
            raise ConfigError(f"h_list entries must be positive, got {h!r}")
    if cfg.T is not None and not cfg.T > 0:
        raise ConfigError("T must be positive")


def _check_m(n: int, m: int) -> None:
    # m >= n+1 is the same as exactness 2m-1 >= 2n+1, which keeps A invertible
    if not isinstance(m, int) or isinstance(m, bool) or m < n + 1:
        raise ConfigError(f"m must be an integer >= n+1 = {n + 1}")


# ---- running -----------------------------------------------------------------


def make_problem(cfg: RunConfig) -> Problem:
    try:
        return build_problem(cfg.problem, cfg.params, cfg.ephemeris)
    except EphemerisError as exc:
        raise ConfigError(f"ephemeris: {exc}") from None
    except (TypeError, ValueError) as exc:
        raise ConfigError(f"bad parameters for {cfg.problem}: {exc}") from None


def run_trajectory(cfg: RunConfig, problem: Problem, n=None, h=None, steps=None):
    """Returns ``(trajectory, failure message or None)``."""
    n = cfg.n if n is None else n
    h = cfg.h if h is None else h
    steps = cfg.steps if steps is None else steps
    m = cfg.m if cfg.m is not None else 2 * n
    stepper = SpectralStepper(problem.system, n, h, m=m, cfg=cfg.solver_config())
    try:
        return stepper.integrate(problem.init, steps), None
    except IntegrationError as exc:
        return exc.trajectory, str(exc)


def summarize(cfg: RunConfig, problem: Problem, traj: Trajectory) -> dict:
    """Scalar diagnostics requested by ``cfg.outputs``; NaN where undefined."""
    out: dict = {"steps_taken": traj.steps}
    if traj.steps == 0:
        return out
    sps = cfg.samples_per_step
    want = set(cfg.outputs)
    if {"endpoint-error", "curve-error"} & want:
        if problem.reference is not None:
            ce, ee = sup_error(traj, problem.reference_q, sps)
        else:
            ce = ee = float("nan")
        out["err_endpoint"], out["err_curve"] = ee, ce
    if "energy" in want:
        rep = energy_series(traj, problem.system, sps)
        out["energy"] = {"max_abs_error": rep.max_abs_error, "drift_ratio": rep.drift_ratio, "initial": rep.reference}
    if "noether" in want:
        out["noether"] = []
        for g in problem.generators:
            rep = noether_series(traj, problem.system, g, sps)
            out["noether"].append(
                {"label": g.label, "max_abs_error": rep.max_abs_error, "drift_ratio": rep.drift_ratio}
            )
    if "discrete-noether" in want:
        out["discrete_noether"] = []
        for g in problem.generators:
            rep = discrete_noether_series(traj, g)
            inc = step_increments(rep)
            out["discrete_noether"].append(
                {
                    "label": g.label,
                    "max_step_change": float(np.max(np.abs(inc))) if inc.size else 0.0,
                    "max_abs_error": rep.max_abs_error,
                }
            )
    return out


def _nan_if_missing(summary: dict, key: str) -> float:
    v = summary.get(key)
    return float("nan") if v is None else float(v)


def _max_noether(summary: dict) -> float:
    items = summary.get("noether") or []
    return max((d["max_abs_error"] for d in items), default=float("nan"))


def _point(args) -> dict:
    """One sweep point, run in a worker process."""
    cfg_dict, n, h, steps = args
    cfg = RunConfig(**cfg_dict)
    problem = make_problem(cfg)
    traj, failure = run_trajectory(cfg, problem, n, h, steps)
    row = {"n": n, "h": h, "steps": steps, "failure": failure}
    if failure is None:
        s = summarize(cfg, problem, traj)
        row.update(
            err_endpoint=_nan_if_missing(s, "err_endpoint"),
            err_curve=_nan_if_missing(s, "err_curve"),
            err_energy=s.get("energy", {}).get("max_abs_error", float("nan")),
            err_noether=_max_noether(s),
        )
    else:
        row.update(err_endpoint=math.nan, err_curve=math.nan, err_energy=math.nan, err_noether=math.nan)
    return row


def _map_points(points, threads: int):
    if threads <= 1 or len(points) <= 1:
        return [_point(p) for p in points]
    with ProcessPoolExecutor(max_workers=min(threads, len(points))) as pool:
        return list(pool.map(_point, points))


def _fit(fun, xs, errs, cfg: RunConfig, scale: float) -> dict:
    try:
        fit = fun(xs, errs, floor=cfg.fit_floor, scale=scale, ceiling=cfg.fit_ceiling)
    except TooFewPoints as exc:
        return {"value": None, "r_squared": None, "used": [], "note": str(exc)}
    return {
        "value": fit.fitted_base_or_order,
        "r_squared": fit.r_squared,
        "used": [float(x) for x in fit.xs[fit.used]],
    }


def _solution_scale(problem: Problem) -> float:
    return max(1.0, float(np.max(np.abs(problem.init.q))))


# ---- output ------------------------------------------------------------------


def _fmt(x) -> str:
    if isinstance(x, (int, np.integer)) and not isinstance(x, bool):
        return str(int(x))
    return FLOAT_FMT % float(x)


def write_csv(path: Path, header, rows) -> None:
    with open(path, "w", newline="", encoding="utf-8") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(header)
        for row in rows:
            w.writerow([_fmt(x) for x in row])


def _json_safe(obj):
    if isinstance(obj, dict):
        return {k: _json_safe(v) for k, v in obj.items()}
    if isinstance(obj, (list, tuple)):
        return [_json_safe(v) for v in obj]
    if isinstance(obj, (np.floating, float)):
        f = float(obj)
        return f if math.isfinite(f) else str(f)
    if isinstance(obj, np.integer):
        return int(obj)
    return obj


def write_json(path: Path, obj) -> None:
    with open(path, "w", encoding="utf-8") as fh:
        json.dump(_json_safe(obj), fh, indent=2, sort_keys=True, allow_nan=False)
        fh.write("\n")


def write_trajectory(path: Path, traj: Trajectory) -> None:
    D = traj.states[0].q.size
    header = ["t"] + [f"q{i}" for i in range(D)] + [f"p{i}" for i in range(D)]
    rows = ([s.t, *s.q, *s.p] for s in traj.states)
    write_csv(path, header, rows)


def write_series(out: Path, cfg: RunConfig, problem: Problem, traj: Trajectory) -> None:
    if traj.steps == 0:
        return
    sps = cfg.samples_per_step
    if "energy" in cfg.outputs:
        rep = energy_series(traj, problem.system, sps)
        write_csv(out / "energy.csv", ["t", "step", "energy", "error"],
                  zip(rep.times, rep.step_index, rep.values, rep.errors))
    if "noether" in cfg.outputs:
        for i, g in enumerate(problem.generators):
            rep = noether_series(traj, problem.system, g, sps)
            write_csv(out / f"noether_{i}.csv", ["t", "step", "value", "error"],
                      zip(rep.times, rep.step_index, rep.values, rep.errors))
    if "discrete-noether" in cfg.outputs:
        for i, g in enumerate(problem.generators):
            rep = discrete_noether_series(traj, g)
            write_csv(out / f"discrete_noether_{i}.csv", ["t", "value", "error"],
                      zip(rep.times, rep.values, rep.errors))


def _bundle(cfg: RunConfig, command: str, **rest) -> dict:
    return {"command": command, "config": asdict(cfg), **rest}


# ---- commands ----------------------------------------------------------------


def cmd_integrate(cfg: RunConfig, out: Path) -> int:
    problem = make_problem(cfg)
    traj, failure = run_trajectory(cfg, problem)
    write_trajectory(out / "trajectory.csv", traj)
    write_series(out, cfg, problem, traj)
    summary = summarize(cfg, problem, traj)
    write_json(out / "diagnostics.json", _bundle(cfg, "integrate", summary=summary, failure=failure))
    return EXIT_STEP if failure else EXIT_OK


def _sweep_rows(rows, key):
    return sorted(rows, key=lambda r: r[key])


def cmd_sweep_n(cfg: RunConfig, out: Path, threads: int) -> int:
    if len(cfg.n_list) < 3:
        raise ConfigError("sweep-n needs at least 3 values in n_list")
    base = asdict(cfg)
    rows = _sweep_rows(_map_points([(base, n, cfg.h, cfg.steps) for n in sorted(set(cfg.n_list))], threads), "n")
    cols = ["n", "err_endpoint", "err_curve", "err_energy", "err_noether"]
    write_csv(out / "sweep_n.csv", cols, ([r[c] for c in cols] for r in rows))
    problem = make_problem(cfg)
    scale = _solution_scale(problem)
    ns = [r["n"] for r in rows]
    fits = {
        c: _fit(fit_geometric, ns, [r[c] for r in rows], cfg, scale)
        for c in ("err_endpoint", "err_curve", "err_energy", "err_noether")
    }
    failures = {str(r["n"]): r["failure"] for r in rows if r["failure"]}
    write_json(out / "sweep_n.json", _bundle(cfg, "sweep-n", fits=fits, failures=failures))
    return EXIT_STEP if failures else EXIT_OK


def cmd_sweep_h(cfg: RunConfig, out: Path, threads: int) -> int:
    if len(cfg.h_list) < 3:
        raise ConfigError("sweep-h needs at least 3 values in h_list")
    T = cfg.T if cfg.T is not None else cfg.h * cfg.steps
    points = []
    for h in sorted(set(cfg.h_list), reverse=True):
        steps = round(T / h)
        if steps < 1 or abs(steps * h - T) > 1e-9 * T:
            raise ConfigError(f"T = {T} is not a whole number of steps of h = {h}")
        points.append((asdict(cfg), cfg.n, float(h), int(steps)))
    rows = _sweep_rows(_map_points(points, threads), "h")[::-1]
    cols = ["h", "steps", "err_endpoint", "err_curve", "err_energy", "err_noether"]
    write_csv(out / "sweep_h.csv", cols, ([r[c] for c in cols] for r in rows))
    scale = _solution_scale(make_problem(cfg))
    hs = [r["h"] for r in rows]
    fits = {
        c: _fit(fit_order, hs, [r[c] for r in rows], cfg, scale)
        for c in ("err_endpoint", "err_curve", "err_energy", "err_noether")
    }
    failures = {_fmt(r["h"]): r["failure"] for r in rows if r["failure"]}
    write_json(out / "sweep_h.json", _bundle(cfg, "sweep-h", T=T, fits=fits, failures=failures))
    return EXIT_STEP if failures else EXIT_OK


def cmd_stability(cfg: RunConfig, out: Path) -> int:
    problem = make_problem(cfg)
    traj, failure = run_trajectory(cfg, problem)
    write_trajectory(out / "trajectory.csv", traj)
    write_series(out, cfg, problem, traj)
    summary = summarize(cfg, problem, traj)
    names = problem.params.get("names")
    if names and traj.steps > 1:
        write_orbits(out / "orbits.csv", traj, names, cfg.samples_per_step)
        dev = orbit_deviation(traj, problem.params["masses"], problem.params["G"], samples_per_step=cfg.samples_per_step)
        summary["orbit_deviation"] = dict(zip(names, dev.tolist()))
    write_json(out / "stability.json", _bundle(cfg, "stability", summary=summary, failure=failure))
    return EXIT_STEP if failure else EXIT_OK


def write_orbits(path: Path, traj: Trajectory, names, samples_per_step: int) -> None:
    idx, t, q, _ = traj.dense(samples_per_step)
    N = len(names)
    D = q.shape[1] // N
    axes = "xyz"[:D]
    header = ["t", "step"] + [f"{b}_{a}" for b in names for a in axes]
    write_csv(path, header, ([ti, k, *qi] for ti, k, qi in zip(t, idx, q)))


# ---- entry point -------------------------------------------------------------


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="specvi", description=__doc__.split("\n\n")[0])
    sub = parser.add_subparsers(dest="command", required=True)
    for name, helptext in (
        ("integrate", "run one trajectory"),
        ("sweep-n", "refine the basis size at fixed step"),
        ("sweep-h", "refine the step at fixed total time"),
        ("stability", "long run with invariant series and orbit dump"),
    ):
        p = sub.add_parser(name, help=helptext)
        p.add_argument("--config", required=True, type=Path, help="JSON run configuration")
        p.add_argument("--out", required=True, type=Path, help="output directory")
        p.add_argument("--threads", type=int, default=1, help="worker processes for sweeps")
        p.add_argument("--seed", type=int, default=None, help="recorded only; runs are deterministic")
        p.add_argument("-v", "--verbose", action="store_true")
    return parser


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING, format="%(levelname)s %(message)s")
    try:
        cfg = load_config(args.config, {"seed": args.seed})
        if args.threads < 1:
            raise ConfigError("--threads must be at least 1")
        args.out.mkdir(parents=True, exist_ok=True)
        if args.command == "integrate":
            return cmd_integrate(cfg, args.out)
        if args.command == "sweep-n":
            return cmd_sweep_n(cfg, args.out, args.threads)
        if args.command == "sweep-h":
            return cmd_sweep_h(cfg, args.out, args.threads)
        return cmd_stability(cfg, args.out)
    except ConfigError as exc:
        print(f"config error: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    except OSError as exc:
        print(f"I/O error: {exc}", file=sys.stderr)
        return EXIT_IO


if __name__ == "__main__":  # pragma: no cover
    sys.exit(main())
