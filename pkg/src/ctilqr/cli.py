"""Batch command-line front end.

Loads a flat JSON configuration (dotted override keys, strictly
validated), runs the solver on one of the built-in models, and writes
plot-ready CSV logs plus a machine-readable summary.  No interactive
mode; one run per process.

Exit codes: 0 converged / all checks passed, 2 solver stopped without
converging, 1 configuration or runtime failure.
"""

from __future__ import annotations

import argparse
import json
import os
import sys
from dataclasses import dataclass, field, replace
from typing import Optional

import numpy as np

from . import models
from .errors import ConfigError, CtilqrError
from .ocp import ProblemDef, check_derivatives
from .odeint import METHOD_STIFF, StepperConfig
from .solver import SolverParams, Solution, TERMINATION_CONVERGED, solve

MODEL_NAMES = ("cartpole-convex", "cartpole-nonconvex", "lq-double-integrator")
CARTPOLE_MODELS = ("cartpole-convex", "cartpole-nonconvex")

ITERATIONS_HEADER = "iter,J,alpha,n_bwd,n_fwd,dv1,wall_ms"
TRAJECTORY_HEADER = "t,s,theta,sdot,thetadot,u,c"

DERIV_CHECK_POINTS = 50
DERIV_CHECK_TOL = 1e-5
DEFAULT_SEED = 42


@dataclass(frozen=True)
class RunConfig:
    """Resolved configuration; dicts hold only the overridden entries."""

    model: str = "cartpole-convex"
    out: str = "ctilqr-out"
    samples: int = 401
    cartpole: dict = field(default_factory=dict)
    horizon: dict = field(default_factory=dict)
    x0: Optional[tuple] = None
    solver: dict = field(default_factory=dict)
    backward_reltol: float = 1e-6
    backward_abstol: float = 1e-8
    forward_reltol: float = 1e-6
    forward_abstol: float = 1e-8


def _expect_number(key: str, value) -> float:
    if isinstance(value, bool) or not isinstance(value, (int, float)):
        raise ConfigError(f"key '{key}' expects a number, got {type(value).__name__}")
    return float(value)


def _expect_int(key: str, value) -> int:
    if isinstance(value, bool) or not isinstance(value, int):
        raise ConfigError(f"key '{key}' expects an integer, got {type(value).__name__}")
    return value


def _expect_bool(key: str, value) -> bool:
    if not isinstance(value, bool):
        raise ConfigError(f"key '{key}' expects true or false, got {type(value).__name__}")
    return value


def _expect_str(key: str, value) -> str:
    if not isinstance(value, str):
        raise ConfigError(f"key '{key}' expects a string, got {type(value).__name__}")
    return value


def _expect_number_list(key: str, value) -> tuple:
    if not isinstance(value, list) or not value:
        raise ConfigError(f"key '{key}' expects a non-empty list of numbers")
    return tuple(_expect_number(f"{key}[{i}]", v) for i, v in enumerate(value))


_CARTPOLE_KEYS = ("m_cart", "m_tip", "l", "g")
_SOLVER_FLOAT_KEYS = ("eps", "beta", "rho", "alpha_min", "dv_tol")


def parse_config(doc: dict) -> RunConfig:
    """Validate a flat JSON document of dotted keys into a RunConfig.

    Every key must be known, type-correct, and applicable to the chosen
    model; anything else raises ConfigError naming the offending key.
    """
    if not isinstance(doc, dict):
        raise ConfigError("top-level JSON value must be an object")

    model = "cartpole-convex"
    if "model" in doc:
        model = _expect_str("model", doc["model"])
        if model not in MODEL_NAMES:
            raise ConfigError(
                f"key 'model' must be one of {', '.join(MODEL_NAMES)}; got '{model}'"
            )

    cfg = {"model": model, "cartpole": {}, "horizon": {}, "solver": {}}
    for key, value in doc.items():
        if key == "model":
            continue
        elif key == "out":
            cfg["out"] = _expect_str(key, value)
        elif key == "samples":
            n = _expect_int(key, value)
            if n < 2:
                raise ConfigError(f"key 'samples' must be at least 2, got {n}")
            cfg["samples"] = n
        elif key.startswith("cartpole."):
            if model not in CARTPOLE_MODELS:
                raise ConfigError(f"key '{key}' does not apply to model '{model}'")
            sub = key[len("cartpole.") :]
            if sub not in _CARTPOLE_KEYS:
                raise ConfigError(f"unknown config key '{key}'")
            cfg["cartpole"][sub] = _expect_number(key, value)
        elif key in ("horizon.t0", "horizon.tf"):
            if model not in CARTPOLE_MODELS:
                raise ConfigError(f"key '{key}' does not apply to model '{model}'")
            cfg["horizon"][key.split(".")[1]] = _expect_number(key, value)
        elif key == "x0":
            if model not in CARTPOLE_MODELS:
                raise ConfigError(f"key '{key}' does not apply to model '{model}'")
            cfg["x0"] = _expect_number_list(key, value)
        elif key.startswith("solver."):
            sub = key[len("solver.") :]
            if sub in _SOLVER_FLOAT_KEYS:
                cfg["solver"][sub] = _expect_number(key, value)
            elif sub == "max_iter":
                cfg["solver"][sub] = _expect_int(key, value)
            elif sub == "regularize":
                cfg["solver"][sub] = _expect_bool(key, value)
            else:
                raise ConfigError(f"unknown config key '{key}'")
        elif key in (
            "backward.reltol",
            "backward.abstol",
            "forward.reltol",
            "forward.abstol",
        ):
            cfg[key.replace(".", "_")] = _expect_number(key, value)
        else:
            raise ConfigError(f"unknown config key '{key}'")
    return RunConfig(**cfg)


def build_problem(cfg: RunConfig) -> tuple[ProblemDef, dict]:
    """Instantiate the configured model; returns (problem, echo entries)."""
    if cfg.model == "lq-double-integrator":
        return models.lq_double_integrator(), {}

    horizon = (cfg.horizon.get("t0", 0.0), cfg.horizon.get("tf", 2.0))
    builder = (
        models.convex_problem
        if cfg.model == "cartpole-convex"
        else models.nonconvex_problem
    )
    try:
        params = models.CartpoleParams(**cfg.cartpole)
        kwargs = {"params": params, "horizon": horizon}
        if cfg.x0 is not None:
            kwargs["x0"] = cfg.x0
        problem = builder(**kwargs)
    except (ValueError, CtilqrError) as exc:
        raise ConfigError(str(exc)) from exc
    echo = {
        "cartpole.m_cart": params.m_cart,
        "cartpole.m_tip": params.m_tip,
        "cartpole.l": params.l,
        "cartpole.g": params.g,
    }
    return problem, echo


def build_params(cfg: RunConfig) -> SolverParams:
    return SolverParams(
        backward_config=StepperConfig(
            reltol=cfg.backward_reltol,
            abstol=cfg.backward_abstol,
            method=METHOD_STIFF,
        ),
        forward_config=StepperConfig(
            reltol=cfg.forward_reltol, abstol=cfg.forward_abstol
        ),
        **cfg.solver,
    )


def _fmt(value: float) -> str:
    return f"{value:.17g}"


def _write_iterations_csv(path: str, solution: Solution) -> None:
    lines = [ITERATIONS_HEADER]
    for r in solution.records:
        lines.append(
            f"{r.iteration},{_fmt(r.J)},{_fmt(r.alpha)},{r.n_bwd},{r.n_fwd},"
            f"{_fmt(r.dv1_total)},{_fmt(r.wall_ms)}"
        )
    with open(path, "w", newline="\n") as fh:
        fh.write("\n".join(lines) + "\n")


def _write_trajectory_csv(
    path: str, solution: Solution, problem: ProblemDef, cfg: RunConfig
) -> None:
    traj = solution.trajectory
    lines = [TRAJECTORY_HEADER]
    for t in np.linspace(problem.t0, problem.tf, cfg.samples):
        t = float(t)
        x = traj.state(t)
        u = float(traj.control(t)[0])
        c = traj.accumulated_cost(t)
        if cfg.model in CARTPOLE_MODELS:
            s, theta, sdot, thetadot = (float(v) for v in x)
        else:
            # Planar double integrator: position and velocity only.
            s, sdot = float(x[0]), float(x[1])
            theta = thetadot = 0.0
        cells = (t, s, theta, sdot, thetadot, u, c)
        lines.append(",".join(_fmt(v) for v in cells))
    with open(path, "w", newline="\n") as fh:
        fh.write("\n".join(lines) + "\n")


def _write_summary_json(
    path: str,
    solution: Solution,
    problem: ProblemDef,
    params: SolverParams,
    cfg: RunConfig,
    model_echo: dict,
) -> None:
    bwd_sizes = np.abs(np.diff(solution.backward.value.mesh))
    fwd_sizes = solution.trajectory.step_sizes
    echo = {
        "model": cfg.model,
        "out": cfg.out,
        "samples": cfg.samples,
        "horizon.t0": problem.t0,
        "horizon.tf": problem.tf,
        "x0": list(problem.x0),
        "solver.eps": params.eps,
        "solver.beta": params.beta,
        "solver.rho": params.rho,
        "solver.alpha_min": params.alpha_min,
        "solver.max_iter": params.max_iter,
        "solver.dv_tol": params.dv_tol,
        "solver.regularize": params.regularize,
        "backward.reltol": params.backward_config.reltol,
        "backward.abstol": params.backward_config.abstol,
        "forward.reltol": params.forward_config.reltol,
        "forward.abstol": params.forward_config.abstol,
    }
    echo.update(model_echo)
    summary = {
        "final_J": solution.J,
        "iterations": solution.iterations,
        "termination": solution.termination,
        "backward_step_min": float(bwd_sizes.min()),
        "backward_step_max": float(bwd_sizes.max()),
        "forward_step_min": float(fwd_sizes.min()),
        "forward_step_max": float(fwd_sizes.max()),
        "params": echo,
    }
    with open(path, "w", newline="\n") as fh:
        json.dump(summary, fh, indent=2, sort_keys=True)
        fh.write("\n")


def cmd_run(cfg: RunConfig) -> int:
    problem, model_echo = build_problem(cfg)
    params = build_params(cfg)
    solution = solve(problem, None, params)

    os.makedirs(cfg.out, exist_ok=True)
    _write_iterations_csv(os.path.join(cfg.out, "iterations.csv"), solution)
    _write_trajectory_csv(
        os.path.join(cfg.out, "trajectory.csv"), solution, problem, cfg
    )
    _write_summary_json(
        os.path.join(cfg.out, "summary.json"), solution, problem, params, cfg, model_echo
    )
    print(
        f"{solution.termination}: J={solution.J:.6f} after "
        f"{solution.iterations} iteration(s); wrote {cfg.out}/"
    )
    if solution.termination == TERMINATION_CONVERGED:
        return 0
    if solution.termination in ("line-search-exhausted", "max-iterations"):
        return 2
    return 1


def _check_seed() -> int:
    raw = os.environ.get("CTILQR_SEED")
    if raw is None:
        return DEFAULT_SEED
    try:
        return int(raw)
    except ValueError:
        raise ConfigError(f"CTILQR_SEED must be an integer, got '{raw}'") from None


def cmd_check_derivs(cfg: RunConfig) -> int:
    problem, _ = build_problem(cfg)
    rng = np.random.default_rng(_check_seed())
    samples = [
        (
            rng.normal(size=problem.n_x),
            rng.normal(size=problem.n_u),
            float(rng.uniform(problem.t0, problem.tf)),
        )
        for _ in range(DERIV_CHECK_POINTS)
    ]
    report = check_derivatives(problem, samples, tol=DERIV_CHECK_TOL)
    print(report.format_table())
    return 0 if report.all_passed else 1


def load_config(args: argparse.Namespace) -> RunConfig:
    if args.config and args.model:
        raise ConfigError("pass either a config file or --model, not both")
    if args.config:
        try:
            with open(args.config) as fh:
                text = fh.read()
        except OSError as exc:
            raise ConfigError(f"cannot read '{args.config}': {exc}") from exc
        try:
            doc = json.loads(text)
        except json.JSONDecodeError as exc:
            raise ConfigError(
                f"{args.config}:{exc.lineno}:{exc.colno}: {exc.msg}"
            ) from exc
        cfg = parse_config(doc)
    elif args.model:
        cfg = RunConfig(model=args.model)
    else:
        raise ConfigError("a config file or --model is required")
    if args.out:
        cfg = replace(cfg, out=args.out)
    return cfg


def main(argv=None) -> int:
    parser = argparse.ArgumentParser(
        prog="ctilqr",
        description="Trajectory optimization runner for the built-in models.",
    )
    sub = parser.add_subparsers(dest="command", required=True)
    for name, help_text in (
        ("run", "solve the configured problem and write CSV/JSON outputs"),
        ("check-derivs", "compare analytic derivatives against finite differences"),
    ):
        p = sub.add_parser(name, help=help_text)
        p.add_argument("config", nargs="?", help="flat JSON config file")
        p.add_argument("--model", choices=MODEL_NAMES, help="run a model with defaults")
        p.add_argument("--out", help="output directory (overrides the config)")
    args = parser.parse_args(argv)

    try:
        cfg = load_config(args)
        if args.command == "run":
            return cmd_run(cfg)
        return cmd_check_derivs(cfg)
    except ConfigError as exc:
        print(f"config error: {exc}", file=sys.stderr)
        return 1
    except CtilqrError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 1
    except OSError as exc:
        print(f"io error: {exc}", file=sys.stderr)
        return 1


if __name__ == "__main__":
    sys.exit(main())
