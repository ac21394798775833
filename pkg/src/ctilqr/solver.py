"""Outer optimization loop: backward value sweep, line-searched rollout,
accept, repeat.

Each iteration runs one backward pass and one line search (which may try
several rollouts).  The model-predicted decrease for a full step drives
convergence: once half the improvement quadrature falls below a tolerance
scaled by the current cost, further iterations cannot buy anything above
integration noise.  Line-search exhaustion with a near-zero prediction is
classified the same way; exhaustion with a large prediction means the
quadratic model and the rollouts disagree, which is reported as a stall
rather than success.
"""

from __future__ import annotations

import time
from dataclasses import dataclass, field
from typing import Callable, Optional, Tuple

import numpy as np

from .errors import ConfigError, CtilqrError
from .ocp import ProblemDef
from .odeint import METHOD_STIFF, StepperConfig
from .riccati import BackwardSolution, run_backward_pass
from .rollout import OpenLoopPolicy, Trajectory, line_search, rollout

TERMINATION_CONVERGED = "converged"
TERMINATION_LINE_SEARCH = "line-search-exhausted"
TERMINATION_MAX_ITER = "max-iterations"
TERMINATION_ERROR = "error"

# Line-search exhaustion still counts as converged when the predicted
# decrease is within this factor of the convergence threshold.
STALL_FACTOR = 10.0


def _default_backward_config() -> StepperConfig:
    return StepperConfig(method=METHOD_STIFF)


def _default_forward_config() -> StepperConfig:
    return StepperConfig()


@dataclass(frozen=True)
class SolverParams:
    """Tuning knobs for solve(); the defaults are the reference setup."""

    eps: float = 2.0**-52
    beta: float = 1e-4  # acceptance slope on the predicted decrease
    rho: float = 0.5  # backtracking factor
    alpha_min: float = 2.0**-20
    max_iter: int = 200
    dv_tol: float = 1e-7  # scaled by max(1, |J|) where it is applied
    backward_config: StepperConfig = field(default_factory=_default_backward_config)
    forward_config: StepperConfig = field(default_factory=_default_forward_config)
    # Escape hatch for demonstrating that the curvature floor is
    # load-bearing; production callers leave it on.
    regularize: bool = True

    def __post_init__(self):
        if not 0.0 < self.rho < 1.0:
            raise ConfigError(f"rho must lie in (0, 1), got {self.rho}")
        if not 0.0 < self.alpha_min <= 1.0:
            raise ConfigError(f"alpha_min must lie in (0, 1], got {self.alpha_min}")
        if not self.beta > 0.0:
            raise ConfigError(f"beta must be positive, got {self.beta}")
        if not self.eps > 0.0:
            raise ConfigError(f"eps must be positive, got {self.eps}")
        if self.max_iter < 1:
            raise ConfigError(f"max_iter must be at least 1, got {self.max_iter}")
        if not self.dv_tol > 0.0:
            raise ConfigError(f"dv_tol must be positive, got {self.dv_tol}")


@dataclass(frozen=True)
class IterationRecord:
    """Per-iteration log line.

    alpha is 0.0 and n_fwd is 0 when the iteration accepted no step (the
    convergence check fired, or the line search was exhausted); J then
    repeats the standing nominal cost, so the J column is the cost after
    the iteration regardless of outcome.
    """

    iteration: int  # 1-based
    J: float
    alpha: float
    n_bwd: int
    n_fwd: int
    dv1_total: float
    wall_ms: float


@dataclass(frozen=True)
class Solution:
    """Converged (or terminated) result of solve().

    backward holds the last completed value sweep, so its gains define a
    time-varying feedback controller around the returned trajectory.
    records covers every completed iteration, terminal one included.
    """

    trajectory: Trajectory
    backward: BackwardSolution
    records: Tuple[IterationRecord, ...]
    termination: str

    @property
    def J(self) -> float:
        return self.trajectory.J

    @property
    def iterations(self) -> int:
        return len(self.records)


def initial_rollout(
    problem: ProblemDef,
    u_fn: Optional[Callable] = None,
    config: Optional[StepperConfig] = None,
) -> Trajectory:
    """Open-loop rollout of a time-only policy; the first nominal.

    A divergent initial policy is a fatal error (DivergenceError): the
    algorithm needs a finite nominal to expand around.
    """
    if u_fn is None:
        zero = np.zeros(problem.n_u)
        u_fn = lambda t: zero
    return rollout(problem, OpenLoopPolicy(u_fn), config)


def solve(
    problem: ProblemDef,
    u_init: Optional[Callable] = None,
    params: Optional[SolverParams] = None,
) -> Solution:
    """Iterate backward pass and line search until the model decrease dies.

    Returns a Solution whose termination field is one of "converged",
    "line-search-exhausted", "max-iterations", or "error".  An integration
    failure after at least one completed iteration yields "error" with the
    last good iterate; a failure on the very first backward pass is
    re-raised, tagged with the iteration index, since there is no iterate
    to return yet.
    """
    if params is None:
        params = SolverParams()
    nominal = initial_rollout(problem, u_init, params.forward_config)
    records = []
    backward: Optional[BackwardSolution] = None
    termination = TERMINATION_MAX_ITER

    for iteration in range(1, params.max_iter + 1):
        tic = time.perf_counter()
        try:
            current = run_backward_pass(
                problem,
                nominal,
                params.backward_config,
                eps=params.eps,
                regularize=params.regularize,
            )
        except CtilqrError as exc:
            if backward is None:
                raise type(exc)(f"iteration {iteration}: {exc}") from exc
            termination = TERMINATION_ERROR
            break
        backward = current

        def record(alpha, n_fwd):
            wall_ms = (time.perf_counter() - tic) * 1e3
            records.append(
                IterationRecord(
                    iteration=iteration,
                    J=nominal.J,
                    alpha=alpha,
                    n_bwd=current.step_count,
                    n_fwd=n_fwd,
                    dv1_total=current.dv1_total,
                    wall_ms=wall_ms,
                )
            )

        threshold = params.dv_tol * max(1.0, abs(nominal.J))
        if 0.5 * current.dv1_total < threshold:
            record(alpha=0.0, n_fwd=0)
            termination = TERMINATION_CONVERGED
            break

        result = line_search(problem, current, nominal, params, params.forward_config)
        if result.accepted:
            nominal = result.trajectory
            record(alpha=result.alpha, n_fwd=nominal.step_count)
            continue

        record(alpha=0.0, n_fwd=0)
        if current.dv1_total < STALL_FACTOR * threshold:
            termination = TERMINATION_CONVERGED
        else:
            termination = TERMINATION_LINE_SEARCH
        break

    return Solution(nominal, backward, tuple(records), termination)
