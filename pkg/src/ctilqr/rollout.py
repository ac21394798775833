"""Forward pass: closed-loop integration under an affine time-varying
policy with an accumulated-cost state, plus the backtracking line search.

A rollout's control signal is materialized as interpolation knots (every
accepted integrator step plus a uniform refinement grid), so the next
iteration reads the previous control through a local interpolant instead
of recursively re-evaluating the whole policy stack.  Accepted candidates
are re-integrated once under their own stored signal, keeping the state
the exact response to the control the next iteration will read.
"""

from __future__ import annotations

import math
from dataclasses import dataclass
from typing import Callable, Optional

import numpy as np

from .errors import DivergenceError, EvaluationError, IntegrationError
from .ocp import ProblemDef
from .odeint import ContinuousSolution, StepperConfig, integrate

# A state beyond this magnitude is treated as numerically escaped even if
# still finite; the rollout is then a failed candidate, not an error.
DIVERGENCE_LIMIT = 1e6

# Maximum spacing of control knots relative to the horizon length.
CONTROL_GRID_DENSITY = 256


@dataclass(frozen=True)
class PolicyEval:
    """Affine policy u(x, t) = ū(t) − α·d(t) − K(t)(x − x̄(t)).

    backward supplies (d, K, x̄, ū) per time via gain_data; nominal only
    fixes the time span the gains are defined on.  Evaluation clamps t to
    that span because adaptive stage abscissae can poke slightly past the
    horizon end.
    """

    alpha: float
    backward: object
    nominal: object

    def __post_init__(self):
        if not 0.0 <= self.alpha <= 1.0:
            raise ValueError(f"alpha must lie in [0, 1], got {self.alpha}")

    def control(self, t: float, x: np.ndarray) -> np.ndarray:
        lo, hi = self.nominal.t_start, self.nominal.t_end
        if lo > hi:
            lo, hi = hi, lo
        t = min(max(t, lo), hi)
        d, k, x_bar, u_bar = self.backward.gain_data(t)
        return u_bar - self.alpha * d - k @ (x - x_bar)


@dataclass(frozen=True)
class OpenLoopPolicy:
    """State-independent control t -> u(t); used for the initial rollout."""

    u_fn: Callable

    def control(self, t: float, x: np.ndarray) -> np.ndarray:
        return np.atleast_1d(np.asarray(self.u_fn(t), dtype=float))


class Trajectory:
    """A completed rollout: dense (x, c) solution, control knots, and J.

    The accumulated cost c runs from c(t0) = 0; the reported J adds the
    terminal cost on top of c(tf) so the integrated state itself stays
    jump-free.  Control between knots is piecewise-cubic Hermite with
    three-point slope estimates, which reproduces the stored knot values
    exactly.
    """

    def __init__(self, sol: ContinuousSolution, policy, problem: ProblemDef):
        self.sol = sol
        self.problem = problem
        self._n_x = problem.n_x
        x_end = sol.states[-1][: self._n_x]
        self.J = float(sol.states[-1][self._n_x]) + float(problem.final_cost(x_end))
        # Knot construction is deferred to first use: rejected line-search
        # candidates only ever report J, so materializing their control
        # signal would be wasted work.
        self._policy = policy
        self._knot_ts = None

    # -- time span -------------------------------------------------------

    @property
    def t_start(self) -> float:
        return self.sol.t_start

    @property
    def t_end(self) -> float:
        return self.sol.t_end

    @property
    def step_count(self) -> int:
        return self.sol.step_count

    @property
    def step_sizes(self) -> np.ndarray:
        return np.abs(np.diff(self.sol.mesh))

    # -- evaluation ------------------------------------------------------

    def state(self, t: float) -> np.ndarray:
        return self.sol.eval(t)[: self._n_x]

    def accumulated_cost(self, t: float) -> float:
        return float(self.sol.eval(t)[self._n_x])

    def control(self, t: float) -> np.ndarray:
        if self._knot_ts is None:
            self._build_control_knots(self._policy)
        ts = self._knot_ts
        t = min(max(t, ts[0]), ts[-1])
        i = int(np.searchsorted(ts, t, side="right")) - 1
        i = min(max(i, 0), len(ts) - 2)
        if t == ts[i]:
            return self._knot_us[i].copy()
        if t == ts[i + 1]:
            return self._knot_us[i + 1].copy()
        theta = (t - ts[i]) / (ts[i + 1] - ts[i])
        c = self._coeffs[i]
        out = c[3].copy()
        for j in (2, 1, 0):
            out *= theta
            out += c[j]
        return out

    # -- construction helpers ---------------------------------------------

    def _build_control_knots(self, policy):
        t0, tf = self.problem.t0, self.problem.tf
        grid = np.linspace(t0, tf, CONTROL_GRID_DENSITY + 1)
        ts = np.union1d(self.sol.mesh, grid)
        # Merge near-coincident knots; the slope formulas divide by gaps.
        min_gap = (tf - t0) * 1e-9
        kept = [float(ts[0])]
        for t in ts[1:]:
            if t - kept[-1] >= min_gap:
                kept.append(float(t))
        kept[-1] = tf  # endpoint stays exact even if its neighbor got merged
        ts = np.array(kept)
        us = np.array([policy.control(t, self.sol.eval(t)[: self._n_x]) for t in ts])

        slopes = _three_point_slopes(ts, us)
        h = (ts[1:] - ts[:-1])[:, None]
        delta = us[1:] - us[:-1]
        m0 = slopes[:-1]
        m1 = slopes[1:]
        self._knot_ts = ts
        self._knot_us = us
        # Per-segment cubic in theta = (t - ts[i]) / h[i], power basis.
        self._coeffs = np.stack(
            [
                us[:-1],
                h * m0,
                3.0 * delta - h * (2.0 * m0 + m1),
                -2.0 * delta + h * (m0 + m1),
            ],
            axis=1,
        )


def _three_point_slopes(ts, us):
    """Derivative estimates at every knot from local quadratic fits."""
    t_prev, t_mid, t_next = ts[:-2, None], ts[1:-1, None], ts[2:, None]
    u_prev, u_mid, u_next = us[:-2], us[1:-1], us[2:]

    def quad_slope(at):
        w_prev = (at - t_next) / ((t_prev - t_mid) * (t_prev - t_next))
        w_mid = (2.0 * at - t_prev - t_next) / ((t_mid - t_prev) * (t_mid - t_next))
        w_next = (at - t_prev) / ((t_next - t_prev) * (t_next - t_mid))
        return w_prev * u_prev + w_mid * u_mid + w_next * u_next

    slopes = np.empty_like(us)
    slopes[1:-1] = quad_slope(t_mid)

    # One-sided quadratic fits for the endpoints.
    def edge_slope(i0, i1, i2, at):
        ta, tb, tc = ts[i0], ts[i1], ts[i2]
        wa = (2.0 * at - tb - tc) / ((ta - tb) * (ta - tc))
        wb = (2.0 * at - ta - tc) / ((tb - ta) * (tb - tc))
        wc = (2.0 * at - ta - tb) / ((tc - ta) * (tc - tb))
        return wa * us[i0] + wb * us[i1] + wc * us[i2]

    slopes[0] = edge_slope(0, 1, 2, ts[0])
    slopes[-1] = edge_slope(-3, -2, -1, ts[-1])
    return slopes


def forward_rhs(t: float, xc: np.ndarray, policy, problem: ProblemDef) -> np.ndarray:
    """Closed-loop state and accumulated-cost derivative at time t."""
    x = xc[:-1]
    if not np.all(np.isfinite(x)) or float(np.max(np.abs(x))) > DIVERGENCE_LIMIT:
        raise DivergenceError(f"state escaped at t={t!r}")
    u = policy.control(t, x)
    f = np.asarray(problem.dynamics(x, u, t), dtype=float)
    l = float(problem.running_cost(x, u, t))
    if not (np.all(np.isfinite(f)) and math.isfinite(l)):
        raise DivergenceError(f"non-finite dynamics at t={t!r}")
    return np.concatenate((f, (l,)))


def rollout(
    problem: ProblemDef, policy, config: Optional[StepperConfig] = None
) -> Trajectory:
    """Integrate the closed-loop system over the horizon.

    Raises IntegrationError subclasses (including DivergenceError) or
    EvaluationError when the candidate cannot be completed; the line
    search treats those as rejected candidates.
    """
    if config is None:
        config = StepperConfig()
    xc0 = np.concatenate((problem.x0, (0.0,)))
    sol = integrate(
        lambda t, xc: forward_rhs(t, xc, policy, problem),
        xc0,
        (problem.t0, problem.tf),
        config,
    )
    return Trajectory(sol, policy, problem)


def _as_open_loop(
    problem: ProblemDef, candidate: Trajectory, config: Optional[StepperConfig]
) -> Trajectory:
    """Re-render a candidate as the exact response to its stored control.

    A closed-loop rollout defines the control signal, but its state was
    driven by the policy, not by the knot interpolant the next iteration
    will read.  Integrating the stored signal open loop once makes the
    pair self-consistent: an alpha = 0 re-rollout then reproduces the
    trajectory to integrator accuracy, and the next linearization sees no
    phantom forcing from the representation gap.  High-gain problems
    stall without this; the feedback amplifies the gap into a cost bias
    that small steps cannot beat.
    """
    signal = OpenLoopPolicy(candidate.control)
    rendered = rollout(problem, signal, config)
    # Same control signal by construction; share the knot table instead
    # of resampling the interpolant through itself.
    rendered._knot_ts = candidate._knot_ts
    rendered._knot_us = candidate._knot_us
    rendered._coeffs = candidate._coeffs
    return rendered


def expected_improvement(dv1_total: float, alpha: float) -> float:
    """Model-predicted cost change for a line-search step of size alpha.

    Nonpositive for dv1_total ≥ 0; zero exactly when the nominal is
    already stationary.
    """
    return -(alpha - 0.5 * alpha * alpha) * dv1_total


@dataclass(frozen=True)
class LineSearchResult:
    accepted: bool
    trajectory: Optional[Trajectory]
    alpha: float  # accepted step, or the last one tried on failure
    attempts: int  # rollouts attempted, the accepted one included
    predicted_decrease: float  # expected improvement at the accepted step


def line_search(
    problem: ProblemDef,
    backward,
    nominal: Trajectory,
    params,
    config: Optional[StepperConfig] = None,
) -> LineSearchResult:
    """Backtracking search over the step size starting from a full step.

    Accepts the first candidate whose cost drops strictly below the
    nominal's by at least beta times the predicted improvement; the
    accepted candidate is then re-rendered open loop under its own stored
    control and must clear the same test with its re-rendered cost, so
    every trajectory the search hands back is self-consistent.  Failed
    rollouts (divergence, integrator breakdown) count as rejections.
    Returns a failure result once the step underruns params.alpha_min;
    the caller decides whether that means convergence or a genuine stall.
    """
    alpha = 1.0
    attempts = 0
    while alpha >= params.alpha_min:
        attempts += 1
        policy = PolicyEval(alpha, backward, nominal)
        try:
            candidate = rollout(problem, policy, config)
        except (IntegrationError, EvaluationError):
            candidate = None
        if candidate is not None:
            predicted = expected_improvement(backward.dv1_total, alpha)
            if candidate.J - nominal.J < params.beta * predicted:
                try:
                    final = _as_open_loop(problem, candidate, config)
                except (IntegrationError, EvaluationError):
                    final = None
                if final is not None and final.J - nominal.J < params.beta * predicted:
                    return LineSearchResult(True, final, alpha, attempts, predicted)
        alpha *= params.rho
    return LineSearchResult(False, None, alpha / params.rho, attempts, 0.0)
