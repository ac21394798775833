"""Adaptive one-step ODE integration with embedded error estimation and
dense output.

Two methods are provided behind one driver:

* ``explicit-5(4)``: the Dormand-Prince 5(4) pair with its classical
  4th-order dense interpolant (coefficients from Hairer, Norsett & Wanner,
  "Solving Ordinary Differential Equations I").
* ``rosenbrock-stiff``: a 4-stage L-stable linearly-implicit Rosenbrock
  4(3) method (the ROS4 coefficient set from Hairer & Wanner vol. II) in
  the transformed formulation that replaces the stage matrix-vector
  products by cheap scalar combinations.  The Jacobian is a fresh forward
  finite difference every step, the embedded error estimate is filtered
  through the factored stage matrix so it decays on strongly damped modes
  (the same device as Shampine & Reichelt's low-order Rosenbrock code),
  and dense output is the cubic Hermite spline through the step endpoints
  and slopes.

Step control is a PI controller on the mixed-tolerance RMS error norm.
Reverse-time spans integrate with a signed step; the mesh is then strictly
decreasing and dense evaluation works unchanged.
"""

from __future__ import annotations

import math
from dataclasses import dataclass
from typing import Callable, Optional

import numpy as np

from .errors import (
    DomainError,
    EvaluationError,
    StepBudgetError,
    StepSizeError,
)
from .matops import _SMALL_N as _LIST_SOLVE_N
from .matops import _lu_solve_lists, lu_factor
from .errors import SingularMatrixError

METHOD_EXPLICIT = "explicit-5(4)"
METHOD_STIFF = "rosenbrock-stiff"

_SQRT_EPS = math.sqrt(np.finfo(float).eps)

# PI controller constants: h *= clip(0.9 err^(-0.7/p) err_prev^(0.4/p)).
_SAFETY = 0.9
_FACTOR_MIN = 0.2
_FACTOR_MAX = 5.0
_ERR_PREV_FLOOR = 1e-4


@dataclass(frozen=True)
class StepperConfig:
    """Integrator settings.

    Setting dt_min == dt_max selects fixed-step mode: every step uses that
    size and the error estimate is ignored (used by the order tests).
    """

    reltol: float = 1e-6
    abstol: float = 1e-8
    method: str = METHOD_EXPLICIT
    dt_initial: Optional[float] = None
    dt_min: float = 1e-13
    dt_max: float = math.inf
    max_steps: int = 100_000

    def __post_init__(self):
        if self.reltol <= 0.0 or self.abstol <= 0.0:
            raise ValueError("tolerances must be positive")
        if not 0.0 < self.dt_min <= self.dt_max:
            raise ValueError("need 0 < dt_min <= dt_max")
        if self.method not in (METHOD_EXPLICIT, METHOD_STIFF):
            raise ValueError(f"unknown method {self.method!r}")
        if self.max_steps < 1:
            raise ValueError("max_steps must be positive")


class ContinuousSolution:
    """Integrator output: mesh states plus per-step dense coefficients.

    The interpolant for step i is a polynomial in theta = (t - mesh[i]) /
    (mesh[i+1] - mesh[i]) with vector coefficients coeffs[i][j] for theta^j,
    so evaluation at interior points never re-invokes the right-hand side.
    """

    def __init__(self, mesh, states, coeffs, rhs_evals, rejected_steps):
        self.mesh = np.asarray(mesh)
        self.states = np.asarray(states)
        self.coeffs = coeffs
        self.rhs_evals = rhs_evals
        self.rejected_steps = rejected_steps
        self._increasing = bool(self.mesh[-1] >= self.mesh[0])
        lo, hi = sorted((float(self.mesh[0]), float(self.mesh[-1])))
        self._lo = lo
        self._hi = hi
        self._slop = 16.0 * np.finfo(float).eps * max(1.0, abs(lo), abs(hi))

    @property
    def step_count(self) -> int:
        return len(self.mesh) - 1

    @property
    def t_start(self) -> float:
        return float(self.mesh[0])

    @property
    def t_end(self) -> float:
        return float(self.mesh[-1])

    def eval(self, t: float) -> np.ndarray:
        if t < self._lo - self._slop or t > self._hi + self._slop:
            raise DomainError(
                f"t={t!r} outside the solution span [{self._lo}, {self._hi}]"
            )
        t = min(max(t, self._lo), self._hi)
        mesh = self.mesh
        if self._increasing:
            i = int(np.searchsorted(mesh, t, side="right")) - 1
        else:
            i = int(np.searchsorted(-mesh, -t, side="right")) - 1
        i = min(max(i, 0), len(mesh) - 2)
        # Mesh points return the stored states bit-for-bit.
        if t == mesh[i]:
            return self.states[i].copy()
        if t == mesh[i + 1]:
            return self.states[i + 1].copy()
        theta = (t - mesh[i]) / (mesh[i + 1] - mesh[i])
        c = self.coeffs[i]
        out = c[-1].copy()
        for j in range(len(c) - 2, -1, -1):
            out *= theta
            out += c[j]
        return out


def dense_eval(sol: ContinuousSolution, t: float) -> np.ndarray:
    """Evaluate a solution anywhere inside its closed span."""
    return sol.eval(t)


# -- Dormand-Prince 5(4) ------------------------------------------------

_DP_C = (0.0, 1.0 / 5.0, 3.0 / 10.0, 4.0 / 5.0, 8.0 / 9.0, 1.0, 1.0)
_DP_A = (
    np.array([]),
    np.array([1.0 / 5.0]),
    np.array([3.0 / 40.0, 9.0 / 40.0]),
    np.array([44.0 / 45.0, -56.0 / 15.0, 32.0 / 9.0]),
    np.array([19372.0 / 6561.0, -25360.0 / 2187.0, 64448.0 / 6561.0, -212.0 / 729.0]),
    np.array(
        [
            9017.0 / 3168.0,
            -355.0 / 33.0,
            46732.0 / 5247.0,
            49.0 / 176.0,
            -5103.0 / 18656.0,
        ]
    ),
    # Row 7 equals the 5th-order weights b, so stage 7 is evaluated at the
    # accepted point (FSAL).
    np.array(
        [35.0 / 384.0, 0.0, 500.0 / 1113.0, 125.0 / 192.0, -2187.0 / 6784.0, 11.0 / 84.0]
    ),
)
_DP_E = np.array(
    [
        71.0 / 57600.0,
        0.0,
        -71.0 / 16695.0,
        71.0 / 1920.0,
        -17253.0 / 339200.0,
        22.0 / 525.0,
        -1.0 / 40.0,
    ]
)
# Dense-output weights for the quartic interpolant.
_DP_D = np.array(
    [
        -12715105075.0 / 11282082432.0,
        0.0,
        87487479700.0 / 32700410799.0,
        -10690763975.0 / 1880347072.0,
        701980252875.0 / 199316789632.0,
        -1453857185.0 / 822651844.0,
        69997945.0 / 29380423.0,
    ]
)


def _dopri_step(f, t, y, h, f0, atol, rtol):
    n = y.size
    k = np.empty((7, n))
    k[0] = f0
    for i in range(1, 7):
        yi = y + h * (_DP_A[i] @ k[:i])
        k[i] = f(t + _DP_C[i] * h, yi)
    y_new = yi  # stage 7 argument is the 5th-order solution
    err = h * (_DP_E @ k)
    err_norm = _error_norm(err, y, y_new, atol, rtol)

    ydiff = y_new - y
    bspl = h * k[0] - ydiff
    c4 = ydiff - h * k[6] - bspl
    c5 = h * (_DP_D @ k)
    coeffs = np.stack(
        [y, ydiff + bspl, -bspl + c4 + c5, -c4 - 2.0 * c5, c5]
    )
    return y_new, err_norm, coeffs, k[6]


# -- ROS4 (L-stable Rosenbrock 4(3)) -------------------------------------

_ROS_GAMMA = 0.5728200
_ROS_A = (
    np.array([]),
    np.array([2.0]),
    np.array([1.867943637803922, 0.2344449711399156]),
    np.array([1.867943637803922, 0.2344449711399156, 0.0]),
)
_ROS_C = (
    np.array([]),
    np.array([-7.137615036412310]),
    np.array([2.580708087951457, 0.6515950076447975]),
    np.array([-2.137148994382534, -0.3214669691237626, -0.6949742501781779]),
)
_ROS_M = np.array(
    [2.255570073418735, 0.2870493262186792, 0.4353179431840180, 1.093502252409163]
)
_ROS_E = np.array(
    [-0.2815431932141155, -0.07276199124938920, -0.1082196201495311, -1.093502252409163]
)
_ROS_ALPHA = (0.0, 1.14564, 0.65521686381559, 0.65521686381559)
_ROS_GAMMA_I = (0.5728200, -1.769193891319233, 0.7592633437920482, -0.1049021087100450)
# Stage 4 shares stage 3's argument (same alpha, same A row, A43 = 0), so
# it needs no new function evaluation.
_ROS_NEW_F = (True, True, True, False)


def _fd_jacobian(f, t, y, f0):
    n = y.size
    jac = np.empty((n, n))
    for j in range(n):
        d = _SQRT_EPS * max(abs(y[j]), 1e-5)
        yp = y.copy()
        yp[j] += d
        jac[:, j] = (f(t, yp) - f0) / d
    return jac


def _fd_time_derivative(f, t, y, f0, direction, t_goal):
    d = _SQRT_EPS * max(abs(t), 1.0)
    d = min(d, abs(t_goal - t))
    if d == 0.0:
        return np.zeros_like(f0)
    dd = direction * d
    return (f(t + dd, y) - f0) / dd


def _ros4_step(f, t, y, h, f0, jac, ft, atol, rtol):
    n = y.size
    g = np.eye(n) / (h * _ROS_GAMMA) - jac
    if n <= _LIST_SOLVE_N:
        try:
            lu, piv = lu_factor(g)
        except SingularMatrixError:
            # 1/(h gamma) collided with an eigenvalue of the Jacobian;
            # reject and let the controller shrink the step.
            return y, math.inf, None, None
        # One factorization serves five substitutions; hand the row lists
        # over once instead of re-wrapping per solve.
        lu_rows = lu.tolist()

        def solve(rhs):
            return _lu_solve_lists(lu_rows, piv, rhs)
    else:
        # Above the list-arithmetic regime LAPACK wins outright.  The five
        # substitutions share one factorization by inverting once; the
        # stage system is as well-conditioned as the step is stable, and
        # any inaccuracy lands in the error estimate, not the solution.
        try:
            g_inv = np.linalg.inv(g)
        except np.linalg.LinAlgError:
            return y, math.inf, None, None

        def solve(rhs):
            return g_inv @ rhs

    u = np.empty((4, n))
    fcur = f0
    for i in range(4):
        if i > 0 and _ROS_NEW_F[i]:
            yi = y + _ROS_A[i] @ u[:i]
            fcur = f(t + _ROS_ALPHA[i] * h, yi)
        rhs = fcur + (h * _ROS_GAMMA_I[i]) * ft
        if i > 0:
            rhs = rhs + (_ROS_C[i] / h) @ u[:i]
        u[i] = solve(rhs)
    err = solve(_ROS_E @ u)
    y_new = y + _ROS_M @ u
    # The raw embedded difference does not vanish for h*lambda -> -inf, so
    # on a slow manifold it keeps reporting the standing tolerance-level
    # deviation and blocks step growth.  Filtering through (I - h*gamma*J)
    # damps the stiff components like 1/|h lambda| while multiplying the
    # smooth ones by 1 + O(h); one extra substitution on the stage matrix.
    err = np.asarray(err) / (h * _ROS_GAMMA)
    err_norm = _error_norm(err, y, y_new, atol, rtol)
    return y_new, err_norm, u, None


def _hermite_coeffs(y, y_new, h, f0, f_end):
    delta = y_new - y
    return np.stack(
        [
            y,
            h * f0,
            3.0 * delta - h * (2.0 * f0 + f_end),
            -2.0 * delta + h * (f0 + f_end),
        ]
    )


# -- driver ---------------------------------------------------------------


def _error_norm(err, y_old, y_new, atol, rtol):
    sc = atol + rtol * np.maximum(np.abs(y_old), np.abs(y_new))
    q = err / sc
    return math.sqrt(float(q @ q) / q.size)


def _initial_step(f, t_a, y0, f0, direction, span_len, order, atol, rtol):
    """Classical automatic starting-step heuristic from rhs magnitudes."""
    sc = atol + rtol * np.abs(y0)
    d0 = math.sqrt(float(np.mean((y0 / sc) ** 2)))
    d1 = math.sqrt(float(np.mean((f0 / sc) ** 2)))
    h0 = 1e-6 if (d0 < 1e-5 or d1 < 1e-5) else 0.01 * d0 / d1
    h0 = min(h0, span_len)
    y1 = y0 + h0 * direction * f0
    f1 = f(t_a + h0 * direction, y1)
    d2 = math.sqrt(float(np.mean(((f1 - f0) / sc) ** 2))) / h0
    if max(d1, d2) <= 1e-15:
        h1 = max(1e-6, h0 * 1e-3)
    else:
        h1 = (0.01 / max(d1, d2)) ** (1.0 / order)
    return min(100.0 * h0, h1, span_len)


def integrate(
    rhs: Callable,
    y0,
    span: tuple[float, float],
    config: StepperConfig,
    jacobian: Optional[Callable] = None,
) -> ContinuousSolution:
    """Integrate ẏ = rhs(t, y) across span = (t_a, t_b), t_a != t_b.

    The span may run backward (t_b < t_a); steps are then negative and the
    returned mesh is strictly decreasing.  Each accepted step satisfies
    ‖err‖ <= 1 in the RMS norm scaled by abstol + reltol·max(|y|, |y_prev|)
    componentwise (except in fixed-step mode, which accepts every step).

    jacobian, if given, is called as jacobian(t, y, f) with f = rhs(t, y)
    and must return ∂rhs/∂y there; the stiff method then uses it instead of
    forming the matrix by finite differences.  The explicit method never
    needs one and ignores it.

    Raises:
        StepBudgetError: more than config.max_steps accepted steps needed.
        StepSizeError: the step collapsed below dt_min with the error
            estimate still failing.
        EvaluationError: rhs returned a non-finite value.
    """
    t_a, t_b = float(span[0]), float(span[1])
    if t_a == t_b:
        raise ValueError("span must have nonzero width")
    direction = 1.0 if t_b > t_a else -1.0
    span_len = abs(t_b - t_a)

    y = np.array(y0, dtype=float)
    if y.ndim != 1:
        raise ValueError("y0 must be one-dimensional")

    evals = [0]

    def f(t, yv):
        evals[0] += 1
        out = np.asarray(rhs(t, yv), dtype=float)
        if not np.all(np.isfinite(out)):
            raise EvaluationError(f"non-finite right-hand side at t={t!r}")
        return out

    stiff = config.method == METHOD_STIFF
    order = 4 if stiff else 5  # lower order + 1, the PI exponent base
    atol, rtol = config.abstol, config.reltol

    fixed_mode = config.dt_min == config.dt_max
    dt_max = min(config.dt_max, span_len)
    dt_min = min(config.dt_min, span_len)

    f0 = f(t_a, y)
    if fixed_mode:
        habs = dt_min
    elif config.dt_initial is not None:
        habs = min(max(abs(config.dt_initial), dt_min), dt_max)
    else:
        habs = _initial_step(f, t_a, y, f0, direction, span_len, order, atol, rtol)
        habs = min(max(habs, dt_min), dt_max)

    t = t_a
    mesh = [t_a]
    states = [y.copy()]
    coeffs = []
    err_prev = _ERR_PREV_FLOOR
    rejected_last = False
    rejected_total = 0
    naccept = 0
    jac = None
    ft = None

    while True:
        remaining = t_b - t
        if direction * remaining <= 0.0:
            break
        if naccept >= config.max_steps:
            raise StepBudgetError(
                f"needed more than {config.max_steps} steps at t={t!r}"
            )

        landing = abs(remaining) <= habs
        h = remaining if landing else direction * habs
        if t + h == t:
            raise StepSizeError(f"step size underflow at t={t!r}")

        if stiff:
            if jac is None:
                if jacobian is None:
                    jac = _fd_jacobian(f, t, y, f0)
                else:
                    jac = np.asarray(jacobian(t, y, f0), dtype=float)
                ft = _fd_time_derivative(f, t, y, f0, direction, t_b)
            y_new, err_norm, stage_u, _ = _ros4_step(f, t, y, h, f0, jac, ft, atol, rtol)
        else:
            y_new, err_norm, dense, f_end = _dopri_step(f, t, y, h, f0, atol, rtol)

        accept = fixed_mode or err_norm <= 1.0
        if accept:
            if stiff:
                f_end = f(t + h, y_new)
                dense = _hermite_coeffs(y, y_new, h, f0, f_end)
            t = t_b if landing else t + h
            mesh.append(t)
            states.append(y_new.copy())
            coeffs.append(dense)
            y = y_new
            f0 = f_end
            jac = None
            naccept += 1
            if landing:
                break
            if not fixed_mode:
                factor = _pi_factor(err_norm, err_prev, order)
                if rejected_last:
                    factor = min(factor, 1.0)
                habs = min(max(habs * factor, dt_min), dt_max)
                err_prev = max(err_norm, _ERR_PREV_FLOOR)
            rejected_last = False
        else:
            rejected_last = True
            rejected_total += 1
            factor = _pi_factor(err_norm, err_prev, order)
            factor = min(factor, _SAFETY)
            new_habs = habs * factor
            if new_habs < dt_min:
                raise StepSizeError(
                    f"error estimate {err_norm:.3g} still failing at the "
                    f"minimum step size near t={t!r}"
                )
            habs = new_habs

    return ContinuousSolution(mesh, states, coeffs, evals[0], rejected_total)


def _pi_factor(err_norm, err_prev, order):
    if not math.isfinite(err_norm):
        return _FACTOR_MIN
    if err_norm <= 1e-10:
        return _FACTOR_MAX
    factor = (
        _SAFETY * err_norm ** (-0.7 / order) * err_prev ** (0.4 / order)
    )
    return min(max(factor, _FACTOR_MIN), _FACTOR_MAX)
