"""Backward pass: quadratic value-model coefficients along a nominal
trajectory, curvature regularization, time-varying gains, and the
square-root Riccati sweep integrated from the final time back to the start.

The value model around the nominal is V(x, t) ≈ sigma(t) + s(t)·dx +
½ dxᵀ S(t) dx with dx = x − x̄(t).  S is never integrated directly;
instead its factor p with S = p pᵀ is, which keeps S symmetric by
construction and positive definite as long as p stays nonsingular.  A
breakdown of the factor is therefore a meaningful event (the model lost
convexity faster than regularization could compensate) and raises rather
than being patched over.
"""

from __future__ import annotations

import math
from collections import namedtuple
from dataclasses import dataclass

import numpy as np

from .errors import (
    RegularizationViolatedError,
    SingularMatrixError,
    SqrtBreakdownError,
)
from .matops import regularize_floor, solve_linear, sqrt_factor_floor
from .ocp import ProblemDef
from .odeint import METHOD_STIFF, ContinuousSolution, StepperConfig, integrate

DEFAULT_EPS = 2.0**-52


@dataclass(frozen=True)
class QTerms:
    """Local quadratic model of the stage decision at one time.

    q is the model value, q_x/q_u its gradients, q_xx/q_ux/q_uu its
    curvature blocks (standard iLQR naming).  After regularization q_uu is
    positive definite with minimum eigenvalue at least the floor used.
    """

    q: float
    q_x: np.ndarray
    q_u: np.ndarray
    q_xx: np.ndarray
    q_ux: np.ndarray
    q_uu: np.ndarray


@dataclass(frozen=True)
class ValueState:
    """State of the backward sweep at one time.

    sigma: value offset at the nominal state.
    s: value gradient.
    p: square-root factor of the value Hessian, S = p pᵀ.
    dv1: running quadrature of the predicted-improvement integrand,
        oriented to be nonnegative at the start of the horizon.
    """

    sigma: float
    s: np.ndarray
    p: np.ndarray
    dv1: float

    def to_vector(self) -> np.ndarray:
        return np.concatenate(([self.sigma], self.s, self.p.ravel(), [self.dv1]))

    @staticmethod
    def from_vector(v: np.ndarray, n_x: int) -> "ValueState":
        sigma, s, p, dv1 = _unpack(np.asarray(v, dtype=float), n_x)
        return ValueState(sigma, s.copy(), p.copy(), dv1)


def _unpack(v, n):
    return float(v[0]), v[1 : 1 + n], v[1 + n : 1 + n + n * n].reshape(n, n), float(v[-1])


_ModelData = namedtuple("_ModelData", "l l_x l_u l_xx l_ux l_uu f f_x f_u")


def _model_data(problem: ProblemDef, t, x, u, eps, regularize):
    """Cost and dynamics derivatives at one nominal point.

    The joint cost Hessian over (x, u) is eigenvalue-floored at sqrt(eps)
    as one block, so cross terms are regularized consistently with the
    diagonal blocks.  Everything returned depends only on t (through the
    nominal), never on the sweep state, which makes it safe to memoize
    across the integrator's repeated evaluations at one abscissa.
    """
    n_x, n_u = problem.n_x, problem.n_u
    l = float(problem.running_cost(x, u, t))
    l_x = problem.eval_l_x(x, u, t)
    l_u = problem.eval_l_u(x, u, t)
    joint = np.empty((n_x + n_u, n_x + n_u))
    joint[:n_x, :n_x] = problem.eval_l_xx(x, u, t)
    lux = problem.eval_l_ux(x, u, t)
    joint[n_x:, :n_x] = lux
    joint[:n_x, n_x:] = lux.T
    joint[n_x:, n_x:] = problem.eval_l_uu(x, u, t)
    if regularize:
        joint = regularize_floor(joint, math.sqrt(eps))
    return _ModelData(
        l=l,
        l_x=l_x,
        l_u=l_u,
        l_xx=joint[:n_x, :n_x],
        l_ux=joint[n_x:, :n_x],
        l_uu=joint[n_x:, n_x:],
        f=np.asarray(problem.dynamics(x, u, t), dtype=float),
        f_x=problem.eval_f_x(x, u, t),
        f_u=problem.eval_f_u(x, u, t),
    )


def _assemble(md: _ModelData, s, p) -> QTerms:
    big_s = p @ p.T  # bitwise symmetric: (i,j) and (j,i) sum identical products
    sfx = big_s @ md.f_x
    return QTerms(
        q=md.l + float(s @ md.f),
        q_x=md.l_x + big_s @ md.f + md.f_x.T @ s,
        q_u=md.l_u + md.f_u.T @ s,
        q_xx=md.l_xx + sfx.T + sfx,
        q_ux=md.l_ux + md.f_u.T @ big_s,
        q_uu=md.l_uu,
    )


def q_terms(
    t: float,
    s: np.ndarray,
    p: np.ndarray,
    x_bar: np.ndarray,
    u_bar: np.ndarray,
    problem: ProblemDef,
    eps: float = DEFAULT_EPS,
    regularize: bool = True,
) -> QTerms:
    """Quadratic decision-model coefficients at time t.

    s and p describe the value model at t; (x_bar, u_bar) is the nominal
    point the problem derivatives are taken at.  With regularize=False the
    raw cost Hessian is used (test hook; the solver always regularizes).
    """
    md = _model_data(problem, t, x_bar, u_bar, eps, regularize)
    return _assemble(md, np.asarray(s, dtype=float), np.asarray(p, dtype=float))


def gains(q: QTerms):
    """Feedforward step d and feedback gain K from the model coefficients.

    Solves q_uu d = q_u and q_uu K = q_ux.  q_uu comes floored out of
    q_terms, so singularity here indicates a bug upstream, not bad data.
    """
    try:
        d = solve_linear(q.q_uu, q.q_u)
        k = solve_linear(q.q_uu, q.q_ux)
    except SingularMatrixError as exc:
        raise RegularizationViolatedError(
            "control-curvature block singular despite the eigenvalue floor"
        ) from exc
    return d, k


def _dk_terms(md: _ModelData, s, p):
    """Feedforward step, feedback gain, and the blocks their consumers
    reuse.  Inlined subset of _assemble/gains: this runs tens of thousands
    of times per sweep, and the full decision model computes blocks the
    gain extraction never reads.  The round-trip tests against q_terms
    keep the two spellings from drifting apart.
    """
    big_s = p @ p.T
    q_u = md.l_u + md.f_u.T @ s
    q_uu = md.l_uu
    q_ux = md.l_ux + md.f_u.T @ big_s
    try:
        if q_uu.shape[0] == 1:
            pivot = q_uu[0, 0]
            if pivot == 0.0:
                raise SingularMatrixError("1x1 system with zero pivot")
            d = q_u / pivot
            k = q_ux / pivot
        else:
            d = solve_linear(q_uu, q_u)
            k = solve_linear(q_uu, q_ux)
    except SingularMatrixError as exc:
        raise RegularizationViolatedError(
            "control-curvature block singular despite the eigenvalue floor"
        ) from exc
    return d, k, q_u, q_uu, big_s


def _value_derivative(md: _ModelData, s, p):
    if md.l_uu.shape == (1, 1):
        return _value_derivative_single(md, s, p)
    d, k, q_u, q_uu, big_s = _dk_terms(md, s, p)
    improvement_rate = float(d @ q_u)  # q_uᵀ q_uu⁻¹ q_u ≥ 0
    sigma_dot = -(md.l - 0.5 * improvement_rate)
    s_dot = -(md.l_x + md.f_x.T @ s - k.T @ q_u)
    sfx = big_s @ md.f_x
    m = (md.l_xx + sfx.T + sfx) - k.T @ (q_uu @ k)
    try:
        y = solve_linear(p, m)
    except SingularMatrixError as exc:
        raise SqrtBreakdownError(
            "value-Hessian square-root factor became singular"
        ) from exc
    p_dot = -0.5 * y.T
    # Integrated from tf down to t0, so a negative rate accumulates a
    # positive total over the horizon.
    dv1_dot = -improvement_rate
    return sigma_dot, s_dot, p_dot, dv1_dot


def _value_derivative_single(md: _ModelData, s, p):
    """The derivative above, specialized to one control input.

    The curvature solve collapses to a scalar division, and the
    square-root solve goes straight to LAPACK, which at this call volume
    beats the tolerance-checked elimination.  One behavioral nuance: a
    nearly singular factor produces a huge derivative (and a rejected
    integrator step) instead of the generic path's tolerance-based raise;
    an exactly singular one still raises SqrtBreakdownError.
    """
    pivot = md.l_uu[0, 0]
    if pivot == 0.0:
        raise RegularizationViolatedError(
            "control-curvature block singular despite the eigenvalue floor"
        )
    big_s = p @ p.T
    bu = md.f_u[:, 0]
    q_u = md.l_u[0] + bu @ s
    k = (md.l_ux[0] + bu @ big_s) / pivot
    d = q_u / pivot
    improvement_rate = d * q_u
    sigma_dot = -(md.l - 0.5 * improvement_rate)
    s_dot = -(md.l_x + md.f_x.T @ s - k * q_u)
    sfx = big_s @ md.f_x
    m = (md.l_xx + sfx.T + sfx) - np.outer(k, pivot * k)
    try:
        y = np.linalg.solve(p, m)
    except np.linalg.LinAlgError as exc:
        raise SqrtBreakdownError(
            "value-Hessian square-root factor became singular"
        ) from exc
    return sigma_dot, s_dot, -0.5 * y.T, -improvement_rate


_TPERM_CACHE: dict = {}


def _tperm(n):
    # Column permutation that turns K into K·T, where T maps the row-major
    # flattening of a matrix to that of its transpose.
    perm = _TPERM_CACHE.get(n)
    if perm is None:
        perm = np.arange(n * n).reshape(n, n).T.ravel()
        _TPERM_CACHE[n] = perm
    return perm


def _kron(a, b):
    # np.kron spends more time on reshape bookkeeping than arithmetic at
    # these sizes; einsum builds the same block layout directly.
    n = a.shape[0]
    return np.einsum("ij,kl->ikjl", a, b).reshape(n * n, n * n)


def _value_jacobian_single(md: _ModelData, s, p):
    """Closed-form Jacobian of the packed value derivative, one-input case.

    Returns the full matrix of partials of (sigma_dot, s_dot, p_dot,
    dv1_dot) with respect to the packed (sigma, s, p, dv1) vector.  The
    p_dot block comes from the product rule through S = p pᵀ together with
    the inverse rule d(p⁻¹) = −p⁻¹ (dp) p⁻¹, collected as Kronecker
    products over the row-major layout.  Handing this to the stiff
    stepper removes its finite-difference sweep, which otherwise costs a
    full derivative evaluation per state component every step; the tests
    check the two against each other at random states.
    """
    n = p.shape[0]
    r = md.l_uu[0, 0]
    if r == 0.0:
        raise RegularizationViolatedError(
            "control-curvature block singular despite the eigenvalue floor"
        )
    b = md.f_u[:, 0]
    big_s = p @ p.T
    q_u = md.l_u[0] + b @ s
    k = (md.l_ux[0] + b @ big_s) / r
    d = q_u / r
    try:
        pinv = np.linalg.inv(p)
    except np.linalg.LinAlgError as exc:
        raise SqrtBreakdownError(
            "value-Hessian square-root factor became singular"
        ) from exc
    # One matrix absorbs both dependence channels of p_dot's numerator:
    # through S in the curvature sum and through k in the gain term.
    kb = np.outer(k, b)
    w = md.f_x.T - kb
    sfx = big_s @ md.f_x
    m = (md.l_xx + sfx.T + sfx) - np.outer(k, r * k)

    pw = pinv @ w
    pwp = pw @ p
    blk = _kron(w, pinv @ p)
    for i in range(n):
        blk[i * n : (i + 1) * n, i * n : (i + 1) * n] += pwp
    tail = _kron(p, pw) + _kron(w @ p - m @ pinv.T, pinv)
    blk += tail[:, _tperm(n)]
    blk *= -0.5

    dim = 2 + n + n * n
    out = np.zeros((dim, dim))
    out[0, 1 : 1 + n] = d * b
    out[1 : 1 + n, 1 : 1 + n] = -w
    jsp = np.einsum("a,ic->iac", b, p)
    jsp[np.arange(n), np.arange(n), :] += b @ p
    out[1 : 1 + n, 1 + n : dim - 1] = d * jsp.reshape(n, n * n)
    out[1 + n : dim - 1, 1 + n : dim - 1] = blk
    out[dim - 1, 1 : 1 + n] = (-2.0 * d) * b
    return out


def backward_rhs(
    t: float,
    v: ValueState,
    nominal,
    problem: ProblemDef,
    eps: float = DEFAULT_EPS,
    regularize: bool = True,
) -> ValueState:
    """Time derivative of the value model state at time t.

    nominal must provide state(t) and control(t) covering t.  Returned as
    a ValueState whose fields are the derivatives of the inputs' fields.
    """
    md = _model_data(problem, t, nominal.state(t), nominal.control(t), eps, regularize)
    sigma_dot, s_dot, p_dot, dv1_dot = _value_derivative(md, v.s, v.p)
    return ValueState(sigma_dot, s_dot, p_dot, dv1_dot)


class BackwardSolution:
    """Result of one backward sweep.

    Wraps the dense value-state interpolant together with the nominal it
    was computed against, so gains can be re-derived at any time in the
    horizon.  Gain evaluation recomputes the model coefficients from the
    interpolated value state (the stored mesh is not a lookup table), with
    results memoized per time stamp since they are pure in t.
    """

    def __init__(self, value, nominal, problem, eps, regularize, dv1_total):
        self.value = value
        self.nominal = nominal
        self.problem = problem
        self.eps = eps
        self.regularize = regularize
        self.dv1_total = dv1_total
        self._gain_cache = {}

    @property
    def step_count(self) -> int:
        return self.value.step_count

    def state_at(self, t: float) -> ValueState:
        return ValueState.from_vector(self.value.eval(t), self.problem.n_x)

    def gain_data(self, t: float):
        """(d, K, x_bar, u_bar) at t; memoized."""
        got = self._gain_cache.get(t)
        if got is None:
            v = self.value.eval(t)
            _, s, p, _ = _unpack(v, self.problem.n_x)
            x_bar = self.nominal.state(t)
            u_bar = self.nominal.control(t)
            md = _model_data(self.problem, t, x_bar, u_bar, self.eps, self.regularize)
            d, k, _, _, _ = _dk_terms(md, s, p)
            got = (d, k, x_bar, u_bar)
            self._gain_cache[t] = got
        return got


def eval_gains(sol: BackwardSolution, t: float):
    """Feedforward and feedback gains (d, K) at any time in the horizon."""
    d, k, _, _ = sol.gain_data(t)
    return d, k


def run_backward_pass(
    problem: ProblemDef,
    nominal,
    config: StepperConfig | None = None,
    eps: float = DEFAULT_EPS,
    regularize: bool = True,
) -> BackwardSolution:
    """Integrate the value-model ODEs from tf to t0 along a nominal.

    Terminal conditions come from the final cost, with the terminal value
    Hessian factored through an eigenvalue floor of eps**0.25 so p starts
    safely invertible even for flat or indefinite terminal costs.
    """
    if config is None:
        config = StepperConfig(method=METHOD_STIFF)
    t0, tf = problem.t0, problem.tf
    x_f = nominal.state(tf)
    sigma_f = float(problem.final_cost(x_f))
    s_f = problem.eval_phi_x(x_f)
    p_f = sqrt_factor_floor(problem.eval_phi_xx(x_f), eps**0.25)
    v_f = np.concatenate(([sigma_f], s_f, p_f.ravel(), [0.0]))

    cache: dict = {}

    def model_at(t):
        md = cache.get(t)
        if md is None:
            # Stiff stage abscissae may poke slightly past the horizon;
            # the model data is extended by clamping to it.
            tc = min(max(t, t0), tf)
            md = _model_data(
                problem, tc, nominal.state(tc), nominal.control(tc), eps, regularize
            )
            cache[t] = md
        return md

    n = problem.n_x
    dim = 2 + n + n * n

    def rhs(t, v):
        _, s, p, _ = _unpack(v, n)
        sigma_dot, s_dot, p_dot, dv1_dot = _value_derivative(model_at(t), s, p)
        out = np.empty(dim)
        out[0] = sigma_dot
        out[1 : 1 + n] = s_dot
        out[1 + n : dim - 1] = p_dot.ravel()
        out[dim - 1] = dv1_dot
        return out

    jacobian = None
    if problem.n_u == 1:

        def jacobian(t, v, _f):
            _, s, p, _ = _unpack(v, n)
            return _value_jacobian_single(model_at(t), s, p)

    value = integrate(rhs, v_f, (tf, t0), config, jacobian=jacobian)
    dv1_total = max(float(value.states[-1][-1]), 0.0)
    return BackwardSolution(value, nominal, problem, eps, regularize, dv1_total)
