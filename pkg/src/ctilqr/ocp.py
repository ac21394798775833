"""Optimal control problem definitions.

A ProblemDef bundles dynamics, running/final costs, their first and second
derivatives, the horizon, and the initial state.  Any derivative callback
may be omitted, in which case a central finite-difference estimate stands
in; check_derivatives compares the analytic callbacks against those
estimates for validation.
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import Callable, Optional, Sequence

import numpy as np

from .errors import DimensionError, EvaluationError

_EPS = float(np.finfo(float).eps)

# Step scales balancing truncation against round-off: cbrt(eps) for first
# derivatives of function values, eps^(1/4) for the nested second pass.
FD_STEP_FIRST = _EPS ** (1.0 / 3.0)
FD_STEP_SECOND = _EPS**0.25


def fd_derivative(fn: Callable, wrt: int, args: Sequence, step: Optional[float] = None):
    """Central-difference derivative of fn with respect to one argument.

    Args:
        fn: callable returning a scalar or 1-D vector.
        wrt: index into args of the (scalar or 1-D) argument to perturb.
        args: the evaluation point, one entry per fn parameter.
        step: per-coordinate step; when omitted uses
            cbrt(eps) * max(1, |p_i|) coordinate-wise.

    Returns:
        The derivative array: scalar fn over an m-vector gives shape (m,);
        k-vector fn gives (k, m).  A scalar perturbed argument drops the
        trailing axis.

    Raises:
        EvaluationError: if fn returns a non-finite value at any perturbed
            point (the offending point is included in the message).
    """
    args = list(args)
    point = args[wrt]
    scalar_point = np.ndim(point) == 0
    p = np.atleast_1d(np.asarray(point, dtype=float))

    cols = []
    for i in range(p.size):
        h = step if step is not None else FD_STEP_FIRST * max(1.0, abs(p[i]))
        cols.append(_central_diff(fn, wrt, args, p, i, h, scalar_point))

    first = np.asarray(cols[0])
    if first.ndim == 0:
        out = np.array(cols)
        return float(out[0]) if scalar_point else out
    out = np.stack(cols, axis=-1)
    return out[:, 0] if scalar_point else out


def _central_diff(fn, wrt, args, p, i, h, scalar_point):
    vals = []
    for sign in (1.0, -1.0):
        q = p.copy()
        q[i] += sign * h
        args[wrt] = float(q[0]) if scalar_point else q
        val = np.asarray(fn(*args), dtype=float)
        if not np.all(np.isfinite(val)):
            raise EvaluationError(
                f"non-finite value from {getattr(fn, '__name__', 'callback')} "
                f"at perturbed argument {wrt} = {q!r}"
            )
        vals.append(val)
    return (vals[0] - vals[1]) / (2.0 * h)


@dataclass(frozen=True, eq=False)
class ProblemDef:
    """A finite-horizon optimal control problem.

    Minimize ∫ l(x, u, t) dt + Φ(x(tf)) subject to ẋ = f(x, u, t) and
    x(t0) = x0.  Derivative callbacks follow the naming f_x = ∂f/∂x (rows
    index f components), l_ux[i, j] = ∂²l/∂u_i∂x_j, and so on; any left as
    None is replaced by a finite-difference estimate on evaluation.

    All callbacks receive t so time-varying problems are expressible, even
    though the built-in benchmarks are autonomous.
    """

    n_x: int
    n_u: int
    t0: float
    tf: float
    x0: np.ndarray
    dynamics: Callable  # f(x, u, t) -> (n_x,)
    running_cost: Callable  # l(x, u, t) -> float
    final_cost: Callable  # Φ(x) -> float
    f_x: Optional[Callable] = None  # (n_x, n_x)
    f_u: Optional[Callable] = None  # (n_x, n_u)
    l_x: Optional[Callable] = None  # (n_x,)
    l_u: Optional[Callable] = None  # (n_u,)
    l_xx: Optional[Callable] = None  # (n_x, n_x)
    l_ux: Optional[Callable] = None  # (n_u, n_x)
    l_uu: Optional[Callable] = None  # (n_u, n_u)
    phi_x: Optional[Callable] = None  # (n_x,)
    phi_xx: Optional[Callable] = None  # (n_x, n_x)

    def __post_init__(self):
        if self.n_x < 1 or self.n_u < 1:
            raise DimensionError("n_x and n_u must be at least 1")
        if not self.t0 < self.tf:
            raise DimensionError(f"horizon requires t0 < tf, got [{self.t0}, {self.tf}]")
        x0 = np.asarray(self.x0, dtype=float)
        if x0.shape != (self.n_x,):
            raise DimensionError(f"x0 has shape {x0.shape}, expected ({self.n_x},)")
        object.__setattr__(self, "x0", x0)

    # -- evaluation with finite-difference fallback ---------------------

    def _shaped(self, value, shape, name):
        out = np.asarray(value, dtype=float)
        if out.shape != shape:
            raise DimensionError(f"{name} returned shape {out.shape}, expected {shape}")
        return out

    def eval_f_x(self, x, u, t):
        if self.f_x is not None:
            return self._shaped(self.f_x(x, u, t), (self.n_x, self.n_x), "f_x")
        return fd_derivative(self.dynamics, 0, (x, u, t))

    def eval_f_u(self, x, u, t):
        if self.f_u is not None:
            return self._shaped(self.f_u(x, u, t), (self.n_x, self.n_u), "f_u")
        return fd_derivative(self.dynamics, 1, (x, u, t))

    def eval_l_x(self, x, u, t):
        if self.l_x is not None:
            return self._shaped(self.l_x(x, u, t), (self.n_x,), "l_x")
        return fd_derivative(self.running_cost, 0, (x, u, t))

    def eval_l_u(self, x, u, t):
        if self.l_u is not None:
            return self._shaped(self.l_u(x, u, t), (self.n_u,), "l_u")
        return fd_derivative(self.running_cost, 1, (x, u, t))

    def eval_l_xx(self, x, u, t):
        if self.l_xx is not None:
            return self._shaped(self.l_xx(x, u, t), (self.n_x, self.n_x), "l_xx")
        return fd_derivative(self.eval_l_x, 0, (x, u, t), step=FD_STEP_SECOND)

    def eval_l_ux(self, x, u, t):
        if self.l_ux is not None:
            return self._shaped(self.l_ux(x, u, t), (self.n_u, self.n_x), "l_ux")
        return fd_derivative(self.eval_l_u, 0, (x, u, t), step=FD_STEP_SECOND)

    def eval_l_uu(self, x, u, t):
        if self.l_uu is not None:
            return self._shaped(self.l_uu(x, u, t), (self.n_u, self.n_u), "l_uu")
        return fd_derivative(self.eval_l_u, 1, (x, u, t), step=FD_STEP_SECOND)

    def eval_phi_x(self, x):
        if self.phi_x is not None:
            return self._shaped(self.phi_x(x), (self.n_x,), "phi_x")
        return fd_derivative(self.final_cost, 0, (x,))

    def eval_phi_xx(self, x):
        if self.phi_xx is not None:
            return self._shaped(self.phi_xx(x), (self.n_x, self.n_x), "phi_xx")
        return fd_derivative(self.eval_phi_x, 0, (x,), step=FD_STEP_SECOND)


@dataclass(frozen=True)
class DerivativeEntry:
    name: str
    max_rel_error: float
    passed: bool


@dataclass(frozen=True)
class DerivativeReport:
    """Outcome of comparing analytic derivatives to finite differences."""

    entries: tuple[DerivativeEntry, ...]
    tol: float
    num_samples: int

    @property
    def all_passed(self) -> bool:
        return all(e.passed for e in self.entries)

    def format_table(self) -> str:
        lines = [f"{'derivative':<10} {'max rel err':>14}  result"]
        for e in self.entries:
            lines.append(
                f"{e.name:<10} {e.max_rel_error:>14.3e}  {'pass' if e.passed else 'FAIL'}"
            )
        lines.append(f"{self.num_samples} samples, tolerance {self.tol:g}")
        return "\n".join(lines)


def check_derivatives(problem: ProblemDef, samples, tol: float) -> DerivativeReport:
    """Compare every supplied analytic derivative against finite differences.

    Args:
        problem: the problem whose callbacks are checked.
        samples: sequence of (x, u, t) evaluation points.
        tol: pass threshold on max relative error, with the relative
            denominator max(1, ‖FD estimate‖_max).

    Returns:
        DerivativeReport with one entry per analytic callback present.
    """
    samples = [(np.asarray(x, float), np.asarray(u, float), float(t)) for x, u, t in samples]
    if not samples:
        raise ValueError("samples must be non-empty")

    p = problem
    # name -> (analytic evaluator, FD reference evaluator)
    checks = {}
    if p.f_x is not None:
        checks["f_x"] = (p.eval_f_x, lambda x, u, t: fd_derivative(p.dynamics, 0, (x, u, t)))
    if p.f_u is not None:
        checks["f_u"] = (p.eval_f_u, lambda x, u, t: fd_derivative(p.dynamics, 1, (x, u, t)))
    if p.l_x is not None:
        checks["l_x"] = (p.eval_l_x, lambda x, u, t: fd_derivative(p.running_cost, 0, (x, u, t)))
    if p.l_u is not None:
        checks["l_u"] = (p.eval_l_u, lambda x, u, t: fd_derivative(p.running_cost, 1, (x, u, t)))
    if p.l_xx is not None:
        checks["l_xx"] = (
            p.eval_l_xx,
            lambda x, u, t: fd_derivative(p.eval_l_x, 0, (x, u, t), step=FD_STEP_SECOND),
        )
    if p.l_ux is not None:
        checks["l_ux"] = (
            p.eval_l_ux,
            lambda x, u, t: fd_derivative(p.eval_l_u, 0, (x, u, t), step=FD_STEP_SECOND),
        )
    if p.l_uu is not None:
        checks["l_uu"] = (
            p.eval_l_uu,
            lambda x, u, t: fd_derivative(p.eval_l_u, 1, (x, u, t), step=FD_STEP_SECOND),
        )
    if p.phi_x is not None:
        checks["phi_x"] = (
            lambda x, u, t: p.eval_phi_x(x),
            lambda x, u, t: fd_derivative(p.final_cost, 0, (x,)),
        )
    if p.phi_xx is not None:
        checks["phi_xx"] = (
            lambda x, u, t: p.eval_phi_xx(x),
            lambda x, u, t: fd_derivative(p.eval_phi_x, 0, (x,), step=FD_STEP_SECOND),
        )

    entries = []
    for name, (analytic, reference) in checks.items():
        worst = 0.0
        for x, u, t in samples:
            ref = np.asarray(reference(x, u, t), dtype=float)
            got = np.asarray(analytic(x, u, t), dtype=float)
            denom = max(1.0, float(np.max(np.abs(ref))) if ref.size else 0.0)
            err = float(np.max(np.abs(got - ref))) / denom if ref.size else 0.0
            worst = max(worst, err)
        entries.append(DerivativeEntry(name, worst, worst <= tol))

    return DerivativeReport(tuple(entries), tol, len(samples))
