"""Built-in benchmark problems.

The cart-pole is a point mass on a massless pole atop a driven cart, with
theta = 0 hanging down and theta = pi upright.  Two cost variants are
provided: a control-effort cost with a quadratic terminal penalty pulling
the pole upright ("convex"), and a running cost 1 + cos(theta) + 10 s^2 +
0.03 u^2 with no terminal term ("nonconvex", its Hessian is indefinite near
the downward equilibrium).  An LQ problem generator rounds out the set as
the exactness oracle for the solver tests.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from .errors import DimensionError
from .ocp import ProblemDef


@dataclass(frozen=True)
class CartpoleParams:
    """Cart-pole constants: a 1 kg tip mass on a 0.2 m pole, 0.1 kg cart.

    The heavy-pendulum/light-cart default is what reproduces the benchmark
    cost levels the acceptance suite checks against; both masses are plain
    fields, so the opposite reading is one constructor call away.
    """

    m_cart: float = 0.1
    m_tip: float = 1.0
    l: float = 0.2
    g: float = 9.81

    def __post_init__(self):
        for name in ("m_cart", "m_tip", "l", "g"):
            if getattr(self, name) <= 0.0:
                raise ValueError(f"cart-pole parameter {name} must be positive")


def _force(u) -> float:
    return float(u) if np.ndim(u) == 0 else float(u[0])


def cartpole_dynamics(x, u, p: CartpoleParams) -> np.ndarray:
    """State derivative for x = (s, theta, sdot, thetadot), u = cart force.

    Derived from the Lagrangian of the cart/point-tip system:
        sddot = [u + m_t sin(th) (l thd^2 + g cos(th))] / (m_c + m_t sin^2(th))
        thddot = [-u cos(th) - m_t l thd^2 cos(th) sin(th)
                  - (m_c + m_t) g sin(th)] / (l (m_c + m_t sin^2(th)))
    The denominator is bounded below by m_c, so the dynamics are globally
    smooth.
    """
    th = x[1]
    sd = x[2]
    thd = x[3]
    f = _force(u)
    st = math.sin(th)
    ct = math.cos(th)
    mt = p.m_tip
    den = p.m_cart + mt * st * st
    sdd = (f + mt * st * (p.l * thd * thd + p.g * ct)) / den
    thdd = (-f * ct - mt * p.l * thd * thd * ct * st - (p.m_cart + mt) * p.g * st) / (
        p.l * den
    )
    return np.array([sd, thd, sdd, thdd])


def cartpole_f_x(x, u, p: CartpoleParams) -> np.ndarray:
    """Analytic ∂f/∂x of the cart-pole dynamics."""
    th = x[1]
    thd = x[3]
    f = _force(u)
    st = math.sin(th)
    ct = math.cos(th)
    c2 = math.cos(2.0 * th)
    s2 = math.sin(2.0 * th)
    mt = p.m_tip
    mc = p.m_cart
    l = p.l
    g = p.g
    den = mc + mt * st * st
    dden = mt * s2

    n1 = f + mt * st * (l * thd * thd + g * ct)
    dn1_th = mt * (l * thd * thd * ct + g * c2)
    dsdd_th = (dn1_th * den - n1 * dden) / (den * den)
    dsdd_thd = 2.0 * mt * l * thd * st / den

    n2 = -f * ct - mt * l * thd * thd * ct * st - (mc + mt) * g * st
    dn2_th = f * st - mt * l * thd * thd * c2 - (mc + mt) * g * ct
    dthdd_th = (dn2_th * den - n2 * dden) / (l * den * den)
    dthdd_thd = -mt * thd * s2 / den

    out = np.zeros((4, 4))
    out[0, 2] = 1.0
    out[1, 3] = 1.0
    out[2, 1] = dsdd_th
    out[2, 3] = dsdd_thd
    out[3, 1] = dthdd_th
    out[3, 3] = dthdd_thd
    return out


def cartpole_f_u(x, u, p: CartpoleParams) -> np.ndarray:
    """Analytic ∂f/∂u of the cart-pole dynamics (a single column)."""
    th = x[1]
    st = math.sin(th)
    ct = math.cos(th)
    den = p.m_cart + p.m_tip * st * st
    out = np.zeros((4, 1))
    out[2, 0] = 1.0 / den
    out[3, 0] = -ct / (p.l * den)
    return out


def cartpole_energy(x, p: CartpoleParams) -> float:
    """Total mechanical energy; conserved when u = 0 (dynamics validation)."""
    th = x[1]
    sd = x[2]
    thd = x[3]
    ct = math.cos(th)
    return (
        0.5 * (p.m_cart + p.m_tip) * sd * sd
        + p.m_tip * p.l * sd * thd * ct
        + 0.5 * p.m_tip * p.l * p.l * thd * thd
        - p.m_tip * p.g * p.l * ct
    )


_DEFAULT_X0 = (0.0, 1e-3 * math.pi, 0.0, 0.0)
_DEFAULT_HORIZON = (0.0, 2.0)


def convex_problem(
    params: CartpoleParams | None = None,
    horizon=_DEFAULT_HORIZON,
    x0=_DEFAULT_X0,
) -> ProblemDef:
    """Cart-pole swing-up with effort-only running cost.

    l = 1e-3 u², Φ = 100 (s² + (θ − π)²) + ṡ² + θ̇².  The initial angle is
    offset by 1e-3 π so the gains have something to act on at startup.
    """
    p = params or CartpoleParams()
    pi = math.pi

    def phi(x):
        return 100.0 * (x[0] * x[0] + (x[1] - pi) ** 2) + x[2] * x[2] + x[3] * x[3]

    def phi_x(x):
        return np.array([200.0 * x[0], 200.0 * (x[1] - pi), 2.0 * x[2], 2.0 * x[3]])

    phi_xx_const = np.diag([200.0, 200.0, 2.0, 2.0])
    # Constant derivatives are shared, not rebuilt per call; callers treat
    # them as read-only.
    zero_l_x = np.zeros(4)
    zero_l_xx = np.zeros((4, 4))
    zero_l_ux = np.zeros((1, 4))
    l_uu_const = np.array([[2e-3]])

    return ProblemDef(
        n_x=4,
        n_u=1,
        t0=float(horizon[0]),
        tf=float(horizon[1]),
        x0=np.asarray(x0, dtype=float),
        dynamics=lambda x, u, t: cartpole_dynamics(x, u, p),
        running_cost=lambda x, u, t: 1e-3 * _force(u) ** 2,
        final_cost=phi,
        f_x=lambda x, u, t: cartpole_f_x(x, u, p),
        f_u=lambda x, u, t: cartpole_f_u(x, u, p),
        l_x=lambda x, u, t: zero_l_x,
        l_u=lambda x, u, t: np.array([2e-3 * _force(u)]),
        l_xx=lambda x, u, t: zero_l_xx,
        l_ux=lambda x, u, t: zero_l_ux,
        l_uu=lambda x, u, t: l_uu_const,
        phi_x=phi_x,
        phi_xx=lambda x: phi_xx_const.copy(),
    )


def nonconvex_problem(
    params: CartpoleParams | None = None,
    horizon=_DEFAULT_HORIZON,
    x0=_DEFAULT_X0,
) -> ProblemDef:
    """Cart-pole swing-up with l = 1 + cos θ + 10 s² + 0.03 u² and no
    terminal cost.

    The θθ entry of l_xx is −cos θ, negative for |θ| < π/2, so the joint
    cost Hessian is indefinite along much of a swing-up trajectory; this is
    the problem that makes the eigenvalue-floor regularization load-bearing.
    """
    p = params or CartpoleParams()

    def l(x, u, t):
        return 1.0 + math.cos(x[1]) + 10.0 * x[0] * x[0] + 3e-2 * _force(u) ** 2

    def l_x(x, u, t):
        return np.array([20.0 * x[0], -math.sin(x[1]), 0.0, 0.0])

    def l_xx(x, u, t):
        out = np.zeros((4, 4))
        out[0, 0] = 20.0
        out[1, 1] = -math.cos(x[1])
        return out

    # Shared constant derivatives; callers treat them as read-only.
    zero_l_ux = np.zeros((1, 4))
    l_uu_const = np.array([[6e-2]])
    zero_phi_x = np.zeros(4)
    zero_phi_xx = np.zeros((4, 4))

    return ProblemDef(
        n_x=4,
        n_u=1,
        t0=float(horizon[0]),
        tf=float(horizon[1]),
        x0=np.asarray(x0, dtype=float),
        dynamics=lambda x, u, t: cartpole_dynamics(x, u, p),
        running_cost=l,
        final_cost=lambda x: 0.0,
        f_x=lambda x, u, t: cartpole_f_x(x, u, p),
        f_u=lambda x, u, t: cartpole_f_u(x, u, p),
        l_x=l_x,
        l_u=lambda x, u, t: np.array([6e-2 * _force(u)]),
        l_xx=l_xx,
        l_ux=lambda x, u, t: zero_l_ux,
        l_uu=lambda x, u, t: l_uu_const,
        phi_x=lambda x: zero_phi_x,
        phi_xx=lambda x: zero_phi_xx,
    )


def lq_problem(a, b, r_x, r_u, phi_xx_term, x0, horizon) -> ProblemDef:
    """Linear dynamics f = Ax + Bu with quadratic costs, all derivatives
    exact; the standard exactness oracle for the solver."""
    a = np.asarray(a, dtype=float)
    b = np.asarray(b, dtype=float)
    r_x = np.asarray(r_x, dtype=float)
    r_u = np.asarray(r_u, dtype=float)
    qf = np.asarray(phi_xx_term, dtype=float)
    x0 = np.asarray(x0, dtype=float)

    n = a.shape[0]
    if a.shape != (n, n):
        raise DimensionError(f"A must be square, got {a.shape}")
    if b.ndim != 2 or b.shape[0] != n:
        raise DimensionError(f"B has shape {b.shape}, expected ({n}, n_u)")
    m = b.shape[1]
    for name, mat, shape in (
        ("R_x", r_x, (n, n)),
        ("R_u", r_u, (m, m)),
        ("terminal Hessian", qf, (n, n)),
    ):
        if mat.shape != shape:
            raise DimensionError(f"{name} has shape {mat.shape}, expected {shape}")
    if x0.shape != (n,):
        raise DimensionError(f"x0 has shape {x0.shape}, expected ({n},)")

    return ProblemDef(
        n_x=n,
        n_u=m,
        t0=float(horizon[0]),
        tf=float(horizon[1]),
        x0=x0,
        dynamics=lambda x, u, t: a @ x + b @ np.atleast_1d(u),
        running_cost=lambda x, u, t: 0.5 * float(x @ r_x @ x)
        + 0.5 * float(np.atleast_1d(u) @ r_u @ np.atleast_1d(u)),
        final_cost=lambda x: 0.5 * float(x @ qf @ x),
        f_x=lambda x, u, t: a.copy(),
        f_u=lambda x, u, t: b.copy(),
        l_x=lambda x, u, t: r_x @ x,
        l_u=lambda x, u, t: r_u @ np.atleast_1d(u),
        l_xx=lambda x, u, t: r_x.copy(),
        l_ux=lambda x, u, t: np.zeros((m, n)),
        l_uu=lambda x, u, t: r_u.copy(),
        phi_x=lambda x: qf @ x,
        phi_xx=lambda x: qf.copy(),
    )


def lq_double_integrator() -> ProblemDef:
    """Double integrator with unit state/control weights over [0, 2]."""
    return lq_problem(
        a=[[0.0, 1.0], [0.0, 0.0]],
        b=[[0.0], [1.0]],
        r_x=np.eye(2),
        r_u=[[1.0]],
        phi_xx_term=np.eye(2),
        x0=[1.0, 0.0],
        horizon=(0.0, 2.0),
    )
