import math

import numpy as np
import pytest

from ctilqr.errors import DimensionError
from ctilqr.matops import sym_eig
from ctilqr.models import (
    CartpoleParams,
    cartpole_dynamics,
    cartpole_energy,
    convex_problem,
    lq_double_integrator,
    lq_problem,
    nonconvex_problem,
)
from ctilqr.ocp import check_derivatives

PI = math.pi


class TestCartpoleDynamics:
    def test_downward_equilibrium(self):
        p = CartpoleParams()
        assert np.allclose(cartpole_dynamics(np.zeros(4), 0.0, p), 0.0)

    def test_upright_equilibrium(self):
        p = CartpoleParams()
        # math.pi is not exactly pi, so sin(pi) ~ 1e-16 leaks through.
        x = np.array([0.0, PI, 0.0, 0.0])
        assert np.allclose(cartpole_dynamics(x, 0.0, p), 0.0, atol=1e-13)

    def test_unit_force_at_origin(self):
        # Hand-evaluated for a 1 kg cart with a 0.1 kg tip on a 0.2 m pole:
        # sddot = u / m_cart, thddot = -u / (l m_cart) at theta = 0.
        p = CartpoleParams(m_cart=1.0, m_tip=0.1)
        xdot = cartpole_dynamics(np.zeros(4), 1.0, p)
        assert np.allclose(xdot, [0.0, 0.0, 1.0, -5.0])

    def test_unit_force_at_origin_default_masses(self):
        # Same closed form with the default 0.1 kg cart.
        p = CartpoleParams()
        xdot = cartpole_dynamics(np.zeros(4), 1.0, p)
        assert np.allclose(xdot, [0.0, 0.0, 10.0, -50.0])

    def test_parameter_validation(self):
        with pytest.raises(ValueError):
            CartpoleParams(m_cart=-1.0)

    def test_jacobians_match_fd(self):
        # 50 seeded points over the stated check ranges.
        prob = convex_problem()
        rng = np.random.default_rng(42)
        samples = [
            (rng.uniform(-5, 5, 4), rng.uniform(-10, 10, 1), rng.uniform(0, 2))
            for _ in range(50)
        ]
        report = check_derivatives(prob, samples, tol=1e-5)
        by_name = {e.name: e for e in report.entries}
        assert by_name["f_x"].passed
        assert by_name["f_u"].passed

    def test_energy_conserved_short_rk4(self):
        # Crude fixed-step check that the dynamics and the energy expression
        # agree; the tight integrator-based check lives in the acceptance
        # suite.
        p = CartpoleParams()
        x = np.array([0.0, 2.0, 0.0, 0.0])
        e0 = cartpole_energy(x, p)
        h = 1e-4
        for _ in range(5000):
            k1 = cartpole_dynamics(x, 0.0, p)
            k2 = cartpole_dynamics(x + 0.5 * h * k1, 0.0, p)
            k3 = cartpole_dynamics(x + 0.5 * h * k2, 0.0, p)
            k4 = cartpole_dynamics(x + h * k3, 0.0, p)
            x = x + (h / 6.0) * (k1 + 2 * k2 + 2 * k3 + k4)
        assert abs(cartpole_energy(x, p) - e0) < 1e-8 * max(1.0, abs(e0))


class TestConvexProblem:
    def test_running_cost(self):
        prob = convex_problem()
        assert prob.running_cost(np.zeros(4), np.array([1.0]), 0.0) == pytest.approx(1e-3)

    def test_final_cost_at_target(self):
        prob = convex_problem()
        target = np.array([0.0, PI, 0.0, 0.0])
        assert prob.final_cost(target) == 0.0
        assert np.allclose(prob.eval_phi_x(target), 0.0)

    def test_cost_derivatives(self):
        prob = convex_problem()
        rng = np.random.default_rng(7)
        samples = [
            (rng.uniform(-5, 5, 4), rng.uniform(-10, 10, 1), rng.uniform(0, 2))
            for _ in range(20)
        ]
        assert check_derivatives(prob, samples, tol=1e-5).all_passed

    def test_initial_state_offset(self):
        prob = convex_problem()
        assert prob.x0[1] == pytest.approx(1e-3 * PI)


class TestNonconvexProblem:
    def test_cost_at_upright(self):
        prob = nonconvex_problem()
        assert prob.running_cost(np.array([0.0, PI, 0.0, 0.0]), np.zeros(1), 0.0) == (
            pytest.approx(0.0)
        )

    def test_cost_at_origin(self):
        prob = nonconvex_problem()
        assert prob.running_cost(np.zeros(4), np.zeros(1), 0.0) == pytest.approx(2.0)

    def test_hessian_theta_entry(self):
        prob = nonconvex_problem()
        l_xx = prob.eval_l_xx(np.zeros(4), np.zeros(1), 0.0)
        assert l_xx[1, 1] == pytest.approx(-1.0)

    def test_joint_hessian_indefinite_at_origin(self):
        prob = nonconvex_problem()
        x = np.zeros(4)
        u = np.zeros(1)
        l_xx = prob.eval_l_xx(x, u, 0.0)
        l_ux = prob.eval_l_ux(x, u, 0.0)
        l_uu = prob.eval_l_uu(x, u, 0.0)
        joint = np.block([[l_xx, l_ux.T], [l_ux, l_uu]])
        w = sym_eig(joint).eigenvalues
        assert w.min() < -0.5  # the -cos(theta) entry

    def test_cost_derivatives(self):
        prob = nonconvex_problem()
        rng = np.random.default_rng(8)
        samples = [
            (rng.uniform(-5, 5, 4), rng.uniform(-10, 10, 1), rng.uniform(0, 2))
            for _ in range(20)
        ]
        assert check_derivatives(prob, samples, tol=1e-5).all_passed

    def test_no_final_cost(self):
        prob = nonconvex_problem()
        x = np.array([1.0, 2.0, 3.0, 4.0])
        assert prob.final_cost(x) == 0.0
        assert np.allclose(prob.eval_phi_xx(x), 0.0)


class TestLqProblem:
    def test_double_integrator_construction(self):
        prob = lq_double_integrator()
        assert prob.n_x == 2 and prob.n_u == 1
        x = np.array([1.0, 2.0])
        u = np.array([0.5])
        assert np.allclose(prob.dynamics(x, u, 0.0), [2.0, 0.5])
        assert prob.running_cost(x, u, 0.0) == pytest.approx(0.5 * 5.0 + 0.5 * 0.25)

    def test_derivatives_exact(self):
        prob = lq_double_integrator()
        rng = np.random.default_rng(9)
        samples = [
            (rng.uniform(-2, 2, 2), rng.uniform(-2, 2, 1), 0.0) for _ in range(10)
        ]
        report = check_derivatives(prob, samples, tol=1e-7)
        assert report.all_passed

    def test_dimension_mismatch(self):
        with pytest.raises(DimensionError):
            lq_problem(
                a=np.eye(2), b=np.zeros((3, 1)), r_x=np.eye(2), r_u=np.eye(1),
                phi_xx_term=np.eye(2), x0=np.zeros(2), horizon=(0.0, 1.0),
            )
        with pytest.raises(DimensionError):
            lq_problem(
                a=np.eye(2), b=np.zeros((2, 1)), r_x=np.eye(3), r_u=np.eye(1),
                phi_xx_term=np.eye(2), x0=np.zeros(2), horizon=(0.0, 1.0),
            )
