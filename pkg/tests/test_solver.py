import time

import numpy as np
import pytest

from ctilqr.errors import ConfigError, DivergenceError, RegularizationViolatedError
from ctilqr.models import convex_problem, lq_double_integrator, lq_problem
from ctilqr.ocp import ProblemDef
from ctilqr.odeint import METHOD_STIFF, StepperConfig
from ctilqr.riccati import eval_gains
from ctilqr.rollout import LineSearchResult, OpenLoopPolicy, rollout
from ctilqr.solver import (
    Solution,
    SolverParams,
    TERMINATION_CONVERGED,
    TERMINATION_ERROR,
    TERMINATION_LINE_SEARCH,
    TERMINATION_MAX_ITER,
    initial_rollout,
    solve,
)
import ctilqr.solver as solver_mod

from _reference_values import LQ_GAIN_TIMES, LQ_GAINS, LQ_OPTIMAL_COST


@pytest.fixture(scope="module")
def lq_solution():
    return solve(lq_double_integrator())


class TestSolverParams:
    def test_defaults_valid(self):
        p = SolverParams()
        assert p.max_iter == 200
        assert p.backward_config.method != p.forward_config.method

    @pytest.mark.parametrize(
        "kwargs",
        [
            {"rho": 0.0},
            {"rho": 1.0},
            {"alpha_min": 0.0},
            {"alpha_min": 1.5},
            {"beta": 0.0},
            {"beta": -1.0},
            {"eps": 0.0},
            {"max_iter": 0},
            {"dv_tol": 0.0},
        ],
    )
    def test_rejects_bad_values(self, kwargs):
        with pytest.raises(ConfigError):
            SolverParams(**kwargs)


class TestInitialRollout:
    def test_default_policy_is_zero_control(self):
        problem = lq_double_integrator()
        traj = initial_rollout(problem)
        for t in (0.0, 0.7, 2.0):
            assert np.array_equal(traj.control(t), [0.0])
        explicit = rollout(problem, OpenLoopPolicy(lambda t: np.zeros(1)))
        assert traj.J == explicit.J

    def test_custom_policy(self):
        problem = lq_double_integrator()
        traj = initial_rollout(problem, lambda t: np.array([-0.3]))
        assert np.array_equal(traj.control(1.2), [-0.3])

    def test_divergent_policy_is_fatal(self):
        problem = ProblemDef(
            n_x=1,
            n_u=1,
            t0=0.0,
            tf=2.0,
            x0=np.array([1.5]),
            dynamics=lambda x, u, t: x * x,
            running_cost=lambda x, u, t: 0.0,
            final_cost=lambda x: 0.0,
        )
        with pytest.raises(DivergenceError):
            initial_rollout(problem)


class TestSolveLq:
    """The LQ problem is quadratic, so one full step must land on the optimum."""

    def test_converges(self, lq_solution):
        assert lq_solution.termination == TERMINATION_CONVERGED

    def test_two_iterations(self, lq_solution):
        assert lq_solution.iterations == 2
        first, last = lq_solution.records
        assert first.alpha == 1.0
        assert last.dv1_total < 1e-8
        assert last.alpha == 0.0 and last.n_fwd == 0

    def test_optimal_cost(self, lq_solution):
        assert lq_solution.J == pytest.approx(LQ_OPTIMAL_COST, rel=1e-5)

    def test_record_bookkeeping(self, lq_solution):
        assert [r.iteration for r in lq_solution.records] == [1, 2]
        assert lq_solution.records[-1].J == lq_solution.J
        assert all(r.n_bwd > 0 for r in lq_solution.records)
        assert all(r.wall_ms > 0.0 for r in lq_solution.records)

    def test_feedback_gains_match_riccati(self, lq_solution):
        for t, expected in list(zip(LQ_GAIN_TIMES, LQ_GAINS))[::3]:
            _, k = eval_gains(lq_solution.backward, t)
            assert np.allclose(k[0], expected, rtol=1e-4, atol=1e-7)

    def test_initial_condition_respected(self, lq_solution):
        assert np.allclose(lq_solution.trajectory.state(0.0), [1.0, 0.0])

    def test_insensitive_to_starting_policy(self, lq_solution):
        warm = solve(lq_double_integrator(), u_init=lambda t: np.array([-1.0]))
        assert warm.termination == TERMINATION_CONVERGED
        assert warm.J == pytest.approx(lq_solution.J, rel=1e-5)


def test_lq_from_origin_converges_immediately():
    problem = lq_problem(
        a=[[0.0, 1.0], [0.0, 0.0]],
        b=[[0.0], [1.0]],
        r_x=np.eye(2),
        r_u=[[1.0]],
        phi_xx_term=np.eye(2),
        x0=[0.0, 0.0],
        horizon=(0.0, 2.0),
    )
    sol = solve(problem)
    assert sol.termination == TERMINATION_CONVERGED
    assert sol.iterations == 1
    assert sol.records[0].alpha == 0.0
    assert sol.J == 0.0


def test_deterministic_reruns():
    a = solve(lq_double_integrator())
    b = solve(lq_double_integrator())
    assert a.termination == b.termination
    for ra, rb in zip(a.records, b.records):
        assert (ra.iteration, ra.J, ra.alpha, ra.n_bwd, ra.n_fwd, ra.dv1_total) == (
            rb.iteration,
            rb.J,
            rb.alpha,
            rb.n_bwd,
            rb.n_fwd,
            rb.dv1_total,
        )
    for t in np.linspace(0.0, 2.0, 7):
        assert np.array_equal(a.trajectory.state(t), b.trajectory.state(t))


def test_max_iterations_termination():
    params = SolverParams(
        max_iter=2,
        backward_config=StepperConfig(reltol=1e-4, abstol=1e-6, method=METHOD_STIFF),
        forward_config=StepperConfig(reltol=1e-5, abstol=1e-7),
    )
    sol = solve(convex_problem(), params=params)
    assert sol.termination == TERMINATION_MAX_ITER
    assert sol.iterations == 2
    assert sol.records[0].alpha > 0.0  # swing-up cannot converge in two steps


def test_unregularized_singular_curvature_raises_on_first_pass():
    # Zero running cost makes the control-curvature block exactly singular;
    # only the floor keeps the gain solve alive.
    problem = ProblemDef(
        n_x=1,
        n_u=1,
        t0=0.0,
        tf=1.0,
        x0=np.array([1.0]),
        dynamics=lambda x, u, t: u,
        running_cost=lambda x, u, t: 0.0,
        final_cost=lambda x: float(x[0] ** 2),
    )
    with pytest.raises(RegularizationViolatedError, match="iteration 1"):
        solve(problem, params=SolverParams(regularize=False, max_iter=3))
    sol = solve(problem, params=SolverParams(max_iter=3))
    assert isinstance(sol, Solution)


class _FakeBackward:
    def __init__(self, dv1_total):
        self.dv1_total = dv1_total
        self.step_count = 5


class TestTerminationClassification:
    """Line-search exhaustion splits on the size of the predicted decrease."""

    def _run(self, monkeypatch, dv1_total):
        monkeypatch.setattr(
            solver_mod, "run_backward_pass", lambda *a, **k: _FakeBackward(dv1_total)
        )
        monkeypatch.setattr(
            solver_mod,
            "line_search",
            lambda *a, **k: LineSearchResult(False, None, 2.0**-20, 21, 0.0),
        )
        return solve(lq_double_integrator())

    def test_large_prediction_is_a_stall(self, monkeypatch):
        sol = self._run(monkeypatch, dv1_total=1.0)
        assert sol.termination == TERMINATION_LINE_SEARCH
        assert sol.iterations == 1
        assert sol.records[0].alpha == 0.0

    def test_tiny_prediction_counts_as_converged(self, monkeypatch):
        # Zero-control LQ nominal has J = 1.5, so the scaled threshold is
        # 1.5e-7; pick dv1 between 2x and 10x that.
        sol = self._run(monkeypatch, dv1_total=6e-7)
        assert sol.termination == TERMINATION_CONVERGED

    def test_backward_failure_after_first_iteration_keeps_iterate(self, monkeypatch):
        problem = lq_double_integrator()
        real_backward = solver_mod.run_backward_pass(problem, initial_rollout(problem))
        calls = {"n": 0}

        def flaky(*args, **kwargs):
            calls["n"] += 1
            if calls["n"] == 1:
                return real_backward
            raise RegularizationViolatedError("synthetic failure")

        monkeypatch.setattr(solver_mod, "run_backward_pass", flaky)
        sol = solve(problem)
        assert sol.termination == TERMINATION_ERROR
        assert sol.iterations == 1
        assert sol.backward is real_backward


def test_lq_solve_is_fast():
    start = time.perf_counter()
    sol = solve(lq_double_integrator())
    elapsed = time.perf_counter() - start
    assert sol.termination == TERMINATION_CONVERGED
    assert elapsed < 5.0
