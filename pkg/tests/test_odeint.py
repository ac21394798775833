import math

import numpy as np
import pytest

from ctilqr.errors import (
    DomainError,
    EvaluationError,
    StepBudgetError,
    StepSizeError,
)
from ctilqr.odeint import (
    METHOD_EXPLICIT,
    METHOD_STIFF,
    StepperConfig,
    dense_eval,
    integrate,
)

from _reference_values import STIFF_RELAXATION_Y1


def decay(t, y):
    return -y


def stiff_relax(t, y):
    return -1e4 * (y - math.cos(t))


class TestConfigValidation:
    def test_defaults(self):
        cfg = StepperConfig()
        assert cfg.method == METHOD_EXPLICIT
        assert cfg.reltol == 1e-6
        assert cfg.abstol == 1e-8

    def test_bad_method(self):
        with pytest.raises(ValueError):
            StepperConfig(method="adams")

    def test_bad_tolerances(self):
        with pytest.raises(ValueError):
            StepperConfig(reltol=0.0)
        with pytest.raises(ValueError):
            StepperConfig(abstol=-1e-8)

    def test_bad_step_bounds(self):
        with pytest.raises(ValueError):
            StepperConfig(dt_min=0.5, dt_max=0.1)
        with pytest.raises(ValueError):
            StepperConfig(dt_min=0.0)

    def test_bad_budget(self):
        with pytest.raises(ValueError):
            StepperConfig(max_steps=0)


class TestBasicAccuracy:
    def test_exponential_decay_explicit(self):
        cfg = StepperConfig(reltol=1e-8, abstol=1e-10)
        sol = integrate(decay, [1.0], (0.0, 1.0), cfg)
        assert abs(sol.states[-1][0] - 0.36787944) <= 1e-6

    def test_exponential_decay_stiff(self):
        cfg = StepperConfig(reltol=1e-8, abstol=1e-10, method=METHOD_STIFF)
        sol = integrate(decay, [1.0], (0.0, 1.0), cfg)
        assert abs(sol.states[-1][0] - 0.36787944) <= 1e-6

    def test_backward_constant_drift(self):
        sol = integrate(lambda t, y: np.ones(1), [5.0], (1.0, 0.0), StepperConfig())
        assert sol.states[-1][0] == pytest.approx(4.0, abs=1e-12)
        assert np.all(np.diff(sol.mesh) < 0.0)
        assert sol.t_start == 1.0 and sol.t_end == 0.0

    def test_stiff_relaxation(self):
        cfg = StepperConfig(reltol=1e-6, abstol=1e-8, method=METHOD_STIFF)
        sol = integrate(stiff_relax, [0.0], (0.0, 1.0), cfg)
        y1 = sol.states[-1][0]
        assert abs(y1 - math.cos(1.0)) <= 1e-3
        assert abs(y1 - STIFF_RELAXATION_Y1) <= 1e-4
        assert sol.step_count < 500

    def test_vector_system_oscillator(self):
        # y'' = -y as a 2d system; exact endpoint (cos 10, -sin 10).
        cfg = StepperConfig(reltol=1e-9, abstol=1e-11)
        sol = integrate(lambda t, y: np.array([y[1], -y[0]]), [1.0, 0.0], (0.0, 10.0), cfg)
        exact = np.array([math.cos(10.0), -math.sin(10.0)])
        assert np.max(np.abs(sol.states[-1] - exact)) < 1e-7


class TestDenseOutput:
    def test_span_start_is_initial_state(self):
        sol = integrate(decay, [1.0], (0.0, 1.0), StepperConfig())
        assert dense_eval(sol, 0.0)[0] == 1.0

    def test_midspan_value(self):
        cfg = StepperConfig(reltol=1e-6, abstol=1e-9)
        sol = integrate(decay, [1.0], (0.0, 1.0), cfg)
        assert abs(dense_eval(sol, 0.5)[0] - math.exp(-0.5)) <= 10.0 * cfg.reltol

    def test_step_midpoints_on_cubic(self):
        # y' = t^2 from 0 has the cubic solution t^3/3.
        cfg = StepperConfig(reltol=1e-6, abstol=1e-9)
        sol = integrate(lambda t, y: np.array([t * t]), [0.0], (0.0, 1.0), cfg)
        for i in range(sol.step_count):
            tm = 0.5 * (sol.mesh[i] + sol.mesh[i + 1])
            assert abs(dense_eval(sol, tm)[0] - tm**3 / 3.0) <= 10.0 * cfg.reltol

    def test_mesh_points_bitwise(self):
        sol = integrate(decay, [1.0, 2.0], (0.0, 1.0), StepperConfig())
        for i, t in enumerate(sol.mesh):
            assert np.array_equal(dense_eval(sol, float(t)), sol.states[i])

    def test_outside_span_raises(self):
        sol = integrate(decay, [1.0], (0.0, 1.0), StepperConfig())
        with pytest.raises(DomainError):
            dense_eval(sol, -0.1)
        with pytest.raises(DomainError):
            dense_eval(sol, 1.1)

    def test_outside_reverse_span_raises(self):
        sol = integrate(decay, [1.0], (1.0, 0.0), StepperConfig())
        with pytest.raises(DomainError):
            dense_eval(sol, 1.0001)
        assert dense_eval(sol, 0.5).shape == (1,)

    def test_dense_error_bounded_everywhere(self):
        cfg = StepperConfig(reltol=1e-6, abstol=1e-8)
        sol = integrate(decay, [1.0], (0.0, 1.0), cfg)
        ts = np.linspace(0.0, 1.0, 1001)
        worst = max(abs(dense_eval(sol, t)[0] - math.exp(-t)) for t in ts)
        assert worst <= 10.0 * (cfg.abstol + cfg.reltol)

    def test_dense_error_bounded_stiff(self):
        cfg = StepperConfig(reltol=1e-6, abstol=1e-8, method=METHOD_STIFF)
        sol = integrate(decay, [1.0], (0.0, 1.0), cfg)
        ts = np.linspace(0.0, 1.0, 1001)
        worst = max(abs(dense_eval(sol, t)[0] - math.exp(-t)) for t in ts)
        assert worst <= 10.0 * (cfg.abstol + cfg.reltol)


class TestStepControl:
    def test_fixed_step_mesh(self):
        cfg = StepperConfig(dt_min=0.03, dt_max=0.03)
        sol = integrate(decay, [1.0], (0.0, 1.0), cfg)
        gaps = np.diff(sol.mesh)
        assert np.allclose(gaps[:-1], 0.03, rtol=0, atol=1e-15)
        assert gaps[-1] <= 0.03 + 1e-15
        assert sol.mesh[-1] == 1.0

    def test_fixed_step_order_explicit(self):
        errs = []
        for dt in (0.1, 0.05):
            cfg = StepperConfig(dt_min=dt, dt_max=dt)
            sol = integrate(decay, [1.0], (0.0, 1.0), cfg)
            errs.append(abs(sol.states[-1][0] - math.exp(-1.0)))
        ratio = errs[0] / errs[1]
        assert 24.0 <= ratio <= 40.0

    def test_fixed_step_order_stiff(self):
        # Non-autonomous forcing exercises the time-derivative stage term;
        # halving dt should shrink the error about 16x (order 4).
        rhs = lambda t, y: -y + np.array([math.cos(2.0 * t)])
        exact = 0.8 * math.exp(-1.0) + 0.2 * math.cos(2.0) + 0.4 * math.sin(2.0)
        errs = []
        for dt in (0.1, 0.05):
            cfg = StepperConfig(dt_min=dt, dt_max=dt, method=METHOD_STIFF)
            sol = integrate(rhs, [1.0], (0.0, 1.0), cfg)
            errs.append(abs(sol.states[-1][0] - exact))
        ratio = errs[0] / errs[1]
        assert 8.0 <= ratio <= 40.0

    def test_tolerance_monotonicity(self):
        rhs = lambda t, y: np.array([y[1], -y[0]])
        y0 = [1.0, 0.0]
        exact = np.array([math.cos(10.0), -math.sin(10.0)])
        errs = []
        for rt in (1e-4, 1e-6):
            cfg = StepperConfig(reltol=rt, abstol=rt * 1e-2)
            sol = integrate(rhs, y0, (0.0, 10.0), cfg)
            errs.append(np.max(np.abs(sol.states[-1] - exact)))
        assert errs[0] >= 10.0 * errs[1]

    def test_reverse_roundtrip(self):
        cfg = StepperConfig(reltol=1e-8, abstol=1e-10)
        fwd = integrate(decay, [1.0], (0.0, 1.0), cfg)
        back = integrate(decay, fwd.states[-1], (1.0, 0.0), cfg)
        assert abs(back.states[-1][0] - 1.0) <= 100.0 * cfg.reltol

    def test_dt_initial_respected(self):
        cfg = StepperConfig(dt_initial=0.025)
        sol = integrate(decay, [1.0], (0.0, 1.0), cfg)
        assert sol.mesh[1] == 0.025

    def test_stiff_beats_explicit_on_stiff_problem(self):
        stiff_cfg = StepperConfig(method=METHOD_STIFF)
        expl_cfg = StepperConfig(max_steps=200_000)
        s1 = integrate(stiff_relax, [0.0], (0.0, 1.0), stiff_cfg)
        s2 = integrate(stiff_relax, [0.0], (0.0, 1.0), expl_cfg)
        assert s1.step_count * 5 < s2.step_count


class TestFailureModes:
    def test_step_budget_exhausted(self):
        cfg = StepperConfig(max_steps=5)
        with pytest.raises(StepBudgetError):
            integrate(stiff_relax, [0.0], (0.0, 1.0), cfg)

    def test_step_size_floor(self):
        # Explicit method with the floor far above its stability limit: the
        # first usable step keeps failing and cannot shrink legally.
        cfg = StepperConfig(dt_min=0.3, dt_max=0.4)
        with pytest.raises(StepSizeError):
            integrate(stiff_relax, [0.0], (0.0, 1.0), cfg)

    def test_nonfinite_rhs(self):
        def bad(t, y):
            return np.array([math.nan]) if t > 0.5 else -y

        with pytest.raises(EvaluationError, match="non-finite"):
            integrate(bad, [1.0], (0.0, 1.0), StepperConfig())

    def test_zero_width_span(self):
        with pytest.raises(ValueError):
            integrate(decay, [1.0], (0.5, 0.5), StepperConfig())


class TestAccounting:
    def test_step_count_matches_mesh(self):
        sol = integrate(decay, [1.0], (0.0, 1.0), StepperConfig())
        assert sol.step_count == len(sol.mesh) - 1
        assert sol.step_count >= 1

    def test_rhs_evals_explicit(self):
        sol = integrate(decay, [1.0], (0.0, 1.0), StepperConfig())
        # 1 initial slope + 1 for the starting-step probe + 6 per attempt
        # (FSAL reuses the last stage of an accepted step).
        attempts = sol.step_count + sol.rejected_steps
        assert sol.rhs_evals == 2 + 6 * attempts

    def test_rhs_evals_stiff(self):
        cfg = StepperConfig(method=METHOD_STIFF)
        sol = integrate(decay, [1.0], (0.0, 1.0), cfg)
        # Per accepted step: 1-column FD Jacobian + time slope + end slope;
        # per attempt: two fresh stage evaluations; plus the two startup
        # evaluations.
        n = 1
        expected = 2 + sol.step_count * (n + 2) + 2 * (sol.step_count + sol.rejected_steps)
        assert sol.rhs_evals == expected
