"""Continuous-time iterative LQR trajectory optimization.

The solver alternates a backward square-root Riccati sweep (producing
time-varying feedforward and feedback gains) with a line-searched forward
rollout, both driven by an adaptive-step ODE integrator with dense output.
"""

__version__ = "0.1.0"
