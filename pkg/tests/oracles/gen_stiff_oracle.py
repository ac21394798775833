"""Regenerates the frozen reference value for the stiff relaxation test.

Problem: ydot = -1e4 (y - cos t), y(0) = 0, evaluated at t = 1.

Oracle: fixed-step backward Euler at dt = 1e-6.  The scheme is A-stable and
first order, so with 1e6 steps the global error is ~1e-7, far inside the
1e-3 acceptance band.  The closed form
    y(t) = (a^2 cos t + a sin t) / (a^2 + 1) - a^2/(a^2+1) e^(-a t),  a = 1e4
is printed alongside as an independent cross-check.

Run: python3 tests/oracles/gen_stiff_oracle.py
Paste the printed constant into tests/_reference_values.py.
"""

import math

A = 1e4
DT = 1e-6
STEPS = 1_000_000


def backward_euler():
    y = 0.0
    denom = 1.0 + DT * A
    for n in range(1, STEPS + 1):
        t = n * DT
        y = (y + DT * A * math.cos(t)) / denom
    return y


def closed_form(t):
    c = A * A / (A * A + 1.0)
    return c * math.cos(t) + (A / (A * A + 1.0)) * math.sin(t) - c * math.exp(-A * t)


if __name__ == "__main__":
    y_be = backward_euler()
    y_cf = closed_form(1.0)
    print(f"backward Euler y(1) = {y_be!r}")
    print(f"closed form    y(1) = {y_cf!r}")
    print(f"difference          = {abs(y_be - y_cf):.3e}")
