"""Regenerates the frozen LQ gain reference for the double integrator.

Problem: xdot = A x + B u with A = [[0,1],[0,0]], B = [[0],[1]],
l = (x'x + u'u)/2, terminal cost x'x/2 on [0, 2].

Oracle: the matrix Riccati equation
    -dS/dt = R_x + A'S + S A - S B R_u^{-1} B' S,   S(2) = I
integrated backward with fixed-step classical RK4 at dt = 1e-5, recording
K(t) = R_u^{-1} B' S(t) at ten interior times plus S(0).  Cross-checked
via the Hamiltonian two-point form S = Y X^{-1} with
[X; Y](t) = expm(H (t - tf)) [I; S(tf)] (needs scipy, accuracy ~1e-12).

Run: python3 tests/oracles/gen_lq_gains.py
Paste the printed block into tests/_reference_values.py.
"""

import numpy as np

A = np.array([[0.0, 1.0], [0.0, 0.0]])
B = np.array([[0.0], [1.0]])
RX = np.eye(2)
RU_INV = np.array([[1.0]])
SF = np.eye(2)
TF = 2.0
DT = 1e-5
SAMPLE_TIMES = [0.1, 0.3, 0.5, 0.7, 0.9, 1.1, 1.3, 1.5, 1.7, 1.9]


def sdot(s):
    gain = s @ B @ RU_INV @ B.T @ s
    return -(RX + A.T @ s + s @ A - gain)


def rk4_sweep():
    """Backward RK4 from TF to 0, returning S at SAMPLE_TIMES and at 0."""
    marks = sorted(SAMPLE_TIMES + [0.0], reverse=True)
    s = SF.copy()
    t = TF
    out = {}
    for mark in marks:
        n = round((t - mark) / DT)
        h = -(t - mark) / n
        for _ in range(n):
            k1 = sdot(s)
            k2 = sdot(s + 0.5 * h * k1)
            k3 = sdot(s + 0.5 * h * k2)
            k4 = sdot(s + h * k3)
            s = s + (h / 6.0) * (k1 + 2.0 * k2 + 2.0 * k3 + k4)
        t = mark
        out[mark] = s.copy()
    return out


def hamiltonian_check(t):
    from scipy.linalg import expm

    h = np.block([[A, -B @ RU_INV @ B.T], [-RX, -A.T]])
    z = expm(h * (t - TF)) @ np.vstack([np.eye(2), SF])
    x, y = z[:2], z[2:]
    return y @ np.linalg.inv(x)


if __name__ == "__main__":
    table = rk4_sweep()
    worst = 0.0
    for t in SAMPLE_TIMES + [0.0]:
        worst = max(worst, np.max(np.abs(table[t] - hamiltonian_check(t))))
    print(f"# max |RK4 - expm| over samples: {worst:.3e}")
    print("LQ_GAIN_TIMES = (")
    for t in SAMPLE_TIMES:
        print(f"    {t!r},")
    print(")")
    print("LQ_GAINS = (")
    for t in SAMPLE_TIMES:
        k = (RU_INV @ B.T @ table[t])[0]
        print(f"    ({float(k[0])!r}, {float(k[1])!r}),")
    print(")")
    s0 = table[0.0]
    print(
        "LQ_S0 = "
        f"(({float(s0[0,0])!r}, {float(s0[0,1])!r}), "
        f"({float(s0[1,0])!r}, {float(s0[1,1])!r}))"
    )
    x0 = np.array([1.0, 0.0])
    print(f"LQ_OPTIMAL_COST = {0.5 * float(x0 @ s0 @ x0)!r}")
