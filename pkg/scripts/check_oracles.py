"""Independent checks of the closed forms used as test oracles.

Integrates the two-moment system for the constant kernel with a high-order
ODE method and compares with the closed-form moments; also checks the
derived daughter constants by adaptive quadrature.
"""
import math

import numpy as np
from scipy.integrate import quad, solve_ivp


def closed_form(t, m, nu, mm0, m00):
    expo = -(1.0 - m) * (nu + 1.0) / (nu + m + 1.0)
    return mm0 * (1.0 - 2.0 * m00 * t / (nu + 1.0)) ** expo


def check_constant_kernel(m, nu, mm0, m00, t_end):
    def rhs(t, y):
        m0, mm = y
        return [2.0 / (nu + 1.0) * m0 * m0,
                2.0 * (1.0 - m) / (nu + m + 1.0) * mm * m0]

    ts = np.linspace(0.0, t_end, 9)
    sol = solve_ivp(rhs, (0.0, t_end), [m00, mm0], method="DOP853",
                    t_eval=ts, rtol=1e-13, atol=1e-15)
    worst = max(abs(sol.y[1, k] / closed_form(t, m, nu, mm0, m00) - 1.0)
                for k, t in enumerate(ts))
    return worst


def main():
    cases = [(0.0, 0.0, 1.0, 1.0), (0.5, 0.0, math.gamma(1.5), 1.0),
             (2.0, 0.0, 2.0, 1.0), (0.5, -0.5, 1.3, 0.7), (-0.2, -0.25, 3.0, 2.0)]
    for m, nu, mm0, m00 in cases:
        t_end = 0.9 * (nu + 1.0) / (2.0 * m00)
        err = check_constant_kernel(m, nu, mm0, m00, t_end)
        print(f"oracle m={m:5.2f} nu={nu:5.2f}: max rel err {err:.2e}")
        assert err < 1e-8
    print("M_0.5(0.25), nu=0:", closed_form(0.25, 0.5, 0.0, math.gamma(1.5), 1.0),
          " expected ~", math.gamma(1.5) * 2 ** (1 / 3))

    nu = -0.5
    val, _ = quad(lambda z: z ** 0.5 * (nu + 2) * z ** nu, 0.0, 1.0)
    print("partial moment nu=-0.5 m=0.5 on (0,1):", val)
    p = 1.5
    bp, _ = quad(lambda z: ((nu + 2) * z ** nu) ** p, 0.0, 1.0, limit=200)
    print("B_1.5 nu=-0.5 by quadrature:", 2 * bp, " closed form:",
          2 * (nu + 2) ** p / (1 + nu * p))
    # comparison Riccati: L' = 4 (g-1) L^2, g=2, L(0)=1 -> 2 at t=1/8
    sol = solve_ivp(lambda t, y: [4.0 * y[0] ** 2], (0, 0.125), [1.0],
                    method="DOP853", rtol=1e-13, atol=1e-15)
    print("Riccati comparison at t=1/8:", sol.y[0, -1])


if __name__ == "__main__":
    main()
