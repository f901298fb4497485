"""Capture-time density against the two closed-form cases, with grid refinement.

Usage: python scripts/volterra_examples.py
"""

import numpy as np
from scipy import stats

from ecmabund.capture import escaping_kernel, full_space_kernel, solve_volterra

ALPHA = 0.1


def main():
    print(f"{'case':<12}{'dt':>10}{'max abs err':>14}{'max rel err':>14}{'bound 2*a*dt':>14}")
    cases = [
        ("full space", full_space_kernel(), 1.5, 0.0, lambda t: ALPHA * np.exp(-ALPHA * t)),
        ("escaping", escaping_kernel(2), 2.5, 1.5,
         lambda t: ALPHA * np.exp(-ALPHA * t) * stats.chi2.cdf(t ** -2.0, 2)),
    ]
    for name, kernel, tH, t_from, exact in cases:
        prev = None
        for dt in (1 / 60, 1 / 120, 1 / 240):
            sol = solve_volterra(kernel, ALPHA, 0.0, tH, dt)
            sel = sol.t >= t_from - 1e-12
            if t_from == 0.0:
                sel[0] = True
            ref = exact(sol.t[sel])
            err = np.abs(sol.f[sel] - ref)
            line = f"{name:<12}{dt:>10.5f}{err.max():>14.3e}{np.max(err / ref):>14.3e}{2 * ALPHA * dt:>14.3e}"
            if prev is not None:
                line += f"   ratio {prev / err.max():.3f}"
            print(line)
            prev = err.max()


if __name__ == "__main__":
    main()
