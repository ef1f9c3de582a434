"""Sanity tooling tour: admissibility scans, gain bounds, broadcast overhead.

Before trusting a run, two things must hold: every agent's response
probability omega * y / g'(y) has to stay inside (0, 1) on the allocation
range, and the control gain tau has to sit below 1 / max_y sum_i y/g'_i(y).
This demo scans both for the EV population and shows why the convention of
dropping the shared linear cost terms from the derivative is a trade-off:
faster consensus, but probabilities that blow up near zero allocation (the
clamp then papers over the overshoot).

Usage: python demos/admissibility_and_gains.py
"""

import numpy as np

from unitalloc import (
    check_admissible,
    estimate_tau_bound,
    make_ev_population,
    quadratic_cost,
    report_overhead_bits,
)


def main():
    print("== a textbook-admissible family ==")
    pop = [quadratic_cost(c) for c in np.linspace(1.0, 3.0, 10)]
    rep = check_admissible(pop, [0.5], grid_points=64)
    print(f"   10 quadratics, omega=0.5: sigma in [{rep.a:.4f}, {rep.b:.4f}] "
          f"-> admissible: {rep.passed}")
    rep = check_admissible(pop, [2.5], grid_points=64)
    print(f"   same family, omega=2.5:   sigma in [{rep.a:.4f}, {rep.b:.4f}] "
          f"-> admissible: {rep.passed} (probability would exceed 1)")

    print("\n== the EV population, both derivative conventions ==")
    ev = make_ev_population(1200, seed=0, class_sizes=(300,) * 4)
    omega = [0.328, 0.35]
    with_lin = check_admissible(ev, omega, grid_points=64, include_linear=True)
    print(f"   true derivative:    sigma in [{with_lin.a:.5f}, {with_lin.b:.5f}], "
          f"limits at 0: all 'zero' -> fails condition sigma > 0 at the origin")
    no_lin = check_admissible(ev, omega, grid_points=64, include_linear=False)
    kinds = sorted({k for row in no_lin.limit_at_zero for k in row})
    print(f"   shifted derivative: sigma in [{no_lin.a:.5f}, {no_lin.b:.2f}], "
          f"limit kinds at 0: {kinds}")
    print("   -> quartic/sextic classes make sigma diverge near 0; the engine "
          "clamps and counts those events")

    print("\n== gain bounds per charger type ==")
    for j, tau_used in enumerate([0.0002275, 0.0002125]):
        est = estimate_tau_bound(ev, j, include_linear=True)
        print(f"   resource {j + 1}: scanned bound {est.bound:.5f}  "
              f"(preset tau {tau_used} sits {est.bound / tau_used:.0f}x below)")
        est_nl = estimate_tau_bound(ev, j, include_linear=False)
        print(f"               without linear terms: divergent={est_nl.divergent} "
              f"(bound over [{est_nl.eps}, 1] only: {est_nl.bound:.2e})")

    print("\n== broadcast overhead ==")
    for mu, m in [(64, 2), (32, 1), (64, 5)]:
        print(f"   {m} resources at {mu}-bit floats: "
              f"{report_overhead_bits(mu, m)} bits per step, independent of n")


if __name__ == "__main__":
    main()
