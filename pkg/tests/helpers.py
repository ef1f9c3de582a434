"""Shared generators for randomized checks (seeded, no global state)."""

import numpy as np

from unitalloc import CostFunction, Monomial


def random_cost(rng, m, allow_linear=True):
    """Random valid cost: mandatory quadratic per resource, optional extras."""
    linear = []
    monos = []
    for j in range(m):
        lin = float(rng.uniform(0.0, 1.5)) if (allow_linear and rng.random() < 0.5) else 0.0
        linear.append(lin)
        monos.append(Monomial(j, float(rng.uniform(0.5, 1.5)), 2.0))
        if rng.random() < 0.4:
            monos.append(Monomial(j, float(rng.uniform(0.2, 1.0)),
                                  float(rng.choice([3.0, 4.0]))))
    return CostFunction(tuple(linear), tuple(monos))


def random_instance(rng, max_cells=6):
    """Small random allocation instance: population + on-grid capacities."""
    n = int(rng.integers(2, max_cells + 1))
    m = int(rng.integers(1, max_cells // n + 1))
    population = [random_cost(rng, m) for _ in range(n)]
    caps = np.round(rng.uniform(0.25 * n, 0.65 * n, size=m), 3)
    caps = np.maximum(caps, 0.001)
    return population, caps
