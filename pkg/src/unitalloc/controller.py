"""Control-unit side of the feedback loops.

One integral controller per resource: the broadcast normalization factor
moves against the utilization error,

    omega_j(k+1) = omega_j(k) - tau_j * (total_xi_j(k) - gamma_j * C_j),

optionally damped by gamma_j < 1 to curb overshoot, and clamped to a
configurable range so that an aggressive gain cannot silently drive the
factor negative.  The controller sees only aggregate draw totals; nothing in
this module can reach per-agent probabilities or cost functions.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .cost_model import classify_v_limit, grad_column, stack_population


@dataclass(frozen=True)
class ResourceSpec:
    """Static parameters of one capacity-constrained resource."""

    capacity: float
    tau: float
    gamma: float = 1.0
    omega0: float = 0.35
    omega_min: float = 0.0
    omega_max: float = 1e3

    def __post_init__(self):
        if self.capacity <= 0:
            raise ValueError("capacity must be positive")
        if self.tau <= 0:
            raise ValueError("tau must be positive")
        if not 0.0 < self.gamma <= 1.0:
            raise ValueError("gamma must lie in (0, 1]")
        if self.omega_min < 0:
            raise ValueError("omega_min must be nonnegative")
        if not self.omega_min <= self.omega0 <= self.omega_max:
            raise ValueError("omega0 must lie within [omega_min, omega_max]")


@dataclass(frozen=True)
class SpecTable:
    """Vectorised view of a list of ResourceSpec, for the per-step update."""

    capacity: np.ndarray
    tau: np.ndarray
    gamma: np.ndarray
    omega0: np.ndarray
    omega_min: np.ndarray
    omega_max: np.ndarray

    @classmethod
    def from_specs(cls, specs) -> "SpecTable":
        specs = list(specs)
        return cls(
            capacity=np.array([s.capacity for s in specs], dtype=float),
            tau=np.array([s.tau for s in specs], dtype=float),
            gamma=np.array([s.gamma for s in specs], dtype=float),
            omega0=np.array([s.omega0 for s in specs], dtype=float),
            omega_min=np.array([s.omega_min for s in specs], dtype=float),
            omega_max=np.array([s.omega_max for s in specs], dtype=float),
        )


@dataclass
class ControllerState:
    omega: np.ndarray         # (m,) current normalization factors
    step: int
    saturations: np.ndarray   # (m,) count of clamped updates per resource


def init_controller(specs) -> ControllerState:
    table = specs if isinstance(specs, SpecTable) else SpecTable.from_specs(specs)
    m = table.capacity.shape[0]
    return ControllerState(omega=table.omega0.copy(), step=0,
                           saturations=np.zeros(m, dtype=np.int64))


def update_omega(state: ControllerState, specs, totals) -> ControllerState:
    """One integral-control step from the aggregate draw totals.

    `totals` is the per-resource sum of instantaneous allocations at the
    current step; it is the only piece of agent information the control unit
    ever receives.
    """
    table = specs if isinstance(specs, SpecTable) else SpecTable.from_specs(specs)
    totals = np.asarray(totals, dtype=float)
    if np.any(totals < 0):
        raise ValueError("totals must be nonnegative")
    raw = state.omega - table.tau * (totals - table.gamma * table.capacity)
    new = np.clip(raw, table.omega_min, table.omega_max)
    return ControllerState(
        omega=new,
        step=state.step + 1,
        saturations=state.saturations + (raw != new),
    )


@dataclass(frozen=True)
class TauBoundEstimate:
    """Upper bound on the admissible gain, scanned over the given population.

    `divergent` flags populations whose response kernel v blows up as the
    allocation approaches 0 (a pure monomial of exponent > 2 with no linear
    term in the gradient); the scanned bound then only covers [eps, 1] and
    no positive gain is admissible on the full range.
    """

    bound: float
    divergent: bool
    eps: float
    grid_points: int


def estimate_tau_bound(population, j: int, grid_points: int = 512, *,
                       include_linear: bool = True, eps: float = 1e-3) -> TauBoundEstimate:
    """Gain bound 1 / max_y sum_i y/g'_i(y) for resource j via a 1-D grid scan.

    Costs are separable per resource, so the maximum of the sum equals the
    sum of per-agent maxima over a single scan of y_j in [eps, 1].
    """
    population = list(population)
    if not population:
        raise ValueError("population is empty")
    tables = stack_population(population)
    grid = np.linspace(eps, 1.0, grid_points)
    per_agent_max = np.zeros(tables.n)
    for z in grid:
        zz = np.full(tables.n, z)
        v = zz / grad_column(tables, j, zz, include_linear)
        np.maximum(per_agent_max, v, out=per_agent_max)
    divergent = any(
        classify_v_limit(g, j, include_linear) == "divergent" for g in population
    )
    return TauBoundEstimate(
        bound=float(1.0 / per_agent_max.sum()),
        divergent=divergent,
        eps=eps,
        grid_points=grid_points,
    )


def report_overhead_bits(mu_bits_per_float: int, m: int) -> int:
    """Broadcast cost per time step: one mu-bit float per resource, agent-count free."""
    if mu_bits_per_float < 1:
        raise ValueError("mu_bits_per_float must be >= 1")
    if m < 1:
        raise ValueError("m must be >= 1")
    return mu_bits_per_float * m
