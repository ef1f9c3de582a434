"""Ground-truth solvers, independent of the stochastic simulation path.

Three routes to the same answers:

* per-agent gradient inversion (bisection) for the fixed point of the
  constant-broadcast dynamics,
* a dual bisection on the per-resource consensus derivative for the social
  optimum under capacity equality constraints, with a projected-gradient
  cross-check,
* exhaustive grid minimisation (dynamic programming over the allocation
  grid) for small instances.

Separability does all the heavy lifting: every solve decomposes per
resource, and within a resource per agent.
"""

from __future__ import annotations

import json
from dataclasses import dataclass

import numpy as np

from .cost_model import (
    PopulationTables,
    eval_total,
    grad_column,
    stack_population,
)

BISECT_LO = 1e-15
BISECT_ITERS = 200


class NoRootError(ValueError):
    """The target derivative level is outside the gradient's range on (0, 1]."""


class InfeasibleCapacityError(ValueError):
    pass


class OdeDivergenceError(RuntimeError):
    pass


def _inverse_gradient(tables: PopulationTables, j: int, level: float,
                      include_linear: bool) -> np.ndarray:
    """Solve g'_i(y) = level per agent on [BISECT_LO, 1], capped at the ends.

    Agents whose gradient at 1 is still below `level` return 1; agents whose
    gradient never drops below `level` return the lower bracket end.  The
    caller decides whether capping is legitimate (dual search) or an error
    (fixed-point solve).
    """
    n = tables.n
    lo = np.full(n, BISECT_LO)
    hi = np.ones(n)
    for _ in range(BISECT_ITERS):
        mid = 0.5 * (lo + hi)
        below = grad_column(tables, j, mid, include_linear) < level
        lo = np.where(below, mid, lo)
        hi = np.where(below, hi, mid)
    return 0.5 * (lo + hi)


def solve_fixed_point(population, omega, include_linear: bool = True) -> np.ndarray:
    """Per-agent roots of g'_j(y) = omega_j, the limits of the constant-broadcast run.

    Returns an (n, m) matrix. Raises NoRootError when some omega_j falls
    outside an agent's gradient range (g' near 0, g' at 1].
    """
    population = list(population)
    tables = stack_population(population)
    omega = np.atleast_1d(np.asarray(omega, dtype=float))
    if omega.shape != (tables.m,):
        raise ValueError(f"omega has shape {omega.shape}, expected ({tables.m},)")
    y_star = np.empty((tables.n, tables.m))
    for j in range(tables.m):
        g_lo = grad_column(tables, j, np.full(tables.n, BISECT_LO), include_linear)
        g_hi = grad_column(tables, j, np.ones(tables.n), include_linear)
        bad = (omega[j] <= g_lo) | (omega[j] > g_hi)
        if np.any(bad):
            agents = np.flatnonzero(bad)[:5].tolist()
            raise NoRootError(
                f"omega[{j}]={omega[j]} outside gradient range on (0,1] "
                f"for agents {agents}"
            )
        y_star[:, j] = _inverse_gradient(tables, j, float(omega[j]), include_linear)
    return y_star


@dataclass
class OracleSolution:
    """Social optimum with its KKT certificate."""

    y_star: np.ndarray             # (n, m)
    mu: np.ndarray                 # (m,) capacity multipliers (consensus derivatives)
    lam: np.ndarray                # (m,) nonnegativity multipliers; zero when interior
    achieved: np.ndarray           # (m,) sum of optimal allocations
    capacity_residual: np.ndarray  # (m,) |achieved - C|
    consensus_residual: np.ndarray # (m,) spread of derivatives over uncapped agents
    cap_active: np.ndarray         # (n, m) bool, allocation pinned at 1
    objective: float
    method: str
    include_linear: bool

    def to_json(self) -> dict:
        return {
            "y_star": self.y_star.tolist(),
            "mu": self.mu.tolist(),
            "lambda": self.lam.tolist(),
            "achieved": self.achieved.tolist(),
            "capacity_residual": self.capacity_residual.tolist(),
            "consensus_residual": self.consensus_residual.tolist(),
            "cap_active": self.cap_active.astype(int).tolist(),
            "objective": self.objective,
            "method": self.method,
            "include_linear": self.include_linear,
        }

    def dumps(self) -> str:
        return json.dumps(self.to_json(), sort_keys=True)


def _check_capacities(n: int, capacities: np.ndarray):
    if np.any(capacities <= 0) or np.any(capacities > n):
        raise InfeasibleCapacityError(
            f"capacities {capacities.tolist()} must lie in (0, n={n}]"
        )


def _dual_bisection(tables: PopulationTables, capacities: np.ndarray,
                    include_linear: bool) -> tuple[np.ndarray, np.ndarray]:
    """Per resource, find mu_j with sum_i clip(inverse gradient, cap 1) = C_j."""
    n, m = tables.n, tables.m
    y = np.empty((n, m))
    mu = np.empty(m)
    for j in range(m):
        hi = float(grad_column(tables, j, np.ones(n), include_linear).max()) * (1 + 1e-12)
        lo = 0.0
        for _ in range(BISECT_ITERS):
            mid = 0.5 * (lo + hi)
            total = _inverse_gradient(tables, j, mid, include_linear).sum()
            if total < capacities[j]:
                lo = mid
            else:
                hi = mid
        mu[j] = 0.5 * (lo + hi)
        y[:, j] = _inverse_gradient(tables, j, float(mu[j]), include_linear)
    return y, mu


def _project_capped_simplex(x: np.ndarray, total: float) -> np.ndarray:
    """Euclidean projection onto {y: sum y = total, 0 <= y <= 1}."""
    lo = x.min() - 1.0
    hi = x.max()
    for _ in range(100):
        theta = 0.5 * (lo + hi)
        s = np.clip(x - theta, 0.0, 1.0).sum()
        if s > total:
            lo = theta
        else:
            hi = theta
    return np.clip(x - 0.5 * (lo + hi), 0.0, 1.0)


def _projected_gradient(tables: PopulationTables, capacities: np.ndarray,
                        include_linear: bool, iters: int = 20000,
                        tol: float = 1e-12) -> np.ndarray:
    """Generic cross-check solver; slower and less exact than the dual route."""
    n, m = tables.n, tables.m
    y = np.tile(capacities / n, (n, 1))
    # Lipschitz bound of the gradient map from curvature at y = 1.
    lips = 1.0
    for j in range(m):
        curv = (tables.gcoef[j] * tables.gexpm1[j]).sum(axis=1)
        lips = max(lips, float(curv.max()))
    step = 1.0 / lips
    for _ in range(iters):
        g = np.empty((n, m))
        for j in range(m):
            g[:, j] = grad_column(tables, j, y[:, j], include_linear)
        y_new = np.empty_like(y)
        for j in range(m):
            y_new[:, j] = _project_capped_simplex(y[:, j] - step * g[:, j],
                                                  float(capacities[j]))
        if np.abs(y_new - y).max() < tol:
            y = y_new
            break
        y = y_new
    return y


def solve_social_optimum(population, capacities, method: str = "dual-bisection",
                         include_linear: bool = True) -> OracleSolution:
    """Minimise the social cost under per-resource capacity equality.

    The dual route exploits that the optimal allocations equalise the
    derivatives per resource: bisect on the common derivative level mu_j
    until the inverted gradients sum to the capacity, capping allocations
    at 1 (the bisection map stays monotone with caps in place).
    """
    population = list(population)
    tables = stack_population(population)
    capacities = np.atleast_1d(np.asarray(capacities, dtype=float))
    if capacities.shape != (tables.m,):
        raise ValueError(f"capacities shape {capacities.shape}, expected ({tables.m},)")
    _check_capacities(tables.n, capacities)

    if method == "dual-bisection":
        y, mu = _dual_bisection(tables, capacities, include_linear)
    elif method == "projected-gradient":
        y = _projected_gradient(tables, capacities, include_linear)
        mu = np.array([
            float(np.median(grad_column(tables, j, y[:, j], include_linear)))
            for j in range(tables.m)
        ])
    else:
        raise ValueError(f"unknown method {method!r}")

    cap_active = y >= 1.0 - 1e-9
    consensus = np.empty(tables.m)
    for j in range(tables.m):
        free = ~cap_active[:, j]
        if np.any(free):
            g = grad_column(tables, j, y[:, j], include_linear)[free]
            consensus[j] = float(g.max() - g.min())
        else:
            consensus[j] = 0.0
    achieved = y.sum(axis=0)
    return OracleSolution(
        y_star=y,
        mu=mu,
        lam=np.zeros(tables.m),
        achieved=achieved,
        capacity_residual=np.abs(achieved - capacities),
        consensus_residual=consensus,
        cap_active=cap_active,
        objective=eval_total(tables, y),
        method=method,
        include_linear=include_linear,
    )


# ---------------------------------------------------------------------------
# Exhaustive grid oracle for small instances.
# ---------------------------------------------------------------------------


def _resource_cost_table(tables: PopulationTables, j: int, grid: np.ndarray) -> np.ndarray:
    """Cost of agent i placing y on the grid for resource j alone: (n, grid) matrix."""
    vals = tables.lin[:, j:j + 1] * grid[None, :]
    vals = vals + (
        tables.ecoef[j][:, :, None] * grid[None, None, :] ** tables.eexp[j][:, :, None]
    ).sum(axis=1)
    return vals


def brute_force_social_optimum(population, capacities, resolution: float = 1e-3):
    """Exact minimiser over the allocation grid {0, res, 2 res, ..., 1}^n per resource.

    The capacity constraint decouples per resource, and on the grid it becomes
    an integer knapsack equality solved exactly by dynamic programming — the
    result is identical to full enumeration of the grid, at tractable cost.
    Capacities must sit on the grid.
    """
    population = list(population)
    tables = stack_population(population)
    capacities = np.atleast_1d(np.asarray(capacities, dtype=float))
    _check_capacities(tables.n, capacities)
    scale = round(1.0 / resolution)
    grid = np.arange(scale + 1) / scale
    n, m = tables.n, tables.m
    y = np.empty((n, m))
    total_obj = 0.0
    for j in range(m):
        target = capacities[j] * scale
        units = round(float(target))
        if abs(target - units) > 1e-6:
            raise ValueError(
                f"capacity {capacities[j]} for resource {j} is not on the "
                f"{resolution} grid"
            )
        cost = _resource_cost_table(tables, j, grid)
        # D[s] = best cost of the first i agents holding s grid units total.
        dp = np.full(units + 1, np.inf)
        upper = min(units, scale)
        dp[: upper + 1] = cost[0, : upper + 1]
        choice = np.zeros((n, units + 1), dtype=np.int32)
        choice[0, : upper + 1] = np.arange(upper + 1)
        for i in range(1, n):
            best = np.full(units + 1, np.inf)
            pick = np.zeros(units + 1, dtype=np.int32)
            for u in range(min(units, scale) + 1):
                cand = np.full(units + 1, np.inf)
                cand[u:] = dp[: units + 1 - u] + cost[i, u]
                better = cand < best
                best = np.where(better, cand, best)
                pick[better] = u
            dp = best
            choice[i] = pick
        if not np.isfinite(dp[units]):
            raise InfeasibleCapacityError(
                f"no grid allocation meets capacity {capacities[j]}"
            )
        total_obj += float(dp[units])
        s = units
        for i in range(n - 1, -1, -1):
            u = int(choice[i, s])
            y[i, j] = grid[u]
            s -= u
    return y, total_obj


# ---------------------------------------------------------------------------
# Mean-field flow.
# ---------------------------------------------------------------------------


@dataclass
class OdeTrajectory:
    times: np.ndarray      # (S,)
    states: np.ndarray     # (S, n, m)
    final: np.ndarray      # (n, m)


def integrate_mean_ode(population, omega, y0, step: float = 0.01,
                       horizon: float = 40.0, include_linear: bool = True,
                       sample_every: int = 10) -> OdeTrajectory:
    """Fixed-step 4th-order integration of the decoupled mean flow.

    dy_ij/dt = omega_j * v_i(y_ij) - y_ij, whose stable rest point is the
    gradient-inversion fixed point.  The flow is integrated on the whole
    (n, m) state at once; leaving (0, 1 + margin) aborts with a diagnostic
    since v is only meaningful on the allocation range.
    """
    if step <= 0:
        raise ValueError("step must be positive")
    population = list(population)
    tables = stack_population(population)
    omega = np.atleast_1d(np.asarray(omega, dtype=float))
    y = np.array(y0, dtype=float)
    if y.ndim == 0:
        y = np.full((tables.n, tables.m), float(y))
    if y.shape != (tables.n, tables.m):
        raise ValueError(f"y0 shape {y.shape}, expected ({tables.n}, {tables.m})")
    if np.any(y <= 0) or np.any(y > 1):
        raise ValueError("y0 must lie in (0, 1]")

    def rhs(state):
        g = np.empty_like(state)
        for j in range(tables.m):
            g[:, j] = grad_column(tables, j, state[:, j], include_linear)
        return omega * state / g - state

    n_steps = int(round(horizon / step))
    times = [0.0]
    states = [y.copy()]
    margin = 0.25
    for k in range(n_steps):
        k1 = rhs(y)
        k2 = rhs(y + 0.5 * step * k1)
        k3 = rhs(y + 0.5 * step * k2)
        k4 = rhs(y + step * k3)
        y = y + (step / 6.0) * (k1 + 2.0 * k2 + 2.0 * k3 + k4)
        if not np.all(np.isfinite(y)) or np.any(y <= 0) or np.any(y > 1 + margin):
            raise OdeDivergenceError(
                f"trajectory left (0, {1 + margin}] at t={(k + 1) * step:.4f}"
            )
        if (k + 1) % sample_every == 0 or k == n_steps - 1:
            times.append((k + 1) * step)
            states.append(y.copy())
    return OdeTrajectory(times=np.array(times), states=np.array(states), final=y)
