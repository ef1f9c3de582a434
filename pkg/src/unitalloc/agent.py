"""Per-agent demand dynamics: response probabilities, Bernoulli draws, running averages.

An agent starts by claiming every resource (xi(0) = 1, y(0) = 1), which keeps
its average allocation strictly positive forever, then at each step responds
to the broadcast normalization factors with probability

    sigma_j = omega_j * y_j / g'_j(y)

clamped into [0, 1], draws one Bernoulli sample per resource from its private
random stream, and folds the outcome into the running mean.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .cost_model import CostFunction, IndeterminateRatio


def agent_stream(master_seed: int, agent_id: int) -> np.random.Generator:
    """Private PCG64 stream for one agent.

    Derived from (master_seed, agent_id) by seed-splitting, so the stream is
    independent of how many agents exist and of any scheduling order.
    """
    return np.random.Generator(
        np.random.PCG64(np.random.SeedSequence(master_seed, spawn_key=(agent_id,)))
    )


@dataclass
class AgentStepRecord:
    sigma: np.ndarray      # (m,) probabilities actually used
    clamped: np.ndarray    # (m,) bool, True where the raw value left [0, 1]
    xi_next: np.ndarray    # (m,) drawn 0/1 allocations


@dataclass
class AgentState:
    """One agent's instantaneous draws, running averages and RNG stream.

    `ones` counts the exact number of 1-draws per resource (including the
    all-ones initialization), so y == ones/(step+1) up to float rounding.
    Each state is owned by exactly one worker at a time; mutation is in place.
    """

    id: int
    cost: CostFunction
    xi: np.ndarray
    y: np.ndarray
    step: int
    rng: np.random.Generator
    ones: np.ndarray

    @classmethod
    def fresh(cls, agent_id: int, cost: CostFunction, master_seed: int) -> "AgentState":
        m = cost.m
        return cls(
            id=agent_id,
            cost=cost,
            xi=np.ones(m),
            y=np.ones(m),
            step=0,
            rng=agent_stream(master_seed, agent_id),
            ones=np.ones(m, dtype=np.int64),
        )

    def compute_sigma(self, omega, include_linear: bool = True):
        """Response probabilities for the current averages under broadcast omega.

        Returns (sigma, clamped). Raw values outside [0, 1] are clamped and
        flagged; a 0/0 ratio (y_j = 0 with zero gradient) is fatal and cannot
        occur under the all-ones initialization.
        """
        omega = np.atleast_1d(np.asarray(omega, dtype=float))
        m = self.cost.m
        grads = np.empty(m)
        for j in range(m):
            grads[j] = self.cost.grad(self.y, j, include_linear)
        if np.any((grads == 0.0) & (self.y == 0.0)):
            raise IndeterminateRatio("0/0 response ratio; agent average hit zero")
        raw = omega * self.y / grads
        clamped = (raw < 0.0) | (raw > 1.0)
        sigma = np.clip(raw, 0.0, 1.0)
        return sigma, clamped

    def draw(self, sigma) -> np.ndarray:
        """Independent Bernoulli(sigma_j) draws; consumes exactly m uniforms."""
        sigma = np.asarray(sigma, dtype=float)
        u = self.rng.random(self.cost.m)
        return (u < sigma).astype(np.float64)

    def update_average(self, xi_next) -> "AgentState":
        """Fold xi(k+1) into the running mean: y <- ((k+1) y + xi) / (k+2)."""
        xi_next = np.asarray(xi_next, dtype=float)
        k = self.step
        self.y = ((k + 1) * self.y + xi_next) / (k + 2)
        self.xi = xi_next
        self.ones += xi_next.astype(np.int64)
        self.step = k + 1
        return self

    def step_once(self, omega, include_linear: bool = True) -> AgentStepRecord:
        """One full agent tick: probabilities, draw, average update."""
        sigma, clamped = self.compute_sigma(omega, include_linear)
        xi_next = self.draw(sigma)
        self.update_average(xi_next)
        return AgentStepRecord(sigma=sigma, clamped=clamped, xi_next=xi_next)
