"""Coupled feedback-loop simulator.

Per time step k the engine records the state (xi(k), y(k), omega(k)),
feeds the aggregate draw totals to the control unit to produce omega(k+1),
computes every agent's response probability from (omega(k), y(k)), draws
xi(k+1) from the agents' private streams and folds it into the running
averages.  The control unit only ever sees the totals.

Agents are stored as (n, m) matrices and stepped by a single kernel applied
to row blocks; "vector", "loop" and "parallel" execution are different block
schedules of the same kernel over the same per-agent random streams, so all
three produce bitwise-identical traces.
"""

from __future__ import annotations

import hashlib
import json
import time
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field, replace

import numpy as np

from .agent import agent_stream
from .controller import ControllerState, ResourceSpec, SpecTable, init_controller, update_omega
from .cost_model import (
    CostFunction,
    PopulationTables,
    grad_matrix,
    grad_matrix_into,
    make_ev_population,
    stack_population,
)

MODES = ("vector", "loop", "parallel")
_BUFFER_STEPS = 1024
_PARALLEL_WORKERS = 4


class ConfigError(ValueError):
    pass


class MissingSnapshotError(KeyError):
    pass


@dataclass(frozen=True)
class EvPopulationSpec:
    """EV cost population recipe: four class-block sizes plus a draw seed."""

    class_sizes: tuple[int, int, int, int]
    seed: int | None = None   # None: reuse the master simulation seed


@dataclass(frozen=True)
class SimConfig:
    """Full experiment description; immutable so runs can be replayed."""

    n: int
    m: int
    steps: int
    seed: int
    resources: tuple[ResourceSpec, ...]
    population: tuple[CostFunction, ...] | EvPopulationSpec
    include_linear: bool = True
    constant_omega: bool = False
    mode: str = "vector"
    snapshot_every: int = 10
    snapshot_enabled: bool = True
    summary_window: int = 60

    def validate(self) -> list[str]:
        problems = []
        if self.n < 1:
            problems.append(f"n must be >= 1, got {self.n}")
        if self.m < 1:
            problems.append(f"m must be >= 1, got {self.m}")
        if self.steps < 1:
            problems.append(f"steps must be >= 1, got {self.steps}")
        if len(self.resources) != self.m:
            problems.append(
                f"resources has length {len(self.resources)}, expected m={self.m}"
            )
        if self.mode not in MODES:
            problems.append(f"mode must be one of {MODES}, got {self.mode!r}")
        if self.snapshot_every < 1:
            problems.append("snapshot_every must be >= 1")
        if self.summary_window < 1:
            problems.append("summary_window must be >= 1")
        if isinstance(self.population, EvPopulationSpec):
            sizes = self.population.class_sizes
            if len(sizes) != 4 or any(s < 0 for s in sizes):
                problems.append("EV class_sizes must be 4 nonnegative counts")
            elif sum(sizes) != self.n:
                problems.append(
                    f"EV class_sizes sum to {sum(sizes)}, expected n={self.n}"
                )
            if self.m != 2:
                problems.append("EV population requires m=2")
        else:
            if len(self.population) != self.n:
                problems.append(
                    f"population has {len(self.population)} costs, expected n={self.n}"
                )
            elif any(g.m != self.m for g in self.population):
                problems.append("population resource count does not match m")
        return problems

    def ensure_valid(self):
        problems = self.validate()
        if problems:
            raise ConfigError("invalid config:\n  " + "\n  ".join(problems))


def resolve_population(config: SimConfig) -> tuple[CostFunction, ...]:
    if isinstance(config.population, EvPopulationSpec):
        seed = config.population.seed
        if seed is None:
            seed = config.seed
        return tuple(make_ev_population(config.n, seed, config.population.class_sizes))
    return tuple(config.population)


@dataclass
class TraceRecord:
    """Observables of one time step."""

    step: int
    omega: np.ndarray
    sum_xi: np.ndarray
    sum_y: np.ndarray
    grad_min: np.ndarray
    grad_max: np.ndarray
    clamps: np.ndarray
    snapshot: np.ndarray | None = None

    @property
    def spread(self) -> np.ndarray:
        return self.grad_max - self.grad_min


@dataclass
class Trace:
    config: SimConfig
    population: tuple[CostFunction, ...]
    omega: np.ndarray       # (T+1, m) broadcast factor at each step
    sum_xi: np.ndarray      # (T+1, m) total instantaneous allocation
    sum_y: np.ndarray       # (T+1, m) total average allocation
    grad_min: np.ndarray    # (T+1, m) smallest agent derivative
    grad_max: np.ndarray    # (T+1, m) largest agent derivative
    clamps: np.ndarray      # (T+1, m) probability clamp events
    snapshots: dict = field(repr=False)     # step -> (n, m) copy of y
    final_y: np.ndarray = field(repr=False)
    final_xi: np.ndarray = field(repr=False)
    ones: np.ndarray = field(repr=False)    # (n, m) exact count of 1-draws
    saturations: np.ndarray = None
    wall_clock: float = 0.0

    @property
    def steps(self) -> int:
        return self.omega.shape[0] - 1

    def row(self, k: int) -> TraceRecord:
        return TraceRecord(
            step=k,
            omega=self.omega[k],
            sum_xi=self.sum_xi[k],
            sum_y=self.sum_y[k],
            grad_min=self.grad_min[k],
            grad_max=self.grad_max[k],
            clamps=self.clamps[k],
            snapshot=self.snapshots.get(k),
        )

    def to_csv(self, path):
        """Fixed column order and '.17g' float format; byte-stable across runs."""
        m = self.config.m
        header = ["k"]
        for j in range(1, m + 1):
            header += [f"omega_{j}", f"sum_xi_{j}", f"sum_y_{j}",
                       f"grad_min_{j}", f"grad_max_{j}", f"clamps_{j}"]
        with open(path, "w", newline="") as f:
            f.write(",".join(header) + "\n")
            for k in range(self.steps + 1):
                parts = [str(k)]
                for j in range(m):
                    parts += [
                        format(self.omega[k, j], ".17g"),
                        format(self.sum_xi[k, j], ".17g"),
                        format(self.sum_y[k, j], ".17g"),
                        format(self.grad_min[k, j], ".17g"),
                        format(self.grad_max[k, j], ".17g"),
                        str(int(self.clamps[k, j])),
                    ]
                f.write(",".join(parts) + "\n")

    def summary(self, mu_bits: int = 64) -> dict:
        """Stable, versioned run digest for downstream tooling."""
        cfg = self.config
        window = min(cfg.summary_window, self.steps)
        caps, xi_dev, y_dev = [], [], []
        for j in range(cfg.m):
            metrics = capacity_metrics(self, j, window)
            caps.append(cfg.resources[j].capacity)
            xi_dev.append(metrics.xi_mean_abs_dev)
            y_dev.append(metrics.y_final_abs_dev)
        last = self.row(self.steps)
        return {
            "schema": "unitalloc-summary/1",
            "config": config_summary(cfg),
            "capacity": {
                "window": window,
                "target": caps,
                "xi_mean_abs_dev": xi_dev,
                "y_final_abs_dev": y_dev,
            },
            "consensus": {
                "grad_min": last.grad_min.tolist(),
                "grad_max": last.grad_max.tolist(),
                "spread": last.spread.tolist(),
                "include_linear": cfg.include_linear,
            },
            "final_omega": last.omega.tolist(),
            "clamp_events": self.clamps.sum(axis=0).tolist(),
            "saturations": self.saturations.tolist(),
            "broadcast_overhead_bits_per_step": mu_bits * cfg.m,
            "mu_bits": mu_bits,
            "wall_clock_s": self.wall_clock,
        }


def config_summary(config: SimConfig) -> dict:
    if isinstance(config.population, EvPopulationSpec):
        pop = {
            "kind": "ev",
            "class_sizes": list(config.population.class_sizes),
            "seed": config.population.seed,
        }
    else:
        digest = hashlib.sha256(
            json.dumps([g.to_json() for g in config.population],
                       sort_keys=True).encode()
        ).hexdigest()
        pop = {"kind": "explicit", "n": len(config.population), "sha256": digest}
    return {
        "n": config.n,
        "m": config.m,
        "steps": config.steps,
        "seed": config.seed,
        "include_linear": config.include_linear,
        "constant_omega": config.constant_omega,
        "mode": config.mode,
        "snapshot_every": config.snapshot_every,
        "snapshot_enabled": config.snapshot_enabled,
        "summary_window": config.summary_window,
        "resources": [
            {
                "capacity": s.capacity,
                "tau": s.tau,
                "gamma": s.gamma,
                "omega0": s.omega0,
                "omega_min": s.omega_min,
                "omega_max": s.omega_max,
            }
            for s in config.resources
        ],
        "population": pop,
    }


def _agent_block(sl, kf1, kf2, omega_k, Y, G, XI, clamped, ones, U, tables, incl):
    """Step the agents in row slice `sl`: gradients, probabilities, draw, average.

    Reads only rows `sl` of the state and writes only rows `sl` of the
    outputs, so disjoint blocks can run concurrently and any block schedule
    produces identical bits.
    """
    yb = Y[sl]
    grad_matrix_into(tables, Y, G, incl, rows=sl)
    raw = omega_k * yb / G[sl]
    cb = (raw < 0.0) | (raw > 1.0)
    np.clip(raw, 0.0, 1.0, out=raw)
    xib = (U[sl] < raw).astype(np.float64)
    clamped[sl] = cb
    XI[sl] = xib
    ones[sl] += xib.astype(np.int64)
    Y[sl] = (kf1 * yb + xib) / kf2


def _blocks(n: int, mode: str) -> list[slice]:
    if mode == "loop":
        return [slice(i, i + 1) for i in range(n)]
    if mode == "parallel":
        w = min(_PARALLEL_WORKERS, n)
        bounds = np.linspace(0, n, w + 1).astype(int)
        return [slice(int(a), int(b)) for a, b in zip(bounds[:-1], bounds[1:]) if b > a]
    return [slice(0, n)]


def run(config: SimConfig, omega_hook=None) -> Trace:
    """Execute the configured experiment and return its full trace.

    `omega_hook(k, omega)` may replace the broadcast value at step k (probe
    instrumentation); the controller's own state integrates unperturbed.
    Bitwise deterministic for a fixed config.
    """
    config.ensure_valid()
    t0 = time.perf_counter()
    costs = resolve_population(config)
    tables = stack_population(costs)
    spec_table = SpecTable.from_specs(config.resources)
    n, m, T = config.n, config.m, config.steps
    incl = config.include_linear

    gens = [agent_stream(config.seed, i) for i in range(n)]
    buf = np.empty((n, m * _BUFFER_STEPS))

    Y = np.ones((n, m))
    XI = np.ones((n, m))
    ones = np.ones((n, m), dtype=np.int64)
    G = np.empty((n, m))
    clamped = np.empty((n, m), dtype=bool)
    ctrl = init_controller(spec_table)

    omega_tr = np.empty((T + 1, m))
    sum_xi_tr = np.empty((T + 1, m))
    sum_y_tr = np.empty((T + 1, m))
    gmin_tr = np.empty((T + 1, m))
    gmax_tr = np.empty((T + 1, m))
    clamp_tr = np.zeros((T + 1, m), dtype=np.int64)
    snapshots = {}

    blocks = _blocks(n, config.mode)
    pool = ThreadPoolExecutor(max_workers=len(blocks)) if config.mode == "parallel" else None
    try:
        for k in range(T):
            pos = k % _BUFFER_STEPS
            if pos == 0:
                span = min(_BUFFER_STEPS, T - k)
                for i in range(n):
                    buf[i, : m * span] = gens[i].random(m * span)
            U = buf[:, pos * m:(pos + 1) * m]

            sum_xi_tr[k] = XI.sum(axis=0)
            sum_y_tr[k] = Y.sum(axis=0)
            omega_k = ctrl.omega
            if omega_hook is not None:
                omega_k = np.asarray(omega_hook(k, omega_k.copy()), dtype=float)
            omega_tr[k] = omega_k
            if config.snapshot_enabled and k % config.snapshot_every == 0:
                snapshots[k] = Y.copy()
            if not config.constant_omega:
                ctrl = update_omega(ctrl, spec_table, sum_xi_tr[k])

            kf1, kf2 = float(k + 1), float(k + 2)
            if pool is None:
                for sl in blocks:
                    _agent_block(sl, kf1, kf2, omega_k, Y, G, XI, clamped,
                                 ones, U, tables, incl)
            else:
                futures = [
                    pool.submit(_agent_block, sl, kf1, kf2, omega_k, Y, G, XI,
                                clamped, ones, U, tables, incl)
                    for sl in blocks
                ]
                for fut in futures:
                    fut.result()
            gmin_tr[k] = G.min(axis=0)
            gmax_tr[k] = G.max(axis=0)
            clamp_tr[k] = clamped.sum(axis=0)
    finally:
        if pool is not None:
            pool.shutdown()

    # Final state row: no probability is computed past the horizon.
    sum_xi_tr[T] = XI.sum(axis=0)
    sum_y_tr[T] = Y.sum(axis=0)
    omega_tr[T] = ctrl.omega
    grad_matrix_into(tables, Y, G, incl)
    gmin_tr[T] = G.min(axis=0)
    gmax_tr[T] = G.max(axis=0)
    if config.snapshot_enabled:
        snapshots[T] = Y.copy()

    return Trace(
        config=config,
        population=costs,
        omega=omega_tr,
        sum_xi=sum_xi_tr,
        sum_y=sum_y_tr,
        grad_min=gmin_tr,
        grad_max=gmax_tr,
        clamps=clamp_tr,
        snapshots=snapshots,
        final_y=Y,
        final_xi=XI,
        ones=ones,
        saturations=ctrl.saturations,
        wall_clock=time.perf_counter() - t0,
    )


def consensus_spread(trace: Trace, k: int, j: int, include_linear=None):
    """(min, max, spread) of the agents' derivatives for resource j at step k.

    Needs a per-agent snapshot at k.  `include_linear=None` follows the
    experiment's convention; passing True evaluates the true cost derivative
    regardless of what the run used internally.
    """
    if include_linear is None:
        include_linear = trace.config.include_linear
    if k not in trace.snapshots:
        raise MissingSnapshotError(
            f"no per-agent snapshot at step {k}; enable snapshots or adjust cadence"
        )
    tables = stack_population(trace.population)
    g = grad_matrix(tables, trace.snapshots[k], include_linear)[:, j]
    return float(g.min()), float(g.max()), float(g.max() - g.min())


@dataclass(frozen=True)
class CapacityMetrics:
    xi_mean_abs_dev: float   # mean |total draws - C| over the last window steps
    y_final_abs_dev: float   # |total average allocation - C| at the final step


def capacity_metrics(trace: Trace, j: int, window: int) -> CapacityMetrics:
    T = trace.steps
    if window > T:
        raise ValueError(f"window {window} exceeds trace length {T}")
    cap = trace.config.resources[j].capacity
    tail = trace.sum_xi[T - window + 1: T + 1, j]
    return CapacityMetrics(
        xi_mean_abs_dev=float(np.abs(tail - cap).mean()),
        y_final_abs_dev=float(abs(trace.sum_y[T, j] - cap)),
    )


def martingale_residual_test(config: SimConfig, replicas: int, *,
                             burn_in: int | None = None,
                             uniform_source=None) -> np.ndarray:
    """Z-scores of the draw residual xi - sigma, replicated from a frozen state.

    Runs the experiment for `burn_in` steps, freezes (omega, y), then redraws
    the next step `replicas` times.  For a sound sampler the residual mean is
    zero conditional on the frozen state, so each z-score is asymptotically
    standard normal.  Degenerate probabilities (0 or 1) give NaN.

    `uniform_source(shape)` overrides the replication stream (test hook for
    deliberately broken samplers).
    """
    if replicas < 100:
        raise ValueError("replicas must be >= 100")
    if burn_in is None:
        burn_in = min(config.steps, 200)
    frozen = replace(config, steps=burn_in, snapshot_enabled=False)
    trace = run(frozen)
    tables = stack_population(trace.population)
    G = grad_matrix(tables, trace.final_y, config.include_linear)
    sigma = np.clip(trace.omega[-1] * trace.final_y / G, 0.0, 1.0)

    if uniform_source is None:
        rng = np.random.default_rng(
            np.random.SeedSequence(config.seed, spawn_key=(2 ** 31,))
        )
        uniform_source = rng.random

    n, m = sigma.shape
    counts = np.zeros((n, m))
    chunk = max(1, int(1e7) // max(1, n * m))
    done = 0
    while done < replicas:
        r = min(chunk, replicas - done)
        u = np.asarray(uniform_source((r, n, m)))
        counts += (u < sigma).sum(axis=0)
        done += r

    mean = counts / replicas
    var = sigma * (1.0 - sigma) / replicas
    degenerate = (sigma <= 0.0) | (sigma >= 1.0)
    with np.errstate(divide="ignore", invalid="ignore"):
        z = (mean - sigma) / np.sqrt(var)
    z[degenerate] = np.nan
    return z
