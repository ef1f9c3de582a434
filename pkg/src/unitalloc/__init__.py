"""Distributed stochastic allocation of unit-demand resources.

A population of agents repeatedly draws Bernoulli demands for m
capacity-constrained resources; a control unit steers total utilization by
broadcasting one normalization factor per resource.  The package simulates
the coupled loops, checks admissibility and gain bounds, and verifies
convergence and optimality against independent solvers.
"""

from .agent import AgentState, AgentStepRecord, agent_stream
from .controller import (
    ControllerState,
    ResourceSpec,
    TauBoundEstimate,
    estimate_tau_bound,
    init_controller,
    report_overhead_bits,
    update_omega,
)
from .cost_model import (
    AdmissibilityReport,
    CostFunction,
    IndeterminateRatio,
    Monomial,
    check_admissible,
    co2_of_session,
    ev_cost_function,
    make_ev_population,
    quadratic_cost,
)
from .engine import (
    ConfigError,
    EvPopulationSpec,
    MissingSnapshotError,
    SimConfig,
    Trace,
    TraceRecord,
    capacity_metrics,
    consensus_spread,
    martingale_residual_test,
    run,
)
from .oracle import (
    InfeasibleCapacityError,
    NoRootError,
    OdeDivergenceError,
    OracleSolution,
    brute_force_social_optimum,
    integrate_mean_ode,
    solve_fixed_point,
    solve_social_optimum,
)

__version__ = "0.1.0"
