"""Separable convex polynomial cost families.

Every cost has the form

    g(y) = sum_j linear[j] * y[j]  +  sum_k coeff_k * y[r_k] ** exp_k

with nonnegative linear coefficients and monomial exponents >= 2, so g is
increasing and strictly convex in every coordinate on [0, 1]^m and its
gradient decomposes per resource.  This family covers the four EV-charging
cost classes (quadratic through sextic terms scaled by per-car factors)
while keeping per-coordinate gradient inversion exact.
"""

from __future__ import annotations

import json
from dataclasses import dataclass

import numpy as np

# CO2 bookkeeping for the EV-charging population: base cost constants for
# level-1 / level-2 charging points and the EU average emission rate.
A_LEVEL1 = 2.9
B_LEVEL2 = 8.51
EU_EMISSION_RATE = 0.443  # kg CO2 per kWh generated and distributed
LEVEL1_POWER_KW = (1.65, 2.40)
LEVEL2_POWER_KW = (4.80, 9.60)

EV_F1_RANGE = (1.0, 1.5)
EV_F2_RANGE = (1.0, 2.0)


class IndeterminateRatio(ZeroDivisionError):
    """Raised when y/g'(y) is evaluated at y = 0 with g'(0) = 0."""


@dataclass(frozen=True)
class Monomial:
    resource: int     # 0-based resource index
    coeff: float      # > 0
    exponent: float   # >= 2


@dataclass(frozen=True)
class CostFunction:
    """One agent's private cost over m average allocations."""

    linear: tuple[float, ...]
    monomials: tuple[Monomial, ...]

    def __post_init__(self):
        m = len(self.linear)
        if m < 1:
            raise ValueError("cost function needs at least one resource")
        if any(c < 0 for c in self.linear):
            raise ValueError("linear coefficients must be nonnegative")
        covered = set()
        for mono in self.monomials:
            if not 0 <= mono.resource < m:
                raise ValueError(f"monomial resource {mono.resource} out of range for m={m}")
            if mono.coeff <= 0:
                raise ValueError("monomial coefficients must be positive")
            if mono.exponent < 2:
                raise ValueError("monomial exponents must be >= 2")
            covered.add(mono.resource)
        if covered != set(range(m)):
            missing = sorted(set(range(m)) - covered)
            raise ValueError(f"resources {missing} lack a convex monomial (exponent >= 2)")

    @property
    def m(self) -> int:
        return len(self.linear)

    def eval(self, y) -> float:
        """Cost at allocation y (always includes the linear terms)."""
        y = np.asarray(y, dtype=float)
        if y.shape != (self.m,):
            raise ValueError(f"allocation has shape {y.shape}, expected ({self.m},)")
        total = 0.0
        for j in range(self.m):
            total += self.linear[j] * float(y[j])
        for mono in self.monomials:
            total += mono.coeff * float(y[mono.resource]) ** mono.exponent
        return total

    def grad(self, y, j: int, include_linear: bool = True) -> float:
        """Partial derivative with respect to resource j.

        With include_linear=False the constant linear coefficient is dropped;
        the remaining part still determines the same consensus point because
        the drop shifts every agent's derivative equally when linear
        coefficients are shared.
        """
        y = np.asarray(y, dtype=float)
        if not 0 <= j < self.m:
            raise IndexError(f"resource index {j} out of range for m={self.m}")
        yj = float(y[j])
        total = 0.0
        for mono in self.monomials:
            if mono.resource == j:
                total = total + (mono.coeff * mono.exponent) * yj ** (mono.exponent - 1.0)
        if include_linear:
            total = self.linear[j] + total
        return total

    def v(self, y, j: int, include_linear: bool = True) -> float:
        """Demand-to-marginal-cost ratio y_j / g'_j(y), the response kernel."""
        yj = float(np.asarray(y, dtype=float)[j])
        g = self.grad(y, j, include_linear)
        if yj == 0.0:
            if g > 0.0:
                return 0.0
            raise IndeterminateRatio(f"v undefined at y[{j}]=0 with zero gradient")
        return yj / g

    def to_json(self) -> dict:
        return {
            "linear": list(self.linear),
            "monomials": [
                {"resource": mo.resource, "coeff": mo.coeff, "exp": mo.exponent}
                for mo in self.monomials
            ],
        }

    @classmethod
    def from_json(cls, doc: dict) -> "CostFunction":
        unknown = set(doc) - {"linear", "monomials"}
        if unknown:
            raise ValueError(f"unknown cost-function fields: {sorted(unknown)}")
        monos = []
        for mdoc in doc["monomials"]:
            munknown = set(mdoc) - {"resource", "coeff", "exp"}
            if munknown:
                raise ValueError(f"unknown monomial fields: {sorted(munknown)}")
            monos.append(Monomial(int(mdoc["resource"]), float(mdoc["coeff"]), float(mdoc["exp"])))
        return cls(tuple(float(c) for c in doc["linear"]), tuple(monos))

    def dumps(self) -> str:
        return json.dumps(self.to_json(), sort_keys=True)

    @classmethod
    def loads(cls, text: str) -> "CostFunction":
        return cls.from_json(json.loads(text))


def quadratic_cost(coeff: float) -> CostFunction:
    """Convenience: single-resource g(y) = coeff * y^2 with no linear part."""
    return CostFunction(linear=(0.0,), monomials=(Monomial(0, coeff, 2.0),))


def ev_cost_function(ev_class: int, f1: float, f2: float,
                     a: float = A_LEVEL1, b: float = B_LEVEL2) -> CostFunction:
    """Cost of one electric car in class 1..4 with charging-loss factors f1, f2.

    All classes share the linear CO2 baseline a*y1 + b*y2; the classes differ
    in the loss terms (quadratic/quartic/sextic) per charger type.
    """
    if ev_class == 1:
        monos = [Monomial(0, a * f1, 2.0), Monomial(1, b * f2, 4.0)]
    elif ev_class == 2:
        monos = [Monomial(0, a * f1 / 2.0, 4.0), Monomial(1, b * f2, 2.0)]
    elif ev_class == 3:
        monos = [Monomial(0, a * f1 / 3.0, 4.0), Monomial(0, a * f1, 6.0),
                 Monomial(1, b * f2, 4.0)]
    elif ev_class == 4:
        monos = [Monomial(0, a * f1, 2.0), Monomial(1, b * f2, 6.0)]
    else:
        raise ValueError(f"ev_class must be in 1..4, got {ev_class}")
    return CostFunction(linear=(a, b), monomials=tuple(monos))


def make_ev_population(n: int, seed: int, class_sizes=None) -> list[CostFunction]:
    """Deterministic EV cost population: 4 class blocks, per-car uniform factors.

    f1 ~ U[1, 1.5] and f2 ~ U[1, 2] are drawn once per car from a generator
    seeded with `seed`, so equal seeds give bitwise-identical coefficients.
    """
    if class_sizes is None:
        base, rem = divmod(n, 4)
        class_sizes = tuple(base + (1 if c < rem else 0) for c in range(4))
    class_sizes = tuple(int(s) for s in class_sizes)
    if len(class_sizes) != 4 or any(s < 0 for s in class_sizes):
        raise ValueError("class_sizes must be 4 nonnegative counts")
    if sum(class_sizes) != n:
        raise ValueError(f"class_sizes {class_sizes} sum to {sum(class_sizes)}, expected n={n}")
    rng = np.random.default_rng(seed)
    f1 = rng.uniform(*EV_F1_RANGE, n)
    f2 = rng.uniform(*EV_F2_RANGE, n)
    pop = []
    i = 0
    for cls, size in enumerate(class_sizes, start=1):
        for _ in range(size):
            pop.append(ev_cost_function(cls, float(f1[i]), float(f2[i])))
            i += 1
    return pop


def co2_of_session(power_kw: float, hours: float,
                   emission_rate: float = EU_EMISSION_RATE) -> float:
    """kg of CO2 for one charging session: power * duration * emission rate."""
    if power_kw < 0 or hours < 0 or emission_rate < 0:
        raise ValueError("power, duration and emission rate must be nonnegative")
    return power_kw * hours * emission_rate


# ---------------------------------------------------------------------------
# Population-level vectorised evaluation.
#
# Gradients and costs of a whole population at an (n, m) allocation matrix are
# evaluated from zero-padded per-resource tables; padding with coeff 0 /
# exponent 1 contributes exactly 0 for y >= 0 so padded and unpadded rows
# agree bitwise.
# ---------------------------------------------------------------------------


@dataclass(frozen=True)
class PopulationTables:
    n: int
    m: int
    lin: np.ndarray                       # (n, m)
    gcoef: tuple[np.ndarray, ...]         # per resource (n, K_j): coeff * exponent
    gexpm1: tuple[np.ndarray, ...]        # per resource (n, K_j): exponent - 1
    ecoef: tuple[np.ndarray, ...]         # per resource (n, K_j): coeff
    eexp: tuple[np.ndarray, ...]          # per resource (n, K_j): exponent


def stack_population(costs) -> PopulationTables:
    costs = list(costs)
    n = len(costs)
    if n == 0:
        raise ValueError("population is empty")
    m = costs[0].m
    if any(g.m != m for g in costs):
        raise ValueError("population mixes different resource counts")
    lin = np.array([g.linear for g in costs], dtype=float)
    gcoef, gexpm1, ecoef, eexp = [], [], [], []
    for j in range(m):
        per_agent = [[mo for mo in g.monomials if mo.resource == j] for g in costs]
        k = max(len(row) for row in per_agent)
        gc = np.zeros((n, k))
        ge = np.ones((n, k))
        ec = np.zeros((n, k))
        ee = np.ones((n, k))
        for i, row in enumerate(per_agent):
            for t, mo in enumerate(row):
                gc[i, t] = mo.coeff * mo.exponent
                ge[i, t] = mo.exponent - 1.0
                ec[i, t] = mo.coeff
                ee[i, t] = mo.exponent
        gcoef.append(gc)
        gexpm1.append(ge)
        ecoef.append(ec)
        eexp.append(ee)
    return PopulationTables(n, m, lin,
                            tuple(gcoef), tuple(gexpm1), tuple(ecoef), tuple(eexp))


def grad_column(tables: PopulationTables, j: int, yj: np.ndarray,
                include_linear: bool = True) -> np.ndarray:
    """Gradient of every agent w.r.t. resource j at its own allocation yj (n,)."""
    col = yj[:, None] if yj.ndim == 1 else yj
    g = (tables.gcoef[j] * col ** tables.gexpm1[j]).sum(axis=1)
    if include_linear:
        g = tables.lin[:, j] + g
    return g


def grad_matrix_into(tables: PopulationTables, y: np.ndarray, out: np.ndarray,
                     include_linear: bool = True, rows: slice = slice(None)) -> np.ndarray:
    """Fill out[rows] with per-agent gradients at y[rows]; y, out are (n, m)."""
    yb = y[rows]
    for j in range(tables.m):
        g = (tables.gcoef[j][rows] * yb[:, j:j + 1] ** tables.gexpm1[j][rows]).sum(axis=1)
        if include_linear:
            g = tables.lin[rows, j] + g
        out[rows, j] = g
    return out


def grad_matrix(tables: PopulationTables, y: np.ndarray,
                include_linear: bool = True) -> np.ndarray:
    out = np.empty_like(y)
    return grad_matrix_into(tables, y, out, include_linear)


def eval_each(tables: PopulationTables, y: np.ndarray) -> np.ndarray:
    """Per-agent cost values at an (n, m) allocation matrix."""
    total = (tables.lin * y).sum(axis=1)
    for j in range(tables.m):
        total = total + (tables.ecoef[j] * y[:, j:j + 1] ** tables.eexp[j]).sum(axis=1)
    return total


def eval_total(tables: PopulationTables, y: np.ndarray) -> float:
    """Social cost: sum of all agents' cost values."""
    return float(eval_each(tables, y).sum())


# ---------------------------------------------------------------------------
# Admissibility checking.
# ---------------------------------------------------------------------------


def classify_v_limit(cost: CostFunction, j: int, include_linear: bool = True) -> str:
    """Behaviour of v(z) = z/g'(z) as z -> 0: 'zero', 'finite' or 'divergent'.

    v(z) -> 0 when a positive linear coefficient keeps g' bounded away from 0;
    otherwise the smallest exponent decides: exactly 2 gives a finite positive
    limit, anything larger makes v blow up.
    """
    if include_linear and cost.linear[j] > 0:
        return "zero"
    exps = [mo.exponent for mo in cost.monomials if mo.resource == j]
    return "finite" if min(exps) == 2.0 else "divergent"


@dataclass(frozen=True)
class AdmissibilityReport:
    """Grid scan of sigma = omega * v over [eps, 1] plus the limit at 0.

    The probability-validity condition wants sigma inside (0, 1) on the whole
    allocation range; the scan covers [eps, 1] and classifies the z -> 0
    behaviour separately because v can vanish or diverge there for this cost
    family.
    """

    omega: np.ndarray            # (m,)
    eps: float
    grid_points: int
    include_linear: bool
    sigma_min: np.ndarray        # (n, m)
    sigma_max: np.ndarray        # (n, m)
    limit_at_zero: list          # n lists of m strings
    a: float                     # global min of sampled sigma
    b: float                     # global max of sampled sigma
    agent_pass: np.ndarray       # (n,) bool
    passed: bool


def check_admissible(population, omega, grid_points: int = 64, *,
                     eps: float = 1e-3, include_linear: bool = True) -> AdmissibilityReport:
    """Sample sigma = omega_j * v_i(z) on a z-grid and report whether it stays in (0, 1)."""
    population = list(population)
    if grid_points < 2:
        raise ValueError("grid_points must be >= 2")
    omega = np.atleast_1d(np.asarray(omega, dtype=float))
    m = population[0].m
    if omega.shape != (m,):
        raise ValueError(f"omega has shape {omega.shape}, expected ({m},)")
    if np.any(omega <= 0):
        raise ValueError("omega must be positive componentwise")
    n = len(population)
    grid = np.linspace(eps, 1.0, grid_points)
    sig_min = np.empty((n, m))
    sig_max = np.empty((n, m))
    limits = []
    tables = stack_population(population)
    for j in range(m):
        gg = np.empty((n, grid_points))
        for t, z in enumerate(grid):
            zz = np.full(n, z)
            gg[:, t] = zz / grad_column(tables, j, zz, include_linear)
        sig = omega[j] * gg
        sig_min[:, j] = sig.min(axis=1)
        sig_max[:, j] = sig.max(axis=1)
    for g in population:
        limits.append([classify_v_limit(g, j, include_linear) for j in range(m)])
    a = float(sig_min.min())
    b = float(sig_max.max())
    agent_pass = (sig_min > 0.0).all(axis=1) & (sig_max < 1.0).all(axis=1)
    return AdmissibilityReport(
        omega=omega, eps=eps, grid_points=grid_points, include_linear=include_linear,
        sigma_min=sig_min, sigma_max=sig_max, limit_at_zero=limits,
        a=a, b=b, agent_pass=agent_pass, passed=bool(agent_pass.all()),
    )
