"""Example models: inventory control, production with sales, invariant kernels, the circle.

Continuous specs are discretized onto uniform grids.  Next-state laws are
projected onto grid cells by differencing the demand CDF; mass beyond the
grid lands on the boundary cells.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import Optional

import numpy as np
import scipy.sparse as sp

from .demand import DemandFamily
from .errors import ParameterError, ResolutionError, SpecError
from .mdp import FiniteMdp, StationaryPolicy

MIN_CELLS_PER_SUPPORT = 4
_SNAP = 1e-9


# -- cost descriptors ---------------------------------------------------------
@dataclass(frozen=True)
class OrderCost:
    """kappa(z) = unit * z + fixed * 1[z > 0] for z >= 0."""

    unit: float = 1.0
    fixed: float = 0.0

    def __call__(self, z):
        z = np.asarray(z, dtype=float)
        return self.unit * z + self.fixed * (z > 0)

    def to_dict(self) -> dict:
        return {"unit": self.unit, "fixed": self.fixed}


@dataclass(frozen=True)
class HoldingCost:
    """psi(a) = holding * a^+ + shortage * a^-."""

    holding: float = 1.0
    shortage: float = 1.0

    def __call__(self, a):
        a = np.asarray(a, dtype=float)
        return self.holding * np.maximum(a, 0.0) + self.shortage * np.maximum(-a, 0.0)

    def to_dict(self) -> dict:
        return {"holding": self.holding, "shortage": self.shortage}


# -- specs --------------------------------------------------------------------
@dataclass(frozen=True)
class PcInventorySpec:
    """x' = a - xi(a), cost kappa(a - x) + psi(a), order-up-to level a >= x."""

    kappa: OrderCost = OrderCost(1.0, 1.0)
    psi: HoldingCost = HoldingCost(1.0, 1.0)
    demand: DemandFamily = DemandFamily("uniform", (1.0, 2.0))
    L: float = 0.0
    M: float = 4.0
    action_cap: Optional[float] = None

    def __post_init__(self) -> None:
        if not self.L < self.M:
            raise SpecError("need L < M")
        if self.kappa.unit < 0 or self.kappa.fixed < 0:
            raise SpecError("kappa must be nondecreasing with kappa(0) = 0")
        if self.psi.holding < 0 or self.psi.shortage < 0:
            raise SpecError("psi must be nonnegative")

    def cost(self, x, a):
        return self.kappa(np.asarray(a) - np.asarray(x)) + self.psi(a)

    def to_dict(self) -> dict:
        return {"kappa": self.kappa.to_dict(), "psi": self.psi.to_dict(),
                "demand": self.demand.to_dict(), "L": self.L, "M": self.M,
                "action_cap": self.action_cap}


@dataclass(frozen=True)
class UcProductionSpec:
    """x' = (x + z - xi(x + z))^+, cost kappa(z) + psi(a) - s E[a ^ xi(a)], w = exp(r x).

    ``lambda_`` and ``L_tilde`` are derived on construction; every defining
    inequality is checked and a failure raises :class:`SpecError`.
    """

    kappa: OrderCost = OrderCost(2.0, 0.0)
    psi: HoldingCost = HoldingCost(1.0, 0.0)
    s: float = 5.0
    demand: DemandFamily = DemandFamily("uniform", (0.5, 2.5), (0.25, 1.5), 2.0)
    theta: float = 1.0
    theta_x: float = 3.0
    a_bar: float = 6.0
    r: float = 0.5
    lambda_prime: Optional[float] = None
    lambda_: float = field(init=False)
    L_tilde: float = field(init=False)

    def __post_init__(self) -> None:
        if self.demand.saturation_level is None:
            raise SpecError("the production demand family needs a saturation level L")
        L = self.demand.saturation_level
        if self.r <= 0:
            raise SpecError("weight exponent r must be positive")
        mean_sat = self.demand.mean(L)
        if not 0 < self.theta < mean_sat:
            raise SpecError(f"need 0 < theta < E[xi] at saturation ({mean_sat:.6g}), got theta={self.theta}")
        if self.theta_x < 0:
            raise SpecError("theta_x must be nonnegative")
        lam = self.demand.expect(lambda y: math.exp(self.r * (self.theta - y)), L)
        if not lam < 1.0:
            raise SpecError(f"lambda = E[exp(r(theta - xi))] = {lam:.6g} is not < 1")
        lp = self.lambda_prime if self.lambda_prime is not None else 0.5 * (1.0 + lam)
        if not lam < lp < 1.0:
            raise SpecError(f"lambda_prime must lie in (lambda, 1) = ({lam:.6g}, 1), got {lp}")
        l_tilde = max(L, -math.log(lp - lam) / self.r)
        need = max(l_tilde + self.theta, L + self.theta_x)
        if self.a_bar < need - 1e-12:
            raise SpecError(f"a_bar = {self.a_bar} must be >= (L_tilde + theta) v sup(x + theta_x) = {need:.6g}")
        object.__setattr__(self, "lambda_prime", float(lp))
        object.__setattr__(self, "lambda_", float(lam))
        object.__setattr__(self, "L_tilde", float(l_tilde))

    @property
    def L(self) -> float:
        return float(self.demand.saturation_level)

    def weight(self, x):
        return np.exp(self.r * np.asarray(x, dtype=float))

    def production_cap(self, x: float) -> float:
        """Upper end of the order-up-to interval A(x)."""
        if x <= 0:
            return self.a_bar
        if x < self.L:
            return x + self.theta_x
        return x + self.theta

    def sales(self, a: float) -> float:
        """E[min(a, xi(a))]."""
        return self.demand.expect(lambda y: min(a, y), a)

    def cost(self, x: float, a: float) -> float:
        return float(self.kappa(a - x) + self.psi(a) - self.s * self.sales(a))

    def to_dict(self) -> dict:
        return {"kappa": self.kappa.to_dict(), "psi": self.psi.to_dict(), "s": self.s,
                "demand": self.demand.to_dict(), "theta": self.theta, "theta_x": self.theta_x,
                "a_bar": self.a_bar, "r": self.r, "lambda_prime": self.lambda_prime,
                "lambda": self.lambda_, "L_tilde": self.L_tilde}


@dataclass(frozen=True)
class Grid:
    x_min: float
    x_max: float
    n_states: int
    n_actions: Optional[int] = None

    def __post_init__(self) -> None:
        if not self.x_min < self.x_max:
            raise ParameterError("grid needs x_min < x_max")
        if self.n_states < 2:
            raise ParameterError("grid needs at least 2 states")
        if self.n_actions is not None and self.n_actions < 2:
            raise ParameterError("grid needs at least 2 actions")

    @property
    def states(self) -> np.ndarray:
        return np.linspace(self.x_min, self.x_max, self.n_states)

    @property
    def actions(self) -> np.ndarray:
        return np.linspace(self.x_min, self.x_max, self.n_actions or self.n_states)

    @property
    def step(self) -> float:
        return (self.x_max - self.x_min) / (self.n_states - 1)


DEFAULT_PC_GRID = Grid(-10.0, 10.0, 401)
DEFAULT_UC_GRID = Grid(0.0, 20.0, 201)


# -- projection ---------------------------------------------------------------
def cell_edges(states: np.ndarray, projection: str) -> np.ndarray:
    """Left edges of the projection cells; the first cell is open to -inf, the last to +inf."""
    h = states[1] - states[0]
    if projection == "nearest":
        inner = 0.5 * (states[:-1] + states[1:])
    elif projection == "floor":
        inner = states[1:]
    else:
        raise ParameterError(f"unknown projection {projection!r}")
    inner = inner - _SNAP * h
    return np.concatenate(([-np.inf], inner, [np.inf]))


def demand_rows(demand: DemandFamily, levels: np.ndarray, states: np.ndarray,
                projection: str) -> np.ndarray:
    """Row k is the law of levels[k] - xi(levels[k]) projected onto the state cells."""
    edges = cell_edges(states, projection)
    h = states[1] - states[0]
    rows = np.empty((levels.shape[0], states.shape[0]))
    for k, a in enumerate(levels):
        if demand.has_density:
            lo, hi = demand.support(a)
            if (hi - lo) / h < MIN_CELLS_PER_SUPPORT:
                raise ResolutionError(
                    f"grid step {h:.4g} resolves the demand support [{lo:.4g}, {hi:.4g}] with fewer "
                    f"than {MIN_CELLS_PER_SUPPORT} cells")
        G = np.asarray(demand.cdf(a - edges, a), dtype=float)
        G[0], G[-1] = 1.0, 0.0
        mass = np.maximum(G[:-1] - G[1:], 0.0)
        rows[k] = mass / mass.sum()
    return rows


def _pairs_from_action_rows(states, actions, admissible, cost_fn, rows) -> tuple:
    ps, pa, pc = [], [], []
    for s, acts in enumerate(admissible):
        ps.extend([s] * len(acts))
        pa.extend(acts)
        pc.extend(cost_fn(s, np.asarray(acts)))
    pa_arr = np.asarray(pa, dtype=np.int64)
    kern = sp.csr_matrix(rows)[pa_arr]
    return np.asarray(ps, dtype=np.int64), pa_arr, np.asarray(pc, dtype=float), kern


# -- builders -----------------------------------------------------------------
def build_pc_inventory(spec: Optional[PcInventorySpec] = None, grid: Optional[Grid] = None,
                       projection: str = "nearest") -> FiniteMdp:
    """Grid version of the order-up-to inventory model with A(x) = grid points in [x, cap]."""
    spec = spec or PcInventorySpec()
    grid = grid or DEFAULT_PC_GRID
    if not (grid.x_min <= spec.L and spec.M <= grid.x_max):
        raise ParameterError("grid must contain [L, M]")
    states, actions = grid.states, grid.actions
    cap = grid.x_max if spec.action_cap is None else float(spec.action_cap)
    tol = _SNAP * grid.step
    admissible = []
    for x in states:
        ok = np.flatnonzero((actions >= x - tol) & (actions <= max(cap, x) + tol))
        if ok.size == 0:
            ok = np.array([int(np.searchsorted(actions, x - tol))])
        admissible.append(ok.tolist())
    rows = demand_rows(spec.demand, actions, states, projection)

    def cost_fn(s, acts):
        return spec.cost(states[s], actions[acts])

    ps, pa, pc, kern = _pairs_from_action_rows(states, actions, admissible, cost_fn, rows)
    return FiniteMdp.from_pairs(states, actions, ps, pa, pc, kern, None, "PC")


def build_uc_production(spec: Optional[UcProductionSpec] = None, grid: Optional[Grid] = None,
                        projection: str = "floor") -> FiniteMdp:
    """Grid version of the production model; actions are order-up-to levels a = x + z.

    The default ``floor`` projection rounds next states down, which can only
    lower sum_y w(y) q(y|x,a) for the increasing weight, so drift bounds of the
    continuous model carry over to the grid.
    """
    spec = spec or UcProductionSpec()
    grid = grid or DEFAULT_UC_GRID
    if grid.x_min != 0.0:
        raise ParameterError("the production grid must start at 0")
    if grid.x_max < spec.a_bar:
        raise ParameterError("grid must reach a_bar")
    states, actions = grid.states, grid.actions
    tol = _SNAP * grid.step
    admissible = []
    for x in states:
        hi = min(spec.production_cap(x), grid.x_max)
        ok = np.flatnonzero((actions >= x - tol) & (actions <= hi + tol))
        if ok.size == 0:
            ok = np.array([int(np.searchsorted(actions, x - tol))])
        admissible.append(ok.tolist())
    rows = demand_rows(spec.demand, actions, states, projection)
    sales = np.array([spec.sales(a) for a in actions])

    def cost_fn(s, acts):
        a = actions[acts]
        return spec.kappa(a - states[s]) + spec.psi(a) - spec.s * sales[acts]

    ps, pa, pc, kern = _pairs_from_action_rows(states, actions, admissible, cost_fn, rows)
    return FiniteMdp.from_pairs(states, actions, ps, pa, pc, kern, spec.weight(states), "UC")


@dataclass(frozen=True)
class InvariantModelSpec:
    """State-independent kernel q(.|a) with cost table c[x][a].

    ``partial = (b, lambda, lambda_prime)`` restricts invariance to the region
    {w <= b / (lambda_prime - lambda)}; outside it ``outside_kernel[x][a]`` is used.
    """

    action_kernel: np.ndarray
    cost: np.ndarray
    weight: Optional[np.ndarray] = None
    partial: Optional[tuple] = None
    outside_kernel: Optional[np.ndarray] = None
    ref_state: int = 0


def invariant_region(weight: np.ndarray, b: float, lam: float, lam_prime: float) -> np.ndarray:
    """Indices with w(x) <= b / (lambda' - lambda)."""
    if not 0 <= lam < lam_prime:
        raise ParameterError("need 0 <= lambda < lambda'")
    return np.flatnonzero(np.asarray(weight) <= b / (lam_prime - lam))


def build_invariant(spec: InvariantModelSpec) -> tuple[FiniteMdp, np.ndarray]:
    """Invariant (or partially invariant) model and the bound c_hat (w(x) + w(ref))."""
    K = np.asarray(spec.action_kernel, dtype=float)
    C = np.asarray(spec.cost, dtype=float)
    m, n = K.shape
    if C.shape != (n, m):
        raise ParameterError(f"cost must have shape ({n}, {m})")
    w = np.ones(n) if spec.weight is None else np.asarray(spec.weight, dtype=float)
    kernel = np.broadcast_to(K, (n, m, n)).copy()
    if spec.partial is not None:
        b, lam, lam_p = spec.partial
        inside = np.zeros(n, dtype=bool)
        inside[invariant_region(w, b, lam, lam_p)] = True
        if spec.outside_kernel is not None:
            out = np.asarray(spec.outside_kernel, dtype=float)
            if out.shape != (n, m, n):
                raise ParameterError(f"outside_kernel must have shape ({n}, {m}, {n})")
            kernel[~inside] = out[~inside]
    model_class = "PC" if np.all(C >= 0) and spec.weight is None else "UC"
    adm = [list(range(m))] * n
    mdp = FiniteMdp.from_tables(np.arange(n, dtype=float), np.arange(m, dtype=float), adm,
                                C.tolist(), kernel.tolist(), w, model_class)
    c_hat = float(np.max(np.abs(C).max(axis=1) / w))
    return mdp, c_hat * (w + w[spec.ref_state])


def sup_cost_difference(mdp: FiniteMdp, ref_state: int = 0) -> np.ndarray:
    """sup_a |c(x,a) - c(ref,a)| for models with a common action set."""
    ref = mdp.pair_slice(ref_state)
    c_ref = mdp.pair_cost[ref]
    out = np.empty(mdp.n_states)
    for s in range(mdp.n_states):
        sl = mdp.pair_slice(s)
        if not np.array_equal(mdp.pair_action[sl], mdp.pair_action[ref]):
            raise ParameterError("action sets differ across states")
        out[s] = np.max(np.abs(mdp.pair_cost[sl] - c_ref))
    return out


def build_circle_mdp(n_states: int, cost: Optional[np.ndarray] = None) -> FiniteMdp:
    """Three actions, each uniform over a half circle starting at angle 2a pi/3."""
    if n_states < 6 or n_states % 6:
        raise ParameterError("n_states must be a positive multiple of 6")
    n = n_states
    half = n // 2
    row = np.zeros((3, n))
    for a in range(3):
        idx = (a * n // 3 + np.arange(half)) % n
        row[a, idx] = 1.0 / half
    c = np.zeros((n, 3)) if cost is None else np.asarray(cost, dtype=float)
    adm = [[0, 1, 2]] * n
    kern = [[row[0], row[1], row[2]]] * n
    angles = 2 * np.pi * np.arange(n) / n
    return FiniteMdp.from_tables(angles, [0.0, 1.0, 2.0], adm, c.tolist(), kern, None,
                                 "PC" if np.all(c >= 0) else "UC")


# -- policies on grid instances ----------------------------------------------
def threshold_policy(mdp: FiniteMdp, L: float, target: float) -> StationaryPolicy:
    """No order at x >= L, order up to the admissible grid level nearest ``target`` below L."""
    choice = np.empty(mdp.n_states, dtype=np.int64)
    for s, x in enumerate(mdp.states):
        acts = mdp.admissible(s)
        levels = mdp.actions[acts]
        if x >= L:
            k = int(np.argmin(np.abs(levels - x)))
        else:
            k = int(np.argmin(np.abs(levels - max(target, x))))
        choice[s] = acts[k]
    return StationaryPolicy(choice)


# -- assumption checks --------------------------------------------------------
def _check(passed: bool, value, note: str = "") -> dict:
    out = {"passed": bool(passed), "value": value}
    if note:
        out["note"] = note
    return out


def verify_example_assumptions(spec, g_lower: Optional[float] = None,
                               a_range: tuple = (-20.0, 20.0), n_a: int = 401) -> dict:
    """Numerical checks of the standing assumptions of the inventory examples.

    Returns ``{name: {"passed": bool, "value": ...}}`` and never raises.
    """
    report: dict = {}
    try:
        if isinstance(spec, UcProductionSpec):
            a_grid = np.linspace(0.0, max(spec.a_bar, spec.L_tilde + spec.theta) * 2, n_a)
        else:
            a_grid = np.linspace(a_range[0], a_range[1], n_a)
        dem = spec.demand
        z = np.linspace(0.0, 50.0, 501)
        kz = spec.kappa(z)
        report["kappa_monotone_zero"] = _check(
            bool(np.all(np.diff(kz) >= -1e-12) and abs(float(spec.kappa(0.0))) == 0.0),
            {"kappa(0)": float(spec.kappa(0.0))})
        means = np.array([dem.mean(a) for a in a_grid])
        report["demand_mean_positive"] = _check(bool(means.min() > 0), float(means.min()))
        supports = np.array([dem.support(a) for a in a_grid])
        report["support_bounded"] = _check(bool(np.all(np.isfinite(supports))),
                                           [float(supports[:, 0].min()), float(supports[:, 1].max())])
        bounds = np.array([dem.density_bound(a) for a in a_grid])
        report["density_bounded"] = _check(bool(np.all(np.isfinite(bounds))), float(bounds.max()),
                                           "" if np.all(np.isfinite(bounds)) else "an atom admits no bounded density")
        # uniform integrability: sup_a E[xi 1(xi > l)] vanishes at the support maximum
        top = float(supports[:, 1].max())
        tail = max(dem.tail_mean(top, a) for a in a_grid[:: max(1, n_a // 50)])
        report["demand_uniformly_integrable"] = _check(tail <= 1e-12, tail)
        if isinstance(spec, PcInventorySpec):
            if g_lower is None:
                g_lower = bootstrap_g_lower(spec)
            edge = float(spec.psi(a_grid[[0, -1]]).min())
            report["cost_tails_exceed_g"] = _check(edge > g_lower, {"edge_psi": edge, "g_lower": g_lower})
            kexp = max(dem.expect(lambda y: float(spec.kappa(spec.M - spec.L + y)), a)
                       for a in np.linspace(spec.L, spec.M, 21))
            report["kappa_expectation_finite"] = _check(math.isfinite(kexp), kexp)
            x0 = 0.0
            cvals = spec.cost(x0, a_grid[a_grid >= x0])
            report["coercive"] = _check(bool(cvals[-1] > cvals.min() + 1.0), float(cvals[-1]))
        else:
            L = spec.L
            sat = [dem.params_at(a) for a in a_grid[a_grid >= L]]
            report["saturated_family_constant"] = _check(all(p == sat[0] for p in sat), list(sat[0]))
            report["theta_below_mean"] = _check(0 < spec.theta < dem.mean(L),
                                                {"theta": spec.theta, "mean": dem.mean(L)})
            report["lambda_below_one"] = _check(spec.lambda_ < 1, spec.lambda_)
            report["lambda_prime_range"] = _check(spec.lambda_ < spec.lambda_prime < 1, spec.lambda_prime)
            need = max(spec.L_tilde + spec.theta, L + spec.theta_x)
            report["a_bar_covers"] = _check(spec.a_bar >= need - 1e-12, {"a_bar": spec.a_bar, "need": need})
    except Exception as exc:  # report, never raise
        report["error"] = _check(False, repr(exc))
    return report


def bootstrap_g_lower(spec: PcInventorySpec, grid: Grid = Grid(-10.0, 10.0, 201)) -> float:
    """Average cost of the threshold policy (order up to M below L) on a coarse grid.

    Serves as the g* estimate needed before g* itself is known.
    """
    from .vanishing import average_cost_exact

    mdp = build_pc_inventory(spec, grid)
    pol = threshold_policy(mdp, spec.L, spec.M)
    return float(np.max(average_cost_exact(mdp, pol)))
