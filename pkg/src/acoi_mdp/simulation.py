"""Monte Carlo over the continuous inventory models and checks of their analytic bounds."""

from __future__ import annotations

import math
import warnings
from dataclasses import dataclass, field
from statistics import NormalDist
from typing import Callable, Optional, Sequence, Union

import numpy as np
import scipy.sparse as sp
import scipy.sparse.linalg as spla
from scipy import optimize

from .errors import AssumptionViolation, CensoringError, ParameterError, PolicyError
from .mdp import FiniteMdp, StationaryPolicy, pairs_of
from .models import PcInventorySpec, UcProductionSpec

Spec = Union[PcInventorySpec, UcProductionSpec]

DEFAULT_CAP = 1_000_000
CENSOR_LIMIT = 0.01
SUP_STEP = 1e-3
_ADMISSIBLE_TOL = 1e-12


class CounterStreams:
    """Uniforms indexed by (seed, step, replicate).

    Each step owns a Philox generator keyed by (seed, step); replicate r takes
    its r-th draw.  A replicate's numbers therefore do not depend on how many
    replicates run or in which order they are processed.
    """

    def __init__(self, seed: int):
        if seed < 0:
            raise ParameterError("seed must be nonnegative")
        self.seed = int(seed)

    def uniforms(self, step: int, n: int) -> np.ndarray:
        gen = np.random.Generator(np.random.Philox(key=[self.seed, step]))
        return gen.random(n)


# -- policies -----------------------------------------------------------------
@dataclass(frozen=True)
class ZeroOrderPolicy:
    """Never order: a = x."""

    def __call__(self, x: np.ndarray) -> np.ndarray:
        return np.array(x, dtype=float)


@dataclass(frozen=True)
class BaseStockPolicy:
    """a = x for x >= L, otherwise raise stock to ``target``."""

    L: float
    target: float

    def __call__(self, x: np.ndarray) -> np.ndarray:
        x = np.asarray(x, dtype=float)
        return np.where(x >= self.L, x, np.maximum(self.target, x))


@dataclass(frozen=True)
class GridPolicy:
    """Stationary grid policy applied at the nearest grid state, as an order-up-to level."""

    states: np.ndarray
    levels: np.ndarray

    @classmethod
    def from_mdp(cls, mdp: FiniteMdp, policy: StationaryPolicy) -> "GridPolicy":
        pairs = pairs_of(mdp, policy)
        return cls(np.asarray(mdp.states), np.asarray(mdp.actions[mdp.pair_action[pairs]]))

    def __call__(self, x: np.ndarray) -> np.ndarray:
        x = np.asarray(x, dtype=float)
        idx = np.clip(np.searchsorted(self.states, x), 1, len(self.states) - 1)
        left = self.states[idx - 1]
        idx = np.where(np.abs(x - left) <= np.abs(self.states[idx] - x), idx - 1, idx)
        # the order-up-to level never falls below the current stock
        return np.maximum(self.levels[idx], x)


Policy = Callable[[np.ndarray], np.ndarray]


# -- dynamics -----------------------------------------------------------------
class _SalesTable:
    """E[min(a, xi(a))] interpolated on a fine a-grid (used for vectorized UC costs)."""

    def __init__(self, spec: UcProductionSpec, a_max: float, step: float = SUP_STEP):
        self.grid = np.arange(0.0, a_max + 2 * step, step)
        self.values = np.array([spec.sales(a) for a in self.grid])

    def __call__(self, a: np.ndarray) -> np.ndarray:
        return np.interp(a, self.grid, self.values)


def _check_admissible(spec: Spec, x: np.ndarray, a: np.ndarray, step: int) -> None:
    if isinstance(spec, PcInventorySpec):
        bad = a < x - _ADMISSIBLE_TOL
        if np.any(bad):
            i = int(np.flatnonzero(bad)[0])
            raise PolicyError(f"order-up-to level {a[i]:.6g} below stock {x[i]:.6g}", step=step)
        return
    cap = np.where(x <= 0, spec.a_bar, np.where(x < spec.L, x + spec.theta_x, x + spec.theta))
    bad = (a < x - _ADMISSIBLE_TOL) | (a > cap + _ADMISSIBLE_TOL)
    if np.any(bad):
        i = int(np.flatnonzero(bad)[0])
        raise PolicyError(f"production z = {a[i] - x[i]:.6g} outside the cap at x = {x[i]:.6g}", step=step)


def _next_state(spec: Spec, a: np.ndarray, u: np.ndarray) -> np.ndarray:
    xi = spec.demand.sample(u, a)
    nxt = a - xi
    return np.maximum(nxt, 0.0) if isinstance(spec, UcProductionSpec) else nxt


@dataclass(frozen=True)
class Path:
    states: np.ndarray
    actions: np.ndarray
    costs: np.ndarray


def simulate_trajectory(spec: Spec, policy: Policy, x0: float, horizon: int, seed: int) -> Path:
    """(x_k, a_k, c_k) for k < horizon under the continuous dynamics."""
    if horizon < 1:
        raise ParameterError("horizon must be >= 1")
    streams = CounterStreams(seed)
    xs = np.empty(horizon)
    acts = np.empty(horizon)
    costs = np.empty(horizon)
    x = np.array([float(x0)])
    for k in range(horizon):
        a = np.asarray(policy(x), dtype=float)
        _check_admissible(spec, x, a, k)
        xs[k], acts[k] = x[0], a[0]
        costs[k] = spec.cost(x[0], a[0])
        x = _next_state(spec, a, streams.uniforms(k, 1))
    return Path(xs, acts, costs)


# -- stopping times -----------------------------------------------------------
@dataclass(frozen=True)
class StoppingTimeReport:
    start_state: float
    n_reps: int
    mean_tau: float
    ci_halfwidth: float
    mean_cost_to_tau: float
    mean_kappa_term: float
    bound_rhs: float
    bound_satisfied: bool
    verdict: str
    censored: int
    ci_level: float

    def to_dict(self) -> dict:
        return dict(self.__dict__)


def _stop_mask(spec: Spec, stop, x: np.ndarray) -> np.ndarray:
    if callable(stop):
        return np.asarray(stop(x), dtype=bool)
    if stop == "below_L":
        return x < spec.L
    if stop == "zero":
        return x <= 0.0
    raise ParameterError(f"unknown stop rule {stop!r}")


def _ci_halfwidth(values: np.ndarray, level: float) -> tuple[float, float]:
    n = values.shape[0]
    mean = math.fsum(values) / n
    if n < 2:
        return mean, 0.0
    var = math.fsum((values - mean) ** 2) / (n - 1)
    z = NormalDist().inv_cdf(0.5 + level / 2.0)
    return mean, z * math.sqrt(var / n)


def hitting_time(spec: Spec, policy: Policy, x0: float, stop="below_L", n_reps: int = 100_000,
                 cap: int = DEFAULT_CAP, seed: int = 0, bound_rhs: Optional[float] = None,
                 ci_level: float = 0.99) -> StoppingTimeReport:
    """Monte Carlo estimate of E[tau] for tau = first n with stop(x_n).

    Also accumulates the cost before tau and the one-stage cost at x_tau.
    Without ``bound_rhs`` the drift bound 2(x0 - L + D_x)/Delta_x is used
    (PC specs only).
    """
    if n_reps < 1 or cap < 1:
        raise ParameterError("n_reps and cap must be positive")
    if not 0 < ci_level < 1:
        raise ParameterError("ci_level must lie in (0, 1)")
    if bound_rhs is None:
        if not isinstance(spec, PcInventorySpec):
            raise ParameterError("bound_rhs is required for production specs")
        hb = compute_H(spec, x0)
        bound_rhs = 2.0 * (x0 - spec.L + hb.D_x) / hb.Delta_x
    streams = CounterStreams(seed)
    sales = None
    if isinstance(spec, UcProductionSpec):
        sales = _SalesTable(spec, max(spec.a_bar, x0 + spec.theta_x + spec.theta) + 1.0)

    def cost(x, a):
        if sales is None:
            return spec.cost(x, a)
        return spec.kappa(a - x) + spec.psi(a) - spec.s * sales(a)

    x = np.full(n_reps, float(x0))
    tau = np.full(n_reps, -1, dtype=np.int64)
    acc = np.zeros(n_reps)
    terminal = np.zeros(n_reps)
    alive = np.arange(n_reps)
    step = 0
    while alive.size and step <= cap:
        xa = x[alive]
        done = _stop_mask(spec, stop, xa)
        if np.any(done):
            idx = alive[done]
            tau[idx] = step
            a_end = np.asarray(policy(xa[done]), dtype=float)
            terminal[idx] = cost(xa[done], a_end)
            alive = alive[~done]
            xa = xa[~done]
        if not alive.size or step == cap:
            break
        a = np.asarray(policy(xa), dtype=float)
        _check_admissible(spec, xa, a, step)
        acc[alive] += np.asarray(cost(xa, a), dtype=float)
        u = streams.uniforms(step, int(alive[-1]) + 1)[alive]
        x[alive] = _next_state(spec, a, u)
        step += 1
    censored = int(np.sum(tau < 0))
    if censored > CENSOR_LIMIT * n_reps:
        raise CensoringError(f"{censored} of {n_reps} paths exceeded the cap of {cap} steps",
                             censored=censored, n_reps=n_reps)
    if censored:
        warnings.warn(f"{censored} censored paths excluded", RuntimeWarning, stacklevel=2)
    ok = tau >= 0
    mean_tau, half = _ci_halfwidth(tau[ok].astype(float), ci_level)
    mean_cost = math.fsum(acc[ok]) / int(ok.sum())
    mean_term = math.fsum(terminal[ok]) / int(ok.sum())
    if mean_tau + half <= bound_rhs:
        verdict = "satisfied"
    elif mean_tau - half > bound_rhs:
        verdict = "violated"
    else:
        verdict = "inconclusive"
    return StoppingTimeReport(float(x0), int(ok.sum()), mean_tau, half, mean_cost, mean_term,
                              float(bound_rhs), verdict == "satisfied", verdict, censored, ci_level)


def expected_hitting_time_grid(mdp: FiniteMdp, policy: StationaryPolicy, target) -> np.ndarray:
    """Exact E[tau] on a grid chain by solving (I - P_TT) t = 1 over non-target states."""
    target = np.asarray(target, dtype=bool)
    pairs = pairs_of(mdp, policy)
    P = mdp.kernel[pairs]
    out = np.zeros(mdp.n_states)
    free = np.flatnonzero(~target)
    if free.size:
        A = sp.identity(free.size, format="csc") - P[free][:, free].tocsc()
        sol = spla.spsolve(A, np.ones(free.size)) if free.size > 1 else np.array([1.0 / A[0, 0]])
        out[free] = np.atleast_1d(sol)
    return out


# -- analytic bound -----------------------------------------------------------
@dataclass(frozen=True)
class HBound:
    x: float
    Delta_x: float
    D_x: float
    H_value: float
    components: dict = field(default_factory=dict)


def _interval_grid(lo: float, hi: float, step: float) -> np.ndarray:
    n = max(2, int(math.ceil((hi - lo) / step)) + 1)
    return np.linspace(lo, hi, n)


def _demand_levels(spec: PcInventorySpec, lo: float, hi: float, n_max: int = 201) -> np.ndarray:
    """Order levels where a-dependent demand quantities are evaluated."""
    if spec.demand.is_constant():
        return np.array([lo])
    return _interval_grid(lo, hi, max(SUP_STEP, (hi - lo) / (n_max - 1)))


def _inf_mean(spec: PcInventorySpec, lo: float, hi: float) -> float:
    dem = spec.demand
    if dem.is_constant():
        return dem.mean(lo)
    ys = _interval_grid(lo, hi, SUP_STEP)
    means = np.array([dem.mean(y) for y in ys])
    k = int(np.argmin(means))
    a, b = ys[max(0, k - 1)], ys[min(len(ys) - 1, k + 1)]
    if b > a:
        res = optimize.minimize_scalar(dem.mean, bounds=(a, b), method="bounded",
                                       options={"xatol": 1e-9})
        return float(min(means[k], res.fun))
    return float(means[k])


def smallest_tail_level(spec: PcInventorySpec, lo: float, hi: float, budget: float,
                        tol: float = 1e-9) -> float:
    """Smallest D with sup_y E[xi(y) 1(xi(y) > D)] <= budget, by bisection."""
    levels = _demand_levels(spec, lo, hi)
    dem = spec.demand

    def tail(d: float) -> float:
        return max(dem.tail_mean(d, y) for y in levels)

    top = max(dem.support(y)[1] for y in levels)
    if tail(0.0) <= budget:
        return 0.0
    left, right = 0.0, top
    while right - left > tol:
        mid = 0.5 * (left + right)
        if tail(mid) <= budget:
            right = mid
        else:
            left = mid
    return right


def compute_H(spec: PcInventorySpec, x: float) -> HBound:
    """Bound on h_alpha(x) - eps_bar for the inventory model, with its ingredients."""
    L, M = spec.L, spec.M
    hi = max(x, M)
    delta = _inf_mean(spec, L, hi)
    if delta <= 1e-12:
        raise AssumptionViolation(f"inf of the mean demand over [{L}, {hi}] is {delta:.3g}, not positive")
    d_x = smallest_tail_level(spec, L, hi, delta / 2.0)
    if x < L:
        psi_sup = float(np.max(spec.psi(_interval_grid(L, M, SUP_STEP))))
        kappa_term = float(spec.kappa(M - x))
        return HBound(float(x), delta, d_x, kappa_term + psi_sup,
                      {"kappa": kappa_term, "psi_sup": psi_sup, "hitting_factor": 0.0})
    psi_sup = float(np.max(spec.psi(_interval_grid(L, hi, SUP_STEP))))
    k_sup = max(spec.demand.expect(lambda y: float(spec.kappa(M - L + y)), a)
                for a in _demand_levels(spec, L, hi))
    factor = 2.0 * (x - L + d_x) / delta
    return HBound(float(x), delta, d_x, factor * (psi_sup + k_sup),
                  {"hitting_factor": factor, "psi_sup": psi_sup, "kappa_expectation_sup": k_sup})


def verify_h_bound(run, spec: PcInventorySpec, eps_bar: float, probe_states: Sequence[int],
                   states: Sequence[float], grid_slack: float = 0.0, h_scale: float = 1.0) -> dict:
    """Check h_alpha(x) <= eps_bar + H(x) + grid_slack at each probe and schedule point.

    ``states`` are the grid coordinates of the run's model.  ``h_scale``
    multiplies H; values below one exercise the check itself.
    """
    states = np.asarray(states, dtype=float)
    bounds = {}
    for p in probe_states:
        if not 0 <= p < states.shape[0]:
            raise ParameterError(f"probe {p} is not a grid state")
        bounds[p] = compute_H(spec, float(states[p]))
    rows = []
    for i, alpha in enumerate(run.schedule.alphas):
        for p in probe_states:
            hb = bounds[p]
            rhs = eps_bar + h_scale * hb.H_value + grid_slack
            h = float(run.h_per_alpha[i, p])
            rows.append({"alpha": alpha, "state": int(p), "x": hb.x, "h": h,
                         "H": hb.H_value, "bound": rhs, "margin": rhs - h})
    violations = sum(r["margin"] < 0 for r in rows)
    return {"ok": violations == 0, "violations": int(violations), "rows": rows,
            "min_margin": min((r["margin"] for r in rows), default=float("inf"))}


def verify_comparison_drift(spec: Spec, x_range: tuple, n_samples: int = 50,
                            y_level: Optional[float] = None) -> dict:
    """One-step drift inequalities at sampled states, by quadrature.

    PC: Z = (x - L + D)^+ must drop by Delta/2 when x >= L and grow by at most
    y - L + D when x < L (y is the refill level, M by default).  Production:
    sum w q <= lambda w + 1 for x >= L and <= lambda' w for x >= L_tilde.
    """
    xs = np.linspace(x_range[0], x_range[1], n_samples)
    rows = []
    if isinstance(spec, PcInventorySpec):
        L = spec.L
        y = spec.M if y_level is None else y_level
        for x in xs:
            hb = compute_H(spec, max(x, L))
            D, delta = hb.D_x, hb.Delta_x
            z = max(x - L + D, 0.0)
            if x >= L:
                ez = spec.demand.expect(lambda t: max(x - t - L + D, 0.0), x)
                rows.append({"x": x, "case": "decrease", "margin": z - delta / 2.0 - ez})
            else:
                ez = spec.demand.expect(lambda t: max(y - t - L + D, 0.0), y)
                rows.append({"x": x, "case": "refill", "margin": z + y - L + D - ez})
    else:
        r = spec.r
        for x in xs:
            w = math.exp(r * x)
            for z in np.linspace(0.0, spec.theta, 5):
                a = x + z
                ew = spec.demand.expect(lambda t: math.exp(r * max(a - t, 0.0)), a)
                if x >= spec.L:
                    rows.append({"x": x, "z": z, "case": "lambda_plus_one",
                                 "margin": spec.lambda_ * w + 1.0 - ew})
                if x >= spec.L_tilde:
                    rows.append({"x": x, "z": z, "case": "lambda_prime",
                                 "margin": spec.lambda_prime * w - ew})
    worst = min((r_["margin"] for r_ in rows), default=float("inf"))
    return {"ok": worst >= -1e-8, "worst_margin": worst, "rows": rows}
