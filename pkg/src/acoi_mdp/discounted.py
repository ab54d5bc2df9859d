"""Discounted-cost optimality equation: value iteration, policy evaluation, eps-optimal policies.

Value iteration runs in relative form: the iterate is normalized to vanish at
a reference state and the removed constant is carried separately.  The two
sequences describe exactly the same functions as plain iteration from zero,
but the relative part stays O(span) instead of O(1/(1 - alpha)), so residuals
remain meaningful in floating point when alpha is close to one.
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import Callable, Optional

import numpy as np
import scipy.sparse as sp
import scipy.sparse.linalg as spla

from .errors import CertificationError, NonConvergenceError, ParameterError
from .mdp import (FiniteMdp, StationaryPolicy, ValueFn, greedy_pairs, pairs_of,
                  weighted_norm)

DEFAULT_TOL = 1e-10
DEFAULT_MAX_ITER = 1_000_000
# residual floor in units of machine epsilon times the iterate scale
_FP_FLOOR = 64.0


@dataclass(frozen=True)
class DcoeSolution:
    """Solution of v = T_alpha v.

    ``v`` equals ``relative + gain / (1 - alpha)``; the two parts are kept so
    downstream code can form relative values without cancellation.
    """

    alpha: float
    v: ValueFn
    iterations: int
    residual: float
    norm_used: str
    tol: float
    relative: np.ndarray
    gain: float
    sup_residual: float
    error_bound: float

    @property
    def values(self) -> np.ndarray:
        return self.v.values

    def to_dict(self) -> dict:
        return {
            "alpha": self.alpha,
            "iterations": self.iterations,
            "residual": self.residual,
            "sup_residual": self.sup_residual,
            "norm_used": self.norm_used,
            "tol": self.tol,
            "gain": self.gain,
            "error_bound": self.error_bound,
            "ref_state": self.v.ref_state,
            "values": self.v.values.tolist(),
            "relative": self.relative.tolist(),
        }

    @classmethod
    def from_dict(cls, data: dict) -> "DcoeSolution":
        rel = np.asarray(data["relative"], dtype=float)
        alpha = float(data["alpha"])
        gain = float(data["gain"])
        return cls(alpha=alpha, v=ValueFn(rel + gain / (1.0 - alpha), int(data.get("ref_state", 0))),
                   iterations=int(data["iterations"]), residual=float(data["residual"]),
                   norm_used=data["norm_used"], tol=float(data["tol"]), relative=rel, gain=gain,
                   sup_residual=float(data["sup_residual"]), error_bound=float(data["error_bound"]))


def _norm(f: np.ndarray, w: Optional[np.ndarray]) -> float:
    if f.size == 0:
        return 0.0
    if w is None:
        return float(np.max(np.abs(f)))
    return float(np.max(np.abs(f) / w))


def evaluate_policy_relative(mdp: FiniteMdp, policy: StationaryPolicy | np.ndarray,
                             alpha: float, ref_state: int = 0) -> tuple[np.ndarray, float]:
    """Discounted value of a stationary policy as ``(u, g)`` with value = u + g/(1-alpha).

    Solves (I - alpha P) u + g 1 = c with u[ref_state] = 0.
    """
    pairs = policy if isinstance(policy, np.ndarray) else pairs_of(mdp, policy)
    return _evaluate_pairs(mdp, pairs, alpha, ref_state)


def _evaluate_pairs(mdp: FiniteMdp, pairs: np.ndarray, alpha: float,
                    ref_state: int) -> tuple[np.ndarray, float]:
    n = mdp.n_states
    P = mdp.kernel[pairs]
    c = mdp.pair_cost[pairs]
    A = (sp.identity(n, format="csr") - alpha * P).tolil()
    # the unknown u[ref] is pinned to zero, so its column is reused for g
    A[:, ref_state] = np.ones((n, 1))
    x = spla.spsolve(A.tocsc(), c) if n > 1 else np.array([c[0] / A[0, 0]])
    x = np.atleast_1d(np.asarray(x, dtype=float))
    g = float(x[ref_state])
    u = x.copy()
    u[ref_state] = 0.0
    return u, g


def evaluate_policy(mdp: FiniteMdp, policy: StationaryPolicy, alpha: float) -> np.ndarray:
    """Exact discounted value (I - alpha P_mu)^{-1} c_mu."""
    if not 0.0 < alpha < 1.0:
        raise ParameterError(f"alpha must lie in (0, 1), got {alpha}")
    u, g = evaluate_policy_relative(mdp, policy, alpha)
    return u + g / (1.0 - alpha)


def solve_dcoe(mdp: FiniteMdp, alpha: float, tol: float = DEFAULT_TOL,
               max_iter: int = DEFAULT_MAX_ITER, *, ref_state: int = 0,
               accelerate: bool = True, jump_every: int = 25,
               warm_start: Optional[np.ndarray] = None,
               callback: Optional[Callable[[int, np.ndarray], None]] = None) -> DcoeSolution:
    """Solve v = T_alpha v by value iteration from zero.

    Stops once ``||v - T_alpha v|| <= tol * (1 - alpha)``, which bounds the
    sup-norm distance to the fixed point by ``tol``.  When that target lies
    below floating-point resolution it is raised to the attainable floor and
    ``error_bound`` reports the resulting guarantee.  UC models measure the
    residual in the weighted norm of the model.

    With ``accelerate`` the greedy policy of the current iterate is evaluated
    exactly every ``jump_every`` sweeps; its value is accepted only if it
    passes the same residual test, otherwise iteration resumes from it.
    ``callback(k, v_k)`` receives the plain iterates T^k 0 and disables
    acceleration so the sequence seen is the textbook one.
    """
    if not 0.0 < alpha < 1.0:
        raise ParameterError(f"alpha must lie in (0, 1), got {alpha}")
    if tol <= 0:
        raise ParameterError("tol must be positive")
    if max_iter < 1:
        raise ParameterError("max_iter must be at least 1")
    if not 0 <= ref_state < mdp.n_states:
        raise ParameterError("ref_state out of range")
    if callback is not None:
        accelerate = False

    w = mdp.weight if mdp.model_class == "UC" else None
    norm_used = "weighted" if w is not None else "sup"
    target = tol * (1.0 - alpha)

    u = np.zeros(mdp.n_states) if warm_start is None else np.array(warm_start, dtype=float)
    u = u - u[ref_state]
    level = 0.0  # v_k(ref) for the plain iterate, only meaningful without warm start
    residual = np.inf
    g = 0.0
    it = 0
    since_jump = 0
    best_jump = np.inf
    while True:
        q = mdp.pair_cost + alpha * (mdp.kernel @ u)
        tu = mdp.state_min(q)
        d = float(tu[ref_state])
        u_new = tu - d
        diff = u - u_new
        residual = _norm(diff, w)
        g = d
        it += 1
        level = d + alpha * level
        if callback is not None:
            callback(it, u_new + level)
        floor = _FP_FLOOR * np.finfo(float).eps * max(1.0, _norm(u_new, w), abs(d))
        eff = max(target, floor)
        if residual <= eff:
            u = u_new
            break
        if it >= max_iter:
            v_last = u_new + d / (1.0 - alpha)
            raise NonConvergenceError(
                f"value iteration did not converge at alpha={alpha} after {it} iterations "
                f"(residual {residual:.3e} > {eff:.3e})",
                alpha=alpha, last_iterate=v_last, residual=residual, iterations=it)
        u = u_new
        since_jump += 1
        if accelerate and since_jump >= jump_every:
            since_jump = 0
            pairs = greedy_pairs(mdp, q)
            try:
                u_pol, g_pol = _evaluate_pairs(mdp, pairs, alpha, ref_state)
            except (RuntimeError, ValueError, np.linalg.LinAlgError):
                continue
            if not np.all(np.isfinite(u_pol)):
                continue
            tu_pol = mdp.state_min(mdp.pair_cost + alpha * (mdp.kernel @ u_pol))
            res_pol = _norm(tu_pol - u_pol - g_pol, w)
            floor_pol = _FP_FLOOR * np.finfo(float).eps * max(1.0, _norm(u_pol, w), abs(g_pol))
            if res_pol <= max(target, floor_pol):
                u, g, residual = u_pol, g_pol, res_pol
                eff = max(target, floor_pol)
                break
            if res_pol < min(residual, best_jump):
                best_jump = res_pol
                u = u_pol

    v = u + g / (1.0 - alpha)
    sup_res = residual
    if w is not None:
        tu = mdp.state_min(mdp.pair_cost + alpha * (mdp.kernel @ u))
        sup_res = float(np.max(np.abs(tu - u - g)))
    return DcoeSolution(alpha=float(alpha), v=ValueFn(v, ref_state), iterations=it,
                        residual=float(residual), norm_used=norm_used, tol=float(tol),
                        relative=u, gain=float(g), sup_residual=float(sup_res),
                        error_bound=float(sup_res / (1.0 - alpha)))


def dcoe_residual(mdp: FiniteMdp, v, alpha: float, weighted: bool = False) -> float:
    """||v - T_alpha v|| for an arbitrary vector."""
    vals = v.values if isinstance(v, ValueFn) else np.asarray(v, dtype=float)
    tv = mdp.state_min(mdp.q_values(vals, alpha))
    return weighted_norm(vals - tv, mdp.weight) if weighted else float(np.max(np.abs(vals - tv)))


def estimate_contraction_modulus(mdp: FiniteMdp, alpha: float, trials: int = 100,
                                 rng_seed: int = 0) -> float:
    """Largest observed ||T u - T v||_w / ||u - v||_w over seeded random pairs.

    Coordinates are uniform on [-w(s), w(s)].  Pairs with u == v are skipped.
    """
    if trials < 1:
        raise ParameterError("trials must be >= 1")
    rng = np.random.default_rng(rng_seed)
    w = mdp.weight
    pairs = [(rng.uniform(-w, w), rng.uniform(-w, w)) for _ in range(trials)]
    return contraction_ratio_max(mdp, alpha, pairs)


def contraction_ratio_max(mdp: FiniteMdp, alpha: float, pairs) -> float:
    w = mdp.weight
    best = 0.0
    for u, v in pairs:
        denom = weighted_norm(u - v, w)
        if denom == 0.0:
            continue
        tu = mdp.state_min(mdp.q_values(u, alpha))
        tv = mdp.state_min(mdp.q_values(v, alpha))
        best = max(best, weighted_norm(tu - tv, w) / denom)
    return best


def eps_optimal_policy(mdp: FiniteMdp, solution: DcoeSolution, eps: float) -> StationaryPolicy:
    """Greedy policy whose exact discounted value is within ``eps`` of v_alpha.

    Tries the slack eps*(1-alpha)/2 first and falls back to the exact argmin.
    The check allows the solver's own error bound on top of ``eps``.
    """
    if eps <= 0:
        raise ParameterError("eps must be positive")
    alpha = solution.alpha
    ref = solution.v.ref_state
    q = mdp.pair_cost + alpha * (mdp.kernel @ solution.relative)
    allowance = eps + solution.error_bound
    worst = np.inf
    for slack in (eps * (1.0 - alpha) / 2.0, 0.0):
        pairs = greedy_pairs(mdp, q, slack)
        u_pol, g_pol = _evaluate_pairs(mdp, pairs, alpha, ref)
        gap = (u_pol - solution.relative) + (g_pol - solution.gain) / (1.0 - alpha)
        worst = float(np.max(gap))
        if worst <= allowance:
            return StationaryPolicy(mdp.pair_action[pairs])
    raise CertificationError(
        f"greedy policy exceeds v_alpha by {worst:.3e} > eps={eps:.3e} (alpha={alpha})")
