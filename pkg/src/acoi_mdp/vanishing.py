"""Vanishing-discount pipeline: relative values, tail envelopes, ACOI certificates.

Relative values come straight from the solver's relative iterate, so they
never pass through the O(1/(1 - alpha)) absolute values.
"""

from __future__ import annotations

from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field
from typing import Optional, Sequence

import numpy as np
import scipy.sparse as sp
import scipy.sparse.linalg as spla
from scipy.sparse.csgraph import connected_components

from .discounted import DEFAULT_TOL, DcoeSolution, solve_dcoe
from .errors import CertificateInvalidError, NonConvergenceError, ParameterError
from .mdp import FiniteMdp, StationaryPolicy, greedy_pairs, policy_matrices, weighted_norm


@dataclass(frozen=True)
class DiscountSchedule:
    alphas: tuple
    ref_state: Optional[int] = None

    def __post_init__(self) -> None:
        a = np.asarray(self.alphas, dtype=float)
        if a.ndim != 1 or a.shape[0] < 3:
            raise ParameterError("a discount schedule needs at least 3 points")
        if np.any(a <= 0) or np.any(a >= 1):
            raise ParameterError("discount factors must lie in (0, 1)")
        if np.any(np.diff(a) <= 0):
            raise ParameterError("discount factors must be strictly increasing")
        object.__setattr__(self, "alphas", tuple(float(x) for x in a))

    @classmethod
    def geometric(cls, n_points: int = 20, ref_state: Optional[int] = None) -> "DiscountSchedule":
        """alpha_n = 1 - 2^-n for n = 1..n_points."""
        return cls(tuple(1.0 - 2.0 ** -k for k in range(1, n_points + 1)), ref_state)

    def __len__(self) -> int:
        return len(self.alphas)


@dataclass(frozen=True)
class VanishingDiscountRun:
    schedule: DiscountSchedule
    mode: str
    ref_state: int
    v_per_alpha: list
    h_per_alpha: np.ndarray  # (n_alpha, n_states)
    m_per_alpha: Optional[np.ndarray]
    rho_sequence: np.ndarray
    lower_env: np.ndarray
    upper_env: np.ndarray
    window: int
    h_lower: np.ndarray
    h_upper: np.ndarray
    rho_star: float

    @property
    def alphas(self) -> np.ndarray:
        return np.asarray(self.schedule.alphas)

    @property
    def tail_oscillation(self) -> np.ndarray:
        return self.h_upper - self.h_lower

    def to_dict(self) -> dict:
        return {
            "mode": self.mode,
            "ref_state": self.ref_state,
            "alphas": list(self.schedule.alphas),
            "rho_sequence": self.rho_sequence.tolist(),
            "rho_star": self.rho_star,
            "window": self.window,
            "h_lower": self.h_lower.tolist(),
            "h_upper": self.h_upper.tolist(),
            "m_per_alpha": None if self.m_per_alpha is None else self.m_per_alpha.tolist(),
            "iterations": [s.iterations for s in self.v_per_alpha],
            "solver_residuals": [s.residual for s in self.v_per_alpha],
        }

    def to_full_dict(self) -> dict:
        """Everything needed to rebuild the run with :func:`run_from_dict`."""
        out = self.to_dict()
        out["solutions"] = [s.to_dict() for s in self.v_per_alpha]
        return out


def run_from_dict(data: dict) -> VanishingDiscountRun:
    """Rebuild a run from :meth:`VanishingDiscountRun.to_full_dict` output."""
    sols = [DcoeSolution.from_dict(d) for d in data["solutions"]]
    schedule = DiscountSchedule(tuple(data["alphas"]),
                                data["ref_state"] if data["mode"] == "UC" else None)
    return _assemble(schedule, data["mode"], int(data["ref_state"]), sols, int(data["window"]))


@dataclass(frozen=True)
class AcoiCertificate:
    rho: float
    h: np.ndarray
    residuals: np.ndarray
    min_residual: float
    max_residual: float
    tol: float
    verdict: bool
    policy: StationaryPolicy

    def to_dict(self) -> dict:
        return {
            "rho": self.rho,
            "tol": self.tol,
            "verdict": self.verdict,
            "min_residual": self.min_residual,
            "max_residual": self.max_residual,
            "h": self.h.tolist(),
            "residuals": self.residuals.tolist(),
            "policy": self.policy.to_list(),
        }


def relative_values_uc(solution: DcoeSolution, ref_state: int) -> np.ndarray:
    """h_alpha = v_alpha - v_alpha(ref); exactly zero at ``ref_state``."""
    n = len(solution.v)
    if not 0 <= ref_state < n:
        raise ParameterError("ref_state out of range")
    base = solution.relative
    h = base - base[ref_state]
    h[ref_state] = 0.0
    return h


def relative_values_pc(solution: DcoeSolution) -> tuple[np.ndarray, float]:
    """(v_alpha - m_alpha, m_alpha) with m_alpha the minimum of v_alpha."""
    u = solution.relative
    k = int(np.argmin(u))
    h = u - u[k]
    h[k] = 0.0
    m = float(u[k] + solution.gain / (1.0 - solution.alpha))
    return h, m


def _tail_envelopes(hs: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
    lower = np.minimum.accumulate(hs[::-1], axis=0)[::-1]
    upper = np.maximum.accumulate(hs[::-1], axis=0)[::-1]
    return lower, upper


def run_schedule(mdp: FiniteMdp, schedule: Optional[DiscountSchedule] = None,
                 mode: Optional[str] = None, solver_tol: float = DEFAULT_TOL, *,
                 window: int = 3, max_iter: int = 1_000_000, workers: int = 1,
                 ref_state: Optional[int] = None) -> VanishingDiscountRun:
    """Solve the DCOE along the schedule and build envelopes and the rho estimate.

    ``h_lower``/``h_upper`` are the entrywise min/max over the last ``window``
    schedule points.  With ``workers > 1`` the solves run in a thread pool and
    are not warm-started.
    """
    schedule = schedule or DiscountSchedule.geometric()
    mode = mode or mdp.model_class
    if mode not in ("UC", "PC"):
        raise ParameterError(f"mode must be UC or PC, got {mode!r}")
    if mode != mdp.model_class:
        raise ParameterError(f"mode {mode} does not match model class {mdp.model_class}")
    if not 1 <= window <= len(schedule):
        raise ParameterError("window must lie between 1 and the schedule length")
    ref = ref_state if ref_state is not None else (schedule.ref_state or 0)
    if not 0 <= ref < mdp.n_states:
        raise ParameterError("ref_state out of range")

    def solve(alpha: float, warm=None) -> DcoeSolution:
        try:
            return solve_dcoe(mdp, alpha, solver_tol, max_iter, ref_state=ref, warm_start=warm)
        except NonConvergenceError as exc:
            raise NonConvergenceError(f"schedule point alpha={alpha}: {exc}", alpha=alpha,
                                      last_iterate=exc.last_iterate, residual=exc.residual,
                                      iterations=exc.iterations) from exc

    if workers > 1:
        with ThreadPoolExecutor(max_workers=workers) as pool:
            sols = list(pool.map(solve, schedule.alphas))
    else:
        sols = []
        warm = None
        for alpha in schedule.alphas:
            sol = solve(alpha, warm)
            warm = sol.relative
            sols.append(sol)

    return _assemble(schedule, mode, ref, sols, window)


def _assemble(schedule: DiscountSchedule, mode: str, ref: int, sols: list,
              window: int) -> VanishingDiscountRun:
    alphas = np.asarray(schedule.alphas)
    if mode == "UC":
        hs = np.vstack([relative_values_uc(s, ref) for s in sols])
        rho_seq = np.array([s.gain + (1.0 - s.alpha) * s.relative[ref] for s in sols])
        ms = None
    else:
        pairs = [relative_values_pc(s) for s in sols]
        hs = np.vstack([p[0] for p in pairs])
        ms = np.array([p[1] for p in pairs])
        rho_seq = np.array([s.gain + (1.0 - s.alpha) * float(np.min(s.relative)) for s in sols])
    lower, upper = _tail_envelopes(hs)
    start = len(alphas) - window
    return VanishingDiscountRun(schedule=schedule, mode=mode, ref_state=ref, v_per_alpha=sols,
                                h_per_alpha=hs, m_per_alpha=ms, rho_sequence=rho_seq,
                                lower_env=lower, upper_env=upper, window=window,
                                h_lower=lower[start].copy(), h_upper=upper[start].copy(),
                                rho_star=float(rho_seq[-1]))


def check_assumption_uc_bounded(run: VanishingDiscountRun, w) -> float:
    """max over the schedule of ||h_alpha||_w."""
    if run.mode != "UC":
        raise ParameterError("boundedness of ||h_alpha||_w is a UC-mode check")
    w = np.asarray(w, dtype=float)
    return max(weighted_norm(h, w) for h in run.h_per_alpha)


def uc_bound_stable(run: VanishingDiscountRun, w, growth: float = 0.01) -> bool:
    """No growth of ||h_alpha||_w across the last half of the schedule beyond ``growth``."""
    w = np.asarray(w, dtype=float)
    norms = np.array([weighted_norm(h, w) for h in run.h_per_alpha])
    half = len(norms) // 2
    base = float(np.max(norms[:half])) if half else 0.0
    return bool(np.max(norms[half:]) <= (1.0 + growth) * max(base, float(norms[half])) + 1e-9)


def check_condition_B(run: VanishingDiscountRun, growth: float = 0.01,
                      abs_tol: float = 1e-9) -> tuple[np.ndarray, bool]:
    """Per-state sup of h_alpha over the schedule and a non-explosion flag.

    The flag compares the max over the last third of the schedule with the max
    over the middle third.
    """
    if run.mode != "PC":
        raise ParameterError("condition (B) is a PC-mode check")
    hs = run.h_per_alpha
    sup = hs.max(axis=0)
    k = len(hs)
    third = max(1, k // 3)
    mid = hs[k - 2 * third:k - third].max()
    last = hs[k - third:].max()
    return sup, bool(last <= (1.0 + growth) * mid + abs_tol)


def acoi_residual(mdp: FiniteMdp, rho: float, h, tol: float = 1e-6) -> AcoiCertificate:
    """Residuals rho + h - T h and the greedy policy of the right-hand side."""
    h = np.asarray(h, dtype=float)
    if h.shape != (mdp.n_states,):
        raise ParameterError("h must have one entry per state")
    if not np.all(np.isfinite(h)):
        raise ParameterError("h must be finite")
    q = mdp.q_values(h, 1.0)
    th = mdp.state_min(q)
    res = rho + h - th
    pairs = greedy_pairs(mdp, q)
    return AcoiCertificate(rho=float(rho), h=h.copy(), residuals=res,
                           min_residual=float(res.min()), max_residual=float(res.max()),
                           tol=float(tol), verdict=bool(res.min() >= -tol),
                           policy=StationaryPolicy(mdp.pair_action[pairs]))


def certify_run(mdp: FiniteMdp, run: VanishingDiscountRun, tol: float = 1e-6) -> AcoiCertificate:
    return acoi_residual(mdp, run.rho_star, run.h_lower, tol)


def acoi_to_policy(mdp: FiniteMdp, cert: AcoiCertificate, eps: float = 0.0) -> StationaryPolicy:
    """Per state, the lowest-index action within ``eps`` of min_a (c + sum h q)."""
    if not cert.verdict:
        raise CertificateInvalidError(
            f"ACOI certificate failed (min residual {cert.min_residual:.3e} < -{cert.tol:.1e})")
    if eps < 0:
        raise ParameterError("eps must be nonnegative")
    pairs = greedy_pairs(mdp, mdp.q_values(cert.h, 1.0), eps)
    return StationaryPolicy(mdp.pair_action[pairs])


def average_cost_eval(mdp: FiniteMdp, policy: StationaryPolicy, horizon: int = 100_000) -> np.ndarray:
    """J_n/n by the exact recursion J_{k+1} = c + P J_k.

    The returned vector is the mean of J_k/k over the last tenth of the
    horizon, which damps periodic oscillation.
    """
    if horizon < 1:
        raise ParameterError("horizon must be >= 1")
    P, c = policy_matrices(mdp, policy)
    P = sp.csr_matrix(P)
    J = np.zeros(mdp.n_states)
    tail = max(1, horizon // 10)
    acc = np.zeros(mdp.n_states)
    for k in range(1, horizon + 1):
        J = c + P @ J
        if k > horizon - tail:
            acc += J / k
    return acc / tail


def average_cost_exact(mdp: FiniteMdp, policy: StationaryPolicy) -> np.ndarray:
    """Long-run average cost per state from the stationary laws of the closed classes."""
    P, c = policy_matrices(mdp, policy)
    return chain_average_cost(sp.csr_matrix(P), c)


def chain_average_cost(P: sp.csr_matrix, c: np.ndarray) -> np.ndarray:
    n = P.shape[0]
    n_comp, labels = connected_components(P, directed=True, connection="strong")
    gain = np.full(n, np.nan)
    closed = np.zeros(n, dtype=bool)
    coo = P.tocoo()
    leaving = labels[coo.row] != labels[coo.col]
    open_comp = np.zeros(n_comp, dtype=bool)
    open_comp[labels[coo.row[leaving & (coo.data > 0)]]] = True
    for comp in range(n_comp):
        if open_comp[comp]:
            continue
        idx = np.flatnonzero(labels == comp)
        closed[idx] = True
        sub = P[idx][:, idx].toarray()
        k = idx.shape[0]
        # pi (P - I) = 0 with the last equation replaced by sum(pi) = 1
        A = (sub - np.eye(k)).T
        A[-1, :] = 1.0
        rhs = np.zeros(k)
        rhs[-1] = 1.0
        pi = np.linalg.solve(A, rhs)
        gain[idx] = float(pi @ c[idx])
    trans = np.flatnonzero(~closed)
    if trans.size:
        rec = np.flatnonzero(closed)
        P_tt = P[trans][:, trans]
        P_tr = P[trans][:, rec]
        A = sp.identity(trans.size, format="csc") - P_tt.tocsc()
        rhs = P_tr @ gain[rec]
        sol = spla.spsolve(A, rhs) if trans.size > 1 else np.array([rhs[0] / A[0, 0]])
        gain[trans] = np.atleast_1d(sol)
    return gain


def trace_rows(run: VanishingDiscountRun, probes: Sequence[int]) -> list[list[float]]:
    """Rows (alpha, (1-alpha) * value, h_alpha at each probe) for the plot-data CSV."""
    rows = []
    for i, alpha in enumerate(run.schedule.alphas):
        rows.append([alpha, float(run.rho_sequence[i])] + [float(run.h_per_alpha[i, p]) for p in probes])
    return rows
