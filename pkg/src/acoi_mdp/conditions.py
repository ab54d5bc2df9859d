"""Checks for the majorization, integrability and epi-convergence hypotheses on grids."""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import Optional, Sequence

import numpy as np

from .discounted import DcoeSolution
from .errors import InsufficientSequenceError, ParameterError
from .mdp import FiniteMdp

GUS_MARGIN = 1e-9
CHAIN_SLACK = 1e-9


@dataclass(frozen=True)
class MajorizationWitness:
    state: int
    eps: float
    K_eps: np.ndarray
    nu_atoms: np.ndarray
    nu_total: float
    ui_tail: list = field(default_factory=list)

    def to_dict(self) -> dict:
        nz = np.flatnonzero(self.nu_atoms)
        return {"state": self.state, "eps": self.eps, "K_eps": self.K_eps.tolist(),
                "nu_atoms": {int(i): float(self.nu_atoms[i]) for i in nz},
                "nu_total": self.nu_total,
                "ui_tail": [[float(l), float(t)] for l, t in self.ui_tail]}


@dataclass(frozen=True)
class EgoroffResult:
    D: np.ndarray
    complement_mass: float
    n_star: int
    uniform_gap: float

    def to_dict(self) -> dict:
        return {"D": self.D.tolist(), "complement_mass": self.complement_mass,
                "n_star": self.n_star, "uniform_gap": self.uniform_gap}


@dataclass(frozen=True)
class EpiDiagnostics:
    lower_epilimit: np.ndarray
    inf_sequence_liminf: float
    inf_of_epilimit: float
    inf_of_pointwise_liminf: float
    chain_ok: bool


@dataclass(frozen=True)
class EpiCompactness:
    holds: bool
    K: tuple
    witnesses: list

    def __bool__(self) -> bool:
        return self.holds


def _pair_rows(mdp: FiniteMdp, state: int, K) -> np.ndarray:
    """Pair indices of (state, a) for a in K."""
    K = np.asarray(K, dtype=np.int64)
    if K.size == 0:
        raise ParameterError("K must be nonempty")
    sl = mdp.pair_slice(state)
    acts = mdp.pair_action[sl]
    pos = np.searchsorted(acts, K)
    if np.any(pos >= acts.size) or np.any(acts[np.minimum(pos, acts.size - 1)] != K):
        raise ParameterError(f"K is not a subset of the admissible actions at state {state}")
    return sl.start + pos


def select_K_eps(mdp: FiniteMdp, state: int, eps: float, solutions: Sequence[DcoeSolution],
                 alpha_bar: Optional[float] = None) -> np.ndarray:
    """Smallest prefix of actions, ranked by Q-value at the largest alpha, with
    min_{a in K} c + alpha sum v q <= v(x) + eps at every solution with alpha >= alpha_bar.

    By default the last half of ``solutions`` is used.
    """
    if not solutions:
        raise ParameterError("select_K_eps needs at least one solution")
    sols = sorted(solutions, key=lambda s: s.alpha)
    if alpha_bar is None:
        sols = sols[len(sols) // 2:]
    else:
        sols = [s for s in sols if s.alpha >= alpha_bar]
        if not sols:
            raise ParameterError("no solution with alpha >= alpha_bar")
    sl = mdp.pair_slice(state)
    acts = mdp.pair_action[sl]
    P = mdp.kernel[sl]
    c = mdp.pair_cost[sl]
    # Q - v(x) in relative coordinates, one row per alpha
    gaps = np.vstack([c + s.alpha * (P @ s.relative) - s.relative[state] - s.gain for s in sols])
    order = np.argsort(gaps[-1], kind="stable")
    prefix_min = np.minimum.accumulate(gaps[:, order], axis=1)
    ok = np.all(prefix_min <= eps, axis=0)
    k = int(np.argmax(ok)) + 1 if ok.any() else acts.size
    return np.sort(acts[order[:k]])


def minimal_majorizer(mdp: FiniteMdp, state: int, K, eps: float = float("nan"),
                      g: Optional[np.ndarray] = None,
                      levels: Optional[Sequence[float]] = None) -> MajorizationWitness:
    """Entrywise max of the kernel rows q(.|x,a), a in K; tails use g = w by default."""
    rows = _pair_rows(mdp, state, K)
    sub = mdp.kernel[rows]
    nu = np.asarray(sub.max(axis=0).todense()).ravel()
    g = mdp.weight if g is None else np.asarray(g, dtype=float)
    if levels is None:
        levels = np.unique(g[np.asarray(sub.sum(axis=0)).ravel() > 0])
    tail = uniform_integrability_tail(mdp, state, K, g, levels)
    return MajorizationWitness(state, float(eps), np.asarray(K, dtype=np.int64), nu,
                               float(math.fsum(nu)), tail)


def gus_test(mdp: FiniteMdp, margin: float = GUS_MARGIN) -> tuple[float, bool]:
    """Total mass of the global minimal majorizer and whether it is below 2.

    The strict inequality is tested as ``total < 2 - margin`` so that a
    boundary case summing to 2 up to rounding is not reported as passing.
    """
    nu = np.asarray(mdp.kernel.max(axis=0).todense()).ravel()
    total = float(math.fsum(nu))
    return total, bool(total < 2.0 - margin)


def uniform_integrability_tail(mdp: FiniteMdp, state: int, K, g,
                               levels: Sequence[float]) -> list[tuple[float, float]]:
    """[(l, max_{a in K} sum_{g(y) >= l} g(y) q(y|x,a)) for l in levels]."""
    g = np.asarray(g, dtype=float)
    if g.shape != (mdp.n_states,):
        raise ParameterError("g must have one entry per state")
    if np.any(g < 0):
        raise ParameterError("g must be nonnegative")
    levels = np.asarray(levels, dtype=float)
    if np.any(np.diff(levels) <= 0):
        raise ParameterError("levels must be strictly increasing")
    sub = mdp.kernel[_pair_rows(mdp, state, K)]
    out = []
    for lev in levels:
        mask = np.where(g >= lev, g, 0.0)
        out.append((float(lev), float(np.max(sub @ mask))))
    return out


def _nu_vector(nu) -> np.ndarray:
    return nu.nu_atoms if isinstance(nu, MajorizationWitness) else np.asarray(nu, dtype=float)


def egoroff_extract(f_seq: Sequence, f_limit, nu, delta: float, eta: float) -> EgoroffResult:
    """First n_star for which the states deviating by more than eta after n_star carry nu-mass < delta."""
    if len(f_seq) == 0:
        raise ParameterError("f_seq must be nonempty")
    if delta <= 0 or eta <= 0:
        raise ParameterError("delta and eta must be positive")
    F = np.asarray(f_seq, dtype=float)
    f = np.asarray(f_limit, dtype=float)
    weights = _nu_vector(nu)
    if F.shape[1:] != f.shape or weights.shape != f.shape:
        raise ParameterError("f_seq, f_limit and nu must share the state dimension")
    dev = np.abs(F - f)
    tail_dev = np.maximum.accumulate(dev[::-1], axis=0)[::-1]
    for n_star in range(F.shape[0]):
        bad = tail_dev[n_star] > eta
        mass = float(math.fsum(weights[bad]))
        if mass < delta:
            D = np.flatnonzero(~bad)
            gap = float(tail_dev[n_star, D].max()) if D.size else 0.0
            return EgoroffResult(D, mass, n_star, gap)
    raise InsufficientSequenceError(
        f"no index in a sequence of length {F.shape[0]} brings the deviating mass below {delta}")


def verify_egoroff(result: EgoroffResult, f_seq, f_limit, nu, delta: float, eta: float) -> bool:
    """Recompute the certificate from scratch."""
    F = np.asarray(f_seq, dtype=float)
    f = np.asarray(f_limit, dtype=float)
    weights = _nu_vector(nu)
    outside = np.ones(f.shape[0], dtype=bool)
    outside[result.D] = False
    mass = math.fsum(weights[outside])
    gap = float(np.abs(F[result.n_star:, result.D] - f[result.D]).max()) if result.D.size else 0.0
    return mass < delta and gap <= eta


def _tail_start(n: int, tail_fraction: float) -> int:
    return min(n - 1, int(math.floor(n * (1.0 - tail_fraction))))


def lower_epilimit(f_seq: Sequence, grid, radius_cells: int = 1,
                   tail_fraction: float = 0.5) -> EpiDiagnostics:
    """Lower epi-limit on a grid with the three infima of the liminf chain.

    liminf over the finite sequence is the minimum over its last
    ``tail_fraction``; the limiting ball is ``radius_cells`` grid cells wide.
    """
    F = np.asarray(f_seq, dtype=float)
    grid = np.asarray(grid, dtype=float)
    if F.ndim != 2 or F.shape[1] != grid.shape[0]:
        raise ParameterError("f_seq must be a list of vectors over the grid")
    if np.any(np.diff(grid) <= 0):
        raise ParameterError("grid must be strictly increasing")
    if radius_cells < 0:
        raise ParameterError("radius_cells must be nonnegative")
    tail = F[_tail_start(F.shape[0], tail_fraction):]
    G = grid.shape[0]
    ball = tail.copy()
    for k in range(1, radius_cells + 1):
        ball[:, k:] = np.minimum(ball[:, k:], tail[:, :G - k])
        ball[:, :G - k] = np.minimum(ball[:, :G - k], tail[:, k:])
    elim = ball.min(axis=0)
    a = float(tail.min(axis=1).min())
    b = float(elim.min())
    c = float(tail.min(axis=0).min())
    return EpiDiagnostics(elim, a, b, c, bool(a <= b + CHAIN_SLACK and b <= c + CHAIN_SLACK))


def epi_compactness_condition(f_seq: Sequence, grid, eps: float,
                              tail_fraction: float = 0.5) -> EpiCompactness:
    """Search for a bounded interval K with inf_K f_n <= inf f_n + eps along the tail.

    The two outermost grid points stand in for points at infinity, so K
    ranges over the interior; the largest interior interval is the best
    candidate.  The condition is declared to hold when at least half of the
    tail indices satisfy the inequality, a finite proxy for a subsequence.
    """
    if eps <= 0:
        raise ParameterError("eps must be positive")
    F = np.asarray(f_seq, dtype=float)
    grid = np.asarray(grid, dtype=float)
    if F.ndim != 2 or F.shape[1] != grid.shape[0] or grid.shape[0] < 3:
        raise ParameterError("need vectors over a grid of at least 3 points")
    start = _tail_start(F.shape[0], tail_fraction)
    tail = F[start:]
    inner = tail[:, 1:-1].min(axis=1)
    whole = tail.min(axis=1)
    ok = inner <= whole + eps
    hits = (np.flatnonzero(ok) + start).tolist()
    holds = 2 * len(hits) >= tail.shape[0]
    K: tuple = ()
    if hits:
        # tightest interval holding an interior near-minimizer of every hit
        idx = [1 + int(np.argmin(tail[j, 1:-1])) for j in np.flatnonzero(ok)]
        K = (float(grid[min(idx)]), float(grid[max(idx)]))
    return EpiCompactness(bool(holds), K, hits)
