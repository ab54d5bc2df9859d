"""Finite MDP data model, weighted norms and dynamic programming operators.

A :class:`FiniteMdp` stores every admissible state-action pair as one row of a
sparse row-stochastic matrix.  Pairs are ordered by state, then by action
index, which makes per-state reductions a single ``np.minimum.reduceat``.
"""

from __future__ import annotations

import json
from dataclasses import dataclass, field
from pathlib import Path
from typing import Any, Sequence

import numpy as np
import scipy.sparse as sp

from .errors import DimensionError, ModelError, ParameterError

ROW_SUM_TOL = 1e-12
LOAD_ROW_SUM_TOL = 1e-9
MODEL_CLASSES = ("PC", "UC")


def _frozen(a: np.ndarray) -> np.ndarray:
    a.setflags(write=False)
    return a


@dataclass(frozen=True, eq=False)
class FiniteMdp:
    """Discretized MDP on a finite state grid.

    Use :meth:`from_tables` (dense, per-state lists) or :meth:`from_pairs`
    (flat pair arrays plus a sparse kernel) rather than the raw constructor.
    """

    states: np.ndarray
    actions: np.ndarray
    pair_state: np.ndarray
    pair_action: np.ndarray
    pair_cost: np.ndarray
    kernel: sp.csr_matrix
    weight: np.ndarray
    model_class: str = "PC"
    state_labels: tuple = ()
    offsets: np.ndarray = field(init=False, repr=False)

    def __post_init__(self) -> None:
        n = self.states.shape[0]
        if self.model_class not in MODEL_CLASSES:
            raise ModelError(f"model_class must be one of {MODEL_CLASSES}, got {self.model_class!r}")
        if self.weight.shape != (n,):
            raise DimensionError("weight length must equal the number of states")
        if np.any(~np.isfinite(self.weight)) or np.any(self.weight < 1.0):
            raise ModelError("weight must be finite and >= 1 everywhere")
        n_pairs = self.pair_state.shape[0]
        if self.kernel.shape != (n_pairs, n):
            raise DimensionError(f"kernel shape {self.kernel.shape} != ({n_pairs}, {n})")
        if self.pair_action.shape != (n_pairs,) or self.pair_cost.shape != (n_pairs,):
            raise DimensionError("pair arrays must share one length")
        if np.any(~np.isfinite(self.pair_cost)):
            raise ModelError("costs must be finite; drop actions to model infinite cost")
        if np.any(np.diff(self.pair_state) < 0):
            raise ModelError("pairs must be sorted by state")
        counts = np.bincount(self.pair_state, minlength=n)
        if counts.shape[0] != n or np.any(counts == 0):
            raise ModelError("every state needs a nonempty admissible action set")
        key = self.pair_state.astype(np.int64) * max(1, self.actions.shape[0]) + self.pair_action
        if np.any(np.diff(key) <= 0):
            raise ModelError("actions within a state must be strictly increasing (no duplicates)")
        if np.any(self.pair_action < 0) or np.any(self.pair_action >= self.actions.shape[0]):
            raise ModelError("action index out of range")
        if self.kernel.nnz and self.kernel.data.min() < 0:
            raise ModelError("kernel has negative entries")
        sums = np.asarray(self.kernel.sum(axis=1)).ravel()
        if np.any(np.abs(sums - 1.0) > ROW_SUM_TOL * max(1.0, n ** 0.5)):
            bad = int(np.argmax(np.abs(sums - 1.0)))
            raise ModelError(f"kernel row {bad} sums to {sums[bad]!r}")
        if self.model_class == "PC" and np.any(self.pair_cost < 0):
            raise ModelError("PC models require nonnegative costs")
        offsets = np.concatenate(([0], np.cumsum(counts)[:-1])).astype(np.int64)
        object.__setattr__(self, "offsets", _frozen(offsets))
        for name in ("states", "actions", "pair_state", "pair_action", "pair_cost", "weight"):
            getattr(self, name).setflags(write=False)

    # -- construction -------------------------------------------------------
    @classmethod
    def from_pairs(cls, states, actions, pair_state, pair_action, pair_cost, kernel,
                   weight=None, model_class: str = "PC", state_labels: Sequence = ()) -> "FiniteMdp":
        states = np.asarray(states, dtype=float).copy()
        actions = np.asarray(actions, dtype=float).copy()
        pair_state = np.asarray(pair_state, dtype=np.int64).copy()
        pair_action = np.asarray(pair_action, dtype=np.int64).copy()
        pair_cost = np.asarray(pair_cost, dtype=float).copy()
        kernel = sp.csr_matrix(kernel, dtype=float)
        order = np.lexsort((pair_action, pair_state))
        if np.any(order != np.arange(order.shape[0])):
            pair_state, pair_action, pair_cost = pair_state[order], pair_action[order], pair_cost[order]
            kernel = kernel[order]
        kernel.eliminate_zeros()
        kernel.sort_indices()
        w = np.ones(states.shape[0]) if weight is None else np.asarray(weight, dtype=float).copy()
        return cls(states, actions, pair_state, pair_action, pair_cost, kernel, w,
                   model_class, tuple(state_labels))

    @classmethod
    def from_tables(cls, states, actions, admissible, cost, kernel, weight=None,
                    model_class: str = "PC", row_tol: float = ROW_SUM_TOL,
                    state_labels: Sequence = ()) -> "FiniteMdp":
        """Build from per-state tables aligned with ``admissible``.

        ``cost[s][k]`` and ``kernel[s][k]`` belong to action ``admissible[s][k]``.
        Rows within ``row_tol`` of summing to one are renormalized.
        """
        n = len(states)
        if not (len(admissible) == len(cost) == len(kernel) == n):
            raise DimensionError("admissible, cost and kernel need one entry per state")
        ps, pa, pc, rows = [], [], [], []
        for s in range(n):
            acts = list(admissible[s])
            if not acts:
                raise ModelError(f"state {s} has an empty admissible set")
            if len(cost[s]) != len(acts) or len(kernel[s]) != len(acts):
                raise DimensionError(f"state {s}: cost/kernel entries must match admissible list")
            for k, a in enumerate(acts):
                row = np.asarray(kernel[s][k], dtype=float)
                if row.shape != (n,):
                    raise DimensionError(f"kernel row ({s},{a}) must have length {n}")
                if np.any(row < 0):
                    raise ModelError(f"kernel row ({s},{a}) has negative entries")
                total = row.sum()
                if abs(total - 1.0) > row_tol:
                    raise ModelError(f"kernel row ({s},{a}) sums to {total!r}")
                ps.append(s)
                pa.append(int(a))
                pc.append(float(cost[s][k]))
                # leave already-normalized rows bit-for-bit intact
                rows.append(row if abs(total - 1.0) <= ROW_SUM_TOL else row / total)
        mat = sp.csr_matrix(np.vstack(rows)) if rows else sp.csr_matrix((0, n))
        return cls.from_pairs(states, actions, ps, pa, pc, mat, weight, model_class, state_labels)

    # -- views --------------------------------------------------------------
    @property
    def n_states(self) -> int:
        return int(self.states.shape[0])

    @property
    def n_actions(self) -> int:
        return int(self.actions.shape[0])

    @property
    def n_pairs(self) -> int:
        return int(self.pair_state.shape[0])

    def admissible(self, s: int) -> np.ndarray:
        lo = self.offsets[s]
        hi = self.offsets[s + 1] if s + 1 < self.n_states else self.n_pairs
        return self.pair_action[lo:hi]

    def pair_slice(self, s: int) -> slice:
        lo = int(self.offsets[s])
        hi = int(self.offsets[s + 1]) if s + 1 < self.n_states else self.n_pairs
        return slice(lo, hi)

    def pair_index(self, s: int, a: int) -> int:
        sl = self.pair_slice(s)
        acts = self.pair_action[sl]
        k = int(np.searchsorted(acts, a))
        if k >= acts.shape[0] or acts[k] != a:
            raise ParameterError(f"action {a} is not admissible at state {s}")
        return sl.start + k

    def cost(self, s: int, a: int) -> float:
        return float(self.pair_cost[self.pair_index(s, a)])

    def kernel_row(self, s: int, a: int) -> np.ndarray:
        return self.kernel[self.pair_index(s, a)].toarray().ravel()

    def q_values(self, v: np.ndarray, alpha: float) -> np.ndarray:
        """c(x,a) + alpha * sum_y v(y) q(y|x,a) for every admissible pair."""
        v = np.asarray(v, dtype=float)
        if v.shape != (self.n_states,):
            raise DimensionError(f"value vector has shape {v.shape}, expected ({self.n_states},)")
        return self.pair_cost + alpha * (self.kernel @ v)

    def state_min(self, pair_values: np.ndarray) -> np.ndarray:
        return np.minimum.reduceat(pair_values, self.offsets)

    def state_max(self, pair_values: np.ndarray) -> np.ndarray:
        return np.maximum.reduceat(pair_values, self.offsets)

    # -- serialization ------------------------------------------------------
    def to_dict(self) -> dict[str, Any]:
        n = self.n_states
        admissible, cost, kernel = [], [], []
        for s in range(n):
            sl = self.pair_slice(s)
            admissible.append([int(a) for a in self.pair_action[sl]])
            cost.append([float(c) for c in self.pair_cost[sl]])
            kernel.append(self.kernel[sl].toarray().tolist())
        return {
            "states": self.states.tolist(),
            "actions": self.actions.tolist(),
            "admissible": admissible,
            "cost": cost,
            "kernel": kernel,
            "weight": self.weight.tolist(),
            "model_class": self.model_class,
        }

    @classmethod
    def from_dict(cls, data: dict[str, Any]) -> "FiniteMdp":
        missing = {"states", "actions", "admissible", "cost", "kernel"} - set(data)
        if missing:
            raise ModelError(f"MDP document is missing fields: {sorted(missing)}")
        return cls.from_tables(data["states"], data["actions"], data["admissible"],
                               data["cost"], data["kernel"], data.get("weight"),
                               data.get("model_class", "PC"), row_tol=LOAD_ROW_SUM_TOL)


def save_mdp(mdp: FiniteMdp, path: str | Path) -> None:
    Path(path).write_text(json.dumps(mdp.to_dict()))


def load_mdp(path: str | Path) -> FiniteMdp:
    return FiniteMdp.from_dict(json.loads(Path(path).read_text()))


@dataclass(frozen=True)
class ValueFn:
    values: np.ndarray
    ref_state: int = 0

    def __post_init__(self) -> None:
        vals = np.array(self.values, dtype=float)
        if vals.ndim != 1:
            raise DimensionError("ValueFn values must be a vector")
        if not np.all(np.isfinite(vals)):
            raise ParameterError("ValueFn entries must be finite")
        if not 0 <= self.ref_state < max(1, vals.shape[0]):
            raise ParameterError("ref_state out of range")
        object.__setattr__(self, "values", _frozen(vals))

    def __len__(self) -> int:
        return int(self.values.shape[0])

    def weighted_norm(self, w: np.ndarray) -> float:
        return weighted_norm(self.values, w)

    def relative(self) -> np.ndarray:
        return self.values - self.values[self.ref_state]


@dataclass(frozen=True)
class StationaryPolicy:
    choice: np.ndarray

    def __post_init__(self) -> None:
        object.__setattr__(self, "choice", _frozen(np.array(self.choice, dtype=np.int64)))

    def validate(self, mdp: FiniteMdp) -> None:
        pairs_of(mdp, self)

    def to_list(self) -> list[int]:
        return [int(a) for a in self.choice]


@dataclass(frozen=True)
class UcModelReport:
    c_hat: float
    lambda_: float
    b: float
    holds: bool
    violating_states: list[int]
    min_c_hat: float
    min_b: float

    def to_dict(self) -> dict[str, Any]:
        return {"c_hat": self.c_hat, "lambda": self.lambda_, "b": self.b, "holds": self.holds,
                "violating_states": list(self.violating_states),
                "min_c_hat": self.min_c_hat, "min_b": self.min_b}


def weighted_norm(f, w) -> float:
    """sup_s |f[s]| / w[s]."""
    f = np.asarray(f, dtype=float)
    w = np.asarray(w, dtype=float)
    if f.shape != w.shape:
        raise DimensionError(f"length mismatch: {f.shape} vs {w.shape}")
    if f.size == 0:
        return 0.0
    return float(np.max(np.abs(f) / w))


def _as_values(v) -> np.ndarray:
    return v.values if isinstance(v, ValueFn) else np.asarray(v, dtype=float)


def bellman_apply(mdp: FiniteMdp, v, alpha: float) -> ValueFn:
    """(T_alpha v)(x) = min_a { c(x,a) + alpha * sum_y v(y) q(y|x,a) }; alpha = 1 gives T."""
    if not 0.0 < alpha <= 1.0:
        raise ParameterError(f"alpha must lie in (0, 1], got {alpha}")
    vals = _as_values(v)
    ref = v.ref_state if isinstance(v, ValueFn) else 0
    return ValueFn(mdp.state_min(mdp.q_values(vals, alpha)), ref)


def greedy_pairs(mdp: FiniteMdp, q: np.ndarray, eps: float = 0.0) -> np.ndarray:
    """Per state, the lowest-index pair whose value is within ``eps`` of the state minimum."""
    mins = mdp.state_min(q)
    ok = q <= mins[mdp.pair_state] + eps
    idx = np.flatnonzero(ok)
    _, first = np.unique(mdp.pair_state[idx], return_index=True)
    return idx[first]


def greedy_policy(mdp: FiniteMdp, v, alpha: float, eps: float = 0.0) -> StationaryPolicy:
    if eps < 0:
        raise ParameterError("eps must be nonnegative")
    pairs = greedy_pairs(mdp, mdp.q_values(_as_values(v), alpha), eps)
    return StationaryPolicy(mdp.pair_action[pairs])


def pairs_of(mdp: FiniteMdp, policy: StationaryPolicy) -> np.ndarray:
    """Pair indices selected by ``policy``; raises if any choice is inadmissible."""
    choice = np.asarray(policy.choice)
    if choice.shape != (mdp.n_states,):
        raise DimensionError("policy must choose one action per state")
    m = max(1, mdp.n_actions)
    keys = mdp.pair_state * m + mdp.pair_action
    want = np.arange(mdp.n_states, dtype=np.int64) * m + choice
    pos = np.searchsorted(keys, want)
    pos_c = np.minimum(pos, keys.shape[0] - 1)
    bad = (pos >= keys.shape[0]) | (keys[pos_c] != want)
    if np.any(bad):
        s = int(np.flatnonzero(bad)[0])
        raise ParameterError(f"policy action {int(choice[s])} not admissible at state {s}")
    return pos


def policy_matrices(mdp: FiniteMdp, policy: StationaryPolicy) -> tuple[sp.csr_matrix, np.ndarray]:
    """(P_mu, c_mu) for a stationary deterministic policy."""
    pairs = pairs_of(mdp, policy)
    return mdp.kernel[pairs], mdp.pair_cost[pairs].copy()


def check_uc_model(mdp: FiniteMdp, candidate_lambda: float, candidate_b: float,
                   candidate_chat: float, slack: float = 1e-12) -> UcModelReport:
    """Check both growth/drift inequalities of the unbounded-cost model class state by state."""
    if not 0.0 <= candidate_lambda < 1.0:
        raise ParameterError(f"lambda must lie in [0, 1), got {candidate_lambda}")
    w = mdp.weight
    abs_cost = mdp.state_max(np.abs(mdp.pair_cost))
    drift = mdp.state_max(mdp.kernel @ w)
    min_chat = float(np.max(abs_cost / w))
    min_b = float(max(0.0, np.max(drift - candidate_lambda * w)))
    scale_a = np.maximum(1.0, candidate_chat * w)
    scale_b = np.maximum(1.0, candidate_lambda * w + candidate_b)
    bad_a = abs_cost > candidate_chat * w + slack * scale_a
    bad_b = drift > candidate_lambda * w + candidate_b + slack * scale_b
    violating = np.flatnonzero(bad_a | bad_b).tolist()
    return UcModelReport(float(candidate_chat), float(candidate_lambda), float(candidate_b),
                         not violating, violating, min_chat, min_b)
