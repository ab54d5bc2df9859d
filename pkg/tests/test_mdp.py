import json

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from acoi_mdp import (FiniteMdp, StationaryPolicy, ValueFn, bellman_apply, check_uc_model,
                      greedy_policy, load_mdp, save_mdp, weighted_norm)
from acoi_mdp.errors import DimensionError, ModelError, ParameterError
from oracles import dense_bellman, random_mdp, self_loop, two_cycle

seeds = st.integers(0, 2**32 - 1)


# -- construction -------------------------------------------------------------
def test_empty_admissible_rejected():
    with pytest.raises(ModelError):
        FiniteMdp.from_tables([0.0, 1.0], [0.0], [[0], []], [[1.0], []], [[[1.0, 0.0]], []])


def test_row_sum_checked():
    with pytest.raises(ModelError):
        FiniteMdp.from_tables([0.0], [0.0], [[0]], [[1.0]], [[[0.9]]])


def test_negative_entries_rejected():
    with pytest.raises(ModelError):
        FiniteMdp.from_tables([0.0, 1.0], [0.0], [[0], [0]], [[1.0], [1.0]],
                              [[[1.5, -0.5]], [[0.5, 0.5]]])


def test_weight_below_one_rejected():
    with pytest.raises(ModelError):
        FiniteMdp.from_tables([0.0], [0.0], [[0]], [[1.0]], [[[1.0]]], weight=[0.5])


def test_pc_requires_nonnegative_cost():
    with pytest.raises(ModelError):
        FiniteMdp.from_tables([0.0], [0.0], [[0]], [[-1.0]], [[[1.0]]], model_class="PC")
    mdp = FiniteMdp.from_tables([0.0], [0.0], [[0]], [[-1.0]], [[[1.0]]], model_class="UC")
    assert mdp.cost(0, 0) == -1.0


def test_duplicate_actions_rejected():
    with pytest.raises(ModelError):
        FiniteMdp.from_tables([0.0], [0.0, 1.0], [[0, 0]], [[1.0, 2.0]], [[[1.0], [1.0]]])


def test_from_pairs_sorts_unsorted_input():
    mdp = FiniteMdp.from_pairs([0.0, 1.0], [0.0, 1.0], [1, 0, 0], [0, 1, 0], [3.0, 2.0, 1.0],
                               np.array([[1, 0], [0, 1], [1, 0]], dtype=float))
    assert mdp.admissible(0).tolist() == [0, 1]
    assert mdp.cost(0, 0) == 1.0 and mdp.cost(0, 1) == 2.0 and mdp.cost(1, 0) == 3.0
    assert mdp.kernel_row(0, 1).tolist() == [0.0, 1.0]


def test_inadmissible_lookup():
    mdp = FiniteMdp.from_tables([0.0, 1.0], [0.0, 1.0], [[0], [1]], [[1.0], [1.0]],
                                [[[1.0, 0.0]], [[0.0, 1.0]]])
    with pytest.raises(ParameterError):
        mdp.cost(0, 1)
    with pytest.raises(ParameterError):
        StationaryPolicy([1, 1]).validate(mdp)
    StationaryPolicy([0, 1]).validate(mdp)


def test_model_is_immutable():
    mdp = self_loop()
    with pytest.raises(ValueError):
        mdp.pair_cost[0] = 5.0


def test_serialization_round_trip(tmp_path):
    mdp = random_mdp(np.random.default_rng(3), 4, 3)
    path = tmp_path / "m.json"
    save_mdp(mdp, path)
    back = load_mdp(path)
    assert back.to_dict() == mdp.to_dict()
    doc = json.loads(path.read_text())
    assert set(doc) == {"states", "actions", "admissible", "cost", "kernel", "weight", "model_class"}


def test_load_tolerance_is_1e9():
    doc = self_loop().to_dict()
    doc["kernel"] = [[[1.0 + 5e-10]]]
    assert FiniteMdp.from_dict(doc).kernel_row(0, 0)[0] == pytest.approx(1.0, abs=1e-15)
    doc["kernel"] = [[[1.0 + 5e-9]]]
    with pytest.raises(ModelError):
        FiniteMdp.from_dict(doc)


# -- weighted norm ------------------------------------------------------------
def test_weighted_norm_examples():
    assert weighted_norm([0, 0, 0], [1, 3, 7]) == 0.0
    assert weighted_norm([2, -4], [1, 2]) == 2.0
    with pytest.raises(DimensionError):
        weighted_norm([1, 2], [1, 2, 3])


@given(st.lists(st.floats(-1e6, 1e6), min_size=1, max_size=30))
def test_weighted_norm_unit_weight_is_sup(values):
    best = 0.0
    for v in values:
        best = max(best, abs(v))
    assert weighted_norm(values, np.ones(len(values))) == best


# -- Bellman operator ---------------------------------------------------------
def test_bellman_self_loop():
    mdp = self_loop()
    assert bellman_apply(mdp, np.zeros(1), 0.5).values[0] == 1.0
    assert bellman_apply(mdp, np.array([2.0]), 0.5).values[0] == 2.0


def test_bellman_alpha_range():
    with pytest.raises(ParameterError):
        bellman_apply(self_loop(), np.zeros(1), 0.0)
    with pytest.raises(ParameterError):
        bellman_apply(self_loop(), np.zeros(1), 1.5)
    assert bellman_apply(self_loop(), np.zeros(1), 1.0).values[0] == 1.0


def test_bellman_dimension_mismatch():
    with pytest.raises(DimensionError):
        bellman_apply(self_loop(), np.zeros(2), 0.5)


@settings(max_examples=50, deadline=None)
@given(seeds, st.floats(0.01, 1.0))
def test_bellman_matches_double_loop(seed, alpha):
    rng = np.random.default_rng(seed)
    mdp = random_mdp(rng, 4, 3)
    v = rng.normal(size=4) * 10
    np.testing.assert_allclose(bellman_apply(mdp, v, alpha).values, dense_bellman(mdp, v, alpha),
                               rtol=0, atol=1e-12)


@settings(max_examples=50, deadline=None)
@given(seeds, st.floats(0.01, 1.0))
def test_bellman_monotone(seed, alpha):
    rng = np.random.default_rng(seed)
    mdp = random_mdp(rng, 5, 3)
    u = rng.normal(size=5)
    v = u + rng.uniform(0, 2, size=5)
    assert np.all(bellman_apply(mdp, u, alpha).values <= bellman_apply(mdp, v, alpha).values + 1e-12)


@settings(max_examples=50, deadline=None)
@given(seeds, st.floats(0.01, 1.0), st.floats(-100, 100))
def test_bellman_constant_shift(seed, alpha, k):
    rng = np.random.default_rng(seed)
    mdp = random_mdp(rng, 5, 3)
    v = rng.normal(size=5)
    lhs = bellman_apply(mdp, v + k, alpha).values
    rhs = bellman_apply(mdp, v, alpha).values + alpha * k
    np.testing.assert_allclose(lhs, rhs, rtol=0, atol=1e-9)


@settings(max_examples=50, deadline=None)
@given(seeds, st.floats(0.01, 0.999))
def test_bellman_sup_contraction(seed, alpha):
    rng = np.random.default_rng(seed)
    mdp = random_mdp(rng, 5, 3)
    u, v = rng.normal(size=5) * 5, rng.normal(size=5) * 5
    lhs = np.max(np.abs(bellman_apply(mdp, u, alpha).values - bellman_apply(mdp, v, alpha).values))
    assert lhs <= alpha * np.max(np.abs(u - v)) + 1e-12


# -- greedy -------------------------------------------------------------------
def test_greedy_single_action():
    assert greedy_policy(two_cycle(), np.zeros(2), 0.9).to_list() == [0, 0]


def test_greedy_tie_breaks_low_index():
    mdp = FiniteMdp.from_tables([0.0], [0.0, 1.0, 2.0], [[0, 1, 2]], [[2.0, 1.0, 1.0]],
                                [[[1.0], [1.0], [1.0]]])
    assert greedy_policy(mdp, np.zeros(1), 0.5).to_list() == [1]
    # within eps of the minimum the lowest index wins
    assert greedy_policy(mdp, np.zeros(1), 0.5, eps=1.5).to_list() == [0]
    with pytest.raises(ParameterError):
        greedy_policy(mdp, np.zeros(1), 0.5, eps=-1)


@settings(max_examples=30, deadline=None)
@given(seeds)
def test_greedy_attains_row_minimum(seed):
    rng = np.random.default_rng(seed)
    mdp = random_mdp(rng, 4, 4)
    v = rng.normal(size=4)
    pol = greedy_policy(mdp, v, 0.9)
    for s in range(4):
        qs = [mdp.cost(s, int(a)) + 0.9 * mdp.kernel_row(s, int(a)) @ v for a in mdp.admissible(s)]
        chosen = mdp.cost(s, int(pol.choice[s])) + 0.9 * mdp.kernel_row(s, int(pol.choice[s])) @ v
        assert chosen == pytest.approx(min(qs), abs=1e-12)


# -- value function -----------------------------------------------------------
def test_value_fn_invariants():
    with pytest.raises(ParameterError):
        ValueFn(np.array([1.0, np.inf]))
    with pytest.raises(ParameterError):
        ValueFn(np.array([1.0, 2.0]), ref_state=2)
    v = ValueFn(np.array([3.0, 5.0]), ref_state=1)
    assert v.relative().tolist() == [-2.0, 0.0]
    assert v.weighted_norm(np.array([1.0, 5.0])) == 3.0


# -- UC model check -----------------------------------------------------------
def test_uc_check_bounded_cost_unit_weight():
    mdp = random_mdp(np.random.default_rng(0), 4, 2, model_class="UC", cost_range=(-3.0, 3.0))
    c_max = float(np.max(np.abs(mdp.pair_cost)))
    rep = check_uc_model(mdp, 0.0, 1.0, c_max)
    assert rep.holds and rep.violating_states == []
    assert rep.min_c_hat == pytest.approx(c_max)
    assert rep.min_b == pytest.approx(1.0)


def test_uc_check_lambda_range():
    with pytest.raises(ParameterError):
        check_uc_model(self_loop(), 1.0, 1.0, 1.0)
    with pytest.raises(ParameterError):
        check_uc_model(self_loop(), -0.1, 1.0, 1.0)


def test_uc_check_detects_drift_violation():
    # state 0 sends all mass to a state of weight 1000, which falls back to 0
    mdp = FiniteMdp.from_tables([0.0, 1.0], [0.0], [[0], [0]], [[0.0], [0.0]],
                                [[[0.0, 1.0]], [[1.0, 0.0]]], weight=[1.0, 1000.0],
                                model_class="UC")
    rep = check_uc_model(mdp, 0.5, 10.0, 1.0)
    assert not rep.holds and rep.violating_states == [0]
    assert rep.min_b == pytest.approx(999.5)
    assert check_uc_model(mdp, 0.5, rep.min_b, 1.0).holds


def test_uc_check_on_production_model(uc_mdp):
    from acoi_mdp import UcProductionSpec
    spec = UcProductionSpec()
    # lambda for uniform(0.5, 2.5) demand at saturation: e^{r theta} (e^{-0.25} - e^{-1.25}) / (2 r)
    lam_closed = np.exp(0.5) * (np.exp(-0.25) - np.exp(-1.25)) / (2 * 0.5)
    assert spec.lambda_ == pytest.approx(lam_closed, abs=1e-9)
    rep = check_uc_model(uc_mdp, spec.lambda_, 1.0 + 1e3, 11.0)
    assert rep.min_c_hat <= 11.0
    assert check_uc_model(uc_mdp, spec.lambda_, rep.min_b, rep.min_c_hat).holds
