import itertools
import math

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from acoi_mdp import (FiniteMdp, UcProductionSpec, build_circle_mdp, compute_H, egoroff_extract,
                      epi_compactness_condition, gus_test, lower_epilimit, minimal_majorizer,
                      select_K_eps, uniform_integrability_tail, verify_egoroff, PcInventorySpec)
from acoi_mdp.errors import InsufficientSequenceError, ParameterError
from oracles import random_mdp, self_loop

seeds = st.integers(0, 2**32 - 1)


# -- K_eps --------------------------------------------------------------------
def test_select_k_single_action(pc_run):
    mdp = self_loop()
    from acoi_mdp import run_schedule
    run = run_schedule(mdp)
    assert select_K_eps(mdp, 0, 0.1, run.v_per_alpha).tolist() == [0]
    with pytest.raises(ParameterError):
        select_K_eps(mdp, 0, 0.1, [])


def _eq35_holds(mdp, state, K, eps, sols):
    for sol in sols:
        qs = [mdp.cost(state, int(a)) + sol.alpha * mdp.kernel_row(state, int(a)) @ sol.values
              for a in K]
        if min(qs) > sol.values[state] + eps + 1e-9 * max(1.0, abs(sol.values[state])):
            return False
    return True


@settings(max_examples=30, deadline=None)
@given(seeds, st.floats(1e-4, 1.0))
def test_select_k_rechecks(seed, eps):
    from acoi_mdp import DiscountSchedule, run_schedule
    mdp = random_mdp(np.random.default_rng(seed), 4, 4)
    run = run_schedule(mdp, DiscountSchedule.geometric(8))
    tail = run.v_per_alpha[4:]
    for s in range(4):
        K = select_K_eps(mdp, s, eps, run.v_per_alpha)
        assert set(K.tolist()) <= set(mdp.admissible(s).tolist())
        assert _eq35_holds(mdp, s, K, eps, tail)


def test_select_k_pc_inventory_threshold(pc_mdp, pc_run):
    spec = PcInventorySpec()
    eps_bar = 0.1
    for x in (-3.0, 0.0, 2.0, 5.0):
        s = int(np.argmin(np.abs(pc_mdp.states - x)))
        K = select_K_eps(pc_mdp, s, eps_bar, pc_run.v_per_alpha)
        limit = pc_run.rho_star + 2 * eps_bar + compute_H(spec, x).H_value
        costs = [pc_mdp.cost(s, int(a)) for a in K]
        assert max(costs) <= limit
        # the coercive cost leaves most of A(x) outside K
        assert K.size < pc_mdp.admissible(s).size / 2


def test_full_action_set_is_valid_for_production(uc_mdp, uc_run):
    tail = uc_run.v_per_alpha[10:]
    for s in (0, 30, 100):
        K = uc_mdp.admissible(s)
        assert _eq35_holds(uc_mdp, s, K, 1e-6, tail)
        wit = minimal_majorizer(uc_mdp, s, K)
        assert np.isfinite(wit.nu_total)


# -- majorizer ----------------------------------------------------------------
def test_majorizer_single_action():
    mdp = random_mdp(np.random.default_rng(0), 4, 3, random_admissible=False)
    wit = minimal_majorizer(mdp, 1, [2])
    np.testing.assert_array_equal(wit.nu_atoms, mdp.kernel_row(1, 2))
    assert wit.nu_total == pytest.approx(1.0, abs=1e-15)


def test_majorizer_disjoint_rows():
    mdp = FiniteMdp.from_tables([0.0, 1.0, 2.0, 3.0], [0.0, 1.0], [[0, 1]] * 4, [[0.0, 0.0]] * 4,
                                [[[0.5, 0.5, 0, 0], [0, 0, 0.25, 0.75]]] * 4)
    assert minimal_majorizer(mdp, 0, [0, 1]).nu_total == 2.0


@pytest.mark.parametrize("n", [60, 120, 240])
def test_majorizer_circle(n):
    wit = minimal_majorizer(build_circle_mdp(n), 0, [0, 1, 2])
    assert wit.nu_total == pytest.approx(2.0, abs=2.0 / n)


def test_majorizer_rejects_foreign_actions():
    mdp = FiniteMdp.from_tables([0.0], [0.0, 1.0], [[0]], [[1.0]], [[[1.0]]])
    with pytest.raises(ParameterError):
        minimal_majorizer(mdp, 0, [1])
    with pytest.raises(ParameterError):
        minimal_majorizer(mdp, 0, [])


@settings(max_examples=20, deadline=None)
@given(seeds)
def test_majorizer_setwise_and_minimal(seed):
    rng = np.random.default_rng(seed)
    n = 8
    mdp = random_mdp(rng, n, 3, random_admissible=False, sparse_prob=0.5)
    wit = minimal_majorizer(mdp, 0, [0, 1, 2])
    rows = np.array([mdp.kernel_row(0, a) for a in range(3)])
    for r in range(1, n + 1):
        for B in itertools.combinations(range(n), r):
            B = list(B)
            assert rows[:, B].sum(axis=1).max() <= wit.nu_atoms[B].sum() + 1e-12
    # any majorizer dominates nu: test the tightest one at each singleton
    for y in range(n):
        assert wit.nu_atoms[y] == rows[:, y].max()


def test_witness_serializes():
    wit = minimal_majorizer(build_circle_mdp(6), 0, [0, 1])
    d = wit.to_dict()
    assert d["nu_total"] == pytest.approx(wit.nu_total)
    assert sum(d["nu_atoms"].values()) == pytest.approx(wit.nu_total)


# -- global test --------------------------------------------------------------
def test_gus_examples():
    assert gus_test(self_loop()) == (1.0, True)
    same = FiniteMdp.from_tables([0.0, 1.0], [0.0], [[0], [0]], [[0.0], [0.0]],
                                 [[[0.3, 0.7]], [[0.3, 0.7]]])
    total, ok = gus_test(same)
    assert total == pytest.approx(1.0) and ok
    total, ok = gus_test(build_circle_mdp(120))
    assert total == pytest.approx(2.0, abs=1e-12) and not ok


# -- uniform integrability ----------------------------------------------------
def test_ui_tail_examples():
    mdp = random_mdp(np.random.default_rng(1), 5, 2, random_admissible=False)
    g = np.arange(5, dtype=float)
    assert uniform_integrability_tail(mdp, 0, [0, 1], g, [10.0]) == [(10.0, 0.0)]
    ones = np.ones(5)
    assert uniform_integrability_tail(mdp, 0, [0, 1], ones, [0.5])[0][1] == pytest.approx(1.0)
    with pytest.raises(ParameterError):
        uniform_integrability_tail(mdp, 0, [0], -ones, [0.5])
    with pytest.raises(ParameterError):
        uniform_integrability_tail(mdp, 0, [0], ones, [1.0, 0.5])


def test_ui_tail_production_support(uc_mdp):
    spec = UcProductionSpec()
    w = uc_mdp.weight
    for s in (40, 60, 120):
        x = uc_mdp.states[s]
        K = uc_mdp.admissible(s)
        top = math.exp(spec.r * (x + spec.theta))
        tail = uniform_integrability_tail(uc_mdp, s, K, w, [top * 0.5, top * (1 + 1e-9)])
        assert tail[0][1] > 0 and tail[1][1] == 0.0


@settings(max_examples=30, deadline=None)
@given(seeds)
def test_ui_tail_nonincreasing(seed):
    rng = np.random.default_rng(seed)
    mdp = random_mdp(rng, 6, 3)
    g = rng.uniform(0, 10, 6)
    levels = np.sort(rng.uniform(0, 12, 8))
    levels = np.unique(levels)
    tail = [t for _, t in uniform_integrability_tail(mdp, 0, mdp.admissible(0), g, levels)]
    assert all(b <= a + 1e-12 for a, b in zip(tail, tail[1:]))


# -- Egoroff ------------------------------------------------------------------
def test_egoroff_constant_sequence():
    f = np.array([1.0, 2.0, 3.0])
    res = egoroff_extract([f] * 4, f, np.ones(3), 0.1, 0.01)
    assert res.D.tolist() == [0, 1, 2] and res.complement_mass == 0.0 and res.n_star == 0


def test_egoroff_monomial_closed_form():
    grid = np.linspace(0.0, 1.0, 101)
    nu = np.full(101, 1.0 / 101)
    eta, delta = 0.1, 0.05
    seq = [grid**n for n in range(1, 400)]
    limit = (grid == 1.0).astype(float)
    res = egoroff_extract(seq, limit, nu, delta, eta)
    n_star = res.n_star + 1  # seq[0] is x^1
    assert verify_egoroff(res, seq, limit, nu, delta, eta)
    excluded = np.setdiff1d(np.arange(101), res.D)
    # the excluded set is the grid inside (eta^(1/n), 1)
    cut = eta ** (1.0 / n_star)
    assert grid[excluded].min() == pytest.approx(cut, abs=0.01)
    assert grid[excluded].max() < 1.0
    inside = grid[res.D][grid[res.D] < 1.0].max()
    assert n_star >= math.log(eta) / math.log(inside)
    # the previous index would need a larger exclusion set
    assert math.fsum(nu[grid ** (n_star - 1) > eta][:-1]) >= delta


def test_egoroff_insufficient():
    seq = [np.array([0.0, 1.0])] * 3
    with pytest.raises(InsufficientSequenceError):
        egoroff_extract(seq, np.zeros(2), np.ones(2), 0.5, 0.1)
    with pytest.raises(ParameterError):
        egoroff_extract([], np.zeros(2), np.ones(2), 0.5, 0.1)


def test_egoroff_on_vanishing_envelopes(uc_run, uc_mdp):
    nu = np.asarray(uc_mdp.kernel.max(axis=0).todense()).ravel()
    res = egoroff_extract(uc_run.lower_env, uc_run.h_lower, nu, 0.05, 1e-3)
    assert verify_egoroff(res, uc_run.lower_env, uc_run.h_lower, nu, 0.05, 1e-3)


@settings(max_examples=200, deadline=None)
@given(seeds, st.floats(0.01, 1.0), st.floats(1e-3, 0.5))
def test_egoroff_self_verifies(seed, delta, eta):
    rng = np.random.default_rng(seed)
    n, length = 12, 30
    limit = rng.normal(size=n)
    rates = rng.uniform(0.5, 0.99, n)
    seq = [limit + rng.uniform(0, 3, n) * rates**k for k in range(length)]
    nu = rng.uniform(0, 1, n)
    try:
        res = egoroff_extract(seq, limit, nu, delta, eta)
    except InsufficientSequenceError:
        return
    assert res.complement_mass < delta and res.uniform_gap <= eta
    assert verify_egoroff(res, seq, limit, nu, delta, eta)


# -- epi-limits ---------------------------------------------------------------
def test_epilimit_constant():
    grid = np.linspace(0, 1, 7)
    d = lower_epilimit([np.full(7, 2.0)] * 6, grid)
    assert d.lower_epilimit.tolist() == [2.0] * 7
    assert d.inf_sequence_liminf == d.inf_of_epilimit == d.inf_of_pointwise_liminf == 2.0
    assert d.chain_ok


def test_epilimit_alternating():
    grid = np.arange(5.0)
    g = np.array([3.0, 1.0, 4.0, 1.0, 5.0])
    h = np.array([2.0, 7.0, 1.0, 8.0, 2.0])
    d = lower_epilimit([g, h] * 5, grid, radius_cells=0)
    np.testing.assert_array_equal(d.lower_epilimit, np.minimum(g, h))
    assert d.inf_of_epilimit == 1.0 == min(g.min(), h.min()) == d.inf_sequence_liminf
    # one-cell balls take the neighbours into account
    d1 = lower_epilimit([g, h] * 5, grid, radius_cells=1)
    m = np.minimum(g, h)
    expected = [min(m[max(0, i - 1):i + 2]) for i in range(5)]
    np.testing.assert_array_equal(d1.lower_epilimit, expected)


def test_epilimit_moving_spike():
    grid = np.linspace(0, 1, 11)
    seq = []
    for n in range(20):
        f = np.ones(11)
        f[min(10, 5 + n // 4)] = 0.0  # the zero drifts right and settles at the end
        seq.append(f)
    d = lower_epilimit(seq, grid)
    assert d.lower_epilimit[10] == 0.0 and d.chain_ok


@settings(max_examples=1000, deadline=None)
@given(seeds, st.integers(0, 3))
def test_epilimit_chain_random(seed, radius):
    rng = np.random.default_rng(seed)
    seq = rng.normal(size=(int(rng.integers(2, 20)), 64))
    d = lower_epilimit(seq, np.linspace(-1, 1, 64), radius_cells=radius)
    assert d.inf_sequence_liminf <= d.inf_of_epilimit + 1e-9
    assert d.inf_of_epilimit <= d.inf_of_pointwise_liminf + 1e-9
    assert d.chain_ok


def test_compactness_fixed_interval():
    grid = np.linspace(-5, 5, 41)
    seq = [np.abs(grid - c) for c in np.tile([-1.0, 0.0, 1.0], 6)]
    res = epi_compactness_condition(seq, grid, 0.1)
    assert res.holds and res.K == (-1.0, 1.0)


def test_compactness_escaping_minimizer():
    grid = np.arange(0.0, 41.0)
    seq = [np.abs(grid - n) for n in range(10, 60)]
    assert not epi_compactness_condition(seq, grid, 0.4)


def test_compactness_constant():
    grid = np.linspace(0, 1, 9)
    res = epi_compactness_condition([np.full(9, 3.0)] * 8, grid, 1e-3)
    assert res.holds and res.K[0] == res.K[1]
    with pytest.raises(ParameterError):
        epi_compactness_condition([np.full(9, 3.0)], grid, 0.0)
