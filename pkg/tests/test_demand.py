import math

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st
from scipy import stats

from acoi_mdp import DemandFamily
from acoi_mdp.errors import ParameterError

FAMILIES = [
    DemandFamily("uniform", (1.0, 2.0)),
    DemandFamily("triangular", (0.5, 1.0, 3.0)),
    DemandFamily("truncexp", (0.7, 0.2, 4.0)),
    DemandFamily("uniform", (0.5, 2.5), (0.25, 1.5), 2.0),
]


def _scipy_frozen(fam, a):
    p = fam.params_at(a)
    if fam.kind == "uniform":
        return stats.uniform(p[0], p[1] - p[0])
    if fam.kind == "triangular":
        lo, mode, hi = p
        return stats.triang((mode - lo) / (hi - lo), lo, hi - lo)
    rate, lo, hi = p
    return stats.truncexpon((hi - lo) * rate, loc=lo, scale=1.0 / rate)


@pytest.mark.parametrize("fam", FAMILIES)
@pytest.mark.parametrize("a", [-1.0, 0.7, 1.3, 5.0])
def test_closed_forms_match_scipy(fam, a):
    ref = _scipy_frozen(fam, a)
    ys = np.linspace(-1, 6, 57)
    np.testing.assert_allclose(fam.cdf(ys, a), ref.cdf(ys), atol=1e-12)
    np.testing.assert_allclose(fam.pdf(ys[1:-1], a), ref.pdf(ys[1:-1]), atol=1e-10)
    assert fam.mean(a) == pytest.approx(ref.mean(), abs=1e-12)
    u = np.linspace(0.01, 0.99, 17)
    np.testing.assert_allclose(fam.sample(u, np.full(17, a)), ref.ppf(u), atol=1e-10)


@pytest.mark.parametrize("fam", FAMILIES)
def test_density_integrates_to_one(fam):
    for a in (0.0, 1.0, 3.0):
        assert fam.expect(lambda y: 1.0, a) == pytest.approx(1.0, abs=1e-8)


def test_saturation_constant_beyond_level():
    fam = FAMILIES[3]
    assert fam.params_at(2.0) == fam.params_at(7.5) == (0.5, 2.5)
    assert fam.params_at(-3.0) == (0.25, 1.5)
    assert fam.params_at(1.0) == pytest.approx((0.375, 2.0))
    assert not fam.is_constant() and FAMILIES[0].is_constant()


def test_deterministic_atom():
    fam = DemandFamily("deterministic", (1.5,))
    assert not fam.has_density and math.isinf(fam.density_bound(0.0))
    assert fam.cdf(np.array([1.4999, 1.5]), 0.0).tolist() == [0.0, 1.0]
    assert fam.sample(np.array([0.3]), np.array([0.0])).tolist() == [1.5]
    assert fam.mean(2.0) == 1.5


def test_tail_mean_uniform_closed_form():
    fam = FAMILIES[0]
    for d in (0.5, 1.2, 1.7, 2.5):
        lo = min(max(d, 1.0), 2.0)
        assert fam.tail_mean(d, 0.0) == pytest.approx((4.0 - lo**2) / 2.0, abs=1e-10)


def test_invalid_parameters():
    with pytest.raises(ParameterError):
        DemandFamily("uniform", (2.0, 1.0))
    with pytest.raises(ParameterError):
        DemandFamily("poisson", (1.0,))
    with pytest.raises(ParameterError):
        DemandFamily("uniform", (1.0, 2.0), (0.5, 1.0))


@pytest.mark.parametrize("fam", FAMILIES + [DemandFamily("deterministic", (1.0,))])
def test_dict_round_trip(fam):
    assert DemandFamily.from_dict(fam.to_dict()) == fam


@settings(max_examples=50, deadline=None)
@given(st.floats(-2, 6), st.floats(-2, 6))
def test_cdf_monotone(y1, y2):
    for fam in FAMILIES:
        lo, hi = sorted((y1, y2))
        assert fam.cdf(lo, 1.0) <= fam.cdf(hi, 1.0)
