import math

import mpmath
import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from skeletonwalk import streams
from skeletonwalk.exit_sampler import (DEFAULT_LAW, RootSearchError, UnitExitLaw,
                                       exit_scale, sample_exit, sample_unit_exit,
                                       unit_exit_from_uniforms, unit_exit_moment,
                                       unit_exit_survival)
import skeletonwalk.exit_sampler as es

mpmath.mp.dps = 40


def survival_oracle(t):
    """High-precision spectral series (converges for every t > 0)."""
    t = mpmath.mpf(t)
    total = mpmath.nsum(lambda j: (-1) ** j / (2 * j + 1)
                        * mpmath.exp(-(2 * j + 1) ** 2 * mpmath.pi ** 2 * t / 8), [0, mpmath.inf])
    return float(4 / mpmath.pi * total)


def test_survival_at_zero():
    assert unit_exit_survival(0.0) == 1.0


def test_survival_at_one():
    assert unit_exit_survival(1.0) == pytest.approx(0.3708, abs=5e-5)
    assert unit_exit_survival(1.0) == pytest.approx(survival_oracle(1.0), abs=1e-14)


@pytest.mark.parametrize("t", [0.02, 0.1, 0.3, 0.49, 0.5, 0.51, 0.8, 2.0, 5.0, 20.0])
def test_survival_matches_oracle(t):
    assert unit_exit_survival(t) == pytest.approx(survival_oracle(t), abs=2e-14)


def test_regimes_agree_at_crossover():
    law = DEFAULT_LAW
    for t in (0.3, 0.5, 0.7):
        s_large = law._large(np.array([t]))[0][0]
        s_small = 1 - law._small(np.array([t]))[0][0]
        assert s_large == pytest.approx(s_small, abs=1e-14)


def test_tiny_times_are_sure_survival():
    assert unit_exit_survival(1e-4) == 1.0
    assert DEFAULT_LAW.cdf(0.01) == pytest.approx(2 * math.erfc(1 / math.sqrt(0.02)), rel=1e-10)


def test_negative_time_rejected():
    with pytest.raises(ValueError):
        unit_exit_survival(-0.1)
    with pytest.raises(ValueError):
        DEFAULT_LAW.density(np.array([0.1, -1.0]))


def test_density_is_derivative_of_cdf():
    t = np.array([0.05, 0.2, 0.5, 1.0, 3.0])
    eps = 1e-6
    num = (DEFAULT_LAW.cdf(t + eps) - DEFAULT_LAW.cdf(t - eps)) / (2 * eps)
    np.testing.assert_allclose(DEFAULT_LAW.density(t), num, rtol=1e-6)


def test_integral_of_survival_is_one():
    assert unit_exit_moment(1) == pytest.approx(1.0, abs=1e-11)


@pytest.mark.parametrize("m,exact", [(2, 5 / 3), (3, 61 / 15), (4, 277 / 21)])
def test_moments_match_sech_expansion(m, exact):
    # E exp(-s tau) = sech(sqrt(2 s)); moments from its Taylor series
    s = mpmath.mpf(0)
    deriv = mpmath.diff(lambda x: mpmath.sech(mpmath.sqrt(2 * x)), s + mpmath.mpf("1e-30"), m)
    assert float((-1) ** m * deriv) == pytest.approx(exact, rel=1e-8)
    assert unit_exit_moment(m) == pytest.approx(exact, rel=1e-10)


def test_moment_order_validated():
    with pytest.raises(ValueError):
        unit_exit_moment(0)


@settings(max_examples=200, deadline=None)
@given(st.floats(min_value=1e-15, max_value=1 - 1e-15))
def test_quantile_inverts_survival(u):
    t = unit_exit_from_uniforms(u)
    assert t > 0
    s = unit_exit_survival(t)
    # relative accuracy in whichever tail the solver works on
    if u <= unit_exit_survival(0.5):
        assert s == pytest.approx(u, rel=1e-9)
    else:
        assert 1 - s == pytest.approx(1 - u, rel=1e-9, abs=1e-300)


def test_quantile_elementwise_independent_of_batch():
    u = streams.open_uniforms(streams.substream(0, 1), 1000)
    whole = unit_exit_from_uniforms(u)
    single = np.array([unit_exit_from_uniforms(x) for x in u[:50]])
    np.testing.assert_array_equal(whole[:50], single)


def test_quantile_rejects_closed_endpoints():
    with pytest.raises(ValueError):
        unit_exit_from_uniforms(np.array([0.5, 1.0]))
    with pytest.raises(ValueError):
        unit_exit_from_uniforms(0.0)


def test_extreme_uniforms_finite():
    u = np.array([2.0 ** -53, 1 - 2.0 ** -53])
    t = unit_exit_from_uniforms(u)
    assert np.all(np.isfinite(t)) and t[0] > t[1] > 0
    assert t[0] < es._T_MAX


def test_root_search_cap_raises(monkeypatch):
    monkeypatch.setattr(es, "_MAX_ITER", 1)
    with pytest.raises(RootSearchError):
        unit_exit_from_uniforms(np.array([0.3, 0.9]))


def test_draws_positive_and_one_word_each():
    rng = streams.substream(4, 0)
    draws = sample_unit_exit(rng, 5000)
    assert np.all(draws > 0)
    ref = streams.substream(4, 0)
    np.testing.assert_array_equal(draws, unit_exit_from_uniforms(streams.open_uniforms(ref, 5000)))
    assert isinstance(sample_unit_exit(rng), float)


def test_exit_scale():
    assert exit_scale(0) == 1.0
    assert exit_scale(3) == 2.0 ** -6
    with pytest.raises(ValueError):
        exit_scale(-1)


def test_level_zero_is_unit_law():
    a = sample_exit(0, streams.substream(2, 0), 100)
    b = sample_unit_exit(streams.substream(2, 0), 100)
    np.testing.assert_array_equal(a, b)


def test_level_three_mean():
    draws = sample_exit(3, streams.substream(11, 3), 10**6)
    tol = 3 * math.sqrt(2 / 3) * 2.0 ** -6 / 1e3
    assert abs(draws.mean() - 2.0 ** -6) < tol


def test_level_one_variance():
    # Var(c tau) = c^2 Var(tau) with c = 2^-2
    draws = sample_exit(1, streams.substream(12, 1), 10**5)
    target = (2 / 3) * 2.0 ** -4
    mu4 = 277 / 21 - 4 * 61 / 15 + 6 * 5 / 3 - 3
    sd = math.sqrt((mu4 - (2 / 3) ** 2) / 1e5) * 2.0 ** -4
    assert abs(draws.var(ddof=1) - target) < 4 * sd


@pytest.mark.parametrize("tol,cross", [(1e-10, 0.5), (1e-14, 0.3), (1e-14, 1.0)])
def test_law_parameters_consistent(tol, cross):
    law = UnitExitLaw(tol, cross)
    t = np.array([0.1, 0.4, 0.9, 2.0])
    np.testing.assert_allclose(law.survival(t), DEFAULT_LAW.survival(t), atol=10 * tol)


def test_law_parameters_validated():
    with pytest.raises(ValueError):
        UnitExitLaw(0.0)
    with pytest.raises(ValueError):
        UnitExitLaw(1e-14, -1.0)
