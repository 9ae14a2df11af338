import math
from fractions import Fraction

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from mtplinear.dimfun import (Clamped, Comparison, DimensionFunction, DomainError, MultiApproxFunction, PowerLaw,
                              Table, Verdict, Zero, big_theta_transform, check_dimfun_comparison, classify_series,
                              derive_g, eval_f, power_function, theta_transform)
from mtplinear.diophantine import Partition


def test_eval_power():
    assert eval_f(power_function(2), 0.5) == 0.25
    for s in (0.3, 1.0, 2.5):
        assert eval_f(power_function(s), 0.0) == 0.0


def test_eval_seven_quarters_matches_high_precision():
    # 0.0625 = 2^-4, so 0.0625^(7/4) = 2^-7 exactly
    assert eval_f(power_function(1.75), 0.0625) == pytest.approx(float(Fraction(1, 128)), rel=1e-15)
    assert eval_f(power_function(1.75), 0.0625) == pytest.approx(7.8125e-3, abs=1e-7)


def test_eval_outside_domain():
    f = DimensionFunction(1.0, 2.0, 1.0)
    with pytest.raises(DomainError):
        eval_f(f, -0.1)
    with pytest.raises(DomainError):
        eval_f(f, 0.5)  # above the default cap e^-2


def test_log_corrected_value():
    f = DimensionFunction(1.0, 2.0, 1.0)
    r = 0.01
    assert eval_f(f, r) == pytest.approx(r * r * math.log(1 / r), rel=1e-14)


def test_derive_g_flags():
    pair = derive_g(power_function(1.75), 1, 2)
    assert pair.g.power == pytest.approx(0.75)
    assert pair.g_valid and pair.monotone
    ident = derive_g(power_function(2.0), 0, 2)
    assert ident.g.power == ident.f.power
    with pytest.raises(DomainError):
        derive_g(power_function(0.5), 1, 2)


def test_theta_examples():
    pair = derive_g(power_function(1.75), 1, 2)
    th = theta_transform(PowerLaw(1.0, 3.0), pair)
    q = np.arange(1, 200)
    np.testing.assert_allclose(th.values(q), q ** -2.0, rtol=1e-12)
    full = derive_g(power_function(2.0), 1, 2)
    np.testing.assert_array_equal(theta_transform(PowerLaw(1.0, 3.0), full).values(q), PowerLaw(1.0, 3.0).values(q))
    assert isinstance(theta_transform(Zero(), pair), Zero)


def test_big_theta_on_mask():
    pi = Partition(3, ((1, 2, 3),))
    Psi = MultiApproxFunction(PowerLaw(1.0, 3.0), pi)
    Th = big_theta_transform(Psi, derive_g(power_function(1.75), 1, 2))
    assert Th((1,), (2, 3)) == pytest.approx(3.0 ** -2)
    assert Th((2,), (2, 4)) == 0.0
    assert Psi((2,), (2, 4)) == 0.0


def test_classify_examples():
    psi = PowerLaw(1.0, 3.0)
    assert classify_series(psi, 2, 1, derive_g(power_function(2.0), 1, 2)).verdict is Verdict.CONVERGENT
    assert classify_series(psi, 2, 1, derive_g(power_function(1.5), 1, 2)).verdict is Verdict.DIVERGENT
    assert classify_series(Zero(), 2, 1).verdict is Verdict.CONVERGENT


def test_classify_table_evidence():
    tab = Table.from_pairs([(q, 0.5) for q in range(1, 50)])
    v = classify_series(tab, 1, 1)
    assert v.verdict is Verdict.CONVERGENT
    assert v.partial_sum == pytest.approx(49 * 0.5)
    assert classify_series(Table.from_pairs([], default=0.5), 1, 1).verdict is Verdict.DIVERGENT


def test_convergent_tail_bound_is_an_upper_bound():
    v = classify_series(PowerLaw(1.0, 2.0), 1, 1, evidence_terms=1000)
    exact = math.pi ** 2 / 6
    assert v.partial_sum < exact <= v.partial_sum + v.tail_bound


def test_comparison_examples():
    assert check_dimfun_comparison(power_function(2.0), power_function(1.0)) is Comparison.F_DOMINATES_TO_ZERO
    assert check_dimfun_comparison(power_function(1.5), power_function(1.5)) is Comparison.COMPARABLE
    f = DimensionFunction(1.0, 2.0, 1.0)
    assert check_dimfun_comparison(f, power_function(2.0)) is Comparison.G2_DOMINATES_TO_ZERO


def test_clamp_before_transfer():
    pair = derive_g(power_function(1.0), 0, 1)
    big = theta_transform(PowerLaw(5.0, 0.5), pair)
    capped = theta_transform(Clamped(PowerLaw(5.0, 0.5), 1.0), pair)
    q = np.arange(1, 30)
    np.testing.assert_allclose(big.values(q), capped.values(q))


@settings(max_examples=60, deadline=None)
@given(s=st.floats(0.05, 3.0), r1=st.floats(1e-6, 0.1), r2=st.floats(1e-6, 0.1),
       a=st.sampled_from([0.0, 0.5, 1.0]))
def test_dimension_function_nondecreasing(s, r1, r2, a):
    f = DimensionFunction(1.0, s, a)
    lo, hi = sorted((min(r1, f.r_cap), min(r2, f.r_cap)))
    assert eval_f(f, lo) <= eval_f(f, hi) * (1 + 1e-12)


@settings(max_examples=60, deadline=None)
@given(l=st.integers(0, 2), extra=st.integers(1, 2), s_frac=st.floats(0.0, 1.0), r=st.floats(1e-5, 0.1))
def test_g_identity(l, extra, s_frac, r):
    k = l + extra
    s = l + s_frac * extra + 1e-3
    pair = derive_g(power_function(min(s, k)), l, k)
    assert pair.g(r) == pytest.approx(r ** -l * pair.f(r), rel=1e-12)


@settings(max_examples=40, deadline=None)
@given(tau=st.floats(0.0, 6.0), c=st.floats(0.01, 1.0), s=st.floats(1.05, 2.0))
def test_theta_matches_pointwise_definition(tau, c, s):
    pair = derive_g(power_function(s), 1, 2)
    th = theta_transform(PowerLaw(c, tau), pair)
    q = np.arange(1, 60, dtype=float)
    direct = q * pair.g(np.minimum(c * q ** -tau, 1.0) / q) ** (1.0 / pair.m)
    np.testing.assert_allclose(th.values(q.astype(np.int64)), direct, rtol=1e-9)
