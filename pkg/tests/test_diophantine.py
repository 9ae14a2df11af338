import math

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from mtplinear.dimfun import DomainError, PowerLaw, Zero, derive_g, power_function
from mtplinear.diophantine import (Partition, SceneConfig, approx_witnesses, compute_M, enumerate_pairs,
                                   is_primitive, primitive_mask)

from oracles import gcd_reference, naive_pair_count


def test_primitive_examples():
    assert not is_primitive((2, 4, 6), Partition(3, ((1, 2, 3),)))
    assert is_primitive((2, 3, 4), Partition(3, ((1, 2, 3),)))
    assert not is_primitive((2, 4, 3, 6), Partition(4, ((1, 2), (3, 4))))
    assert not is_primitive((0, 0, 1), Partition(3, ((1, 2), )))


def test_compute_M_examples():
    pair = derive_g(power_function(1.0), 0, 1)
    assert compute_M(PowerLaw(1.0, 1.0), pair, 1) == 2.0
    pair2 = derive_g(power_function(1.5), 1, 2)
    assert compute_M(PowerLaw(1.0, 1.0), pair2, 2) >= 4.0
    assert compute_M(Zero(), pair2, 2) == 4.0


def test_enumerate_small_count():
    cfg = SceneConfig(1, 1, PowerLaw(1.0, 1.0))
    pairs = list(enumerate_pairs(cfg, 1, 2.0))
    assert len(pairs) == 10
    assert pairs[0] == ((-2,), (-1,))
    with pytest.raises(DomainError):
        list(enumerate_pairs(cfg, 0, 2.0))


def test_partition_filter_removes_even_pairs():
    cfg = SceneConfig(1, 1, PowerLaw(1.0, 1.0), partition=Partition(2, ((1, 2),)))
    pairs = set(enumerate_pairs(cfg, 3, 2.0))
    assert ((2,), (2,)) not in pairs
    assert ((0,), (2,)) not in pairs
    assert ((1,), (2,)) in pairs


@pytest.mark.parametrize("n,m,Q,M,blocks", [
    (1, 1, 20, 2.0, None), (2, 1, 6, 4.0, None), (1, 2, 8, 2.0, None), (2, 2, 3, 4.0, None),
    (1, 1, 20, 2.0, ((1, 2),)), (2, 1, 6, 4.0, ((1, 2, 3),)), (2, 2, 3, 4.0, ((1, 3), (2, 4))),
])
def test_enumerate_matches_naive_loop(n, m, Q, M, blocks):
    part = None if blocks is None else Partition(n + m, blocks)
    cfg = SceneConfig(n, m, PowerLaw(1.0, 1.0), partition=part)
    assert sum(1 for _ in enumerate_pairs(cfg, Q, M)) == naive_pair_count(n, m, Q, M, blocks)


def test_witness_exact_hit():
    cfg = SceneConfig(1, 1, PowerLaw(1.0, 1.0))
    ws = approx_witnesses([0.5], cfg, 2)
    assert any(w.p == (-1,) and w.q == (2,) and w.error == 0.0 for w in ws)
    assert approx_witnesses([0.5], SceneConfig(1, 1, Zero()), 5) == []


def test_golden_ratio_witnesses_are_fibonacci():
    x = (math.sqrt(5) - 1) / 2
    ws = approx_witnesses([x], SceneConfig(1, 1, PowerLaw(1.0, 1.0)), 100)
    qs = {abs(w.q[0]) for w in ws}
    fib = {1, 2, 3, 5, 8, 13, 21, 34, 55, 89}
    assert fib <= qs
    # continued-fraction convergent denominators are exactly the Fibonacci numbers here;
    # any other q with |q x + p| < 1/q would contradict best approximation
    assert qs == fib


@settings(max_examples=100, deadline=None)
@given(v=st.lists(st.integers(-50, 50), min_size=4, max_size=4))
def test_primitive_sign_invariance(v):
    pi = Partition(4, ((1, 2), (3, 4)))
    assert is_primitive(v, pi) == is_primitive([-a for a in v], pi)
    assert is_primitive(v, pi) == gcd_reference(v, pi.blocks)


@settings(max_examples=40, deadline=None)
@given(x=st.floats(0, 1), q1=st.integers(1, 30), q2=st.integers(1, 30), tau=st.floats(0.5, 3.0))
def test_witnesses_monotone(x, q1, q2, tau):
    lo, hi = sorted((q1, q2))
    cfg = SceneConfig(1, 1, PowerLaw(1.0, tau))
    small = {(w.p, w.q) for w in approx_witnesses([x], cfg, lo)}
    big = {(w.p, w.q) for w in approx_witnesses([x], cfg, hi)}
    assert small <= big
    wider = {(w.p, w.q) for w in approx_witnesses([x], SceneConfig(1, 1, PowerLaw(2.0, tau)), hi)}
    assert big <= wider


def test_primitive_mask_vectorised():
    rng = np.random.default_rng(3)
    V = rng.integers(-30, 31, size=(2000, 4))
    pi = Partition(4, ((1, 2, 4),))
    ref = np.array([gcd_reference(tuple(v), pi.blocks) for v in V])
    np.testing.assert_array_equal(primitive_mask(V, pi), ref)
