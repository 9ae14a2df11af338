import math

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from mtplinear.dimfun import DomainError, power_function
from mtplinear.geometry import (AffinePlane, Ball, ResonantPlane, dist_to_resonant, f_scaled_ball, five_r_cover,
                                five_r_cover_indices, in_neighborhood, column_norm, separated_pack,
                                separated_pack_centers)

from oracles import brute_dist


def test_column_norm_examples():
    assert column_norm([0.3], 1, 1) == pytest.approx(0.3)
    assert column_norm([3.0, 4.0], 2, 1) == pytest.approx(math.sqrt(2) * 5)
    assert column_norm([0.0, 0.0], 2, 1) == 0.0


def test_dist_examples():
    R = ResonantPlane((-1,), (2,), (0.0,), ((1.0,),))
    assert dist_to_resonant([0.5], R) == 0.0
    assert dist_to_resonant([0.6], R) == pytest.approx(0.1)
    R2 = ResonantPlane((0,), (1, 1), (0.0,), ((1.0,),))
    assert dist_to_resonant([0.5, 0.5], R2) == pytest.approx(1.0)


def test_neighborhood_is_strict():
    R = ResonantPlane((-1,), (2,), (0.0,), ((1.0,),))
    assert not in_neighborhood([0.5], R, 0.0)
    assert in_neighborhood([0.5], R, 1e-9)
    # distance 0.1 computed in floating point sits a hair above 0.1
    x = 0.6
    assert in_neighborhood([x], R, 0.1) == (dist_to_resonant([x], R) < 0.1)


def test_five_r_examples():
    out = five_r_cover([Ball([0.0], 1), Ball([0.5], 1), Ball([10.0], 1)])
    assert out == [Ball([0.0], 1), Ball([10.0], 1)]
    assert five_r_cover([Ball([0.2], 0.3)]) == [Ball([0.2], 0.3)]
    assert five_r_cover([Ball([0.0], 1), Ball([0.0], 0.5)]) == [Ball([0.0], 1)]


def test_f_scaled_ball():
    assert f_scaled_ball(Ball([0.0, 0.0], 0.3), power_function(2)).radius == pytest.approx(0.3)
    assert f_scaled_ball(Ball([0.0, 0.0], 0.25), power_function(1)).radius == pytest.approx(0.5)
    assert f_scaled_ball(Ball([0.0], 0.04), power_function(0.5)).radius == pytest.approx(0.2)


def _grid_audit(plane, container, centers, separation, step=1e-3):
    """Every grid point of plane cap container lies within separation of a centre."""
    d = plane.distance(container.center)
    rho = math.sqrt(container.radius ** 2 - d * d)
    t = np.arange(-rho, rho + step / 2, step)
    pts = plane.project(container.center) + t[:, None] * plane.direction_basis[:, 0]
    dist = np.linalg.norm(pts[:, None, :] - centers[None, :, :], axis=2).min(axis=1)
    return bool(np.all(dist <= separation + 1e-9))


def test_line_packing_is_maximal():
    plane = AffinePlane.through([0.0, 0.0], [[1.0, 0.3]])
    B = Ball([0.0, 0.0], 1.0)
    c = separated_pack_centers(plane, B, 0.5)
    assert 3 <= len(c) <= 5
    assert _grid_audit(plane, B, c, 0.5)
    assert not separated_pack_centers(AffinePlane.through([0.0, 3.0], [[1.0, 0.0]]), B, 0.5).size
    assert len(separated_pack(plane, B, 2.0, 0.1)) == 1


def test_off_centre_line_packing_stays_in_container():
    plane = AffinePlane.through([0.3, 0.9], [[0.0, 1.0]])
    B = Ball([0.5, 0.5], 0.5)
    c = separated_pack_centers(plane, B, 0.05)
    assert np.all(np.linalg.norm(c - B.center, axis=1) <= B.radius + 1e-12)
    assert np.allclose(c[:, 0], 0.3)
    assert _grid_audit(plane, B, c, 0.05)


def test_plane_needs_independent_rows():
    with pytest.raises(DomainError):
        AffinePlane([[1.0, 0.0], [2.0, 0.0]], [0.0, 1.0])


@settings(max_examples=200, deadline=None)
@given(data=st.data())
def test_dist_matches_minimisation(data):
    n = data.draw(st.integers(1, 2))
    m = data.draw(st.integers(1, 2))
    q = tuple(data.draw(st.lists(st.integers(-6, 6), min_size=n, max_size=n)).copy())
    if not any(q):
        q = (1,) + q[1:]
    p = tuple(data.draw(st.lists(st.integers(-6, 6), min_size=m, max_size=m)))
    x = data.draw(st.lists(st.floats(0, 1), min_size=n * m, max_size=n * m))
    R = ResonantPlane(p, q, (0.0,) * m, tuple(tuple(float(i == j) for j in range(m)) for i in range(m)))
    assert dist_to_resonant(x, R) == pytest.approx(brute_dist(x, R), abs=1e-6)


@settings(max_examples=80, deadline=None)
@given(seed=st.integers(0, 10 ** 6), k=st.integers(1, 2), count=st.integers(1, 25))
def test_five_r_cover_properties(seed, k, count):
    rng = np.random.default_rng(seed)
    C = rng.random((count, k)) * 4
    R = rng.uniform(0.05, 1.0, count)
    sel = five_r_cover_indices(C, R)
    for a in sel:
        for b in sel:
            if a < b:
                assert np.linalg.norm(C[a] - C[b]) > R[a] + R[b]
    # each input ball lies in 5 times some selected ball
    for i in range(count):
        assert any(np.linalg.norm(C[i] - C[j]) + R[i] <= 5 * R[j] + 1e-12 for j in sel)


@settings(max_examples=60, deadline=None)
@given(seed=st.integers(0, 10 ** 6), sep=st.floats(0.05, 0.6))
def test_packing_separation(seed, sep):
    rng = np.random.default_rng(seed)
    centre = rng.random(2)
    d = rng.normal(size=2)
    plane = AffinePlane.through(centre + rng.uniform(-0.5, 0.5, 2), [d])
    B = Ball(centre, 1.0)
    c = separated_pack_centers(plane, B, sep)
    if len(c) > 1:
        dist = np.linalg.norm(c[:, None] - c[None, :], axis=2)
        assert dist[np.triu_indices(len(c), 1)].min() > sep
    assert np.all(plane.distance(c) < 1e-9) if len(c) else True
