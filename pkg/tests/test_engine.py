import math

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from mtplinear.dimfun import DomainError, PowerLaw, Zero, derive_g, power_function
from mtplinear.diophantine import SceneConfig, compute_M
from mtplinear.engine import (CantorTree, ConstructionError, DyadicScene, EngineConstants, ExplicitScene,
                              IndexedBall, build_cantor, build_kgb, build_packing, c3_value, calibrate_packing,
                              check_full_measure, diophantine_scene, mu_of_set, separation_lemma_holds,
                              slab_ball_volume, verify_cantor_measure_bound)
from mtplinear.geometry import AffinePlane, Ball, ball_volume

F1 = power_function(0.5)
F2 = power_function(1.5)


def small_constants(k, l, eta, cap):
    return EngineConstants.standard(k, l, eta).with_overrides(c3=1e-3 if k == 1 else 1e-4,
                                                              epsilon_scale=1e6, sublevel_cap=cap)


@pytest.fixture(scope="module")
def tree_k1():
    return build_cantor(DyadicScene(1), F1, 1.5, 2, constants=small_constants(1, 0, 1.5, 2))


@pytest.fixture(scope="module")
def tree_k2():
    return build_cantor(DyadicScene(2), F2, 1.5, 2, constants=small_constants(2, 1, 1.5, 1))


def test_constants():
    c = EngineConstants.standard(2, 1, 10.0)
    assert c.c1 == 0.5 and c.c2 == pytest.approx(math.pi)
    assert c.c3 == pytest.approx((1 / (2 ** 5 * 5 ** 2 * 15 ** 2)) * (0.5 / math.pi) ** 2, rel=1e-15)
    assert c3_value(1, 0.5, 2.0) == pytest.approx(0.25 ** 2 / (2 ** 4 * 5 * 15))
    with pytest.raises(DomainError):
        EngineConstants(1, 0, 1.2, 2.0, 0.1, 0.5, 1.0, 10.0)


def test_root_sublevel_count_matches_hand_formula():
    c = EngineConstants.standard(2, 1, 10.0)
    B0 = Ball([0.5, 0.5], 0.5)
    hand = math.floor(c.c2 * 10.0 / (c.c3 * math.pi * 0.25)) + 1
    assert c.sublevels(F2, B0, True) == hand


def test_packing_calibration():
    d1, d2, lo, hi = calibrate_packing(2, 1)
    assert d1 >= 1 / 24 and d2 <= 1
    assert d1 == pytest.approx(0.9 * lo) and d2 == pytest.approx(1.1 * hi)
    assert calibrate_packing(1, 0)[2:] == (1.0, 1.0)


def test_slab_ball_volume():
    assert slab_ball_volume(0, 1, 0.1, 0.5) == pytest.approx(0.2)
    # strip of half-width w through a disc of radius R
    w, R = 0.1, 0.5
    exact = 2 * (w * math.sqrt(R * R - w * w) + R * R * math.asin(w / R))
    assert slab_ball_volume(1, 1, w, R) == pytest.approx(exact, rel=1e-10)
    assert slab_ball_volume(0, 2, 0.1, 0.5) == pytest.approx(math.pi * 0.01)
    assert slab_ball_volume(1, 1, 1.0, 0.5) == pytest.approx(math.pi * 0.25)


def test_full_measure_examples():
    pair = derive_g(F1, 0, 1)
    cfg = SceneConfig(1, 1, PowerLaw(1.0, 1.0))
    scene = diophantine_scene(cfg, 500, compute_M(cfg.psi, pair, 1))
    B = Ball([0.5], 0.5)
    cov = check_full_measure(scene, B, pair, resolution=12, G_values=(0, 5, 10))
    assert all(v >= 0.95 for v in cov.values())
    empty = diophantine_scene(SceneConfig(1, 1, Zero()), 50, 2.0)
    assert check_full_measure(empty, B, pair) == {0: 0.0}
    big = ExplicitScene([AffinePlane([[1.0]], [0.5])], [1.0], Ball([0.5], 0.5))
    assert check_full_measure(big, B, pair) == {0: 1.0}


def test_kgb_single_bisecting_line():
    # f = r^1.5, l = 1: Upsilon~ = Upsilon^(1/2); Upsilon = 0.01 gives r(B)/10 for r(B) = 1
    pair = derive_g(F2, 1, 2)
    B = Ball([0.0, 0.0], 1.0)
    scene = ExplicitScene([AffinePlane.through([0.0, 0.0], [[1.0, 0.0]])], [0.01], Ball([0.0, 0.0], 2.0))
    res = build_kgb(scene, B, 0, pair)
    ut = 0.1
    assert 1 <= len(res.balls) <= 2 * B.radius / (6 * ut) + 1
    C = np.array([a.ball.center for a in res.balls])
    assert np.all(np.abs(C[:, 1]) < 1e-15)
    assert all(a.ball.radius == pytest.approx(ut) for a in res.balls)
    for i in range(len(C)):
        for j in range(i + 1, len(C)):
            assert np.linalg.norm(C[i] - C[j]) > 6 * ut
    assert res.measure >= ball_volume(1.0, 2) / (4 * 15 ** 2)


def test_kgb_plane_outside_ball():
    pair = derive_g(F2, 1, 2)
    scene = ExplicitScene([AffinePlane.through([0.0, 5.0], [[1.0, 0.0]])], [0.01], Ball([0.0, 0.0], 10.0))
    with pytest.raises(ConstructionError) as err:
        build_kgb(scene, Ball([0.0, 0.0], 1.0), 0, pair)
    assert err.value.prop == "covering (iii)"
    assert err.value.value == 0.0


def test_kgb_on_vertical_lines():
    pair = derive_g(F2, 1, 2)
    B = Ball([0.5, 0.5], 0.5)
    res = build_kgb(DyadicScene(2), B, 31, pair)
    assert res.measure >= ball_volume(0.5, 2) / (4 * 15 ** 2)
    for a in res.balls:
        assert DyadicScene(2).plane(a.j).distance(a.ball.center) < 1e-15


def test_packing_count_on_line():
    scene = ExplicitScene([AffinePlane.through([0.0, 0.0], [[1.0, 1.0]])], [0.001], Ball([0.0, 0.0], 1.0))
    A = IndexedBall(Ball([0.0, 0.0], 0.1), 0)
    const = EngineConstants.standard(2, 1, 10.0)
    res = build_packing(scene, A, derive_g(F2, 1, 2), const)
    assert const.d1 * 100 <= len(res.balls) <= const.d2 * 100
    assert res.inner_measure / 36 <= res.union_measure <= res.outer_measure


def test_packing_rim_is_empty():
    scene = ExplicitScene([AffinePlane.through([0.0, 0.09], [[1.0, 0.0]])], [0.001], Ball([0.0, 0.0], 1.0))
    res = build_packing(scene, IndexedBall(Ball([0.0, 0.0], 0.1), 0), derive_g(F2, 1, 2))
    assert res.empty and res.balls == []


def test_packing_gap_is_strict():
    scene = ExplicitScene([AffinePlane.through([0.0, 0.0], [[1.0, 0.0]])], [0.01], Ball([0.0, 0.0], 1.0))
    with pytest.raises(ConstructionError) as err:
        build_packing(scene, IndexedBall(Ball([0.0, 0.0], 0.06), 0), derive_g(F2, 1, 2))
    assert err.value.prop == "radii comparison"


def test_depth_one_tree():
    tree = build_cantor(DyadicScene(1), F1, 10.0, 1)
    assert tree.depth == 1 and tree.levels[0].weight.tolist() == [1.0]
    rep = verify_cantor_measure_bound(tree, 10)
    assert rep.samples == 0 and rep.constant == 0.0


def test_default_constants_exceed_budget():
    with pytest.raises(ConstructionError) as err:
        build_cantor(DyadicScene(1), F1, 10.0, 3)
    assert err.value.prop == "P5"
    assert err.value.value == math.floor(2.0 * 10.0 / c3_value(1, 0.5, 2.0)) + 1


@pytest.mark.parametrize("name", ["tree_k1", "tree_k2"])
def test_tree_properties(name, request):
    tree = request.getfixturevalue(name)
    assert all(c.passed for c in tree.checks)
    props = {c.prop for c in tree.checks}
    assert {"P0", "P1", "P2", "P3", "mass", "mu additivity"} <= props
    for lev in tree.levels:
        assert abs(lev.weight.sum() - 1.0) <= 1e-9
    lev = tree.levels[1]
    # every node is centred on its plane with the plane's radius
    scene = DyadicScene(tree.k)
    for c, r, j in zip(lev.centers, lev.radii, lev.source):
        assert scene.plane(int(j)).distance(c) < 1e-12
        assert r == pytest.approx(float(scene.upsilon(j)))


def test_sublevels_halve_f(tree_k1):
    lev = tree_k1.levels[1]
    one, two = lev.radii[lev.sublevel == 1], lev.radii[lev.sublevel == 2]
    assert F1(two).max() <= 0.5 * F1(one).min()


def test_determinism_and_round_trip(tmp_path, tree_k1):
    again = build_cantor(DyadicScene(1), F1, 1.5, 2, constants=small_constants(1, 0, 1.5, 2))
    assert again.digest() == tree_k1.digest()
    path = tmp_path / "tree.json"
    tree_k1.save(str(path))
    loaded = CantorTree.load(str(path))
    assert loaded.digest() == tree_k1.digest()
    text = path.read_text().replace('"weight": 0', '"weight": 1', 1)
    path.write_text(text)
    with pytest.raises(DomainError):
        CantorTree.load(str(path))


def test_mu_examples(tree_k1):
    assert mu_of_set(tree_k1, Ball([5.0], 0.1)) == 0.0
    assert mu_of_set(tree_k1, Ball([0.5], 1.0)) == pytest.approx(1.0)
    lev = tree_k1.levels[1]
    for i in (0, lev.size // 2, lev.size - 1):
        assert mu_of_set(tree_k1, Ball(lev.centers[i], lev.radii[i])) == pytest.approx(lev.weight[i], rel=1e-12)


def test_measure_bound_report(tree_k1):
    rep = verify_cantor_measure_bound(tree_k1, 300, seed=4)
    assert np.isfinite(rep.constant)
    assert rep.r0 == tree_k1.levels[1].radii.min()
    assert rep.node_ratios.size == tree_k1.levels[1].size


def test_engine_rejects_degenerate_branch():
    with pytest.raises(DomainError):
        build_cantor(DyadicScene(1), power_function(1.0), 10.0, 2)


@settings(max_examples=300, deadline=None)
@given(ca=st.floats(-2, 2), cm=st.floats(-2, 2), ra=st.floats(0.01, 2), rm=st.floats(0.01, 2), c=st.floats(3, 8))
def test_separation_lemma(ca, cm, ra, rm, c):
    out = separation_lemma_holds(Ball([ca], ra), Ball([cm], rm), c)
    assert out is None or out is True


@settings(max_examples=200, deadline=None)
@given(seed=st.integers(0, 10 ** 6), c=st.floats(3, 6))
def test_separation_lemma_plane(seed, c):
    rng = np.random.default_rng(seed)
    A = Ball(rng.normal(size=2), rng.uniform(0.05, 1))
    M = Ball(A.center + rng.normal(size=2) * A.radius, rng.uniform(0.01, 1) * A.radius * 2)
    assert separation_lemma_holds(A, M, c) in (None, True)


@settings(max_examples=20, deadline=None)
@given(t=st.integers(2, 12), i=st.integers(0, 10 ** 6))
def test_dyadic_indexing(t, i):
    scene = DyadicScene(1)
    i = i % (1 << (t - 1))
    j = (1 << (t - 1)) - 1 + i
    assert int(scene.tier(j)) == t
    assert float(scene.offset(j)) == (2 * i + 1) / 2 ** t
    hits = scene.planes_meeting(Ball([float(scene.offset(j))], 1e-12), (1 << (t - 1)) - 1, (1 << t) - 1)
    assert list(hits) == [j]
