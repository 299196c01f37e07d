"""Radio medium: UDGM reception model, neighbor sets and collisions."""
import math
import random

import pytest
from hypothesis import given, strategies as st

from sdnmesh.medium import Medium, MediumConfig, Outcome, reception_probability
from sdnmesh.scenario import grid_positions

CFG = MediumConfig()


def test_reception_at_zero_distance_is_base_quality():
    assert reception_probability(0.0, CFG) == pytest.approx(0.9)


def test_reception_beyond_range_is_zero():
    assert reception_probability(51.0, CFG) == 0.0


def test_reception_at_half_range():
    # 0.9 * (1 - (25/50)^2)
    assert reception_probability(25.0, CFG) == pytest.approx(0.675)


def test_flat_quality_without_distance_loss():
    flat = MediumConfig(distance_loss=False)
    assert reception_probability(49.0, flat) == pytest.approx(0.9)
    assert reception_probability(50.1, flat) == 0.0


def test_negative_distance_rejected():
    with pytest.raises(ValueError):
        reception_probability(-1.0, CFG)


@given(st.floats(0, 200), st.floats(0, 200), st.floats(0, 1), st.booleans())
def test_reception_non_increasing_and_zero_outside(d1, d2, q, loss):
    cfg = MediumConfig(link_quality=q, distance_loss=loss)
    lo, hi = sorted((d1, d2))
    assert reception_probability(lo, cfg) >= reception_probability(hi, cfg)
    if hi > cfg.tx_range:
        assert reception_probability(hi, cfg) == 0.0


def test_config_validation():
    assert MediumConfig().validate() == []
    errs = MediumConfig(tx_range=60, interference_range=50, link_quality=1.5).validate()
    assert len(errs) == 2


def _brute_neighbors(positions, i, r):
    return {j for j in range(len(positions)) if j != i and math.dist(positions[i], positions[j]) <= r}


def test_single_node_broadcast_has_no_receivers():
    m = Medium([[0, 0]], CFG, random.Random(1))
    tx = m.broadcast(0, 50, 0)
    assert m.resolve(tx) == []


def test_grid_interior_neighbors_match_brute_force():
    pos = grid_positions(50, 20.0).tolist()
    m = Medium(pos, CFG)
    interior = 9  # row 1, column 1 of an 8-column lattice
    expected = _brute_neighbors(pos, interior, 50.0)
    assert set(m.neighbors(interior)) == expected
    # 4-neighbourhood, diagonals at 28.3 m, and the 40 m / 44.7 m ring
    assert {1, 8, 10, 17, 0, 2, 16, 18} <= expected
    for i in range(len(pos)):
        assert set(m.neighbors(i)) == _brute_neighbors(pos, i, 50.0)


def test_random_layout_neighbors_match_brute_force():
    rng = random.Random(7)
    pos = [[rng.uniform(0, 300), rng.uniform(0, 300)] for _ in range(50)]
    m = Medium(pos, CFG)
    for i in range(50):
        assert set(m.neighbors(i)) == _brute_neighbors(pos, i, 50.0)


def test_isolated_node_has_no_neighbors():
    m = Medium([[0, 0], [500, 0]], CFG)
    assert m.neighbors(0) == frozenset()


@given(st.lists(st.tuples(st.floats(0, 120), st.floats(0, 120)), min_size=2, max_size=15))
def test_neighbor_relation_is_symmetric(pts):
    m = Medium(pts, CFG)
    for a in range(len(pts)):
        for b in m.neighbors(a):
            assert a in m.neighbors(b)


def test_simultaneous_senders_collide_at_common_receiver():
    m = Medium([[0, 0], [20, 0], [40, 0]], MediumConfig(link_quality=1.0, distance_loss=False))
    t1 = m.broadcast(0, 50, 0)
    t2 = m.broadcast(2, 50, 0)
    r1 = {o.receiver: o.result for o in m.resolve(t1, random.Random(0))}
    r2 = {o.receiver: o.result for o in m.resolve(t2, random.Random(0))}
    assert r1[1] == Outcome.LOST_COLLISION and r2[1] == Outcome.LOST_COLLISION


@given(st.integers(0, 400), st.integers(1, 120))
def test_collision_symmetry(offset, nbytes):
    m = Medium([[0, 0], [20, 0], [40, 0]], MediumConfig(link_quality=1.0, distance_loss=False))
    a = m.broadcast(0, nbytes, 0)
    b = m.broadcast(2, 60, offset)
    overlap = a.start < b.end and b.start < a.end
    assert m.collided(a, 1) == m.collided(b, 1) == overlap


def test_deterministic_mode_delivery_is_certain():
    m = Medium([[0, 0], [30, 0]], MediumConfig(link_quality=1.0, distance_loss=False, collisions=False))
    rng = random.Random(3)
    for k in range(200):
        tx = m.broadcast(0, 40, k * 10_000)
        assert [o.result for o in m.resolve(tx, rng)] == [Outcome.DELIVERED]


def test_failed_link_has_zero_quality():
    m = Medium([[0, 0], [30, 0]], CFG)
    assert m.link_quality(0, 1) > 0
    m.fail_link(1, 0)
    assert m.link_quality(0, 1) == 0.0
    assert m.live_neighbors(0) == []


def test_airtime_at_250_kbps():
    m = Medium([[0, 0]], CFG)
    assert m.airtime(125) == 4000
