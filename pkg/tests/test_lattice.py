import itertools

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st
from scipy import stats

from rangewalk.lattice import (
    PointSet,
    RngStream,
    ball_offsets,
    cube,
    cube_anchor,
    euclidean_ball,
    generate_walk,
    unit_neighbors,
    unit_steps,
)

import oracles


def test_unit_neighbors_origin_d3():
    nb = unit_neighbors((0, 0, 0))
    assert nb == [(1, 0, 0), (-1, 0, 0), (0, 1, 0), (0, -1, 0), (0, 0, 1), (0, 0, -1)]


def test_unit_neighbors_count_d5():
    assert len(unit_neighbors((0,) * 5)) == 10


def test_unit_neighbors_of_e1():
    nb = unit_neighbors((1, 0, 0))
    assert (0, 0, 0) in nb and (2, 0, 0) in nb


def test_dimension_below_three_rejected():
    with pytest.raises(ValueError):
        unit_neighbors((0, 0))


def test_empty_walk():
    traj = generate_walk(RngStream(1), 3, 0)
    assert traj.points.tolist() == [[0, 0, 0]]


@pytest.mark.parametrize("d", [3, 4, 5, 6])
def test_steps_have_unit_length(d):
    traj = generate_walk(RngStream(5), d, 5000)
    assert np.all(np.abs(np.diff(traj.points, axis=0)).sum(axis=1) == 1)
    assert traj.is_valid()


def test_same_stream_same_walk():
    a = generate_walk(RngStream(9, 3, (1, 2)), 3, 1000)
    b = generate_walk(RngStream(9, 3, (1, 2)), 3, 1000)
    assert a.points.tobytes() == b.points.tobytes()


def test_distinct_streams_differ():
    a = generate_walk(RngStream(9).replica(0), 3, 1000)
    b = generate_walk(RngStream(9).replica(1), 3, 1000)
    c = generate_walk(RngStream(9).child(0), 3, 1000)
    assert not np.array_equal(a.points, b.points)
    assert not np.array_equal(a.points, c.points)


def test_step_frequencies_chi_square():
    traj = generate_walk(RngStream(2024), 3, 10**6)
    steps = np.diff(traj.points, axis=0)
    code = np.argmax(np.abs(steps), axis=1) * 2 + (steps.sum(axis=1) < 0)
    counts = np.bincount(code, minlength=6)
    assert stats.chisquare(counts).pvalue > 0.01


def test_unit_ball_has_seven_points():
    assert len(euclidean_ball((0, 0, 0), 1)) == 7


def test_zero_radius_ball():
    assert euclidean_ball((2, -1, 5), 0).elements == frozenset({(2, -1, 5)})


def test_ball_radius_one_and_half_matches_enumeration():
    ball = euclidean_ball((0, 0, 0), 1.5)
    assert len(ball) == 19
    assert ball.elements == frozenset(oracles.ball_offsets(3, 1.5))


@settings(max_examples=30, deadline=None)
@given(r=st.floats(0, 4.5), perm=st.permutations([0, 1, 2]), signs=st.tuples(*[st.sampled_from([1, -1])] * 3))
def test_ball_octahedral_symmetry(r, perm, signs):
    ball = euclidean_ball((0, 0, 0), r)
    image = PointSet.of(3, [tuple(signs[i] * p[perm[i]] for i in range(3)) for p in ball])
    assert image == ball


def test_ball_offsets_sorted_by_norm():
    pts = ball_offsets(3, 3.0)
    sq = (pts**2).sum(axis=1)
    assert np.all(np.diff(sq) >= 0)


def test_cube_half_open():
    c = cube((0, 0, 0), 1)
    assert len(c) == 8
    assert (1, 1, 1) in c and (-1, 0, 0) not in c


@settings(max_examples=50, deadline=None)
@given(z=st.lists(st.integers(-50, 50), min_size=3, max_size=3), r=st.integers(1, 6))
def test_cube_anchor_contains_point(z, r):
    x = cube_anchor(np.array(z), r)
    assert np.all(x % (2 * r) == 0)
    assert tuple(z) in cube(x, r)


def test_unit_steps_order():
    assert [tuple(e) for e in unit_steps(3)] == oracles.steps(3)


def test_pointset_algebra():
    a = PointSet.of(3, [(0, 0, 0), (1, 0, 0)])
    b = PointSet.of(3, [(1, 0, 0), (2, 0, 0)])
    assert len(a | b) == 3 and len(a & b) == 1 and len(a - b) == 1
    with pytest.raises(ValueError):
        a | PointSet.of(4, [(0, 0, 0, 0)])


def test_pointset_radius_and_diameter():
    s = PointSet.of(3, [p for p in itertools.product((0, 3), repeat=3)])
    assert s.radius() == pytest.approx(np.sqrt(27))
    assert s.diameter() == pytest.approx(np.sqrt(27))
