import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from rangewalk.green import build_green_table
from rangewalk.lattice import RngStream, Trajectory, generate_walk, path_from_directions
from rangewalk.scanfold import (
    ball_union_occupation,
    check_no_random,
    deviation_scale,
    deviation_scan_experiment,
    detect_G_event,
    detect_H_event,
    greedy_centers,
    rolling_scan,
    separated,
    slicing_terms,
    verify_inclusion,
    window_counts,
    xi_fold,
)

import oracles


def shuttle(n, d=3):
    """Path going back and forth between 0 and e1."""
    return Trajectory(d, path_from_directions(d, np.array([k % 2 for k in range(n)])))


def serpentine(n, side=6):
    """Boustrophedon path filling a cube, truncated to n steps."""
    pts = []
    for z in range(side):
        ys = range(side) if z % 2 == 0 else range(side - 1, -1, -1)
        for jy, y in enumerate(ys):
            xs = range(side) if (jy + z * side) % 2 == 0 else range(side - 1, -1, -1)
            pts.extend((x, y, z) for x in xs)
    pts = np.array(pts[: n + 1], dtype=np.int64)
    assert np.all(np.abs(np.diff(pts, axis=0)).sum(axis=1) == 1)
    return Trajectory(3, pts)


def line(n, d=3):
    return Trajectory(d, path_from_directions(d, np.zeros(n, dtype=np.int64)))


def test_scan_threshold_zero_gives_every_time():
    traj = generate_walk(RngStream(1), 3, 300)
    assert rolling_scan(traj, (0, 0, 0), 1, 0, 300).times.tolist() == list(range(1, 301))


def test_scan_threshold_above_horizon_empty():
    traj = shuttle(100)
    assert rolling_scan(traj, (0, 0, 0), 2, 101, 100).count == 0


def test_scan_argument_checks():
    with pytest.raises(ValueError):
        rolling_scan(shuttle(10), (0, 0, 0), 0.5, 1)


@pytest.mark.parametrize("j", range(100))
def test_incremental_window_equals_naive_recount(j):
    rng = np.random.default_rng(j)
    traj = generate_walk(RngStream(404).replica(j), 3, 2000)
    v = rng.integers(-2, 3, size=3)
    r = float(rng.choice([1.0, 1.5, 2.0, 3.0]))
    got = window_counts(traj, v, r, 2000)
    want = oracles.window_counts_np(traj.points, v, r, 2000)
    assert np.array_equal(got, want)


def test_pure_python_window_oracle_agrees():
    traj = generate_walk(RngStream(3), 3, 150)
    want = oracles.window_counts(traj.points.tolist(), (1, 0, 0), 2.0, 150)
    assert window_counts(traj, (1, 0, 0), 2.0, 150).tolist() == want


@settings(max_examples=40, deadline=None)
@given(st.integers(0, 10**6), st.integers(20, 400), st.floats(1, 3), st.integers(0, 30), st.integers(0, 30))
def test_scan_monotone_in_n_and_t(seed, n, r, t1, t2):
    traj = generate_walk(RngStream(seed), 3, n)
    lo, hi = sorted((t1, t2))
    assert rolling_scan(traj, (0, 0, 0), r, hi, n).count <= rolling_scan(traj, (0, 0, 0), r, lo, n).count
    assert rolling_scan(traj, (0, 0, 0), r, lo, n // 2).count <= rolling_scan(traj, (0, 0, 0), r, lo, n).count


def test_greedy_empty_when_threshold_never_met():
    traj = generate_walk(RngStream(2), 3, 100)
    fam = greedy_centers(traj, (0, 0, 0), 1, 1000, 5)
    assert len(fam) == 0 and not fam.precondition


def test_greedy_single_cluster():
    traj = shuttle(200)
    fam = greedy_centers(traj, (0, 0, 0), 1, 10, 5)
    assert fam.precondition and len(fam) == 1
    assert ball_union_occupation(traj, fam.centres, 4, 200) >= 5
    assert verify_inclusion(traj, fam, (0, 0, 0), 10, 5).ok


@settings(max_examples=60, deadline=None)
@given(st.integers(0, 10**6), st.integers(50, 800), st.sampled_from([1.0, 1.5, 2.0, 3.0]),
       st.integers(0, 20), st.integers(1, 200), st.tuples(*[st.integers(-2, 2)] * 3))
def test_greedy_family_always_admissible_and_inclusion_holds(seed, n, r, t, L, v):
    traj = generate_walk(RngStream(seed), 3, n)
    fam = greedy_centers(traj, v, r, t, L, n)
    assert separated(fam.centres, r) and fam.admissible()
    if rolling_scan(traj, v, r, t, n).count > L:
        assert fam.precondition
        assert verify_inclusion(traj, fam, v, t, L, n).ok


def test_G_witness_trivial_case():
    traj = generate_walk(RngStream(5), 3, 50)
    assert detect_G_event(traj, 1.0, 0, 1).found


def test_H_impossible_when_L_exceeds_horizon():
    traj = generate_walk(RngStream(5), 3, 50)
    assert not detect_H_event(traj, 1.0, 52, 1).found
    with pytest.raises(ValueError):
        detect_G_event(traj, 1.0, 0, 0)


def test_no_random_inclusion_on_random_instances():
    rng = np.random.default_rng(17)
    checked = 0
    for j in range(500):
        n = int(rng.integers(100, 600))
        traj = generate_walk(RngStream(88).replica(j), 3, n)
        r = float(rng.choice([1.0, 2.0]))
        t = float(rng.integers(1, 15))
        v = rng.integers(-1, 2, size=3)
        scan = rolling_scan(traj, v, r, t, n)
        if scan.count < 2:
            continue
        L = float(rng.integers(1, scan.count))
        rep = check_no_random(traj, v, r, t, L, n)
        assert rep.ok
        checked += 1
    assert checked > 200


@settings(max_examples=30, deadline=None)
@given(st.integers(0, 10**6), st.integers(100, 600), st.integers(2, 4))
def test_witness_monotonicity(seed, n, m):
    traj = generate_walk(RngStream(seed), 3, n)
    r, t = 1.0, 2
    g = detect_G_event(traj, r, t, m)
    if g.found:
        # dropping a centre leaves a witness for m - 1
        sub = g.centres[:-1]
        assert separated(sub, r)
        occ = [ball_union_occupation(traj, c[None, :], r, n) for c in sub]
        assert all(o > t for o in occ)
    h = detect_H_event(traj, r, n // 4, m - 1)
    if h.found:
        far = h.centres[:, :].max() + 100
        bigger = np.concatenate([h.centres, [[far, far, far]]])
        assert separated(bigger, r)
        assert ball_union_occupation(traj, bigger, 4 * r, n) >= n // 4


def test_xi_empty_horizon():
    traj = generate_walk(RngStream(1), 3, 10)
    assert xi_fold(traj, 0, 5, build_green_table(3, 5, 6)).value == 0.0


def test_xi_table_horizon_mismatch():
    traj = generate_walk(RngStream(1), 3, 10)
    with pytest.raises(ValueError):
        xi_fold(traj, 10, 4, build_green_table(3, 5, 6))


@pytest.mark.parametrize("j", range(5))
def test_xi_matches_double_loop(j):
    T, n = 20, 200
    tab = build_green_table(3, T, T + 1)
    green = {tuple(int(c) for c in z - tab.R): float(tab.values[tuple(z)]) for z in np.argwhere(tab.values > 0)}
    traj = generate_walk(RngStream(55).replica(j), 3, n)
    got = xi_fold(traj, n, T, tab).value
    want = oracles.xi_double_loop(traj.points.tolist(), n, T, green)
    assert abs(got - want) <= 1e-9 * want


def test_folded_path_has_larger_xi():
    T, n = 20, 200
    tab = build_green_table(3, T, T + 1)
    assert xi_fold(serpentine(n), n, T, tab).value > xi_fold(line(n), n, T, tab).value


def test_xi_nondecreasing_in_n():
    T = 10
    tab = build_green_table(3, T, T + 1)
    traj = generate_walk(RngStream(4), 3, 300)
    vals = [xi_fold(traj, n, T, tab).value for n in (0, 50, 100, 200, 300)]
    assert vals == sorted(vals) and vals[-1] >= 0


def test_slicing_single_block():
    traj = generate_walk(RngStream(6), 3, 40)
    st_ = slicing_terms(traj, -1, 40)
    assert len(st_.blocks) == 1 and st_.holds and st_.X == []


def test_slicing_bad_offset():
    traj = generate_walk(RngStream(6), 3, 40)
    with pytest.raises(ValueError):
        slicing_terms(traj, 9, 10)
    with pytest.raises(ValueError):
        slicing_terms(traj, 0, 41)


def test_slicing_inequality_every_offset():
    rng = np.random.default_rng(8)
    for j in range(200):
        n = int(rng.integers(20, 80))
        traj = generate_walk(RngStream(99).replica(j), 3, n)
        T = int(rng.integers(2, n // 2))
        for i in range(-1, T - 1):
            s = slicing_terms(traj, i, T, n)
            assert s.holds and s.remainder_within_bound
            assert all(0 <= u <= T for u in s.U)
            assert all(a <= b for a, b in zip(s.X, s.X[1:]))


def test_slicing_on_straight_line_has_small_cross_terms():
    n, T = 2000, 200
    s = slicing_terms(line(n), 0, T, n)
    assert s.X[-1] <= 0.2 * sum(s.U)
    assert s.boundary == n + 1
    assert s.holds


def test_deviation_scale_by_dimension():
    assert deviation_scale(3, 1000, 0.1) == pytest.approx(0.1 ** (2 / 3) * 10)
    assert deviation_scale(5, 1000, 0.1) == pytest.approx(100 ** 0.6)


def test_deviation_unreachable_above_growth_constant():
    fit = deviation_scan_experiment(3, [500], [0.7], 10, RngStream(1), nu=0.65)
    assert fit.points == [] and fit.unreachable and "probability 0" in fit.unreachable[0][2]
