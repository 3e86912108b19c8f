import csv
import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from rangewalk.acceptance import capacity_corpus
from rangewalk.capacity import (
    ball_family,
    ball_occupations,
    capacity_dirichlet,
    capacity_mc,
    check_capacity_tail_bound,
    green_origin_bracket,
    green_upper_many,
    in_family,
    iso_index,
    write_capacity_csv,
)
from rangewalk.green import ResourceCapError, green_upper
from rangewalk.lattice import PointSet, RngStream, euclidean_ball, generate_walk

import oracles

O = (0, 0, 0)
G0 = oracles.green_origin_bessel(3)


def _bessel_green(z):
    from scipy import integrate, special

    f = lambda t: np.prod([special.ive(abs(c), t / 3) for c in z])  # noqa: E731
    return integrate.quad(f, 0, np.inf, limit=1000, epsabs=1e-13)[0]


def test_origin_capacity_dirichlet():
    br = capacity_dirichlet(PointSet.of(3, [O]), R=64)
    assert br.contains(1 / G0)
    assert br.contains(0.6595)
    assert br.width < 0.01


def test_origin_capacity_monte_carlo_brackets_oracle():
    br = capacity_mc(PointSet.of(3, [O]), M=20_000, stream=RngStream(12))
    assert br.contains(1 / G0)
    assert br.upper <= 1.0


def test_index_of_singleton_is_capacity():
    rep = iso_index(PointSet.of(3, [O]), R=32)
    assert rep.lower == rep.capacity.lower and rep.upper == rep.capacity.upper


def test_pair_capacity_matches_equilibrium_formula():
    # for two points the equilibrium charge is symmetric: cap = 2 / (G(0) + G(x - y))
    pair = PointSet.of(3, [(-2, 0, 0), (2, 0, 0)])
    exact = 2.0 / (G0 + _bessel_green((4, 0, 0)))
    br = capacity_dirichlet(pair, R=40)
    assert br.contains(exact)


def test_far_pair_is_twice_the_point():
    g_lo, g_hi = green_origin_bracket(3)
    far = green_upper(3, (1000, 0, 0))
    lo, hi = 2.0 / (g_hi + far), 2.0 / g_lo
    cap0 = 1.0 / G0
    assert abs(lo / (2 * cap0) - 1) < 0.01 and abs(hi / (2 * cap0) - 1) < 0.01


def test_bracket_shrinks_with_truncation_radius():
    w1 = capacity_dirichlet(PointSet.of(3, [O]), R=16).width
    w2 = capacity_dirichlet(PointSet.of(3, [O]), R=32).width
    assert w2 / w1 <= 2.0 ** (-(3 - 2)) * 1.5


def test_ball_radius_eight_methods_overlap():
    ball = euclidean_ball(O, 8)
    dr = capacity_dirichlet(ball)
    mc = capacity_mc(ball, M=100, stream=RngStream(4))
    assert dr.overlaps(mc)


def test_truncation_radius_precondition():
    with pytest.raises(ValueError):
        capacity_dirichlet(euclidean_ball(O, 4), R=10)
    with pytest.raises(ValueError):
        capacity_dirichlet(PointSet(3))


def test_dirichlet_memory_guard():
    with pytest.raises(ResourceCapError):
        capacity_dirichlet(PointSet.of(3, [O]), R=400, memory_cap=10**8)


small_sets = st.lists(st.tuples(*[st.integers(-2, 2)] * 3), min_size=1, max_size=15).map(lambda p: PointSet.of(3, p))


@settings(max_examples=25, deadline=None)
@given(small_sets)
def test_bracket_ordered_and_below_volume(lam):
    br = capacity_dirichlet(lam, R=16)
    assert 0 <= br.lower <= br.upper <= len(lam)
    rep = iso_index(lam, R=16)
    assert rep.within_bounds
    scale = len(lam) ** (1 / 3)
    assert rep.lower == pytest.approx(br.lower / scale) and rep.upper == pytest.approx(br.upper / scale)


@settings(max_examples=15, deadline=None)
@given(small_sets, small_sets)
def test_subadditivity_within_brackets(a, b):
    u = capacity_dirichlet(a | b, R=16)
    assert u.lower <= capacity_dirichlet(a, R=16).upper + capacity_dirichlet(b, R=16).upper


def test_monotone_on_nested_balls():
    brs = [capacity_dirichlet(euclidean_ball(O, r), R=24) for r in (1, 2, 3, 5)]
    for small, big in zip(brs, brs[1:]):
        assert small.lower <= big.upper


def test_corpus_lower_constant_positive_and_stable():
    corpus = list(capacity_corpus().values())
    ratios = [capacity_dirichlet(lam).lower / len(lam) ** (1 / 3) for lam in corpus]
    half, full = min(ratios[:10]), min(ratios)
    assert full > 0
    assert full >= 0.5 * half


def test_index_of_walk_range_grows():
    mids, brackets = [], []
    for n in (100, 400, 1600):
        pts = generate_walk(RngStream(3), 3, n).points
        centre = np.round((pts.max(0) + pts.min(0)) / 2).astype(np.int64)
        lam = PointSet.from_array(pts - centre)
        R = 2 * math.ceil(lam.radius()) + 4
        rep = iso_index(lam, R=R, check_radius=False)
        brackets.append((rep.lower, rep.upper))
        mids.append(0.5 * (rep.lower + rep.upper))
    assert mids[0] < mids[1] < mids[2]
    assert brackets[2][0] > brackets[0][1]


def test_ball_family_and_admissibility():
    fam = ball_family([(0, 0, 0), (10, 0, 0)], 1)
    assert len(fam) == 14
    assert in_family([(0, 0, 0), (8, 0, 0)], 2)
    assert not in_family([(0, 0, 0), (7, 0, 0)], 2)


def test_ball_occupations_match_direct_count():
    centres = np.array([(0, 0, 0), (3, 0, 0)])
    occ = ball_occupations(RngStream(5), 3, 200, centres, 1.5, replicas=30)
    # replay the same walks (ball_occupations draws int8 directions per chunk)
    dirs = RngStream(5).child(0).generator().integers(0, 6, size=(30, 200), dtype=np.int8)
    for w in range(30):
        pts = np.array(oracles.walk_points(dirs[w].tolist(), 3))
        for c, x in enumerate(centres):
            assert occ[w, c] == int((((pts - x) ** 2).sum(axis=1) <= 2.25 + 1e-9).sum())


def test_single_ball_tail_log_linear():
    r, n = 2.0, 3000
    occ = ball_occupations(RngStream(8), 3, n, np.zeros((1, 3), dtype=np.int64), r, replicas=20_000)[:, 0]
    vol = len(euclidean_ball(O, r))
    ts = np.arange(10, 70, 6)
    freq = np.array([(occ >= t).mean() for t in ts])
    keep = freq > 0
    x = ts[keep] / vol ** (2 / 3)
    y = np.log(freq[keep])
    slope, icpt = np.polyfit(x, y, 1)
    r2 = 1 - ((y - slope * x - icpt) ** 2).sum() / ((y - y.mean()) ** 2).sum()
    assert slope < 0 and r2 > 0.95


def test_capacity_tail_report_trivial_cases():
    rep = check_capacity_tail_bound([(0, 0, 0)], 1.0, t=500, n=200, replicas=200, stream=RngStream(2))
    assert rep.lhs == 0.0
    rep = check_capacity_tail_bound([(0, 0, 0), (20, 0, 0)], 2.0, t=5, n=400, replicas=500, stream=RngStream(3))
    assert 0.0 <= rep.lhs <= rep.lhs_upper <= 1.0
    assert rep.family_size == 2


def test_green_upper_bounds_dominate_bessel_values():
    dist = np.array([1.0, 3.0, 17.0])
    vec = green_upper_many(3, dist)
    for v, r in zip(vec, dist):
        g = _bessel_green((int(r), 0, 0))
        assert v >= g and green_upper(3, (r, 0, 0)) >= g


def test_capacity_csv(tmp_path):
    lam = PointSet.of(3, [O])
    br = capacity_dirichlet(lam, R=16, set_id="origin")
    path = tmp_path / "cap.csv"
    write_capacity_csv(path, [(br, iso_index(lam, R=16, set_id="origin"))])
    rows = list(csv.DictReader(open(path)))
    assert rows[0]["set_id"] == "origin" and rows[0]["method"] == "dirichlet"
    assert float(rows[0]["lower"]) == pytest.approx(br.lower)
