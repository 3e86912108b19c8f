import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from rangewalk.geometry import inner_boundary, range_of
from rangewalk.lattice import RngStream, Trajectory, euclidean_ball, generate_walk
from rangewalk.polymer import (
    NEVER,
    BallKernel,
    BudgetExhausted,
    ConfinedSampler,
    PolymerChain,
    boustrophedon_path,
    check_excursion_occupation,
    confined_strategy_cost,
    confinement_probability,
    confinement_scaling,
    covering_experiment,
    enumerate_boundaries,
    excursion_hits,
    excursions,
    free_energy_curve,
    integrated_autocorr,
    max_ball_occupation,
    mean_boundary_direct,
    polymer_mcmc,
    r_n_rule,
    sample_confined,
    tiny_instance_check,
    weighted_log_prob,
)

import oracles


def along_x(xs):
    """Path through the integer points between consecutive x-coordinates."""
    pts = [0]
    for x in xs:
        step = 1 if x > pts[-1] else -1
        pts.extend(range(pts[-1] + step, x + step, step))
    return Trajectory(3, np.array([[p, 0, 0] for p in pts], dtype=np.int64))


def shuttle_fixture(depths):
    xs = []
    for depth in depths:
        xs += [depth, 0]
    return along_x(xs)


@pytest.mark.parametrize("depths", [[4], [4, 5, 7], [6, 4, 4, 9, 5]])
def test_shuttling_count_exact(depths):
    traj = shuttle_fixture(depths)
    dec = excursions(traj, (0, 0, 0), 1, 3)
    assert dec.N == len(depths)
    dec.check(traj)
    back = Trajectory(3, traj.points[::-1].copy())
    rev = excursions(back, (0, 0, 0), 1, 3)
    assert rev.N == dec.N
    rev.check(back)


def test_never_leaving_inner_ball():
    traj = along_x([1, 0, 1, 0])
    dec = excursions(traj, (0, 0, 0), 1, 3)
    assert dec.tau == [NEVER] and dec.N == 0
    assert dec.durations() == [traj.n + 1]


def test_shell_mode_stops_on_inner_boundary():
    traj = shuttle_fixture([5, 5])
    dec = excursions(traj, (0, 0, 0), 1, 2, mode="shell")
    assert [traj.points[t, 0] for t in dec.tau if t != NEVER] == [2, 2]


def test_excursion_argument_checks():
    traj = along_x([3])
    with pytest.raises(ValueError):
        excursions(traj, (0, 0, 0), 3, 2)
    with pytest.raises(ValueError):
        excursions(traj, (0, 0, 0), 1, 2, mode="bogus")


@settings(max_examples=60, deadline=None)
@given(st.integers(0, 10**6), st.integers(10, 600), st.sampled_from([1.0, 2.0, 3.0]),
       st.sampled_from(["exit", "shell"]))
def test_excursion_invariants_on_random_walks(seed, n, r, mode):
    traj = generate_walk(RngStream(seed), 3, n)
    dec = excursions(traj, (0, 0, 0), r, 2 * r, mode=mode)
    dec.check(traj)
    assert dec.N == sum(1 for s in dec.sigma if s <= n) - 1
    # visits to the inner ball all fall inside excursion windows
    occ = int((((traj.points) ** 2).sum(axis=1) <= r * r + 1e-9).sum())
    assert occ <= sum(dec.durations())


def test_excursion_occupation_report():
    rep = check_excursion_occupation(RngStream(3), 3, [(0, 0, 0)], 2.0, [5, 10, 20, 10**6], 500, replicas=300)
    assert rep.bound_violations == 0
    assert rep.frequencies[-1] == 0.0
    assert all(a >= b for a, b in zip(rep.frequencies, rep.frequencies[1:]))


@pytest.mark.parametrize("n,rho", [(10, 2.0), (30, 3.0), (60, 4.5)])
def test_confinement_probability_matches_monte_carlo(n, rho):
    exact = math.exp(confinement_probability(3, n, rho))
    mc, se = oracles.confinement_mc(3, n, rho, 100_000, seed=n)
    assert abs(exact - mc) <= 4 * se + 1e-12


def test_confinement_tiny_cases():
    assert confinement_probability(3, 0, 0.0) == 0.0
    assert confinement_probability(3, 1, 0.0) == -math.inf or confinement_probability(3, 1, 0.0) < -700
    assert confinement_probability(3, 5, 10.0) == pytest.approx(0.0, abs=1e-12)


def test_eigenvalue_extrapolation_close_to_exact():
    ker = BallKernel.build(3, 5.0)
    full = ker.log_survival(2000)
    extrap = ker.log_survival(2000, exact_steps=400)
    assert extrap == pytest.approx(full, rel=1e-6)
    lam, phi = ker.eigen()
    assert full / 2000 == pytest.approx(math.log(lam), rel=0.02)
    assert np.all(phi > 0)


def test_confinement_scaling_linear():
    sc = confinement_scaling(3, [400, 800, 1600], [4, 6, 8], exact_steps=None)
    assert sc.slope < 0 and sc.r2 > 0.95


def test_ground_state_sampler_weights_unbiased():
    # E_Q[w] = P[R_T in the ball], computed exactly by the killed kernel
    d, rho, T = 3, 3.0, 40
    ws = ConfinedSampler(d, rho).sample(RngStream(2), T, T, 4000)
    lp, se = weighted_log_prob(ws.log_weights, np.ones(len(ws.log_weights), dtype=bool))
    assert abs(lp - confinement_probability(d, T, rho)) <= 4 * se
    ball = len(euclidean_ball((0, 0, 0), rho))
    assert np.all(ws.range_size <= ball)


def test_ground_state_paths_stay_inside():
    sampler = ConfinedSampler(3, 4.0)
    for j in range(20):
        traj, _ = sampler.path(RngStream(7).replica(j), 100, 150)
        assert np.all((traj.points[:101] ** 2).sum(axis=1) <= 16)
        assert traj.is_valid()


def test_rejection_sampling_loose_constraint():
    run = sample_confined(RngStream(1), 3, 50, 60.0, samples=20)
    assert run.acceptance == 1.0 and len(run.trajectories) == 20


def test_rejection_budget_and_guard():
    with pytest.raises(BudgetExhausted):
        sample_confined(RngStream(1), 3, 100, 5.1, samples=5, max_attempts=3)
    with pytest.raises(ValueError):
        sample_confined(RngStream(1), 3, 400, 3.0)


@pytest.mark.parametrize("method,n,rho", [("rejection", 60, 5.0), ("path-mcmc", 400, 3.0)])
def test_confined_samples_respect_ball(method, n, rho):
    run = sample_confined(RngStream(5), 3, n, rho, method=method, samples=10)
    ball = len(euclidean_ball((0, 0, 0), rho))
    for traj in run.trajectories:
        assert np.all((traj.points**2).sum(axis=1) <= rho * rho + 1e-9)
        assert len(inner_boundary(range_of(traj, 0, n))) <= ball


def test_boustrophedon_stays_inside_and_is_nearest_neighbour():
    for rho in (0.5, 1.0, 2.0, 3.5, 7.0):
        pts = boustrophedon_path(3, 300, rho)
        assert np.all((pts**2).sum(axis=1) <= rho * rho + 1e-9)
        if rho >= 1:
            assert np.all(np.abs(np.diff(pts, axis=0)).sum(axis=1) == 1)


def test_covering_experiment_shell_fixture():
    n, eps = 10_000, 0.1
    rho = 0.25 * (n / eps) ** (1 / 3)
    shell = euclidean_ball((0, 0, 0), rho) - euclidean_ball((0, 0, 0), rho - 2)
    rep = covering_experiment(RngStream(9), n, eps, shell, replicas=60, c=0.25)
    assert rep.x_sums_ok
    assert rep.conditional_freq > rep.free_freq


def test_covering_precondition_refused():
    big = euclidean_ball((0, 0, 0), 30)
    with pytest.raises(ValueError):
        covering_experiment(RngStream(1), 1000, 0.1, big, replicas=2, c=0.25)


def test_covering_tiny_eps_always_hit():
    # eps |L| < 1, so the visited origin alone is enough
    lam = euclidean_ball((0, 0, 0), 3)
    rep = covering_experiment(RngStream(2), 200, 0.004, lam, replicas=20, c=1.0, C=1e-9, confine_factor=1.0)
    assert rep.free_freq == 1.0 and rep.conditional_freq == pytest.approx(1.0)


def test_excursion_hits_sum_below_cover():
    lam = euclidean_ball((0, 0, 0), 4)
    for j in range(10):
        traj = generate_walk(RngStream(4).replica(j), 3, 2000)
        X = excursion_hits(traj, lam, 2.0, 2000)
        cover = len(range_of(traj, 0, 2000) & lam)
        assert sum(X) <= cover <= len(lam)


def test_boundary_enumeration_matches_oracle():
    bnd = enumerate_boundaries(3, 4)
    got = dict(zip(*np.unique(bnd, return_counts=True)))
    want = oracles.boundary_distribution(3, 4)
    assert {int(k): int(v) for k, v in got.items()} == want


def test_tiny_chain_matches_gibbs_weights():
    chk = tiny_instance_check(RngStream(6), n=4, beta=2.0, proposals=10**7)
    assert chk.tv <= 0.02


def test_chain_cache_consistent_with_recomputation():
    rng = np.random.default_rng(0)
    chain = PolymerChain(3, 120, 3.0, 0.0)
    chain.set_state(rng.integers(0, 6, size=120))
    for _ in range(20):
        chain.run(rng, 50)
        traj = Trajectory(3, chain.positions())
        assert chain.cur_b == len(inner_boundary(range_of(traj, 0, 120)))
        assert chain.cur_r == len(range_of(traj, 0, 120))
        assert chain.energy() == pytest.approx(3.0 / 120 ** (2 / 3) * chain.cur_b)


def test_confined_chain_rejects_bad_start():
    chain = PolymerChain(3, 10, 0.0, 0.0, rho=2.0)
    with pytest.raises(ValueError):
        chain.set_state(np.zeros(10, dtype=np.int64))


def test_beta_zero_chain_reproduces_plain_walk():
    n = 200
    mu, mu_se = mean_boundary_direct(3, n, 3000, RngStream(1))
    ens = polymer_mcmc(RngStream(2), 3, n, 0.0, 3000, mu)
    m, s = ens.mean_se(ens.boundary)
    assert abs(m - mu) <= 2 * math.sqrt(s**2 + mu_se**2)
    assert ens.acceptance == 1.0


def test_free_energy_curve_properties():
    n = 128
    mu, _ = mean_boundary_direct(3, n, 1000, RngStream(3))
    ens = [polymer_mcmc(RngStream(4).child(j), 3, n, b, 1500, mu) for j, b in enumerate((0.0, 2.0, 6.0, 16.0))]
    curve = free_energy_curve(ens)
    assert curve.log_z[0] == 0.0
    assert curve.monotone_energy and curve.monotone_curve
    assert curve.mean_energy[-1] > curve.mean_energy[0]
    assert np.all(curve.log_z >= -1.96 * curve.log_z_se - 1e-12)
    means = [e.boundary.mean() for e in sorted(ens, key=lambda e: e.beta)]
    assert means[-1] < means[0]


def test_free_energy_curve_needs_zero_knot():
    ens = polymer_mcmc(RngStream(1), 3, 64, 1.0, 200, 0.0)
    with pytest.raises(ValueError):
        free_energy_curve([ens])


def test_integrated_autocorr():
    rng = np.random.default_rng(1)
    assert integrated_autocorr(rng.normal(size=20000)) == pytest.approx(1.0, abs=0.15)
    x = np.zeros(50000)
    e = rng.normal(size=50000)
    for i in range(1, len(x)):
        x[i] = 0.9 * x[i - 1] + e[i]
    assert integrated_autocorr(x) == pytest.approx(19.0, rel=0.2)


def test_max_ball_occupation_by_brute_force():
    traj = generate_walk(RngStream(12), 3, 300)
    pts = traj.points
    r = 2.0
    off = np.array(oracles.ball_offsets(3, r))
    cands = {tuple(p + o) for p in pts for o in off}
    brute = max(int((((pts - np.array(c)) ** 2).sum(axis=1) <= r * r + 1e-9).sum()) for c in cands)
    assert max_ball_occupation(pts, r) == brute


def test_r_n_rule():
    n = 10_000
    assert r_n_rule(3, n) == pytest.approx((n / math.log(n)) ** (1 / 3))
    assert r_n_rule(3, n, "lower") > r_n_rule(3, n, "upper")
    assert r_n_rule(3, n, 4.5) == 4.5
    with pytest.raises(ValueError):
        r_n_rule(3, n, "middle")


def test_strategy_cost_finite_and_positive():
    best = confined_strategy_cost(3, 1000, 0.1, 100, RngStream(3))
    assert best is not None
    cost, se, strat = best
    assert cost > 0 and np.isfinite(se) and strat["T"] == 1000
