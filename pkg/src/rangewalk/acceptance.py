"""Desk-scale acceptance experiments.

Each ``criterion_*`` function runs one experiment and returns the measured
quantities together with its pass/fail verdict.  The thresholds live in
``THRESHOLDS`` so callers (CLI, tests) see exactly what is compared.
"""

from __future__ import annotations

import itertools
import math
import time
from dataclasses import dataclass, field

import numpy as np

from rangewalk.capacity import capacity_discrimination, capacity_dirichlet, capacity_mc, iso_index
from rangewalk.geometry import (
    check_boundary_bounds,
    check_dilation_bound,
    check_inclusion_exclusion,
    check_superadditivity,
    estimate_mean_boundary,
    range_of,
)
from rangewalk.green import build_green_table
from rangewalk.lattice import PointSet, RngStream, Trajectory, ball_offsets, euclidean_ball, generate_walk, path_from_directions
from rangewalk.polymer import (
    confinement_scaling,
    free_energy_curve,
    mean_boundary_direct,
    polymer_mcmc,
    tiny_instance_check,
)
from rangewalk.scanfold import (
    deviation_scan_experiment,
    greedy_centers,
    rolling_scan,
    slicing_terms,
    verify_inclusion,
    xi_fold,
)

THRESHOLDS = {
    "identity_violations": 0,
    "identity_instances": 10_000,
    "green_rel_tol": 1e-9,
    "cap0_target": 0.6595,
    "cap0_halfwidth": 0.002,
    "ball_index_spread": 0.15,
    "inclusion_instances": 1000,
    "xi_rel_tol": 1e-9,
    "confinement_r2": 0.95,
    "confinement_half_spread": 0.20,
    "deviation_r2": 0.9,
    "drift_slope": -0.5,
    "drift_slope_tol": 0.15,
    "tiny_tv": 0.02,
    "z_one_sided": 1.645,
    "discrimination_replicas": 10_000,
}


@dataclass
class CriterionResult:
    number: int
    name: str
    passed: bool
    metrics: dict = field(default_factory=dict)
    elapsed: float = 0.0

    def line(self) -> str:
        return f"criterion {self.number:2d} [{'PASS' if self.passed else 'FAIL'}] {self.name} ({self.elapsed:.1f}s)"


def _timed(number: int, name: str, fn) -> CriterionResult:
    t0 = time.perf_counter()
    passed, metrics = fn()
    return CriterionResult(number, name, bool(passed), metrics, time.perf_counter() - t0)


# ---------------------------------------------------------------------------
# 1. exact identities


def _random_cloud(rng: np.random.Generator, d: int) -> PointSet:
    side = int(rng.integers(2, 7))
    k = int(rng.integers(1, side**d // 2 + 2))
    pts = rng.integers(0, side, size=(k, d)) + rng.integers(-3, 4, size=d)
    return PointSet.from_array(pts)


def identity_instance(stream: RngStream, d: int = 3) -> dict:
    """One randomized instance of every exact identity; returns a violation flag per identity."""
    rng = stream.generator()
    n = int(rng.integers(20, 90))
    traj = generate_walk(stream.child(0), d, n)
    if rng.random() < 0.5:
        a, b = sorted(rng.integers(0, n + 1, size=2))
        c, e = sorted(rng.integers(0, n + 1, size=2))
        l1, l2 = range_of(traj, int(a), int(b)), range_of(traj, int(c), int(e))
    else:
        l1, l2 = _random_cloud(rng, d), _random_cloud(rng, d)
    cuts = np.sort(rng.choice(np.arange(1, n), size=int(rng.integers(1, 4)), replace=False))
    edges = [0, *cuts.tolist(), n]
    slices = [range_of(traj, edges[j] + (j > 0), edges[j + 1]) for j in range(len(edges) - 1)]
    T = int(rng.integers(2, max(3, n // 2)))
    i = int(rng.integers(-1, T - 1))
    dil = check_dilation_bound(l1, l2)
    return {
        "inclusion-exclusion": not check_inclusion_exclusion(l1, l2).ok,
        "boundary-union-bounds": not check_boundary_bounds(l1, l2).ok,
        "superadditivity": not check_superadditivity(slices).ok,
        "dilation-2d": not dil.ok,
        "dilation-2d+1": not dil.ok_counting,
        "slicing-lower-bound": not slicing_terms(traj, i, T, n).holds,
    }


IDENTITY_KEYS = ["inclusion-exclusion", "boundary-union-bounds", "superadditivity", "dilation-2d", "dilation-2d+1", "slicing-lower-bound"]


def criterion_1(stream: RngStream, instances: int = 10_000, d: int = 3) -> CriterionResult:
    """All identities over random instances.

    The dilation inequality is counted with the constant 2d as stated and with
    2d + 1; the single-point pair L = G = {0} is reported separately since it
    gives |L^+ & G^+| = 2d + 1 against |L^{++} & G| = 1.
    """
    def run():
        counts = dict.fromkeys(IDENTITY_KEYS, 0)
        for j in range(instances):
            for k, bad in identity_instance(stream.replica(j), d).items():
                counts[k] += int(bad)
        origin = PointSet.of(d, [(0,) * d])
        ce = check_dilation_bound(origin, origin)
        total = sum(counts.values()) + int(not ce.ok)
        return total == THRESHOLDS["identity_violations"] and instances >= THRESHOLDS["identity_instances"], {
            "instances": instances, "violations": counts,
            "single_point_pair": {"lhs": ce.lhs, "overlap": ce.overlap, "holds_2d": ce.ok,
                                  "holds_2d+1": ce.ok_counting}}
    return _timed(1, "exact-identity suite", run)


# ---------------------------------------------------------------------------
# 2. Green tables


def brute_force_green(d: int, T: int) -> dict[tuple, float]:
    """G_T(z) by enumerating all (2d)^T step sequences explicitly."""
    steps = np.concatenate([np.eye(d, dtype=np.int8), -np.eye(d, dtype=np.int8)])
    seqs = np.array(list(itertools.product(range(2 * d), repeat=T)), dtype=np.int8).reshape(-1, T)
    pos = np.zeros((len(seqs), T + 1, d), dtype=np.int8)
    pos[:, 1:] = np.cumsum(steps[seqs], axis=1)
    side = 2 * T + 1
    flat = ((pos.astype(np.int64) + T) * side ** np.arange(d)).sum(axis=2).ravel()
    counts = np.bincount(flat, minlength=side**d)
    total = (2 * d) ** T
    out = {}
    for code in np.nonzero(counts)[0]:
        z = tuple(int(code // side**i % side) - T for i in range(d))
        out[z] = counts[code] / total
    return out


def criterion_2(brute_T: int = 8, norm_T=(8, 64, 512, 4096), norm_R: int = 24) -> CriterionResult:
    def run():
        worst_oracle = 0.0
        for T in range(1, brute_T + 1):
            tab = build_green_table(3, T, T + 1)
            bf = brute_force_green(3, T)
            vals = tab.values
            support = {tuple(int(c) for c in z - tab.R) for z in np.argwhere(vals > 0)}
            if support != set(bf):
                worst_oracle = float("inf")
                break
            for z, g in bf.items():
                worst_oracle = max(worst_oracle, abs(tab(z) - g) / g)
        worst_norm = 0.0
        for T in norm_T:
            tab = build_green_table(3, T, min(norm_R, T + 1))
            worst_norm = max(worst_norm, abs(tab.total() - (T + 1)) / (T + 1))
        ok = worst_oracle <= 1e-12 and worst_norm <= THRESHOLDS["green_rel_tol"]
        return ok, {"oracle_max_rel": worst_oracle, "normalisation_max_rel": worst_norm,
                    "brute_T": brute_T, "norm_T": list(norm_T)}
    return _timed(2, "Green oracle and normalisation", run)


# ---------------------------------------------------------------------------
# 3. capacity


def capacity_corpus(d: int = 3) -> dict[str, PointSet]:
    """Twenty small sets of varied shape."""
    e = np.eye(d, dtype=np.int64)
    sets: dict[str, PointSet] = {}
    sets["point"] = PointSet.of(d, [(0,) * d])
    sets["pair-adj"] = PointSet.of(d, [(0,) * d, tuple(e[0])])
    sets["pair-diag"] = PointSet.of(d, [(0,) * d, tuple(e[0] + e[1])])
    sets["pair-far"] = PointSet.of(d, [(0,) * d, tuple(4 * e[0])])
    for L in (3, 6, 10):
        sets[f"segment-{L}"] = PointSet.of(d, [tuple(k * e[0]) for k in range(L)])
    sets["square-3"] = PointSet.of(d, [tuple(a * e[0] + b * e[1]) for a in range(3) for b in range(3)])
    sets["cube-2"] = PointSet.of(d, [tuple(p) for p in itertools.product(range(2), repeat=d)])
    sets["cube-3"] = PointSet.of(d, [tuple(p) for p in itertools.product(range(3), repeat=d)])
    sets["L-shape"] = PointSet.of(d, [tuple(k * e[0]) for k in range(4)] + [tuple(k * e[1]) for k in range(1, 4)])
    sets["cross-2"] = PointSet.of(d, [(0,) * d] + [tuple(s * e[i]) for i in range(d) for s in (1, 2, -1, -2)])
    for r in (1.0, 2.0, 3.0):
        sets[f"ball-{r:g}"] = euclidean_ball((0,) * d, r)
    sets["shell-3"] = PointSet.of(d, [tuple(p) for p in ball_offsets(d, 3.0) if np.sum(p**2) > 4])
    sets["ring"] = PointSet.of(d, [p for p in sets["square-3"] if p != tuple(e[0] + e[1])])
    rs = RngStream(20240601, path=(3,))
    for j, n in enumerate((15, 40, 80)):
        sets[f"walk-{n}"] = PointSet.from_array(generate_walk(rs.child(j), d, n).points)
    return sets


def criterion_3(stream: RngStream, mc_walks: int = 1000, ball_radii=(4, 8, 16)) -> CriterionResult:
    def run():
        corpus = capacity_corpus()
        rows, overlaps = [], 0
        for j, (name, lam) in enumerate(corpus.items()):
            dr = capacity_dirichlet(lam, set_id=name)
            mc = capacity_mc(lam, M=mc_walks, stream=stream.child(j), set_id=name)
            ov = dr.overlaps(mc)
            overlaps += int(ov)
            rows.append({"set": name, "volume": len(lam), "dirichlet": [dr.lower, dr.upper],
                         "monte_carlo": [mc.lower, mc.upper], "overlap": bool(ov)})
        c0 = capacity_dirichlet(PointSet.of(3, [(0, 0, 0)]), R=64, set_id="origin")
        target, hw = THRESHOLDS["cap0_target"], THRESHOLDS["cap0_halfwidth"]
        cap0_ok = c0.contains(target) and c0.lower <= target + hw and c0.upper >= target - hw
        mids = []
        for r in ball_radii:
            rep = iso_index(euclidean_ball((0, 0, 0), r), method="dirichlet", set_id=f"ball-{r}", R=6 * r)
            mids.append(0.5 * (rep.lower + rep.upper))
        spread = max(mids) / min(mids) - 1.0
        ok = overlaps == len(corpus) == 20 and cap0_ok and spread <= THRESHOLDS["ball_index_spread"]
        return ok, {"corpus_overlaps": overlaps, "corpus_size": len(corpus), "rows": rows,
                    "cap0": [c0.lower, c0.upper], "ball_index_mid": mids, "ball_index_spread": spread}
    return _timed(3, "capacity cross-method", run)


# ---------------------------------------------------------------------------
# 4. greedy centres


def inclusion_instance(rng: np.random.Generator, stream: RngStream, d: int = 3):
    n = int(rng.integers(200, 1500))
    r = float(rng.choice([1.0, 1.5, 2.0, 3.0]))
    v = rng.integers(-2, 3, size=d)
    t = float(rng.integers(1, 25))
    traj = generate_walk(stream, d, n)
    scan = rolling_scan(traj, v, r, t, n)
    if scan.count < 2:
        return None
    L = float(rng.integers(1, scan.count))
    return traj, v, r, t, L, n


def criterion_4(stream: RngStream, instances: int = 1000, max_attempts: int = 20_000) -> CriterionResult:
    def run():
        rng = stream.generator()
        done = fails = attempts = 0
        sizes = []
        while done < instances and attempts < max_attempts:
            inst = inclusion_instance(rng, stream.replica(attempts))
            attempts += 1
            if inst is None:
                continue
            traj, v, r, t, L, n = inst
            fam = greedy_centers(traj, v, r, t, L, n)
            if not fam.precondition:
                continue
            done += 1
            sizes.append(len(fam))
            if not verify_inclusion(traj, fam, v, t, L, n).ok:
                fails += 1
        ok = done >= THRESHOLDS["inclusion_instances"] and fails == 0
        return ok, {"instances": done, "failures": fails, "attempts": attempts,
                    "mean_family_size": float(np.mean(sizes)) if sizes else 0.0}
    return _timed(4, "greedy-centre inclusion", run)


# ---------------------------------------------------------------------------
# 5. folding functional


def xi_double_sum(traj: Trajectory, n: int, T: int, table) -> float:
    """(1/T) sum_{k=1}^n sum_{z in R_k^{++}} G_T(z - S_k), one term at a time."""
    pts = [tuple(int(c) for c in p) for p in traj.points[: n + 1]]
    d = traj.d
    pp = [tuple(o) for o in ball_offsets(d, 2.0) if np.abs(o).sum() <= 2]
    dil: set = set()
    total = 0.0
    for k in range(n + 1):
        x = pts[k]
        for o in pp:
            dil.add(tuple(a + b for a, b in zip(x, o)))
        if k >= 1:
            z = np.array(sorted(dil), dtype=np.int64) - np.array(x)
            total += float(table.lookup(z).sum())
    return total / T


def criterion_5(stream: RngStream, n: int = 200, T: int = 20, trajectories: int = 50) -> CriterionResult:
    def run():
        tab = build_green_table(3, T, T + 1)
        worst = 0.0
        for j in range(trajectories):
            traj = generate_walk(stream.replica(j), 3, n)
            inc = xi_fold(traj, n, T, tab).value
            ref = xi_double_sum(traj, n, T, tab)
            worst = max(worst, abs(inc - ref) / abs(ref))
        return worst <= THRESHOLDS["xi_rel_tol"], {"max_rel": worst, "trajectories": trajectories}
    return _timed(5, "folding functional oracle", run)


# ---------------------------------------------------------------------------
# 6. confinement


def criterion_6(n_grid=(2500, 5000, 10000, 20000), rho_grid=(6, 9, 12, 16)) -> CriterionResult:
    def run():
        sc = confinement_scaling(3, n_grid, rho_grid)
        slopes = [*sc.half_slopes, *sc.half_slopes_n]
        spread = max(abs(s / sc.slope - 1.0) for s in slopes)
        ok = sc.r2 >= THRESHOLDS["confinement_r2"] and spread <= THRESHOLDS["confinement_half_spread"]
        return ok, {"kappa_hat": -sc.slope, "r2": sc.r2, "half_slopes_rho": list(sc.half_slopes),
                    "half_slopes_n": list(sc.half_slopes_n), "max_rel_spread": spread}
    return _timed(6, "confinement scaling", run)


# ---------------------------------------------------------------------------
# 7. deviation cost


def criterion_7(stream: RngStream, replicas3: int = 400, replicas5: int = 200,
                grid3=((1000, 2000, 4000, 8000), (0.05, 0.1, 0.2)),
                grid5=((2000, 5000, 10000, 20000), (0.1, 0.2, 0.3))) -> CriterionResult:
    def run():
        f3 = deviation_scan_experiment(3, grid3[0], grid3[1], replicas3, stream.child(3))
        f5 = deviation_scan_experiment(5, grid5[0], grid5[1], replicas5, stream.child(5))
        ok = f3.r2 >= THRESHOLDS["deviation_r2"] and f5.r2 >= THRESHOLDS["deviation_r2"]
        pts = lambda f: [{"n": p.n, "eps": p.eps, "scale": p.scale, "cost": p.cost, "se": p.cost_stderr} for p in f.points]
        return ok, {"d3": {"kappa_bar": f3.slope, "intercept": f3.intercept, "r2": f3.r2, "points": pts(f3),
                           "unreachable": f3.unreachable},
                    "d5": {"kappa_bar": f5.slope, "intercept": f5.intercept, "r2": f5.r2, "points": pts(f5),
                           "unreachable": f5.unreachable}}
    return _timed(7, "deviation scaling shape", run)


# ---------------------------------------------------------------------------
# 8. mean drift


def criterion_8(stream: RngStream, n_grid=(10_000, 100_000, 1_000_000), replicas_per_n=(4000, 2000, 800)) -> CriterionResult:
    """Plateau-free exponent from successive differences of m(n) = E|dR_n|/n.

    The increments m(n_1) - m(n_2) and m(n_2) - m(n_3) on a geometric grid of
    ratio q shrink by q^{-b} when m(n) - nu ~ a n^{-b}; b is estimated with a
    delta-method standard error.
    """
    def run():
        tab = estimate_mean_boundary(3, list(n_grid), max(replicas_per_n), stream,
                                     replicas_per_n=list(replicas_per_n))
        m = np.array([row.mean for row in tab.rows])
        se = np.array([row.stderr for row in tab.rows])
        d1, d2 = m[0] - m[1], m[1] - m[2]
        q = n_grid[1] / n_grid[0]
        ok_sign = d1 > 0 and d2 > 0
        b = math.log(d1 / d2) / math.log(q) if ok_sign else float("nan")
        # delta method on log(d1) - log(d2)
        g = np.array([1 / d1, -1 / d1 - 1 / d2, 1 / d2]) / math.log(q) if ok_sign else np.zeros(3)
        b_se = float(np.sqrt(np.sum((g * se) ** 2)))
        slope = -b
        plateau = m[2] - d2 / (q**b - 1) if ok_sign else float("nan")
        dev = np.abs(m - plateau)
        ok = ok_sign and abs(slope - THRESHOLDS["drift_slope"]) <= THRESHOLDS["drift_slope_tol"]
        return ok, {"means": m.tolist(), "stderr": se.tolist(), "loglog_slope": slope, "slope_se": b_se,
                    "plateau": plateau, "deviations": dev.tolist(), "replicas": list(replicas_per_n)}
    return _timed(8, "mean drift", run)


# ---------------------------------------------------------------------------
# 9. polymer


def criterion_9(stream: RngStream, n: int = 256, betas=(0.0, 1.0, 2.0, 4.0, 8.0, 16.0, 32.0), sweeps: int = 5000,
                direct_replicas: int = 40_000, tiny_proposals: int = 10**8) -> CriterionResult:
    def run():
        mu, mu_se = mean_boundary_direct(3, n, direct_replicas, stream.child(1))
        ens = [polymer_mcmc(stream.child(10 + j), 3, n, b, sweeps, mu) for j, b in enumerate(betas)]
        m0, s0 = ens[0].mean_se(ens[0].boundary)
        z0 = abs(m0 - mu) / math.sqrt(s0**2 + mu_se**2)
        tiny = tiny_instance_check(stream.child(2), proposals=tiny_proposals)
        curve = free_energy_curve(ens)
        loc = curve.localisation
        loc_se = curve.localisation_se
        loc_up = bool(np.all(np.diff(loc) >= -THRESHOLDS["z_one_sided"] * np.sqrt(loc_se[1:] ** 2 + loc_se[:-1] ** 2))
                      and loc[-1] > loc[0])
        ok = z0 <= 2.0 and tiny.tv <= THRESHOLDS["tiny_tv"] and curve.monotone_energy and loc_up
        return ok, {"beta0_chain": [m0, s0], "direct": [mu, mu_se], "beta0_z": z0, "tiny_tv": tiny.tv,
                    "betas": list(betas), "mean_energy": curve.mean_energy.tolist(),
                    "energy_se": curve.energy_se.tolist(), "log_z": curve.log_z.tolist(),
                    "monotone_energy": curve.monotone_energy, "max_ball": loc.tolist(),
                    "gyration_median": curve.gyration_median.tolist(), "eps_beta": curve.eps_beta.tolist(),
                    "beta_band": curve.beta_band, "r_n": ens[0].r_n}
    return _timed(9, "polymer sanity", run)


# ---------------------------------------------------------------------------
# 10. capacity discrimination


def criterion_10(stream: RngStream, replicas: int = 10_000, r: float = 2.0, t: float = 8, n: int = 2000,
                 clustered=((-4, 0, 0), (4, 0, 0)), spread=((-8, 0, 0), (8, 0, 0))) -> CriterionResult:
    def run():
        rep = capacity_discrimination(clustered, spread, r, t, n, replicas, stream)
        ok = (replicas >= THRESHOLDS["discrimination_replicas"] and rep.larger_capacity != "undetermined"
              and rep.consistent and rep.z_stat > THRESHOLDS["z_one_sided"])
        return ok, {"cap_clustered": [rep.cap_a.lower, rep.cap_a.upper], "cap_spread": [rep.cap_b.lower, rep.cap_b.upper],
                    "p_clustered": rep.p_a, "p_spread": rep.p_b, "z": rep.z_stat,
                    "larger_capacity": rep.larger_capacity}
    return _timed(10, "capacity discrimination", run)


def run_all(stream: RngStream, only=None) -> list[CriterionResult]:
    table = {
        1: lambda: criterion_1(stream.child(1)),
        2: lambda: criterion_2(),
        3: lambda: criterion_3(stream.child(3)),
        4: lambda: criterion_4(stream.child(4)),
        5: lambda: criterion_5(stream.child(5)),
        6: lambda: criterion_6(),
        7: lambda: criterion_7(stream.child(7)),
        8: lambda: criterion_8(stream.child(8)),
        9: lambda: criterion_9(stream.child(9)),
        10: lambda: criterion_10(stream.child(10)),
    }
    keys = sorted(table) if only is None else list(only)
    return [table[k]() for k in keys]
