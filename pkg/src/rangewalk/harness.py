"""Experiment orchestration: configs, seeded replicas, persistence and statistics."""

from __future__ import annotations

import configparser
import csv
import hashlib
import io
import json
import math
import os
import time
from concurrent.futures import ProcessPoolExecutor
from dataclasses import asdict, dataclass, field
from datetime import datetime, timezone
from pathlib import Path
from typing import Any, Callable, Sequence

import numpy as np

from rangewalk import __version__
from rangewalk import acceptance as acc
from rangewalk.capacity import capacity_dirichlet, capacity_mc, iso_index, write_capacity_csv
from rangewalk.geometry import estimate_mean_boundary
from rangewalk.green import DEFAULT_MEMORY_CAP, ResourceCapError, build_green_table, green_full
from rangewalk.lattice import PointSet, RngStream, ball_offsets, generate_walk
from rangewalk.polymer import (
    confinement_scaling,
    covering_experiment,
    free_energy_curve,
    mean_boundary_direct,
    polymer_mcmc,
    r_n_rule,
    sample_confined,
)
from rangewalk.scanfold import check_no_random, deviation_scan_experiment, greedy_centers, rolling_scan, slicing_terms, verify_inclusion, xi_fold

SCHEMA_VERSION = 1
CI_LEVEL = 0.95
Z95 = 1.959963984540054

EXPERIMENTS = ("identities", "mean-boundary", "green", "capacity", "scan", "slicing", "deviation",
               "confinement", "cover", "polymer", "accept-all")

# desk-scale defaults per experiment; any key can be overridden in the config file
DEFAULT_PARAMS: dict[str, dict[str, Any]] = {
    "identities": {"instances": 10_000},
    "mean-boundary": {"n_grid": [10_000, 100_000, 1_000_000], "replicas_per_n": [4000, 2000, 800], "quantity": "boundary"},
    "green": {"T": 1024, "R": 48, "points": [[0, 0, 0], [1, 0, 0], [2, 2, 0], [5, 0, 0]], "tol": 1e-3},
    "capacity": {"mc_walks": 1000, "ball_radii": [4, 8, 16]},
    "scan": {"n": 1000, "r": 2.0, "t": 10, "L": 5, "v": [0, 0, 0]},
    "slicing": {"n": 200, "T": 20, "offsets": [-1, 0, 5, 18]},
    "deviation": {"n_grid": [1000, 2000, 4000, 8000], "eps_grid": [0.05, 0.1, 0.2]},
    "confinement": {"n_grid": [2500, 5000, 10000, 20000], "rho_grid": [6, 9, 12, 16], "sampler_check": 1},
    "cover": {"n": 10_000, "eps": 0.1, "c": 0.25, "C": 1.0, "confine_factor": 2.0},
    "polymer": {"n": 256, "beta_grid": [0.0, 1.0, 2.0, 4.0, 8.0, 16.0, 32.0], "sweeps": 5000,
                "burn_in": 500, "block_len_mean": 8.0, "mu_replicas": 40_000, "mu": None, "r_n_rule": "upper"},
    "accept-all": {"only": []},
}
DEFAULT_REPLICAS = {"identities": 1, "mean-boundary": 4000, "green": 1, "capacity": 1, "scan": 200, "slicing": 50,
                    "deviation": 400, "confinement": 1, "cover": 300, "polymer": 1, "accept-all": 1}


class ConfigError(ValueError):
    pass


class AssertionFailure(RuntimeError):
    pass


def _parse_value(text: str) -> Any:
    try:
        return json.loads(text)
    except json.JSONDecodeError:
        return text.strip()


@dataclass
class ExperimentConfig:
    experiment: str
    d: int = 3
    replicas: int = 1
    seed: int = 0
    out: str = "runs"
    cache: str | None = None
    threads: int = 1
    memory_cap: int = DEFAULT_MEMORY_CAP
    wall_time: float | None = None
    params: dict = field(default_factory=dict)

    @classmethod
    def default(cls, experiment: str, **overrides) -> "ExperimentConfig":
        if experiment not in EXPERIMENTS:
            raise ConfigError(f"unknown experiment {experiment!r}; choose from {', '.join(EXPERIMENTS)}")
        cfg = cls(experiment, replicas=DEFAULT_REPLICAS[experiment], params=dict(DEFAULT_PARAMS[experiment]))
        for k, v in overrides.items():
            setattr(cfg, k, v)
        return cfg

    @classmethod
    def from_file(cls, path: str | Path, experiment: str | None = None) -> "ExperimentConfig":
        cp = configparser.ConfigParser()
        cp.optionxform = str
        try:
            if not cp.read(path):
                raise ConfigError(f"cannot read config {path}")
        except configparser.Error as exc:
            raise ConfigError(f"malformed config {path}: {exc}") from exc
        if "run" not in cp:
            raise ConfigError("config needs a [run] section")
        run = cp["run"]
        version = run.getint("schema_version", fallback=None)
        if version != SCHEMA_VERSION:
            raise ConfigError(f"schema_version must be {SCHEMA_VERSION}, got {version}")
        name = experiment or run.get("experiment")
        if name is None:
            raise ConfigError("no experiment named in [run] or on the command line")
        cfg = cls.default(name)
        try:
            for key in ("d", "replicas", "seed", "threads", "memory_cap"):
                if key in run:
                    setattr(cfg, key, int(run[key]))
            if "wall_time" in run:
                cfg.wall_time = float(run["wall_time"])
            for key in ("out", "cache"):
                if key in run:
                    setattr(cfg, key, run[key])
        except ValueError as exc:
            raise ConfigError(f"bad value in [run]: {exc}") from exc
        section = f"params.{name}"
        if section in cp:
            for key, text in cp[section].items():
                cfg.params[key] = _parse_value(text)
        return cfg

    def validate(self) -> None:
        if self.experiment not in EXPERIMENTS:
            raise ConfigError(f"unknown experiment {self.experiment!r}")
        if self.d < 3:
            raise ConfigError("d must be at least 3")
        if self.replicas < 1:
            raise ConfigError("replicas must be at least 1")
        if self.threads < 1:
            raise ConfigError("threads must be at least 1")
        if not 0 <= self.seed < 2**64:
            raise ConfigError("seed must be an unsigned 64-bit integer")
        unknown = set(self.params) - set(DEFAULT_PARAMS[self.experiment])
        if unknown:
            raise ConfigError(f"unknown parameters for {self.experiment}: {sorted(unknown)}")
        for k, v in self.params.items():
            if k.endswith("_grid") and (not isinstance(v, list) or len(v) == 0):
                raise ConfigError(f"grid {k} must be a nonempty list")

    def identity(self) -> dict:
        """Everything that can change the output (paths and thread count excluded)."""
        return {"schema_version": SCHEMA_VERSION, "experiment": self.experiment, "d": self.d,
                "replicas": self.replicas, "seed": self.seed, "memory_cap": self.memory_cap,
                "params": self.params}

    def hash(self) -> str:
        blob = json.dumps(self.identity(), sort_keys=True, separators=(",", ":"))
        return hashlib.sha256(blob.encode()).hexdigest()

    def to_ini(self) -> str:
        cp = configparser.ConfigParser()
        cp.optionxform = str
        cp["run"] = {"schema_version": str(SCHEMA_VERSION), "experiment": self.experiment, "d": str(self.d),
                     "replicas": str(self.replicas), "seed": str(self.seed), "out": self.out,
                     "threads": str(self.threads), "memory_cap": str(self.memory_cap)}
        if self.cache:
            cp["run"]["cache"] = self.cache
        if self.wall_time:
            cp["run"]["wall_time"] = str(self.wall_time)
        cp[f"params.{self.experiment}"] = {k: json.dumps(v) for k, v in self.params.items()}
        buf = io.StringIO()
        cp.write(buf)
        return buf.getvalue()


@dataclass
class RunRecord:
    experiment: str
    config_hash: str
    seed: int
    config: dict
    status: str  # ok | assertion-failure | resource-cap
    estimates: dict = field(default_factory=dict)
    fitted: dict = field(default_factory=dict)
    estimators: dict = field(default_factory=dict)
    flags: list = field(default_factory=list)
    ci_level: float = CI_LEVEL
    started: str = ""
    finished: str = ""
    code_version: str = __version__
    rows_file: str | None = None

    def to_json(self) -> str:
        return json.dumps(asdict(self), indent=2, sort_keys=True, default=_json_default)


def _json_default(o):
    if isinstance(o, (np.integer,)):
        return int(o)
    if isinstance(o, (np.floating,)):
        return float(o)
    if isinstance(o, np.ndarray):
        return o.tolist()
    if isinstance(o, (np.bool_,)):
        return bool(o)
    if isinstance(o, (set, frozenset, tuple)):
        return list(o)
    raise TypeError(f"not serialisable: {type(o)}")


def dumps_row(row: dict) -> str:
    return json.dumps(row, sort_keys=True, separators=(",", ":"), default=_json_default)


def write_jsonl(path: Path, rows: Sequence[dict]) -> None:
    with open(path, "w") as fh:
        for row in rows:
            fh.write(dumps_row(row) + "\n")


def write_csv(path: Path, rows: Sequence[dict]) -> None:
    if not rows:
        path.write_text("")
        return
    cols = list(rows[0].keys())
    with open(path, "w", newline="") as fh:
        w = csv.DictWriter(fh, fieldnames=cols)
        w.writeheader()
        for r in rows:
            w.writerow({k: (json.dumps(v, default=_json_default) if isinstance(v, (list, dict)) else v) for k, v in r.items()})


def map_replicas(fn: Callable, args: Sequence[tuple], threads: int = 1, deadline: float | None = None) -> list:
    """Ordered map over replica arguments; a process pool when threads > 1.

    Results come back in argument order whatever the completion order, so
    aggregates are a deterministic fold.
    """
    if threads <= 1:
        out = []
        for a in args:
            if deadline is not None and time.monotonic() > deadline:
                raise WallTimeExceeded(out)
            out.append(fn(*a))
        return out
    with ProcessPoolExecutor(max_workers=threads) as ex:
        futs = [ex.submit(fn, *a) for a in args]
        out = []
        for f in futs:
            if deadline is not None and time.monotonic() > deadline:
                for g in futs:
                    g.cancel()
                raise WallTimeExceeded(out)
            out.append(f.result())
        return out


class WallTimeExceeded(ResourceCapError):
    def __init__(self, partial):
        super().__init__("wall-time cap exceeded")
        self.partial = partial


def mean_ci(values: Sequence[float], z: float = Z95) -> dict:
    v = np.asarray(values, dtype=float)
    m = float(v.mean())
    se = float(v.std(ddof=1) / math.sqrt(len(v))) if len(v) > 1 else float("nan")
    return {"mean": m, "stderr": se, "ci": [m - z * se, m + z * se], "n": int(len(v))}


def log_tail_fit(x: Sequence[float], freq: Sequence[float]) -> dict:
    """Least squares of log frequency on x with zero-count bins dropped and flagged."""
    x = np.asarray(x, dtype=float)
    f = np.asarray(freq, dtype=float)
    keep = f > 0
    dropped = [float(v) for v in x[~keep]]
    if keep.sum() < 2:
        return {"slope": float("nan"), "intercept": float("nan"), "dropped": dropped}
    a, b = np.polyfit(x[keep], np.log(f[keep]), 1)
    return {"slope": float(a), "intercept": float(b), "dropped": dropped}


# ---------------------------------------------------------------------------
# per-replica workers (module level so a process pool can pickle them)


def _identity_worker(stream: RngStream, d: int, j: int) -> dict:
    flags = acc.identity_instance(stream.replica(j), d)
    return {"replica": j, **{k: bool(v) for k, v in flags.items()}}


def _scan_worker(stream: RngStream, d: int, j: int, n: int, r: float, t: float, L: float, v: list) -> dict:
    traj = generate_walk(stream.replica(j), d, n)
    scan = rolling_scan(traj, v, r, t, n)
    fam = greedy_centers(traj, v, r, t, L, n)
    inc = verify_inclusion(traj, fam, v, t, L, n)
    nr = check_no_random(traj, v, r, t, L, n)
    return {"replica": j, "scan_count": scan.count, "family_size": len(fam), "precondition": fam.precondition,
            "inclusion_ok": (not fam.precondition) or inc.ok, "no_random_ok": nr.ok}


def _slicing_worker(stream: RngStream, d: int, j: int, n: int, T: int, offsets: list, table_path: str | None) -> dict:
    traj = generate_walk(stream.replica(j), d, n)
    table = build_green_table(d, T, T + 1, cache_dir=table_path)
    xi = xi_fold(traj, n, T, table)
    rows = []
    for i in offsets:
        st = slicing_terms(traj, i, T, n)
        rows.append({"i": i, "U_sum": sum(st.U), "X_K": st.X[-1] if st.X else 0, "remainder": st.remainder,
                     "boundary": st.boundary, "holds": st.holds})
    return {"replica": j, "xi": xi.value, "xi_error": xi.error_bound, "slices": rows,
            "all_hold": all(r["holds"] for r in rows)}


# ---------------------------------------------------------------------------
# experiments; each returns (rows, estimates, fitted, estimators, flags, hard_ok)


def _run_identities(cfg: ExperimentConfig, stream: RngStream, deadline):
    inst = int(cfg.params["instances"])
    rows = map_replicas(_identity_worker, [(stream, cfg.d, j) for j in range(inst)], cfg.threads, deadline)
    counts = {k: int(sum(r[k] for r in rows)) for k in acc.IDENTITY_KEYS}
    hard = [k for k in acc.IDENTITY_KEYS if k != "dilation-2d"]
    flags = []
    if counts["dilation-2d"]:
        flags.append(f"dilation bound with constant 2d fails on {counts['dilation-2d']} instances "
                     "(the single-point pair already gives 2d+1 > 2d); the 2d+1 form is the hard check")
    return rows, {"violations": counts, "instances": inst}, {}, {"violations": "exact count"}, flags, \
        all(counts[k] == 0 for k in hard)


def _run_mean_boundary(cfg, stream, deadline):
    p = cfg.params
    tab = estimate_mean_boundary(cfg.d, p["n_grid"], cfg.replicas, stream, quantity=p.get("quantity", "boundary"),
                                 replicas_per_n=p.get("replicas_per_n"))
    rows = [asdict(r) for r in tab.rows]
    fitted = {"nu_hat": tab.nu_hat, "correction": tab.correction, "exponent_hat": tab.exponent_hat,
              "plateau_hat": tab.plateau_hat, "residuals": tab.residuals}
    return rows, {"rows": rows}, fitted, {"mean": "sample mean, normal CI"}, tab.flags, True


def _run_green(cfg, stream, deadline):
    p = cfg.params
    tab = build_green_table(cfg.d, int(p["T"]), int(p["R"]), memory_cap=cfg.memory_cap, cache_dir=cfg.cache)
    rel = abs(tab.total() - (tab.T + 1)) / (tab.T + 1)
    rows = [{"z": z, "G_T": tab(tuple(z)), "tail_bound": tab.tail_bound} for z in p["points"]]
    full = green_full(cfg.d, (0,) * cfg.d, float(p["tol"]), memory_cap=cfg.memory_cap, cache_dir=cfg.cache)
    est = {"normalisation_rel_error": rel, "escape_time": tab.escape_time,
           "G0": {"value": full.value, "upper": full.upper, "T": full.T, "R": full.R}}
    return rows, est, {}, {"G_T": "exact kernel iteration", "G0": "table plus certified tail"}, [], rel <= 1e-9


def _run_capacity(cfg, stream, deadline):
    p = cfg.params
    rows, pairs = [], []
    for j, (name, lam) in enumerate(acc.capacity_corpus(cfg.d).items()):
        dr = capacity_dirichlet(lam, set_id=name)
        mc = capacity_mc(lam, M=int(p["mc_walks"]), stream=stream.child(j), set_id=name)
        pairs += [(dr, iso_index(lam, set_id=name)), (mc, None)]
        rows.append({"set": name, "volume": len(lam), "dirichlet": [dr.lower, dr.upper],
                     "monte_carlo": [mc.lower, mc.upper], "overlap": dr.overlaps(mc)})
    balls = []
    for r in p["ball_radii"]:
        rep = iso_index(PointSet.from_array(ball_offsets(cfg.d, r)), set_id=f"ball-{r}", R=6 * int(r))
        balls.append({"r": r, "index": [rep.lower, rep.upper]})
    out = Path(cfg.out)
    out.mkdir(parents=True, exist_ok=True)
    write_capacity_csv(out / "capacity.csv", pairs)
    flags = [f"{r['set']}: brackets disjoint" for r in rows if not r["overlap"]]
    return rows, {"balls": balls}, {}, {"dirichlet": "SOR with two-sided return bounds",
                                        "monte_carlo": "escape walks, Wilson bracket"}, flags, True


def _run_scan(cfg, stream, deadline):
    p = cfg.params
    args = [(stream, cfg.d, j, int(p["n"]), float(p["r"]), float(p["t"]), float(p["L"]), p["v"])
            for j in range(cfg.replicas)]
    rows = map_replicas(_scan_worker, args, cfg.threads, deadline)
    ok = all(r["inclusion_ok"] and r["no_random_ok"] for r in rows)
    est = {"scan_count": mean_ci([r["scan_count"] for r in rows]),
           "family_size": mean_ci([r["family_size"] for r in rows]),
           "precondition_rate": float(np.mean([r["precondition"] for r in rows]))}
    return rows, est, {}, {"scan_count": "sample mean"}, [], ok


def _run_slicing(cfg, stream, deadline):
    p = cfg.params
    args = [(stream, cfg.d, j, int(p["n"]), int(p["T"]), list(p["offsets"]), cfg.cache) for j in range(cfg.replicas)]
    rows = map_replicas(_slicing_worker, args, cfg.threads, deadline)
    est = {"xi": mean_ci([r["xi"] for r in rows])}
    return rows, est, {}, {"xi": "sample mean"}, [], all(r["all_hold"] for r in rows)


def _run_deviation(cfg, stream, deadline):
    p = cfg.params
    fit = deviation_scan_experiment(cfg.d, p["n_grid"], p["eps_grid"], cfg.replicas, stream)
    rows = [{"n": q.n, "eps": q.eps, "scale": q.scale, "cost": q.cost, "stderr": q.cost_stderr,
             "strategy": {k: v for k, v in q.params.items()}} for q in fit.points]
    fitted = {"kappa_bar": fit.slope, "intercept": fit.intercept, "r2": fit.r2, "half_slopes": list(fit.half_slopes)}
    flags = [f"n={a}, eps={b}: {why}" for a, b, why in fit.unreachable]
    return rows, {}, fitted, {"cost": "-log of importance-sampling estimate"}, flags, True


def _run_confinement(cfg, stream, deadline):
    p = cfg.params
    sc = confinement_scaling(cfg.d, p["n_grid"], p["rho_grid"])
    rows = [{"x": float(x), "log_p": float(y)} for x, y in zip(sc.x, sc.logp)]
    ok = True
    if int(p.get("sampler_check", 0)):
        # every emitted confined path must stay inside the ball
        for method, rho, n in (("rejection", 12.0, 64), ("path-mcmc", 4.0, 200)):
            run = sample_confined(stream.child(len(method)), cfg.d, n, rho, method, samples=5)
            ok &= all(bool(np.all((t.points**2).sum(axis=1) <= rho * rho)) for t in run.trajectories)
    fitted = {"kappa_hat": -sc.slope, "intercept": sc.intercept, "r2": sc.r2,
              "half_slopes_rho": list(sc.half_slopes), "half_slopes_n": list(sc.half_slopes_n)}
    return rows, {}, fitted, {"log_p": "exact killed-kernel iteration"}, [], ok


def _run_cover(cfg, stream, deadline):
    p = cfg.params
    n, eps, c = int(p["n"]), float(p["eps"]), float(p["c"])
    rho = c * (n / eps) ** (1.0 / 3.0)
    shell = PointSet.from_array(np.array([q for q in ball_offsets(3, rho) if (q**2).sum() > (rho - 1) ** 2]))
    rep = covering_experiment(stream, n, eps, shell, cfg.replicas, c=c, C=float(p["C"]),
                              confine_factor=float(p["confine_factor"]))
    rows = [{"sample": j, "X": x} for j, x in enumerate(rep.x_examples)]
    est = {"confined_log_prob": rep.confined_log_prob, "confined_log_se": rep.confined_log_se,
           "conditional_freq": rep.conditional_freq, "free_freq": rep.free_freq, "scale": rep.scale,
           "volume": rep.volume, "rho": rep.rho}
    return rows, est, {}, {"confined_log_prob": "ground-state importance sampling"}, [], rep.x_sums_ok


def _run_polymer(cfg, stream, deadline):
    p = cfg.params
    n = int(p["n"])
    mu = p.get("mu")
    if mu is None:
        mu, mu_se = mean_boundary_direct(cfg.d, n, int(p["mu_replicas"]), stream.child(1))
        cfg.params["mu"] = mu
    ens = []
    for j, beta in enumerate(p["beta_grid"]):
        ens.append(polymer_mcmc(stream.child(10 + j), cfg.d, n, float(beta), int(p["sweeps"]), float(mu),
                                burn_in=int(p["burn_in"]), block_len_mean=float(p["block_len_mean"]),
                                r_n=r_n_rule(cfg.d, n, p.get("r_n_rule", "upper"))))
    curve = free_energy_curve(ens)
    rows = [{"beta": float(b), "mean_energy": float(m), "energy_se": float(s), "log_z": float(z),
             "log_z_se": float(zs), "max_ball": float(mb), "gyration_median": float(g), "eps_beta": float(e),
             "acceptance": e_.acceptance, "tau_int": e_.tau_int}
            for b, m, s, z, zs, mb, g, e, e_ in zip(curve.betas, curve.mean_energy, curve.energy_se, curve.log_z,
                                                    curve.log_z_se, curve.localisation, curve.gyration_median,
                                                    curve.eps_beta, ens)]
    out = Path(cfg.out)
    out.mkdir(parents=True, exist_ok=True)
    write_csv(out / "free_energy.csv", rows)
    est = {"mu": mu, "beta_band": curve.beta_band, "monotone_energy": curve.monotone_energy,
           "monotone_curve": curve.monotone_curve, "r_n": ens[0].r_n}
    return rows, est, {}, {"mean_energy": "chain mean, SE with integrated autocorrelation",
                           "log_z": "trapezoid thermodynamic integration"}, [], curve.log_z[0] == 0.0


def _run_accept_all(cfg, stream, deadline):
    only = cfg.params.get("only") or None
    results = acc.run_all(stream, only)
    rows = [{"criterion": r.number, "name": r.name, "passed": r.passed, "elapsed": r.elapsed, "metrics": r.metrics}
            for r in results]
    for r in results:
        print(r.line(), flush=True)
    return rows, {"passed": sum(r.passed for r in results), "total": len(results)}, {}, {}, [], all(r.passed for r in results)


RUNNERS = {
    "identities": _run_identities, "mean-boundary": _run_mean_boundary, "green": _run_green,
    "capacity": _run_capacity, "scan": _run_scan, "slicing": _run_slicing, "deviation": _run_deviation,
    "confinement": _run_confinement, "cover": _run_cover, "polymer": _run_polymer, "accept-all": _run_accept_all,
}


def _now() -> str:
    return datetime.now(timezone.utc).isoformat(timespec="seconds")


def run(cfg: ExperimentConfig) -> RunRecord:
    """Run one experiment and persist record.json and rows.jsonl under ``cfg.out``."""
    cfg.validate()
    h = cfg.hash()
    out = Path(cfg.out)
    out.mkdir(parents=True, exist_ok=True)
    stream = RngStream(cfg.seed, path=(EXPERIMENTS.index(cfg.experiment),))
    started = _now()
    deadline = time.monotonic() + cfg.wall_time if cfg.wall_time else None
    status, flags = "ok", []
    rows: list = []
    est, fitted, estimators = {}, {}, {}
    try:
        rows, est, fitted, estimators, flags, ok = RUNNERS[cfg.experiment](cfg, stream, deadline)
        if not ok:
            status = "assertion-failure"
    except WallTimeExceeded as exc:
        rows, status, flags = list(exc.partial), "resource-cap", ["wall-time cap reached; rows are partial"]
    except ResourceCapError as exc:
        status, flags = "resource-cap", [str(exc)]
    except ValueError as exc:
        raise ConfigError(f"{cfg.experiment} refused the configuration: {exc}") from exc
    rows_path = out / "rows.jsonl"
    write_jsonl(rows_path, rows)
    rec = RunRecord(cfg.experiment, h, cfg.seed, cfg.identity(), status, est, fitted, estimators, flags,
                    started=started, finished=_now(), rows_file=str(rows_path))
    (out / "record.json").write_text(rec.to_json())
    return rec


EXIT_CODES = {"ok": 0, "assertion-failure": 1, "config-error": 2, "resource-cap": 3}


def env_or(name: str, value, cast=str):
    """Command-line value if given, else the RANGEWALK_<NAME> environment variable, else None."""
    if value is not None:
        return value
    raw = os.environ.get(f"RANGEWALK_{name.upper()}")
    return cast(raw) if raw is not None else None
