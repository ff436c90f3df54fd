"""Experiment pipeline: config, ensembles across N, PDE reference, comparison, output.

The comparison puts the lattice mean and the PDE solution on the same
footing: both are read as step densities (site ``i`` and PDE cell ``j``
cover ``[i/N, (i+1)/N)`` and ``[j/M, (j+1)/M)``) and both go through the
same continuum mollifier with window ``floor(eps N)/N``, evaluated at the
lattice points ``x/N``.  With this layout a slow bond sits exactly on a
cell face, so no window ever straddles it.
"""

from __future__ import annotations

import json
import math
from concurrent.futures import ThreadPoolExecutor
from dataclasses import asdict, dataclass, field
from fractions import Fraction
from pathlib import Path
from typing import Optional, Sequence, Union

import numpy as np

from . import io
from .diagnostics import (DiagnosticRecord, TestFunction, build_cw, dynkin_martingale, energy_time_integral,
                          entropy_ceiling, mean_and_se, replacement_integrals, variance_and_se, variance_bound,
                          vn_slow_bond_term, weak_form_residual)
from .empirical import GridDensity, mollify
from .errors import ConfigError, DomainError
from .lattice import LatticeSpec, exact, regime_of, window_length
from .pde import PdeSolution, solve, uniqueness_functional, w_operator_eigen
from .simulator import InitialProfile, iter_ensemble

KEYS = {"beta", "slow_points", "N_list", "replicas", "horizon", "record_times", "profile", "eps_mollify",
        "pde_M", "pde_dt", "seed", "out_dir", "tolerance", "dump_trajectories", "threads", "slow_face"}
REQUIRED = ("beta", "N_list", "replicas", "horizon", "record_times", "profile", "pde_M", "pde_dt", "seed")
PROFILE_KINDS = {"constant": ("c",), "cosine": ("mean", "amplitude", "shift", "mode"),
                 "step": ("breaks", "levels"), "table": ("u", "values")}


@dataclass
class ExperimentConfig:
    beta: str
    slow_points: list
    N_list: list
    replicas: int
    horizon: float
    record_times: list
    profile: dict
    pde_M: int
    pde_dt: float
    seed: int
    eps_mollify: str = "0.05"
    out_dir: str = "out"
    tolerance: Optional[float] = None
    dump_trajectories: bool = False
    threads: int = 1
    slow_face: str = "consistent"

    @property
    def regime(self) -> str:
        return regime_of(self.beta)

    def spec(self, N: int) -> LatticeSpec:
        return LatticeSpec(N, self.beta, tuple(self.slow_points))

    def initial_profile(self) -> InitialProfile:
        return make_profile(self.profile)

    def echo(self) -> dict:
        d = asdict(self)
        d["format"] = io.FORMAT
        return d


def make_profile(p: dict) -> InitialProfile:
    kind = p.get("kind")
    if kind not in PROFILE_KINDS:
        raise DomainError(f"profile kind must be one of {sorted(PROFILE_KINDS)}, got {kind!r}")
    extra = set(p) - {"kind"} - set(PROFILE_KINDS[kind])
    if extra:
        raise DomainError(f"unknown {kind} profile keys: {sorted(extra)}")
    args = {k: v for k, v in p.items() if k != "kind"}
    return getattr(InitialProfile, kind)(**args)


def _num(problems, d, key, cast, check=None, msg=""):
    if key not in d:
        return None
    try:
        v = cast(d[key])
        ok = check is None or check(v)
    except (TypeError, ValueError, DomainError):
        problems.append(f"{key}: cannot read {d[key]!r}")
        return None
    if not ok:
        problems.append(f"{key}: {msg} (got {d[key]!r})")
        return None
    return v


def _int(v):
    if isinstance(v, bool) or not float(v).is_integer():
        raise ValueError
    return int(v)


def _decimal(v):
    if isinstance(v, bool):
        raise ValueError
    return str(v) if isinstance(v, str) else repr(float(v)) if isinstance(v, float) else str(int(v))


def parse_config(raw: dict, overrides: dict = None) -> ExperimentConfig:
    """Validate a config mapping; every problem is collected before raising."""
    if not isinstance(raw, dict):
        raise ConfigError("config must be a JSON object")
    d = dict(raw)
    d.update({k: v for k, v in (overrides or {}).items() if v is not None})
    problems = []
    for k in sorted(set(d) - KEYS):
        problems.append(f"unknown key {k!r}")
    for k in REQUIRED:
        if k not in d:
            problems.append(f"missing key {k!r}")

    beta = _num(problems, d, "beta", lambda v: _decimal(v), lambda v: exact(v) >= 0, "must be a nonnegative number")
    pts = []
    if "slow_points" in d:
        if not isinstance(d["slow_points"], list):
            problems.append("slow_points: must be a list of decimal strings")
        else:
            for p in d["slow_points"]:
                try:
                    q = exact(_decimal(p))
                    if not 0 <= q < 1:
                        raise ValueError
                    pts.append(_decimal(p))
                except (TypeError, ValueError, DomainError):
                    problems.append(f"slow_points: {p!r} is not a number in [0, 1)")
    N_list = []
    if "N_list" in d:
        if not isinstance(d["N_list"], list) or not d["N_list"]:
            problems.append("N_list: must be a nonempty list of integers")
        else:
            for n in d["N_list"]:
                try:
                    n = _int(n)
                    if n < 1:
                        raise ValueError
                    N_list.append(n)
                except (TypeError, ValueError):
                    problems.append(f"N_list: {n!r} is not a positive integer")
    replicas = _num(problems, d, "replicas", _int, lambda v: v >= 2, "must be an integer >= 2")
    horizon = _num(problems, d, "horizon", float, lambda v: math.isfinite(v) and v > 0, "must be positive")
    rts = []
    if "record_times" in d:
        if not isinstance(d["record_times"], list):
            problems.append("record_times: must be a list")
        else:
            for t in d["record_times"]:
                try:
                    t = float(t)
                    if not math.isfinite(t) or t < 0:
                        raise ValueError
                    rts.append(t)
                except (TypeError, ValueError):
                    problems.append(f"record_times: {t!r} is not a nonnegative number")
            if horizon is not None and any(t > horizon for t in rts):
                problems.append("record_times: every time must be <= horizon")
            if rts != sorted(set(rts)):
                problems.append("record_times: must be strictly increasing")
    profile = None
    if "profile" in d:
        if not isinstance(d["profile"], dict):
            problems.append("profile: must be an object with a 'kind'")
        else:
            try:
                profile = make_profile(d["profile"])
            except (DomainError, TypeError, ValueError) as exc:
                problems.append(f"profile: {exc}")
    eps = _num(problems, d, "eps_mollify", _decimal, lambda v: 0 < exact(v) < 1, "must lie in (0, 1)")
    if eps is None and "eps_mollify" not in d:
        eps = "0.05"
    pde_M = _num(problems, d, "pde_M", _int, lambda v: v >= 16, "must be an integer >= 16")
    pde_dt = _num(problems, d, "pde_dt", float, lambda v: math.isfinite(v) and v > 0, "must be positive")
    seed = _num(problems, d, "seed", _int, lambda v: v >= 0, "must be a nonnegative integer")
    tol = _num(problems, d, "tolerance", float, lambda v: v > 0, "must be positive")
    threads = _num(problems, d, "threads", _int, lambda v: v >= 1, "must be a positive integer")
    dump = d.get("dump_trajectories", False)
    if not isinstance(dump, bool):
        problems.append("dump_trajectories: must be true or false")
    slow_face = d.get("slow_face", "consistent")
    if slow_face not in ("consistent", "lattice"):
        problems.append("slow_face: must be 'consistent' or 'lattice'")
    out_dir = d.get("out_dir", "out")
    if not isinstance(out_dir, str):
        problems.append("out_dir: must be a string")

    # cross-field checks
    if beta is not None:
        reg = regime_of(beta)
        if reg == "neumann_segments" and "slow_points" in d and not pts and not any(
                p.startswith("slow_points") for p in problems):
            problems.append("slow_points: beta > 1 needs at least one slow point")
        for n in N_list:
            try:
                spec = LatticeSpec(n, beta, tuple(pts))
                if eps is not None:
                    spec.check_eps(eps)
            except DomainError as exc:
                problems.append(f"N={n}: {exc}")
        if pde_M is not None and pts and reg != "heat_periodic":
            from .pde import slow_face_indices
            try:
                slow_face_indices(pde_M, pts)
            except DomainError as exc:
                problems.append(f"pde_M: {exc}")
            if pde_M < 16 * len(pts):
                problems.append(f"pde_M: must be at least 16k = {16 * len(pts)}")
    if pde_dt is not None and horizon is not None:
        if pde_dt > horizon / 10 * (1 + 1e-12):
            problems.append("pde_dt: must be at most horizon/10")
        for t in [horizon] + rts:
            n = t / pde_dt
            if abs(n - round(n)) > 1e-9 * max(1.0, n):
                problems.append(f"pde_dt: does not divide time {t}")
    if problems:
        raise ConfigError(problems)
    return ExperimentConfig(beta=beta, slow_points=pts, N_list=N_list, replicas=replicas, horizon=horizon,
                            record_times=rts, profile=d["profile"], pde_M=pde_M, pde_dt=pde_dt, seed=seed,
                            eps_mollify=eps, out_dir=out_dir, tolerance=tol, dump_trajectories=dump,
                            threads=threads or 1, slow_face=slow_face)


def load_config(path, overrides: dict = None) -> ExperimentConfig:
    try:
        with open(path) as fh:
            raw = json.load(fh)
    except OSError as exc:
        raise ConfigError(f"cannot read config {path}: {exc.strerror or exc}") from exc
    except json.JSONDecodeError as exc:
        raise ConfigError(f"config {path} is not valid JSON: {exc}") from exc
    return parse_config(raw, overrides)


# ---------------------------------------------------------------- comparison

@dataclass
class Comparison:
    sup: float
    l1: float
    t_offset: float
    grid: int
    eps: Fraction
    resampled: bool


def _density_at(obj, t):
    if isinstance(obj, PdeSolution):
        if t is None:
            raise DomainError("a time is needed to read a PDE solution")
        i = int(np.argmin(np.abs(obj.times - t)))
        return GridDensity(obj.values[i]), float(obj.times[i] - t)
    return GridDensity(np.asarray(obj, dtype=float)), 0.0


def compare(a: Union[np.ndarray, PdeSolution], b: Union[np.ndarray, PdeSolution], t: Optional[float] = None,
            eps=Fraction(1, 20), slow_points: Sequence = ()) -> Comparison:
    """Sup and L1 distance between two profiles after the same mollification.

    Profiles are grid functions (lattice means) or PDE solutions read at the
    stored time nearest to ``t``.  The evaluation grid is the finer of the
    two, and the window is ``floor(eps G)/G`` on that grid ``G``.
    """
    da, oa = _density_at(a, t)
    db, ob = _density_at(b, t)
    G = max(da.M, db.M)
    L = window_length(eps, G)
    if L < 1:
        raise DomainError(f"eps={eps} is below one cell of the {G}-point grid")
    e = Fraction(L, G)
    v = np.arange(G) / G
    ma = mollify(da, e, slow_points, v)
    mb = mollify(db, e, slow_points, v)
    d = np.abs(ma - mb)
    off = oa if abs(oa) >= abs(ob) else ob
    return Comparison(float(d.max()), float(d.mean()), off, G, e, da.M != db.M)


def binomial_se(profile_values: np.ndarray, replicas: int, L: int) -> float:
    """``sqrt(max rho(1 - rho) / (replicas * L))``."""
    r = np.clip(np.asarray(profile_values, dtype=float), 0.0, 1.0)
    return math.sqrt(float(np.max(r * (1 - r))) / (replicas * L))


def lattice_segments(spec: LatticeSpec) -> list:
    """Array indices of the sites of each arc between consecutive slow bonds."""
    s = sorted(spec.slow_bonds.tolist())
    N = spec.N
    out = []
    for a, b in zip(s, s[1:] + [s[0] + N]):
        out.append(np.arange(a + 1, b + 1) % N)
    return out


def interface_means(mean: np.ndarray, spec: LatticeSpec, eps) -> list:
    """``(left, right)`` window means of a lattice profile at each slow bond."""
    N = spec.N
    L = window_length(eps, N)
    out = []
    for s in spec.slow_bonds:
        left = mean[(s - np.arange(L)) % N].mean()
        right = mean[(s + 1 + np.arange(L)) % N].mean()
        out.append((float(left), float(right)))
    return out


# ---------------------------------------------------------------- run

TABLE_COLUMNS = ["N", "t", "t_offset", "sup_dist", "L1_dist", "mc_se", "tol", "pass"]


@dataclass
class ExperimentResult:
    config: ExperimentConfig
    solution: Optional[PdeSolution]
    rows: list = field(default_factory=list)
    profiles: dict = field(default_factory=dict)
    records: list = field(default_factory=list)
    notes: list = field(default_factory=list)

    @property
    def passed(self) -> bool:
        checks = [r["pass"] for r in self.rows] + [r.passed for r in self.records if r.passed is not None]
        return bool(checks) and all(checks)


def _store_every(cfg: ExperimentConfig) -> int:
    steps = [int(round(t / cfg.pde_dt)) for t in cfg.record_times + [cfg.horizon]]
    g = 0
    for n in steps:
        g = math.gcd(g, n)
    return max(g, 1)


def solve_reference(cfg: ExperimentConfig, store_every: Optional[int] = None) -> PdeSolution:
    kw = {"store_every": store_every or _store_every(cfg)}
    if cfg.regime == "w_equation":
        kw["slow_face"] = cfg.slow_face
    return solve(cfg.regime, cfg.initial_profile(), cfg.horizon, cfg.pde_M, cfg.pde_dt, cfg.slow_points, **kw)


def run_experiment(cfg: ExperimentConfig, *, threads: Optional[int] = None, trajectory_dir=None,
                   log=None) -> ExperimentResult:
    """Simulate every ``N``, solve the matching PDE and tabulate the distances."""
    threads = threads or cfg.threads
    if not cfg.record_times:
        return ExperimentResult(cfg, None, notes=["record_times is empty: nothing to compare"])
    profile = cfg.initial_profile()
    result = ExperimentResult(cfg, None)
    with ThreadPoolExecutor(max_workers=1) as pool:
        pde_future = pool.submit(solve_reference, cfg)
        sims = {}
        for N in cfg.N_list:
            spec = cfg.spec(N)
            segs = lattice_segments(spec) if spec.k and cfg.regime == "neumann_segments" else []
            total = None
            seg_mass = []
            writer = None
            if trajectory_dir is not None:
                writer = io.TrajectoryWriter(Path(trajectory_dir) / f"trajectories_N{N}.txt",
                                             {"seed": cfg.seed, "N": N, "beta": cfg.beta})
            try:
                for r, s in enumerate(iter_ensemble(spec, profile, cfg.replicas, cfg.horizon, cfg.record_times,
                                                    cfg.seed, threads=threads)):
                    if total is None:
                        total = np.zeros(s.configs.shape)
                        times = s.times
                    total += s.configs
                    if segs:
                        seg_mass.append([[s.configs[i, idx].sum() / N for idx in segs] for i in range(len(times))])
                    if writer is not None:
                        writer.add(r, s)
            finally:
                if writer is not None:
                    writer.close()
            sims[N] = (spec, times, total / cfg.replicas, np.array(seg_mass))
            if log:
                log(f"N={N}: {cfg.replicas} replicas done")
        sol = pde_future.result()
    result.solution = sol
    pts = cfg.spec(cfg.N_list[0]).mollifier_points
    for N in cfg.N_list:
        spec, times, means, seg_mass = sims[N]
        L = window_length(cfg.eps_mollify, N)
        for t in cfg.record_times:
            i = int(np.argmin(np.abs(times - t)))
            mean = means[i]
            result.profiles[(N, t)] = mean
            cmp = compare(mean, sol, t, cfg.eps_mollify, pts)
            ref = mollify(GridDensity(sol.values[sol.time_index(t)]), Fraction(L, N), pts, spec.positions)
            se = binomial_se(ref, cfg.replicas, L)
            tol = cfg.tolerance if cfg.tolerance is not None else 4 * se
            result.rows.append({"N": N, "t": t, "t_offset": cmp.t_offset, "sup_dist": cmp.sup, "L1_dist": cmp.l1,
                                "mc_se": se, "tol": tol, "pass": cmp.sup <= tol})
        if seg_mass.size:
            drift = seg_mass - seg_mass[:, :1, :]
            m, se = mean_and_se(drift)
            for i, t in enumerate(times[1:], start=1):
                for j in range(seg_mass.shape[2]):
                    result.records.append(DiagnosticRecord(
                        "segment_mass_drift", {"N": N, "t": float(t), "segment": j}, float(m[i, j]),
                        float(se[i, j]), float(4 * se[i, j]), bool(abs(m[i, j]) <= 4 * se[i, j])))
            for t in cfg.record_times:
                for b, (lo, hi) in zip(spec.slow_points, interface_means(result.profiles[(N, t)], spec,
                                                                           cfg.eps_mollify)):
                    result.records.append(DiagnosticRecord("interface_jump", {"N": N, "t": t, "b": b}, abs(hi - lo)))
    return result


def emit(result: ExperimentResult, out_dir) -> list:
    """Write config echo, mean profiles, PDE dump, convergence table and report."""
    cfg = result.config
    out = io.ensure_dir(out_dir)
    meta = {"seed": cfg.seed, "beta": cfg.beta, "regime": cfg.regime}
    written = []
    path = out / "config.json"
    try:
        path.write_text(json.dumps(cfg.echo(), indent=2, sort_keys=True) + "\n")
    except OSError as exc:
        raise OSError(f"cannot write {path}: {exc.strerror or exc}") from exc
    written.append(path)
    if result.notes:
        path = out / "notes.txt"
        path.write_text("\n".join([f"# {io.FORMAT}", f"# seed={cfg.seed}"] + result.notes) + "\n")
        written.append(path)
    if result.solution is None:
        return written
    for (N, t), mean in sorted(result.profiles.items()):
        written.append(io.write_profile(out / "profiles" / f"mean_N{N}_t{io._fmt(float(t))}.csv",
                                        np.arange(N) / N, mean, {**meta, "N": N, "t": t, "replicas": cfg.replicas}))
    written.append(io.write_solution(result.solution, out / "pde_solution.csv", {"seed": cfg.seed}))
    rows = ([r[c] for c in TABLE_COLUMNS] for r in result.rows)
    written.append(io.write_table(out / "convergence.csv", TABLE_COLUMNS, rows,
                                  {**meta, "replicas": cfg.replicas, "eps": cfg.eps_mollify}))
    written.append(io.write_report(out / "diagnostics.csv", result.records, meta))
    return written


# ---------------------------------------------------------------- diagnose

def _cutoff(spec: LatticeSpec, eps) -> callable:
    """Smooth factor vanishing within ``2 eps`` of every slow point (1 if none apply)."""
    pts = spec.mollifier_points
    e = float(exact(eps))

    def psi(u):
        u = np.asarray(u, dtype=float)
        out = np.ones_like(u)
        for b in pts:
            d = np.abs(np.mod(u - b + 0.5, 1.0) - 0.5)
            out = out * np.clip((d - 2 * e) / e, 0.0, 1.0) ** 2
        return out

    return psi


def pde_test_functions(regime: str, slow_points: Sequence) -> list:
    """Five admissible test functions for the weak form of ``regime``."""
    pts = [float(exact(p)) for p in slow_points]
    if regime == "heat_periodic":
        return [TestFunction.fourier(1, "cos"), TestFunction.fourier(1, "sin"), TestFunction.fourier(2, "cos"),
                TestFunction.fourier(3, "sin"),
                TestFunction.torus(lambda u: np.exp(np.sin(2 * np.pi * u)),
                                   lambda u: 2 * np.pi * np.cos(2 * np.pi * u) * np.exp(np.sin(2 * np.pi * u)),
                                   lambda u: 4 * np.pi ** 2 * (np.cos(2 * np.pi * u) ** 2 - np.sin(2 * np.pi * u))
                                   * np.exp(np.sin(2 * np.pi * u)), label="exp_sin")]
    if regime == "w_equation":
        tp = 2 * np.pi
        hs = [(lambda z: 0.0 * z, 1.0), (lambda z: np.cos(tp * z), 0.0), (lambda z: np.sin(tp * z), 0.2),
              (lambda z: np.cos(2 * tp * z) + np.sin(3 * tp * z), -0.1),
              (lambda z: np.cos(tp * z) ** 2 - 0.5, 0.0)]
        return [build_cw(h, a, pts, label=f"cw{i}") for i, (h, a) in enumerate(hs)]
    s = sorted(pts)
    a, b = s[0], (s[1] if len(s) > 1 else s[0] + 1.0)
    w = b - a
    k = np.pi / w
    return [
        TestFunction.on_segment(a, b, lambda u, t: np.ones_like(u), lambda u, t: 0 * u, lambda u, t: 0 * u,
                                label="indicator"),
        TestFunction.on_segment(a, b, lambda u, t: np.cos(k * (u - a)), lambda u, t: -k * np.sin(k * (u - a)),
                                lambda u, t: -k * k * np.cos(k * (u - a)), label="neumann_mode"),
        TestFunction.on_segment(a, b, lambda u, t: (u - a) ** 2, lambda u, t: 2 * (u - a),
                                lambda u, t: 2 + 0 * u, label="quadratic"),
        TestFunction.on_segment(a, b, lambda u, t: np.exp(-t) * np.sin(k * (u - a)),
                                lambda u, t: np.exp(-t) * k * np.cos(k * (u - a)),
                                lambda u, t: -k * k * np.exp(-t) * np.sin(k * (u - a)),
                                lambda u, t: -np.exp(-t) * np.sin(k * (u - a)), label="decaying_sine"),
        TestFunction.on_segment(a, b, lambda u, t: (1 + t) * (u - a) ** 3, lambda u, t: 3 * (1 + t) * (u - a) ** 2,
                                lambda u, t: 6 * (1 + t) * (u - a), lambda u, t: (u - a) ** 3, label="cubic"),
    ]


def diagnose(cfg: ExperimentConfig, *, threads: Optional[int] = None, log=None) -> list:
    """Martingale, replacement, energy and PDE diagnostics for a config."""
    threads = threads or cfg.threads
    profile = cfg.initial_profile()
    T = cfg.horizon
    eps = cfg.eps_mollify
    records = []
    H = TestFunction.fourier(1, "sin")
    bound_grad = 2 * np.pi
    lo, hi = profile.bounds()
    alpha = min(lo, 1 - hi)
    replacement = []
    for N in cfg.N_list:
        spec = cfg.spec(N)
        x = spec.slow_left_vertices[0] if spec.k else N
        psi = _cutoff(spec, eps)
        Hv = lambda u: np.cos(2 * np.pi * u) * psi(u)
        ms, qs, repl, vn = [], [], [], []
        for s in iter_ensemble(spec, profile, cfg.replicas, T, [T], cfg.seed, threads=threads, record_events=True):
            tr = dynkin_martingale(s, H, quadratic_variation=True)
            ms.append(tr.values[-1])
            qs.append(tr.predictable[-1])
            repl.append(abs(replacement_integrals(s, x, eps, T)))
            vn.append(energy_time_integral(s, Hv, eps, T))
        m, se = mean_and_se(ms)
        records.append(DiagnosticRecord("martingale_mean", {"N": N, "t": T, "H": "sin1"}, float(m), float(se),
                                        float(4 * se), bool(abs(m) <= 4 * se)))
        v, vse = variance_and_se(ms)
        bound = variance_bound(T, N, bound_grad)
        records.append(DiagnosticRecord("martingale_variance", {"N": N, "t": T, "H": "sin1"}, float(v), float(vse),
                                        bound, bool(v <= bound + 3 * vse)))
        q, qse = mean_and_se(qs)
        records.append(DiagnosticRecord("predictable_variation", {"N": N, "t": T, "H": "sin1"}, float(q), float(qse),
                                        bound, bool(q <= bound)))
        r, rse = mean_and_se(repl)
        replacement.append((N, float(r), float(rse)))
        records.append(DiagnosticRecord("replacement", {"N": N, "x": x, "eps": eps, "t": T}, float(r), float(rse)))
        e, ese = mean_and_se(vn)
        ceiling = entropy_ceiling(alpha) if 0 < alpha else float("inf")
        records.append(DiagnosticRecord("energy_vn", {"N": N, "eps": eps, "t": T}, float(e), float(ese), ceiling))
        records.append(DiagnosticRecord("energy_slow_bond_term", {"N": N, "eps": eps},
                                        vn_slow_bond_term(spec, Hv, eps)))
        if log:
            log(f"N={N}: diagnostics done")
    if len(replacement) > 1:
        vals = [r for _, r, _ in replacement]
        records.append(DiagnosticRecord("replacement_trend", {"N": ";".join(str(n) for n, _, _ in replacement)},
                                        float(vals[-1] - vals[0]), passed=bool(np.all(np.diff(vals) < 0))))
    # the time quadrature of the weak form needs a dense time grid
    sol = solve_reference(cfg, max(1, int(round(cfg.horizon / cfg.pde_dt)) // 2000))
    t_end = float(sol.times[-1])
    for tf in pde_test_functions(cfg.regime, cfg.slow_points):
        res = weak_form_residual(sol, tf, t_end)
        records.append(DiagnosticRecord("weak_form_residual", {"regime": cfg.regime, "H": tf.label, "M": cfg.pde_M,
                                                               "dt": cfg.pde_dt}, abs(res), bound=1e-3,
                                        passed=abs(res) <= 1e-3))
    if cfg.regime == "w_equation":
        eig = w_operator_eigen(cfg.pde_M, cfg.slow_points, cfg.pde_M // 4)
        R = uniqueness_functional(sol, eig)
        rise = float(np.max(np.diff(R), initial=0.0))
        records.append(DiagnosticRecord("uniqueness_functional_increase", {"M": cfg.pde_M}, rise, bound=0.0,
                                        passed=rise <= 1e-12 * max(1.0, float(R[0]))))
    return records
