"""Continuous-time exclusion dynamics with slow bonds in diffusive scaling.

The chain runs in macroscopic time: bond ``(x, x+1)`` rings at rate
``N^2 * xi_{x,x+1}``.  Only bonds whose endpoints disagree are kept in the
event tree, since a ring on any other bond leaves the configuration as it is.
"""

from __future__ import annotations

import math
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field
from typing import Callable, Iterator, Optional, Sequence

import numpy as np

from . import _kernels as K
from .errors import DomainError, ReplicaError
from .lattice import Configuration, LatticeSpec

UNIFORM_CHUNK = 1 << 16


def replica_rng(master_seed: int, replica: int) -> np.random.Generator:
    """Counter-based stream for one replica, keyed by ``(master_seed, replica)``."""
    if master_seed < 0 or replica < 0:
        raise DomainError("seeds must be nonnegative")
    key = np.array([master_seed % (1 << 64), replica % (1 << 64)], dtype=np.uint64)
    return np.random.Generator(np.random.Philox(key=key))


@dataclass(frozen=True)
class InitialProfile:
    """Initial density ``gamma`` on the torus, tagged by its closed form.

    Use the constructors :meth:`constant`, :meth:`cosine`, :meth:`step` and
    :meth:`table` rather than building instances by hand.
    """

    kind: str
    params: dict
    func: Callable[[np.ndarray], np.ndarray] = field(repr=False, compare=False)

    def __call__(self, u):
        u = np.mod(np.asarray(u, dtype=float), 1.0)
        return np.asarray(self.func(u), dtype=float) * np.ones_like(u)

    @classmethod
    def constant(cls, c: float) -> "InitialProfile":
        _check_unit(c, c)
        c = float(c)
        return cls("constant", {"c": c}, lambda u: np.full_like(u, c))

    @classmethod
    def cosine(cls, mean: float = 0.5, amplitude: float = 0.3, shift: float = 0.0,
               mode: int = 1) -> "InitialProfile":
        """``mean + amplitude * cos(2 pi mode (u - shift))``."""
        _check_unit(mean - abs(amplitude), mean + abs(amplitude))
        mean, amplitude, shift = float(mean), float(amplitude), float(shift)
        return cls("cosine", {"mean": mean, "amplitude": amplitude, "shift": shift, "mode": int(mode)},
                   lambda u: mean + amplitude * np.cos(2 * np.pi * mode * (u - shift)))

    @classmethod
    def step(cls, breaks: Sequence[float], levels: Sequence[float]) -> "InitialProfile":
        """Piecewise constant: ``levels[i]`` on ``[breaks[i], breaks[i+1])``, cyclically."""
        br = np.array(sorted(float(b) for b in breaks))
        lv = np.array([float(v) for v in levels])
        if br.size == 0 or br.size != lv.size:
            raise DomainError("step profile needs as many levels as breaks")
        if np.any((br < 0) | (br >= 1)):
            raise DomainError("step breaks must lie in [0, 1)")
        _check_unit(lv.min(), lv.max())

        def f(u):
            idx = np.searchsorted(br, u, side="right") - 1
            return lv[idx % lv.size]

        return cls("step", {"breaks": br.tolist(), "levels": lv.tolist()}, f)

    @classmethod
    def table(cls, u: Sequence[float], values: Sequence[float]) -> "InitialProfile":
        """Periodic piecewise-linear interpolation of sampled values."""
        u = np.asarray(u, dtype=float)
        v = np.asarray(values, dtype=float)
        if u.ndim != 1 or u.shape != v.shape or u.size < 2:
            raise DomainError("table profile needs matching 1-d samples")
        order = np.argsort(u)
        u, v = u[order], v[order]
        _check_unit(v.min(), v.max())
        return cls("table", {"u": u.tolist(), "values": v.tolist()},
                   lambda x: np.interp(x, u, v, period=1.0))

    def cell_averages(self, M: int) -> np.ndarray:
        """Averages of gamma over the cells ``[j/M, (j+1)/M)``."""
        if self.kind == "step":
            br = np.asarray(self.params["breaks"])
            lv = np.asarray(self.params["levels"])
            edges = np.arange(M + 1) / M
            prim = _step_primitive(br, lv, edges)
            return np.diff(prim) * M
        nodes, weights = np.polynomial.legendre.leggauss(6)
        left = np.arange(M)[:, None] / M
        pts = left + (nodes[None, :] + 1) / (2 * M)
        return (self(pts) * weights[None, :]).sum(axis=1) / 2

    def bounds(self) -> tuple:
        if self.kind == "constant":
            return self.params["c"], self.params["c"]
        if self.kind == "cosine":
            m, a = self.params["mean"], abs(self.params["amplitude"])
            return m - a, m + a
        if self.kind == "step":
            return min(self.params["levels"]), max(self.params["levels"])
        return min(self.params["values"]), max(self.params["values"])


def _step_primitive(br, lv, x):
    """``int_0^x`` of the cyclic step function, for ``x`` in ``[0, 1]``."""
    x = np.asarray(x, dtype=float)
    pts = np.concatenate([[0.0], br, [1.0]])
    vals = np.concatenate([[lv[-1]], lv])
    seg = np.diff(pts) * vals
    cum = np.concatenate([[0.0], np.cumsum(seg)])
    k = np.clip(np.searchsorted(pts, x, side="right") - 1, 0, vals.size - 1)
    return cum[k] + (x - pts[k]) * vals[k]


def _check_unit(lo, hi):
    if lo < 0 or hi > 1:
        raise DomainError(f"initial profile must take values in [0, 1], got range [{lo}, {hi}]")


def sample_initial(profile: InitialProfile, spec: LatticeSpec, rng: np.random.Generator) -> Configuration:
    """Product Bernoulli configuration with ``P(eta(x) = 1) = gamma(x/N)``."""
    p = profile(spec.positions)
    if np.any(p < 0) or np.any(p > 1):
        raise DomainError("profile evaluates outside [0, 1]")
    return Configuration((rng.random(spec.N) < p).astype(np.uint8))


@dataclass
class SnapshotSeries:
    """Configurations of one trajectory at increasing macroscopic times.

    ``times[0]`` is always 0.  When the trajectory was run with event
    logging, ``event_times``/``event_bonds`` list every exchange up to the
    horizon, which is what the exact path integrals in
    :mod:`slowbond.diagnostics` replay.
    """

    spec: LatticeSpec
    times: np.ndarray
    configs: np.ndarray
    seed: tuple
    horizon: float
    event_times: Optional[np.ndarray] = None
    event_bonds: Optional[np.ndarray] = None

    @property
    def initial(self) -> Configuration:
        return Configuration(self.configs[0])

    def config(self, index: int) -> Configuration:
        return Configuration(self.configs[index])

    @property
    def has_events(self) -> bool:
        return self.event_times is not None


def _check_times(horizon, record_times):
    if horizon < 0:
        raise DomainError(f"horizon must be nonnegative, got {horizon}")
    rt = np.asarray(sorted(float(t) for t in record_times), dtype=float)
    if rt.size and rt[0] < 0:
        raise DomainError("record times must be nonnegative")
    if rt.size and rt[-1] > horizon:
        raise DomainError(f"record time {rt[-1]} beyond horizon {horizon}")
    if rt.size == 0 or rt[0] != 0.0:
        rt = np.concatenate([[0.0], rt])
    return np.unique(rt)


def simulate(spec: LatticeSpec, init: Configuration, horizon: float, record_times: Sequence[float],
             rng: np.random.Generator, *, record_events: bool = False, seed: tuple = ()) -> SnapshotSeries:
    """Exact trajectory of the accelerated exclusion process up to ``horizon``.

    Snapshots hold the state at the last event time not after each requested
    time.  Time 0 is always recorded first.
    """
    if init.N != spec.N:
        raise DomainError(f"configuration has {init.N} sites, spec has {spec.N}")
    horizon = float(horizon)
    rt = _check_times(horizon, record_times)
    N = spec.N
    eta = init.mutable()
    bond_rates = spec.conductances() * float(N) ** 2
    p = K.tree_size(N)
    tree = np.zeros(2 * p)
    K.tree_build(tree, p, eta, bond_rates)
    snapshots = np.empty((rt.size, N), dtype=np.uint8)
    clock = np.zeros(1)
    counters = np.zeros(3, dtype=np.int64)
    cap = 1024 if record_events else 0
    ev_times = np.empty(cap)
    ev_bonds = np.empty(cap, dtype=np.int64)
    # uniforms are consumed in stream order, so the chunk sizes do not affect the path
    # about half the bonds are active, two uniforms per event
    expected = horizon * float(bond_rates.sum())
    chunk = int(min(UNIFORM_CHUNK, max(256, expected + 64)))
    uniforms = rng.random(chunk)
    while True:
        status = K.advance(eta, bond_rates, tree, p, clock, counters, horizon, rt, snapshots,
                           uniforms, ev_times, ev_bonds, record_events)
        if status == K.DONE:
            break
        if status == K.NEED_UNIFORMS:
            rest = uniforms[counters[1]:]
            chunk = min(2 * chunk, UNIFORM_CHUNK)
            uniforms = np.concatenate([rest, rng.random(chunk)])
            counters[1] = 0
        else:
            ev_times = np.concatenate([ev_times, np.empty(ev_times.size)])
            ev_bonds = np.concatenate([ev_bonds, np.empty(ev_bonds.size, dtype=np.int64)])
    series = SnapshotSeries(spec, rt, snapshots, tuple(seed), horizon)
    if record_events:
        n = int(counters[2])
        series.event_times = ev_times[:n].copy()
        series.event_bonds = ev_bonds[:n].copy()
    return series


def run_replica(spec: LatticeSpec, profile: InitialProfile, horizon: float, record_times: Sequence[float],
                master_seed: int, replica: int, record_events: bool = False) -> SnapshotSeries:
    """Sample an initial configuration and simulate it on the replica's own stream."""
    rng = replica_rng(master_seed, replica)
    init = sample_initial(profile, spec, rng)
    return simulate(spec, init, horizon, record_times, rng, record_events=record_events,
                    seed=(master_seed, replica))


def iter_ensemble(spec: LatticeSpec, profile: InitialProfile, replicas: int, horizon: float,
                  record_times: Sequence[float], master_seed: int, *, threads: int = 1,
                  record_events: bool = False, first_replica: int = 0) -> Iterator[SnapshotSeries]:
    """Yield replicas in index order; with ``threads > 1`` they run concurrently.

    Results do not depend on ``threads``: each replica owns its RNG stream
    and the output order is fixed.
    """
    def one(r):
        try:
            return run_replica(spec, profile, horizon, record_times, master_seed, r, record_events)
        except Exception as exc:
            raise ReplicaError((master_seed, r), exc) from exc

    idx = range(first_replica, first_replica + replicas)
    if threads <= 1:
        for r in idx:
            yield one(r)
        return
    batch = 4 * threads
    with ThreadPoolExecutor(max_workers=threads) as pool:
        for start in range(0, replicas, batch):
            yield from pool.map(one, idx[start:start + batch])


def mean_occupation(ensemble: Sequence[SnapshotSeries], time_index: int) -> np.ndarray:
    """Per-site average of ``eta_t(x)`` over the replicas."""
    ensemble = list(ensemble)
    if not ensemble:
        raise DomainError("empty ensemble")
    ref = ensemble[0]
    for s in ensemble[1:]:
        if s.spec != ref.spec or not np.array_equal(s.times, ref.times):
            raise DomainError("ensemble members disagree on spec or record times")
    return np.mean([s.configs[time_index] for s in ensemble], axis=0, dtype=float)


def ensemble_means(spec: LatticeSpec, profile: InitialProfile, replicas: int, horizon: float,
                   record_times: Sequence[float], master_seed: int, threads: int = 1) -> tuple:
    """Mean occupation at every recorded time, without keeping the replicas.

    Returns ``(times, means)`` with ``means[j]`` the profile at ``times[j]``.
    """
    total = None
    times = None
    for s in iter_ensemble(spec, profile, replicas, horizon, record_times, master_seed, threads=threads):
        if total is None:
            total = np.zeros(s.configs.shape)
            times = s.times
        total += s.configs
    if total is None:
        raise DomainError("empty ensemble")
    return times, total / replicas


def time_index(series_times: np.ndarray, t: float) -> int:
    """Index of the recorded time equal to ``t`` (up to round-off)."""
    i = int(np.argmin(np.abs(series_times - t)))
    if not math.isclose(series_times[i], t, rel_tol=1e-12, abs_tol=1e-15):
        raise DomainError(f"time {t} was not recorded")
    return i
