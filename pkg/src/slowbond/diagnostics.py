"""Computable functionals of the particle system and of the PDE solutions.

Path integrals along a trajectory are exact: with an event log, every
functional that is linear in the configuration is piecewise constant in time
and is integrated as a sum of holding time times value.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import Callable, Iterable, Optional, Sequence

import numpy as np
from scipy import integrate

from . import _kernels as K
from .empirical import box_weights
from .errors import DomainError
from .lattice import Configuration, LatticeSpec, discrete_operator_apply, exact, sample_grid, window_length
from .pde import PdeSolution, one_sided, slow_face_indices
from .simulator import SnapshotSeries

CLASSES = ("C2_torus", "CW", "segment_C12")
MATCHING_CLASS = {"heat_periodic": "C2_torus", "w_equation": "CW", "neumann_segments": "segment_C12"}


def _zero(u, t=0.0):
    return np.zeros_like(np.asarray(u, dtype=float))


@dataclass(frozen=True)
class TestFunction:
    """Test function ``H`` with its derivatives and class tag.

    Every evaluator takes ``(u, t=0.0)``; only ``segment_C12`` functions
    depend on ``t``.  For ``CW`` functions ``d2`` is ``d/dx d/dW H = h`` and
    ``jumps[i] = H(b_i+) - H(b_i-)``.  For ``segment_C12`` functions ``u`` is
    read on the unwrapped arc ``[segment[0], segment[1]]`` and ``H`` is 0
    outside it.
    """

    __test__ = False

    kind: str
    f: Callable = field(repr=False)
    d1: Callable = field(repr=False)
    d2: Callable = field(repr=False)
    ds: Callable = field(default=_zero, repr=False)
    slow_points: tuple = ()
    segment: Optional[tuple] = None
    triple: Optional[tuple] = field(default=None, repr=False)
    jumps: tuple = ()
    label: str = ""

    def __post_init__(self):
        if self.kind not in CLASSES:
            raise DomainError(f"unknown test function class {self.kind!r}")
        if self.kind == "segment_C12" and self.segment is None:
            raise DomainError("segment test functions need their segment")

    def _unwrap(self, u):
        u = np.asarray(u, dtype=float)
        if self.kind != "segment_C12":
            return u, np.ones(u.shape, dtype=bool)
        a, b = self.segment
        uu = np.where(u < a, u + 1.0, u)
        return uu, (uu >= a) & (uu <= b)

    def _eval(self, fn, u, t):
        uu, inside = self._unwrap(u)
        out = np.asarray(fn(uu, t), dtype=float) * np.ones(uu.shape)
        return np.where(inside, out, 0.0)

    def __call__(self, u, t=0.0):
        return self._eval(self.f, u, t)

    def grad(self, u, t=0.0):
        return self._eval(self.d1, u, t)

    def lap(self, u, t=0.0):
        return self._eval(self.d2, u, t)

    def dt(self, u, t=0.0):
        return self._eval(self.ds, u, t)

    def sup_grad(self, n: int = 4096) -> float:
        """``sup |dH/du|`` estimated on a fine grid (away from the jumps)."""
        u = (np.arange(n) + 0.5) / n
        return float(np.abs(self.grad(u)).max())

    @classmethod
    def torus(cls, f, d1, d2, label="") -> "TestFunction":
        """Smooth periodic ``H`` from callables of ``u``."""
        return cls("C2_torus", lambda u, t=0.0: f(u), lambda u, t=0.0: d1(u), lambda u, t=0.0: d2(u), label=label)

    @classmethod
    def fourier(cls, mode: int, kind: str = "cos") -> "TestFunction":
        w = 2 * np.pi * mode
        if kind == "cos":
            return cls.torus(lambda u: np.cos(w * u), lambda u: -w * np.sin(w * u),
                             lambda u: -w * w * np.cos(w * u), label=f"cos{mode}")
        if kind == "sin":
            return cls.torus(lambda u: np.sin(w * u), lambda u: w * np.cos(w * u),
                             lambda u: -w * w * np.sin(w * u), label=f"sin{mode}")
        raise DomainError(f"kind must be 'cos' or 'sin', got {kind!r}")

    @classmethod
    def on_segment(cls, a: float, b: float, f, d1, d2, ds=None, label="") -> "TestFunction":
        """``H(t, u) = f(t, u)`` on ``[a, b]`` and 0 elsewhere; callables take ``(u, t)``."""
        a, b = float(a), float(b)
        if b <= a:
            b += 1.0
        if not 0 < b - a <= 1:
            raise DomainError(f"bad segment [{a}, {b}]")
        return cls("segment_C12", f, d1, d2, ds or _zero, segment=(a, b), label=label)


def build_cw(h: Callable, a: float, slow_points: Sequence, *, degree: int = 128, label: str = "") -> TestFunction:
    """Function of the W-domain with ``d/dx d/dW H = h``.

    ``H(x) = a + b x + G(x) + sum_{0 < b_i <= x} (b + F(b_i))`` with
    ``F = int_0 h``, ``G = int_0 F`` and ``b`` fixed by periodicity.  ``h``
    must be continuous with zero mean; it is replaced internally by a
    Chebyshev interpolant of the given degree.
    """
    pts = sorted(float(exact(p)) for p in slow_points)
    mean, _ = integrate.quad(lambda z: float(h(z)), 0.0, 1.0, limit=400, epsabs=1e-13, epsrel=1e-13)
    if abs(mean) > 1e-10:
        raise DomainError(f"h must integrate to zero, got {mean:.3e}")
    cheb = np.polynomial.Chebyshev.interpolate(lambda z: np.asarray(h(z), dtype=float) * np.ones_like(z),
                                               degree, domain=[0.0, 1.0])
    F = cheb.integ(lbnd=0.0)
    F = F - F(1.0) * np.polynomial.Chebyshev([0.0, 1.0], domain=[0.0, 1.0])
    hh = F.deriv()
    G = F.integ(lbnd=0.0)
    atoms = [1.0 if p == 0.0 else p for p in pts]
    k = len(pts)
    slope = -(float(G(1.0)) + sum(float(F(p)) for p in atoms)) / (1 + k)
    jumps = tuple(slope + float(F(p)) for p in atoms)

    def H(u, t=0.0):
        u = np.mod(np.asarray(u, dtype=float), 1.0)
        out = a + slope * u + G(u)
        for p, j in zip(atoms, jumps):
            out = out + np.where(u >= p, j, 0.0)
        return out

    def dH(u, t=0.0):
        return slope + F(np.mod(np.asarray(u, dtype=float), 1.0))

    def d2H(u, t=0.0):
        return hh(np.mod(np.asarray(u, dtype=float), 1.0))

    tf = TestFunction("CW", H, dH, d2H, slow_points=tuple(pts), triple=(a, slope, h), jumps=jumps, label=label)
    r1, r2 = cw_constraints(tf)
    if abs(r1) > 1e-10 or abs(r2) > 1e-10:
        raise DomainError(f"W-domain constraints violated: {r1:.3e}, {r2:.3e}")
    return tf


def cw_constraints(H: TestFunction) -> tuple:
    """``(int h, int_(0,1] (b + F) dW)`` for a ``CW`` function; both vanish."""
    if H.kind != "CW":
        raise DomainError("constraints apply to CW functions only")
    r1, _ = integrate.quad(lambda z: float(H.d2(z)), 0.0, 1.0, limit=400, epsabs=1e-13)
    r2, _ = integrate.quad(lambda z: float(H.d1(z)), 0.0, 1.0, limit=400, epsabs=1e-13)
    atoms = [1.0 if p == 0.0 else p for p in H.slow_points]
    r2 += sum(float(H.d1(p)) for p in atoms)
    return r1, r2


# ---------------------------------------------------------------- trajectories

@dataclass
class MartingaleTrace:
    """``M_t(H)`` at the snapshot times of one trajectory.

    ``predictable`` is the compensator ``<M(H)>_t`` and ``bracket`` the
    realised sum of squared jumps ``[M(H)]_t``, when requested.
    """

    times: np.ndarray
    values: np.ndarray
    pairing: np.ndarray
    predictable: Optional[np.ndarray] = None
    bracket: Optional[np.ndarray] = None
    peak_rate: Optional[float] = None


def _require_events(series: SnapshotSeries):
    if not series.has_events:
        raise DomainError("trajectory has no event log; simulate with record_events=True "
                          "to integrate along the path exactly")


def path_integrals(series: SnapshotSeries, weights: np.ndarray, times: Optional[Sequence[float]] = None) -> tuple:
    """Exact ``int_0^t sum_y w[y] eta_s(y) ds`` and ``sum_y w[y] eta_t(y)``.

    ``weights`` has shape ``(K, N)``; returns two ``(K, len(times))`` arrays.
    """
    _require_events(series)
    w = np.atleast_2d(np.asarray(weights, dtype=float))
    q = np.asarray(series.times if times is None else times, dtype=float)
    if np.any(np.diff(q) < 0) or (q.size and (q[0] < 0 or q[-1] > series.horizon)):
        raise DomainError("query times must be sorted and inside [0, horizon]")
    ints = np.zeros((w.shape[0], q.size))
    vals = np.zeros((w.shape[0], q.size))
    K.replay_linear(series.configs[0].astype(np.int64), series.event_times, series.event_bonds, w, q, ints, vals)
    return ints, vals


def dynkin_martingale(series: SnapshotSeries, H, *, quadratic_variation: bool = False) -> MartingaleTrace:
    """``M_t(H) = <pi_t,H> - <pi_0,H> - int_0^t <pi_s, N^2 L_N H> ds`` at every snapshot time."""
    spec = series.spec
    N = spec.N
    Hx = sample_grid(H, N)
    LH = discrete_operator_apply(spec, Hx) * float(N) ** 2
    ints, vals = path_integrals(series, np.stack([Hx / N, LH / N]))
    m = vals[0] - vals[0, 0] - ints[1]
    trace = MartingaleTrace(series.times.copy(), m, vals[0].copy())
    if quadratic_variation:
        trace.predictable, trace.peak_rate = predictable_variation(series, Hx)
        trace.bracket = realised_variation(series, Hx)
    return trace


def _jump_weights(spec: LatticeSpec, Hx: np.ndarray) -> np.ndarray:
    dH = np.roll(Hx, -1) - Hx
    return spec.conductances() * dH ** 2


def predictable_variation(series: SnapshotSeries, H) -> tuple:
    """``<M(H)>_t = int_0^t sum_x xi_x (eta(x)-eta(x+1))^2 (H((x+1)/N)-H(x/N))^2 ds``.

    The ``N^2`` jump rate and the ``1/N^2`` from the pairing cancel.
    Returns the values at the snapshot times and the largest integrand seen.
    """
    _require_events(series)
    Hx = sample_grid(H, series.spec.N)
    out = np.zeros(series.times.size)
    peak = K.replay_active_sum(series.configs[0].astype(np.int64), series.event_times, series.event_bonds,
                               _jump_weights(series.spec, Hx), series.times, out)
    return out, float(peak)


def realised_variation(series: SnapshotSeries, H) -> np.ndarray:
    """Sum of squared jumps of ``<pi_t, H>`` up to each snapshot time."""
    _require_events(series)
    N = series.spec.N
    Hx = sample_grid(H, N)
    jumps = ((np.roll(Hx, -1) - Hx) / N) ** 2
    csum = np.concatenate([[0.0], np.cumsum(jumps[series.event_bonds])])
    idx = np.searchsorted(series.event_times, series.times, side="right")
    return csum[idx]


def variance_bound(T: float, N: int, sup_grad: float) -> float:
    """``T/N * ||dH/du||_inf^2``."""
    return T / N * sup_grad ** 2


def mean_and_se(samples) -> tuple:
    x = np.asarray(samples, dtype=float)
    n = x.shape[0]
    if n < 2:
        raise DomainError("need at least two replicas")
    return x.mean(axis=0), x.std(axis=0, ddof=1) / math.sqrt(n)


def variance_and_se(samples) -> tuple:
    """Unbiased variance and the standard error of that estimator."""
    x = np.asarray(samples, dtype=float)
    n = x.shape[0]
    if n < 4:
        raise DomainError("need at least four replicas")
    c = x - x.mean(axis=0)
    s2 = (c ** 2).sum(axis=0) / (n - 1)
    m4 = (c ** 4).mean(axis=0)
    var_s2 = (m4 - s2 ** 2 * (n - 3) / (n - 1)) / n
    return s2, np.sqrt(np.maximum(var_s2, 0.0))


def replacement_integrals(series: SnapshotSeries, x: int, eps, T: Optional[float] = None) -> float:
    """``int_0^T (eta_s(x) - eta_s^{eps N}(x)) ds`` along one trajectory."""
    spec = series.spec
    T = series.horizon if T is None else float(T)
    L = window_length(eps, spec.N)
    # integer weights keep constant configurations at exactly zero
    w = -np.rint(box_weights(spec, x, eps) * L)
    w[x % spec.N] += L
    ints, _ = path_integrals(series, w[None, :], [T])
    return float(ints[0, 0]) / L


def replacement_estimator(ensemble: Iterable[SnapshotSeries], x: int, eps, T: Optional[float] = None) -> tuple:
    """Monte Carlo estimate of ``E|int_0^T (eta_s(x) - eta_s^{eps N}(x)) ds|`` with its standard error.

    ``ensemble`` may be a generator; replicas are consumed one at a time.
    """
    vals = [abs(replacement_integrals(s, x, eps, T)) for s in ensemble]
    if not vals:
        raise DomainError("empty ensemble")
    if len(vals) == 1:
        return vals[0], float("nan")
    m, se = mean_and_se(vals)
    return float(m), float(se)


def _vn_support(spec: LatticeSpec, Hx: np.ndarray, L: int):
    if spec.beta_exact < 1 or not spec.k:
        return
    N = spec.N
    x = np.arange(N)
    for s in spec.slow_bonds:
        bad = (s - x) % N < L
        if np.any(np.abs(Hx[bad]) > 1e-12):
            raise DomainError("H must vanish wherever the pair (x, x + eps N) straddles a slow bond")


def vn_weights(spec: LatticeSpec, H, eps) -> tuple:
    """Weights ``w`` and constant ``c`` with ``V_N(eps, H, eta) = sum_y w[y] eta(y) - c``."""
    N = spec.N
    L = window_length(eps, N)
    if not 1 <= L < N:
        raise DomainError(f"eps*N must be in 1..N-1 (eps={eps}, N={N})")
    Hx = sample_grid(H, N)
    _vn_support(spec, Hx, L)
    w = (Hx - np.roll(Hx, L)) / L
    c = 2.0 / N * float(np.sum(Hx ** 2))
    return w, c


def energy_functional_vn(config: Configuration, H, eps, spec: LatticeSpec) -> float:
    """``(1/eps N) sum_x H(x/N)(eta(x) - eta(x + eps N)) - (2/N) sum_x H(x/N)^2``."""
    occ = config.occupancy if isinstance(config, Configuration) else np.asarray(config)
    if occ.shape != (spec.N,):
        raise DomainError("configuration size does not match the lattice")
    w, c = vn_weights(spec, H, eps)
    return float(w @ occ - c)


def energy_time_integral(series: SnapshotSeries, H, eps, T: Optional[float] = None) -> float:
    """``int_0^T V_N(eps, H, eta_s) ds`` along one trajectory."""
    T = series.horizon if T is None else float(T)
    w, c = vn_weights(series.spec, H, eps)
    ints, _ = path_integrals(series, w[None, :], [T])
    return float(ints[0, 0] - c * T)


def entropy_ceiling(alpha: float) -> float:
    """``-log(min(alpha, 1 - alpha))``."""
    if not 0 < alpha < 1:
        raise DomainError("alpha must lie in (0, 1)")
    return -math.log(min(alpha, 1 - alpha))


def vn_slow_bond_term(spec: LatticeSpec, H, eps) -> float:
    """``(2/(eps N)) sum_x H^2 {eps + N^(beta-1) sum_i 1[b_i, b_i + eps)(x/N)}``."""
    N = spec.N
    e = float(exact(eps))
    Hx = sample_grid(H, N)
    u = spec.positions
    ind = np.zeros(N)
    for b in spec.slow_points:
        ind += (np.mod(u - b, 1.0) < e)
    scale = float(N) ** (float(spec.beta_exact) - 1)
    return float(2.0 / (e * N) * np.sum(Hx ** 2 * (e + scale * ind)))


# ---------------------------------------------------------------- PDE residuals

def _trapezoid(y, t):
    if t.size < 2:
        return 0.0
    return float(np.sum(0.5 * (y[1:] + y[:-1]) * np.diff(t)))


def weak_form_residual(sol: PdeSolution, H: TestFunction, t: float) -> float:
    """Left-hand side of the weak formulation matching ``sol.regime`` at time ``t``.

    Space integrals use the cell midpoint rule on the solution grid, time
    integrals the trapezoidal rule on the stored times.
    """
    want = MATCHING_CLASS[sol.regime]
    if H.kind != want:
        raise DomainError(f"{sol.regime} needs a {want} test function, got {H.kind}")
    n = sol.time_index(t)
    times = sol.times[: n + 1]
    rho = sol.values[: n + 1]
    c = sol.centers
    h = sol.h
    if H.kind != "segment_C12":
        if H.kind == "CW":
            mine = sorted(H.slow_points)
            if not np.allclose(mine, sorted(sol.slow_points), atol=1e-12):
                raise DomainError("test function and solution have different slow points")
        Hc = H(c)
        inner = rho @ H.lap(c) * h
        return float((rho[-1] - rho[0]) @ Hc * h - _trapezoid(inner, times))
    a, b = H.segment
    fa = slow_face_indices(sol.M, [a % 1.0])[0]
    fb = slow_face_indices(sol.M, [b % 1.0])[0]
    if fa not in sol.slow_faces or fb not in sol.slow_faces:
        raise DomainError("segment ends must be slow points of the solution")
    idx = np.arange(fa, fa + int(round((b - a) * sol.M))) % sol.M
    others = set(sol.slow_faces) - {fa, fb}
    if any(f in others for f in (idx % sol.M)):
        raise DomainError("segment is not an arc between consecutive slow points")
    u = c[idx]
    u = np.where(u < a, u + 1.0, u)
    Hst = np.array([H.f(u, s) for s in times])
    gen = np.array([H.d2(u, s) + H.ds(u, s) for s in times])
    seg = rho[:, idx]
    bulk = (seg[-1] @ Hst[-1] - seg[0] @ Hst[0]) * h - _trapezoid((seg * gen).sum(axis=1) * h, times)
    left_trace = one_sided(rho, sol.M, fb, "left")[0]
    right_trace = one_sided(rho, sol.M, fa, "right")[0]
    dHb = np.array([float(H.d1(np.array(b), s)) for s in times])
    dHa = np.array([float(H.d1(np.array(a), s)) for s in times])
    return float(bulk + _trapezoid(dHb * left_trace, times) - _trapezoid(dHa * right_trace, times))


# ---------------------------------------------------------------- reporting

@dataclass
class DiagnosticRecord:
    name: str
    params: dict
    value: float
    stderr: float = float("nan")
    bound: float = float("nan")
    passed: Optional[bool] = None

    @property
    def status(self) -> str:
        if self.passed is None:
            return "report"
        return "pass" if self.passed else "fail"
