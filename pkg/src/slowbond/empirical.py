"""Empirical measures, box averages and the one-sided mollifier.

Two kinds of densities are handled:

* :class:`EmpiricalDensity` -- mass ``values[i] / N`` at the lattice point
  ``i/N`` (``values`` is an occupation vector, or a replica average of them);
* :class:`GridDensity` -- a step function equal to ``values[j]`` on the cell
  ``[j/M, (j+1)/M)``, as produced by the PDE solvers.

The mollifier averages over a window of width ``eps`` to the right of the
evaluation point ``v``.  When that window would run into a slow point ``b``,
the window ``(b - eps, b)`` on the left of ``b`` is used instead, so the
average never mixes the two sides of a slow bond.
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import Callable, Sequence, Union

import numpy as np

from .errors import DomainError
from .lattice import Configuration, LatticeSpec, exact, sample_grid, slow_bond_index, window_length


@dataclass(frozen=True)
class EmpiricalDensity:
    values: np.ndarray

    def __post_init__(self):
        v = np.asarray(self.values, dtype=float)
        if v.ndim != 1 or v.size == 0:
            raise DomainError("density values must be a nonempty 1-d array")
        if np.any(v < 0) or np.any(v > 1):
            raise DomainError("occupation values must lie in [0, 1]")
        object.__setattr__(self, "values", v)

    @classmethod
    def of(cls, config: Union[Configuration, np.ndarray]) -> "EmpiricalDensity":
        occ = config.occupancy if isinstance(config, Configuration) else config
        return cls(np.asarray(occ, dtype=float))

    @property
    def N(self) -> int:
        return self.values.size

    def mass(self) -> float:
        return float(self.values.sum() / self.N)


@dataclass(frozen=True)
class GridDensity:
    values: np.ndarray

    def __post_init__(self):
        v = np.asarray(self.values, dtype=float)
        if v.ndim != 1 or v.size == 0:
            raise DomainError("density values must be a nonempty 1-d array")
        object.__setattr__(self, "values", v)

    @property
    def M(self) -> int:
        return self.values.size

    def primitive(self, x: np.ndarray) -> np.ndarray:
        """``int_0^x`` of the periodic step function, any real ``x``."""
        x = np.asarray(x, dtype=float)
        M = self.M
        cum = np.concatenate([[0.0], np.cumsum(self.values)]) / M
        whole = np.floor(x)
        frac = x - whole
        z = frac * M
        j = np.minimum(np.floor(z).astype(np.int64), M - 1)
        return whole * cum[-1] + cum[j] + (z - j) * self.values[j] / M

    def window_mean(self, lo, hi) -> np.ndarray:
        lo = np.asarray(lo, dtype=float)
        hi = np.asarray(hi, dtype=float)
        return (self.primitive(hi) - self.primitive(lo)) / (hi - lo)

    def mass(self, a: float = 0.0, b: float = 1.0) -> float:
        return float(self.primitive(b) - self.primitive(a))


def pair(config: Union[Configuration, np.ndarray], H: Union[Callable, np.ndarray]) -> float:
    """``<pi^N, H> = (1/N) sum_x H(x/N) eta(x)``."""
    occ = config.occupancy if isinstance(config, Configuration) else np.asarray(config, dtype=float)
    N = occ.size
    return float(np.dot(sample_grid(H, N), occ) / N)


def _check_windows(spec: LatticeSpec, L: int):
    idx = np.sort(spec.slow_bonds)
    if idx.size > 1:
        d = np.diff(np.concatenate([idx, [idx[0] + spec.N]]))
        if d.min() <= L:
            raise DomainError("a box would contain two slow bonds; decrease eps")


def box_averages(values: Union[Configuration, np.ndarray], spec: LatticeSpec, eps) -> np.ndarray:
    """Box average ``eta^{eps N}(x)`` for every site, indexed by ``x mod N``.

    For ``beta < 1`` this is the mean over ``x+1..x+eps N``.  For
    ``beta >= 1`` the sites ``x`` whose box ``{x, ..., x + eps N}`` contains the
    left vertex ``Nb`` of a slow bond use ``Nb - eps N + 1 .. Nb`` instead.
    """
    v = values.occupancy if isinstance(values, Configuration) else np.asarray(values, dtype=float)
    N = spec.N
    if v.shape != (N,):
        raise DomainError(f"values have shape {v.shape}, expected ({N},)")
    L = spec.check_eps(eps)
    cs = np.concatenate([[0.0], np.cumsum(np.concatenate([v, v]).astype(float))])
    i = np.arange(N)
    out = (cs[i + L + 1] - cs[i + 1]) / L
    if spec.beta_exact >= 1:
        _check_windows(spec, L)
        for s in spec.slow_bonds:
            start = (s - L + 1) % N
            left_mean = (cs[start + L] - cs[start]) / L
            out[(s - np.arange(L + 1)) % N] = left_mean
    return out


def box_average(config: Union[Configuration, np.ndarray], spec: LatticeSpec, x: int, eps) -> float:
    """Box average at site ``x`` (``1 <= x <= N``); see :func:`box_averages`."""
    if not 1 <= x <= spec.N:
        raise DomainError(f"site {x} outside 1..{spec.N}")
    return float(box_averages(config, spec, eps)[x % spec.N])


def _lattice_mollify(density: EmpiricalDensity, eps, slow_points, v):
    N = density.N
    L = window_length(eps, N)
    if L < 1:
        raise DomainError(f"eps*N must be at least 1 (eps={eps}, N={N})")
    z = np.asarray(v, dtype=float) * N
    near = np.abs(z - np.rint(z)) < 1e-9
    z = np.where(near, np.rint(z), z)
    base = np.floor(z).astype(np.int64)
    vals = density.values
    cs = np.concatenate([[0.0], np.cumsum(np.concatenate([vals, vals]))])
    b0 = np.mod(base, N)
    out = (cs[b0 + L + 1] - cs[b0 + 1]) / L
    for b in slow_points:
        s = slow_bond_index(exact(b), N)
        hit = np.mod(s - z, N) <= L + 1e-9
        start = (s - L + 1) % N
        out = np.where(hit, (cs[start + L] - cs[start]) / L, out)
    return out


def _grid_mollify(density: GridDensity, eps, slow_points, v):
    e = float(exact(eps))
    v = np.asarray(v, dtype=float)
    lo, hi = v.copy(), v + e
    for b in slow_points:
        b = float(b)
        hit = np.mod(b - v, 1.0) < e
        hit &= ~np.isclose(np.mod(b - v, 1.0), e, rtol=0, atol=1e-12)
        # v on b itself (distance ~1 after the mod) belongs to the left window
        hit |= np.isclose(np.mod(b - v + 0.5, 1.0), 0.5, rtol=0, atol=1e-12)
        lo = np.where(hit, b - e, lo)
        hi = np.where(hit, b, hi)
    return density.window_mean(lo, hi)


def mollify(density: Union[EmpiricalDensity, GridDensity], eps, slow_points: Sequence, v):
    """Convolution of ``density`` with the slow-point-avoiding window kernel.

    For an :class:`EmpiricalDensity` of size ``N`` the window width is
    ``floor(eps N) / N`` and a window is diverted when ``[v, v + eps]``
    reaches the left vertex of a slow bond; at ``v = x/N`` this reproduces
    :func:`box_averages` exactly.  For a :class:`GridDensity` the window is
    ``(v, v + eps)``, diverted to ``(b - eps, b)`` for ``v`` in ``(b - eps, b]``.

    Pass ``slow_points=()`` for the plain right window (``beta < 1``).
    """
    pts = [float(exact(b)) for b in slow_points]
    if len(pts) > 1:
        s = sorted(pts)
        gap = min(np.diff(s + [s[0] + 1.0]))
        if float(exact(eps)) >= gap:
            raise DomainError(f"eps={eps} must be below the slow-point gap {gap}")
    scalar = np.ndim(v) == 0
    if isinstance(density, EmpiricalDensity):
        out = _lattice_mollify(density, eps, pts, v)
    elif isinstance(density, GridDensity):
        out = _grid_mollify(density, eps, pts, v)
    else:
        raise DomainError(f"cannot mollify a {type(density).__name__}")
    return float(out) if scalar else out


def one_sided_means(density: GridDensity, eps: float, b: float) -> tuple:
    """Averages over ``(b - eps, b)`` and ``(b, b + eps)``."""
    e = float(eps)
    left = float(density.window_mean(b - e, b))
    right = float(density.window_mean(b, b + e))
    return left, right


def box_weights(spec: LatticeSpec, x: int, eps) -> np.ndarray:
    """Weights ``w`` with ``sum_y w[y] eta(y)`` equal to the box average at ``x``."""
    if not 1 <= x <= spec.N:
        raise DomainError(f"site {x} outside 1..{spec.N}")
    N = spec.N
    L = spec.check_eps(eps)
    i = x % N
    first = i + 1
    if spec.beta_exact >= 1:
        _check_windows(spec, L)
        for s in spec.slow_bonds:
            if (s - i) % N <= L:
                first = s - L + 1
    w = np.zeros(N)
    w[(first + np.arange(L)) % N] = 1.0 / L
    return w
