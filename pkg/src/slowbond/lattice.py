"""Discrete torus with slow bonds: geometry, conductances, configurations.

Sites carry the labels ``1..N``.  Every array in this package that lives on
the lattice is indexed by ``x mod N`` so that entry ``i`` sits at the
macroscopic position ``i/N`` of the continuous torus ``[0, 1)``; site ``N``
is therefore stored at index 0.  Bond ``i`` joins sites ``i`` and ``i+1``.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from fractions import Fraction
from typing import Callable, Iterable, Sequence, Union

import numpy as np

from .errors import DomainError

Real = Union[int, float, str, Fraction]


def exact(value: Real) -> Fraction:
    """Exact rational for a number given as int, decimal string or float.

    Floats go through their shortest repr, so ``0.1`` becomes ``1/10``.
    """
    if isinstance(value, Fraction):
        return value
    if isinstance(value, (int, np.integer)):
        return Fraction(int(value))
    if isinstance(value, (float, np.floating)):
        if not math.isfinite(value):
            raise DomainError(f"non-finite value {value!r}")
        return Fraction(repr(float(value)))
    if isinstance(value, str):
        try:
            return Fraction(value.strip())
        except ValueError as exc:
            raise DomainError(f"cannot parse number {value!r}") from exc
    raise DomainError(f"unsupported numeric type {type(value).__name__}")


def window_length(eps: Real, N: int) -> int:
    """Integer part of ``eps * N``, computed exactly."""
    return math.floor(exact(eps) * N)


def slow_bond_index(b: Fraction, N: int) -> int:
    """Array index of the left vertex of the bond whose interval holds ``b``.

    The bond ``(x, x+1)`` covers ``(x/N, (x+1)/N]``; a point sitting on a
    vertex therefore belongs to the bond on its left.
    """
    return (math.ceil(b * N) - 1) % N


def regime_of(beta: Real) -> str:
    """PDE regime selected by the slow-bond exponent."""
    b = exact(beta)
    if b < 1:
        return "heat_periodic"
    if b == 1:
        return "w_equation"
    return "neumann_segments"


@dataclass(frozen=True)
class LatticeSpec:
    """Torus size, slow-bond exponent and macroscopic slow points.

    ``slow_points`` may be given as decimal strings to keep vertex
    membership exact.  Derived fields are filled on construction.
    """

    N: int
    beta: Real
    slow_points: Sequence[Real] = ()
    beta_exact: Fraction = field(init=False, repr=False)
    points_exact: tuple = field(init=False, repr=False)
    slow_left_vertices: tuple = field(init=False)
    min_gap: float = field(init=False, repr=False)

    def __post_init__(self):
        N = self.N
        if not isinstance(N, (int, np.integer)) or N < 1:
            raise DomainError(f"N must be a positive integer, got {N!r}")
        beta = exact(self.beta)
        if beta < 0:
            raise DomainError(f"beta must be nonnegative, got {self.beta}")
        pts = [exact(b) for b in self.slow_points]
        for b in pts:
            if not 0 <= b < 1:
                raise DomainError(f"slow point {b} outside [0, 1)")
        pts.sort()
        if len(set(pts)) != len(pts):
            raise DomainError("slow points must be pairwise distinct")
        k = len(pts)
        if 4 * k > N:
            raise DomainError(f"k={k} slow bonds need N >= {4 * k}, got N={N}")
        idx = [slow_bond_index(b, N) for b in pts]
        if len(set(idx)) != k:
            raise DomainError(f"two slow points share one bond at N={N}")
        taken = set(idx)
        for i in idx:
            if (i + 1) % N in taken:
                raise DomainError(f"slow bonds {i} and {(i + 1) % N} are adjacent at N={N}")
        if k > 1:
            gaps = [pts[j + 1] - pts[j] for j in range(k - 1)] + [1 + pts[0] - pts[-1]]
            gap = float(min(gaps))
        else:
            gap = 1.0
        object.__setattr__(self, "N", int(N))
        object.__setattr__(self, "beta_exact", beta)
        object.__setattr__(self, "points_exact", tuple(pts))
        object.__setattr__(self, "slow_points", tuple(float(b) for b in pts))
        object.__setattr__(self, "slow_left_vertices", tuple(i if i else N for i in idx))
        object.__setattr__(self, "min_gap", gap)

    @property
    def k(self) -> int:
        return len(self.slow_points)

    @property
    def slow_bonds(self) -> np.ndarray:
        """Array indices of the left vertices of the slow bonds."""
        return np.array([v % self.N for v in self.slow_left_vertices], dtype=np.int64)

    @property
    def slow_rate(self) -> float:
        return float(self.N) ** (-float(self.beta_exact))

    @property
    def regime(self) -> str:
        return regime_of(self.beta_exact)

    @property
    def mollifier_points(self) -> tuple:
        """Slow points the box averages must avoid (none when beta < 1)."""
        return self.slow_points if self.beta_exact >= 1 else ()

    @property
    def positions(self) -> np.ndarray:
        return np.arange(self.N) / self.N

    def conductances(self) -> np.ndarray:
        """Conductance of bond ``i`` (joining ``i`` and ``i+1``) at index ``i``."""
        xi = np.ones(self.N)
        xi[self.slow_bonds] = self.slow_rate
        return xi

    def check_eps(self, eps: Real) -> int:
        """Validate a box width and return ``floor(eps*N)``."""
        L = window_length(eps, self.N)
        if L < 1:
            raise DomainError(f"eps*N must be at least 1 (eps={eps}, N={self.N})")
        if self.k and float(exact(eps)) >= self.min_gap:
            raise DomainError(f"eps={eps} must be below the slow-point gap {self.min_gap}")
        if L >= self.N:
            raise DomainError(f"eps={eps} covers the whole torus")
        return L


def conductance(spec: LatticeSpec, x: int) -> float:
    """Conductance of the bond ``(x, x+1)``, ``1 <= x <= N``."""
    if not 1 <= x <= spec.N:
        raise DomainError(f"site {x} outside 1..{spec.N}")
    return spec.slow_rate if (x % spec.N) in set(spec.slow_bonds.tolist()) else 1.0


@dataclass(frozen=True)
class Configuration:
    """Occupation numbers ``eta(x)`` in {0, 1}, stored at index ``x mod N``."""

    occupancy: np.ndarray

    def __post_init__(self):
        occ = np.asarray(self.occupancy)
        if occ.ndim != 1 or occ.size == 0:
            raise DomainError("occupancy must be a nonempty 1-d array")
        if not np.all((occ == 0) | (occ == 1)):
            raise DomainError("occupancy values must be 0 or 1")
        occ = occ.astype(np.uint8, copy=True)
        occ.flags.writeable = False
        object.__setattr__(self, "occupancy", occ)

    @classmethod
    def from_sites(cls, values: Union[str, Iterable[int]]) -> "Configuration":
        """Build from occupations listed in site order ``1..N`` (e.g. ``"1100"``)."""
        vals = [int(c) for c in values] if isinstance(values, str) else [int(v) for v in values]
        return cls(np.roll(np.array(vals, dtype=np.uint8), 1))

    def sites(self) -> str:
        """Occupations in site order ``1..N`` as a 0/1 string."""
        return "".join(str(v) for v in np.roll(self.occupancy, -1))

    @property
    def N(self) -> int:
        return self.occupancy.size

    def __getitem__(self, x: int) -> int:
        return int(self.occupancy[x % self.N])

    def particles(self) -> int:
        return int(self.occupancy.sum())

    def mutable(self) -> np.ndarray:
        """Writable copy of the occupancy array."""
        return self.occupancy.copy()

    def __eq__(self, other):
        return isinstance(other, Configuration) and np.array_equal(self.occupancy, other.occupancy)

    def __hash__(self):
        return hash(self.occupancy.tobytes())


def exchange(config: Configuration, x: int) -> Configuration:
    """Configuration with the occupations of ``x`` and ``x+1`` swapped."""
    N = config.N
    if not 1 <= x <= N:
        raise DomainError(f"site {x} outside 1..{N}")
    occ = config.mutable()
    i, j = x % N, (x + 1) % N
    occ[i], occ[j] = occ[j], occ[i]
    return Configuration(occ)


def sample_grid(H: Union[Callable, np.ndarray], N: int) -> np.ndarray:
    """Values of ``H`` at ``i/N`` for ``i = 0..N-1`` (arrays pass through)."""
    if callable(H):
        return np.asarray(H(np.arange(N) / N), dtype=float) * np.ones(N)
    arr = np.asarray(H, dtype=float)
    if arr.shape != (N,):
        raise DomainError(f"grid function has shape {arr.shape}, expected ({N},)")
    return arr


def discrete_operator_apply(spec: LatticeSpec, H: Union[Callable, np.ndarray]) -> np.ndarray:
    """Random-walk generator with the slow-bond conductances applied to ``H``.

    ``(L H)(x) = xi_{x,x+1} [H(x+1) - H(x)] + xi_{x-1,x} [H(x-1) - H(x)]``,
    without the ``N^2`` diffusive factor.
    """
    Hx = sample_grid(H, spec.N)
    xi = spec.conductances()
    return xi * (np.roll(Hx, -1) - Hx) + np.roll(xi, 1) * (np.roll(Hx, 1) - Hx)
