"""Solvers for the three limit equations and the lattice ODE oracle.

All continuum solvers share one conservative finite-volume layout: ``M``
cells ``[j/M, (j+1)/M)`` holding cell averages, slow points on cell faces,
and a flux ``c * (phi_right - phi_left) / h`` through every face.  The three
regimes differ only in the conductance ``c`` of the slow faces:

* ``heat_periodic``: 1 (the slow points are invisible);
* ``w_equation``: ``h / (1 + h)`` by default, which is the inverse of the
  W-measure (length plus the unit atom) between the two neighbouring cell
  centres.  ``slow_face="lattice"`` uses ``h`` instead, which makes the
  matrix identical to ``N^2`` times the lattice generator at ``N = M``,
  ``beta = 1`` but is only first-order accurate at the interface;
* ``neumann_segments``: 0, so each arc between slow points evolves alone.

Time stepping is Crank-Nicolson on a fixed step.  If the first step
overshoots the initial range (rough data, large ``dt``), the first five
steps are redone with backward Euler to damp the high modes.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import Callable, Optional, Sequence, Union

import numpy as np
import scipy.linalg
import scipy.sparse as sp
import scipy.sparse.linalg as spla

from .errors import DomainError, NumericError
from .lattice import LatticeSpec, exact
from .simulator import InitialProfile

REGIMES = ("heat_periodic", "w_equation", "neumann_segments")
STARTUP_STEPS = 2  # full steps covered by backward-Euler half steps

Initial = Union[InitialProfile, Callable, np.ndarray]


@dataclass
class PdeSolution:
    """Cell averages ``values[n, j]`` at ``times[n]`` on ``M`` cells.

    ``slow_faces[i]`` is the face index of ``slow_points[i]``; the
    interface traces are available through :meth:`trace`.
    """

    regime: str
    M: int
    dt: float
    slow_points: tuple
    times: np.ndarray
    values: np.ndarray
    slow_face: str = "consistent"
    slow_faces: tuple = field(default=())

    @property
    def h(self) -> float:
        return 1.0 / self.M

    @property
    def faces(self) -> np.ndarray:
        return np.arange(self.M) / self.M

    @property
    def centers(self) -> np.ndarray:
        return (np.arange(self.M) + 0.5) / self.M

    def at(self, t: float) -> np.ndarray:
        """Profile at the stored time nearest to ``t``."""
        return self.values[self.time_index(t)]

    def time_index(self, t: float) -> int:
        i = int(np.argmin(np.abs(self.times - t)))
        if abs(self.times[i] - t) > 1e-9 * max(1.0, abs(t)):
            raise DomainError(f"time {t} not on the solution's time grid")
        return i

    def mass(self, n: Optional[int] = None) -> np.ndarray:
        vals = self.values if n is None else self.values[n]
        return vals.sum(axis=-1) / self.M

    def segment_mass(self) -> np.ndarray:
        """Mass of each arc ``[b_i, b_{i+1})`` over time, shape ``(n_t, k)``."""
        f = list(self.slow_faces)
        if not f:
            return self.mass()[:, None]
        out = []
        for a, b in zip(f, f[1:] + [f[0] + self.M]):
            idx = np.arange(a, b) % self.M
            out.append(self.values[:, idx].sum(axis=1) / self.M)
        return np.stack(out, axis=1)

    def trace(self, b: float, side: str) -> np.ndarray:
        return weak_solution_trace(self, b, side)

    @property
    def traces(self) -> dict:
        """``{b: (left trace, right trace)}`` for every slow point."""
        if self.regime == "heat_periodic":
            return {}
        return {b: (self.trace(b, "left"), self.trace(b, "right")) for b in self.slow_points}


@dataclass
class EigenSystem:
    """Lowest eigenpairs of the negated cell operator.

    ``modes[n]`` is orthonormal in ``<f, g> = h * sum f g``.
    """

    eigenvalues: np.ndarray
    modes: np.ndarray
    M: int
    slow_points: tuple

    def inner(self, f: np.ndarray) -> np.ndarray:
        return self.modes @ f / self.M

    def propagate(self, gamma: np.ndarray, t: float) -> np.ndarray:
        """``sum_n exp(-lambda_n t) <gamma, F_n> F_n`` over the stored modes."""
        return (np.exp(-self.eigenvalues * t) * self.inner(gamma)) @ self.modes


@dataclass
class LatticeEvolution:
    """Solution of ``d phi/dt = N^2 L_N phi`` at the requested times."""

    spec: LatticeSpec
    times: np.ndarray
    values: np.ndarray

    def at(self, t: float) -> np.ndarray:
        i = int(np.argmin(np.abs(self.times - t)))
        if not math.isclose(self.times[i], t, rel_tol=1e-12, abs_tol=1e-15):
            raise DomainError(f"time {t} was not requested")
        return self.values[i]


def slow_face_indices(M: int, slow_points: Sequence) -> tuple:
    """Faces ``m`` with ``m/M = b_i``; every slow point must sit on one."""
    faces = []
    for b in slow_points:
        z = float(exact(b)) * M
        m = int(round(z))
        if abs(z - m) > 1e-9:
            raise DomainError(f"slow point {b} is not a node of the {M}-cell grid")
        faces.append(m % M)
    if len(set(faces)) != len(faces):
        raise DomainError("two slow points fall on the same grid node")
    return tuple(sorted(faces))


def face_conductances(M: int, slow_points: Sequence, regime: str, slow_face: str = "consistent") -> np.ndarray:
    """Conductance of face ``j`` (between cells ``j-1`` and ``j``)."""
    if regime not in REGIMES:
        raise DomainError(f"unknown regime {regime!r}")
    c = np.ones(M)
    if regime == "heat_periodic":
        return c
    faces = list(slow_face_indices(M, slow_points))
    h = 1.0 / M
    if regime == "neumann_segments":
        c[faces] = 0.0
    elif slow_face == "consistent":
        c[faces] = h / (1.0 + h)
    elif slow_face == "lattice":
        c[faces] = h
    else:
        raise DomainError(f"unknown slow_face {slow_face!r}")
    return c


def cell_operator(c: np.ndarray) -> sp.csc_matrix:
    """Sparse ``A`` with ``(A phi)_j = M^2 [c_{j+1}(phi_{j+1}-phi_j) + c_j(phi_{j-1}-phi_j)]``."""
    M = c.size
    scale = float(M) ** 2
    right = np.roll(c, -1) * scale
    left = c * scale
    j = np.arange(M)
    rows = np.concatenate([j, j, j])
    cols = np.concatenate([j, (j + 1) % M, (j - 1) % M])
    data = np.concatenate([-(left + right), right, left])
    return sp.csc_matrix((data, (rows, cols)), shape=(M, M))


def _initial_cells(gamma: Initial, M: int) -> np.ndarray:
    if isinstance(gamma, InitialProfile):
        return gamma.cell_averages(M)
    if callable(gamma):
        nodes, weights = np.polynomial.legendre.leggauss(6)
        pts = np.arange(M)[:, None] / M + (nodes[None, :] + 1) / (2 * M)
        return (np.asarray(gamma(pts), dtype=float) * weights).sum(axis=1) / 2
    arr = np.asarray(gamma, dtype=float)
    if arr.shape != (M,):
        raise DomainError(f"initial values have shape {arr.shape}, expected ({M},)")
    return arr.copy()


def _step_count(T: float, dt: float) -> int:
    if T < 0:
        raise DomainError("horizon must be nonnegative")
    if T == 0:
        return 0
    if dt <= 0:
        raise DomainError("dt must be positive")
    n = int(round(T / dt))
    if n < 1 or abs(n * dt - T) > 1e-9 * T:
        raise DomainError(f"dt={dt} does not divide the horizon {T}")
    return n


def integrate(A: sp.spmatrix, phi0: np.ndarray, T: float, dt: float, store_every: int = 1,
              startup: Union[str, bool] = "auto") -> tuple:
    """Crank-Nicolson for ``phi' = A phi``; returns ``(times, values)``.

    With ``startup`` the first ``STARTUP_STEPS`` steps are replaced by twice
    as many backward-Euler half steps, which damps the stiff modes that
    Crank-Nicolson would carry along with amplification close to -1 (rough
    data, large ``dt``) while keeping second order. ``"auto"`` switches it on
    when ``dt * max|A_jj| > 1``.
    """
    n = _step_count(T, dt)
    M = phi0.size
    I = sp.identity(M, format="csc")
    phi = phi0.astype(float).copy()
    times = [0.0]
    out = [phi.copy()]
    if n == 0:
        return np.array(times), np.array(out)
    if startup == "auto":
        startup = dt * np.abs(A.diagonal()).max() > 1.0
    try:
        # I - dt/2 A is also the backward-Euler half-step matrix
        cn = spla.splu((I - 0.5 * dt * A).tocsc())
    except RuntimeError as exc:
        raise NumericError(f"factorisation failed (M={M}, dt={dt}): {exc}") from exc
    explicit = (I + 0.5 * dt * A).tocsr()
    for step in range(1, n + 1):
        if startup and step <= STARTUP_STEPS:
            phi = cn.solve(cn.solve(phi))
        else:
            phi = cn.solve(explicit @ phi)
        if step % store_every == 0 or step == n:
            times.append(step * dt)
            out.append(phi.copy())
    return np.array(times), np.array(out)


def _solve(regime, gamma, T, M, dt, slow_points, slow_face, store_every, startup):
    if M < 16:
        raise DomainError(f"M must be at least 16, got {M}")
    if T > 0 and dt > T / 10 + 1e-15:
        raise DomainError(f"dt={dt} exceeds T/10")
    pts = tuple(float(exact(b)) for b in slow_points)
    faces = slow_face_indices(M, pts) if regime != "heat_periodic" else ()
    if regime != "heat_periodic" and M < 16 * len(pts):
        raise DomainError(f"M must be at least 16k = {16 * len(pts)}")
    c = face_conductances(M, pts, regime, slow_face)
    times, values = integrate(cell_operator(c), _initial_cells(gamma, M), T, dt, store_every, startup)
    return PdeSolution(regime, M, float(dt), pts, times, values, slow_face, faces)


def solve_heat_periodic(gamma: Initial, T: float, M: int, dt: float, *, store_every: int = 1,
                        startup="auto") -> PdeSolution:
    """Heat equation on the torus."""
    return _solve("heat_periodic", gamma, T, M, dt, (), "consistent", store_every, startup)


def solve_w_equation(gamma: Initial, T: float, M: int, dt: float, slow_points: Sequence, *,
                     slow_face: str = "consistent", store_every: int = 1, startup="auto") -> PdeSolution:
    """``d/dt rho = d/dx d/dW rho`` with ``W`` = Lebesgue plus unit atoms at the slow points."""
    return _solve("w_equation", gamma, T, M, dt, slow_points, slow_face, store_every, startup)


def solve_neumann_segments(gamma: Initial, T: float, M: int, dt: float, slow_points: Sequence, *,
                           store_every: int = 1, startup="auto") -> PdeSolution:
    """Heat equation on each arc between slow points with zero-flux ends."""
    if not slow_points:
        raise DomainError("the Neumann regime needs at least one slow point")
    return _solve("neumann_segments", gamma, T, M, dt, slow_points, "consistent", store_every, startup)


SOLVERS = {
    "heat_periodic": lambda g, T, M, dt, pts, **kw: solve_heat_periodic(g, T, M, dt, **kw),
    "w_equation": solve_w_equation,
    "neumann_segments": solve_neumann_segments,
}


def solve(regime: str, gamma: Initial, T: float, M: int, dt: float, slow_points: Sequence = (), **kw) -> PdeSolution:
    if regime not in SOLVERS:
        raise DomainError(f"unknown regime {regime!r}")
    return SOLVERS[regime](gamma, T, M, dt, slow_points, **kw)


def lattice_generator(spec: LatticeSpec) -> sp.csc_matrix:
    """``N^2 L_N`` as a sparse matrix on indices ``x mod N``."""
    # bond i sits on face i+1 of the cell layout
    return cell_operator(np.roll(spec.conductances(), 1))


def discrete_ode_oracle(spec: LatticeSpec, gamma: Union[InitialProfile, Callable, np.ndarray], T: float,
                        record_times: Sequence[float]) -> LatticeEvolution:
    """Solve ``d phi/dt = N^2 L_N phi`` with ``phi_0(x) = gamma(x/N)`` by eigendecomposition.

    By linearity of the symmetric dynamics this is the mean occupation
    ``E[eta_t(x)]`` under any initial law with marginals ``gamma(x/N)``.
    """
    N = spec.N
    if N > 2048:
        raise DomainError("the dense oracle is limited to N <= 2048")
    rt = np.asarray(sorted(float(t) for t in record_times))
    if rt.size and (rt[0] < 0 or rt[-1] > T):
        raise DomainError("record times must lie in [0, T]")
    phi0 = np.asarray(gamma(spec.positions), dtype=float) * np.ones(N) if callable(gamma) \
        else np.asarray(gamma, dtype=float)
    if phi0.shape != (N,):
        raise DomainError(f"initial values have shape {phi0.shape}, expected ({N},)")
    A = lattice_generator(spec).toarray()
    try:
        lam, V = scipy.linalg.eigh(A)
    except np.linalg.LinAlgError as exc:
        raise NumericError(f"eigendecomposition failed for N={N}: {exc}") from exc
    coef = V.T @ phi0
    vals = np.array([V @ (np.exp(lam * t) * coef) for t in rt])
    return LatticeEvolution(spec, rt, vals)


def w_operator_eigen(M: int, slow_points: Sequence, n_modes: int, *, slow_face: str = "consistent") -> EigenSystem:
    """Lowest ``n_modes`` eigenpairs of ``-d/dx d/dW`` on the cell grid.

    With no slow points this is the periodic Laplacian.
    """
    if n_modes < 1 or n_modes > M // 4:
        raise DomainError(f"n_modes must be in 1..{M // 4}, got {n_modes}")
    pts = tuple(float(exact(b)) for b in slow_points)
    regime = "w_equation" if pts else "heat_periodic"
    A = cell_operator(face_conductances(M, pts, regime, slow_face)).toarray()
    try:
        lam, V = scipy.linalg.eigh(-A, subset_by_index=[0, n_modes - 1])
    except (np.linalg.LinAlgError, ValueError) as exc:
        raise NumericError(f"eigensolver failed (M={M}, slow points={pts}, n_modes={n_modes}): {exc}") from exc
    if not np.all(np.isfinite(lam)):
        raise NumericError(f"non-finite eigenvalues for M={M}, slow points={pts}")
    modes = V.T * math.sqrt(M)
    if modes[0].sum() < 0:
        modes[0] = -modes[0]
    lam = np.where(np.abs(lam) < 1e-9 * max(1.0, abs(lam[-1])), 0.0, lam) if lam[0] < 0 else lam
    return EigenSystem(lam, modes, M, pts)


def uniqueness_functional(sol: PdeSolution, eig: EigenSystem) -> np.ndarray:
    """``R(t) = sum_{n>=1} <rho_t - mean, F_n>^2 / (n^2 (1 + lambda_n))`` at every stored time."""
    if eig.M != sol.M:
        raise DomainError("eigen system and solution use different grids")
    centred = sol.values - sol.values.mean(axis=1, keepdims=True)
    coef = centred @ eig.modes[1:].T / sol.M
    n = np.arange(1, eig.eigenvalues.size)
    w = 1.0 / (n ** 2 * (1.0 + eig.eigenvalues[1:]))
    return (coef ** 2 * w).sum(axis=1)


_OFFSETS = np.array([0.5, 1.5, 2.5])
_V = np.vander(-_OFFSETS, 3, increasing=True)
_VALUE_W = np.linalg.solve(_V.T, np.array([1.0, 0.0, 0.0]))
_SLOPE_W = np.linalg.solve(_V.T, np.array([0.0, 1.0, 0.0]))


def one_sided(values: np.ndarray, M: int, face: int, side: str) -> tuple:
    """Quadratic extrapolation to a face from the three cells on one side.

    Returns ``(trace, derivative)`` arrays over time.
    """
    if side == "left":
        cells = [(face - 1) % M, (face - 2) % M, (face - 3) % M]
        sign = 1.0
    elif side == "right":
        cells = [face % M, (face + 1) % M, (face + 2) % M]
        sign = -1.0
    else:
        raise DomainError(f"side must be 'left' or 'right', got {side!r}")
    v = values[..., cells]
    trace = v @ _VALUE_W
    slope = sign * (v @ _SLOPE_W) * M
    return trace, slope


def weak_solution_trace(sol: PdeSolution, b: float, side: str) -> np.ndarray:
    """One-sided limit ``rho(t, b-)`` (``side="left"``) or ``rho(t, b+)`` over time."""
    if sol.regime == "heat_periodic":
        raise DomainError("the periodic heat regime has no interfaces")
    if side not in ("left", "right"):
        raise DomainError(f"side must be 'left' or 'right', got {side!r}")
    face = slow_face_indices(sol.M, [b])[0]
    if face not in sol.slow_faces:
        raise DomainError(f"{b} is not a slow point of this solution")
    return one_sided(sol.values, sol.M, face, side)[0]


def fick_residual(sol: PdeSolution, b: float) -> np.ndarray:
    """``max(|rho'(b-) - jump|, |rho'(b+) - jump|)`` over time, ``jump = rho(b+) - rho(b-)``."""
    face = slow_face_indices(sol.M, [b])[0]
    lv, ld = one_sided(sol.values, sol.M, face, "left")
    rv, rd = one_sided(sol.values, sol.M, face, "right")
    jump = rv - lv
    return np.maximum(np.abs(ld - jump), np.abs(rd - jump))
