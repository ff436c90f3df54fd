import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from slowbond.errors import DomainError
from slowbond.io import read_solution, write_solution
from slowbond.lattice import LatticeSpec
from slowbond.pde import (discrete_ode_oracle, fick_residual, solve_heat_periodic, solve_neumann_segments,
                          solve_w_equation, uniqueness_functional, w_operator_eigen, weak_solution_trace)
from slowbond.simulator import InitialProfile

COS = InitialProfile.cosine(0.5, 0.3)


def exact_cells(f, M):
    """Cell averages of ``f`` by 8-point Gauss rule."""
    x, w = np.polynomial.legendre.leggauss(8)
    pts = np.arange(M)[:, None] / M + (x[None, :] + 1) / (2 * M)
    return (f(pts) * w).sum(axis=1) / 2


def coarsen(v):
    return 0.5 * (v[0::2] + v[1::2])


class TestConstants:
    @pytest.mark.parametrize("solver,args", [
        (solve_heat_periodic, ()), (solve_w_equation, (["0.5"],)), (solve_neumann_segments, (["0.25", "0.75"],))])
    def test_constant_is_stationary(self, solver, args):
        sol = solver(InitialProfile.constant(0.37), 0.1, 64, 0.01, *args)
        assert np.allclose(sol.values, 0.37, rtol=0, atol=1e-14)


class TestHeat:
    def test_single_mode_decay(self):
        t = 0.01
        sol = solve_heat_periodic(COS, t, 512, 1e-5)
        ex = exact_cells(lambda u: 0.5 + 0.3 * np.exp(-4 * np.pi ** 2 * t) * np.cos(2 * np.pi * u), 512)
        assert np.max(np.abs(sol.at(t) - ex)) <= 1e-4

    def test_second_order_in_space(self):
        t = 0.01
        errs = []
        for M in (64, 128, 256):
            sol = solve_heat_periodic(COS, t, M, 1e-5, store_every=1000)
            ex = exact_cells(lambda u: 0.5 + 0.3 * np.exp(-4 * np.pi ** 2 * t) * np.cos(2 * np.pi * u), M)
            errs.append(np.max(np.abs(sol.at(t) - ex)))
        ratios = np.array(errs[:-1]) / np.array(errs[1:])
        assert np.all(ratios > 3.5)

    def test_mass_conserved(self):
        sol = solve_heat_periodic(InitialProfile.step([0.1, 0.6], [0.9, 0.1]), 0.1, 128, 1e-3)
        m = sol.mass()
        assert np.max(np.abs(m - m[0])) <= 1e-8 * m[0]


class TestW:
    def test_step_relaxes_to_mean(self):
        g = InitialProfile.step([0.0, 0.5], [0.8, 0.2])
        sol = solve_w_equation(g, 5.0, 128, 0.01, ["0"], store_every=50)
        m = sol.mass()
        assert np.max(np.abs(m - 0.5)) <= 1e-8 * 0.5
        dev = np.max(np.abs(sol.values - 0.5), axis=1)
        assert np.all(np.diff(dev) <= 1e-13)
        # the slowest mode sets the rate; the atom makes it far slower than 4 pi^2
        lam1 = w_operator_eigen(128, ["0"], 4).eigenvalues[1]
        assert 0.5 < lam1 < 4 * np.pi ** 2
        assert dev[-1] <= max(0.3 * np.exp(-lam1 * 5.0), 1e-12)

    def test_fick_residual_shrinks(self):
        res = []
        for M in (128, 256, 512):
            sol = solve_w_equation(COS, 0.02, M, 1e-4, ["0.5"], store_every=200)
            res.append(float(np.max(fick_residual(sol, 0.5)[1:])))
        assert res[0] > res[1] > res[2]

    def test_interface_flux_matches_jump(self):
        # the interface carries a real jump once the slow face has acted
        g = InitialProfile.cosine(0.5, 0.3, shift=0.25)
        sol = solve_w_equation(g, 0.05, 512, 1e-4, ["0.5"], store_every=500)
        left = weak_solution_trace(sol, 0.5, "left")[-1]
        right = weak_solution_trace(sol, 0.5, "right")[-1]
        assert abs(right - left) > 1e-3
        assert fick_residual(sol, 0.5)[-1] < 1e-2 * abs(right - left) + 1e-4

    def test_symmetric_data_gives_equal_traces(self):
        g = InitialProfile.cosine(0.5, 0.3, shift=0.5)
        sol = solve_w_equation(g, 0.02, 128, 1e-4, ["0.5"])
        assert np.allclose(sol.trace(0.5, "left"), sol.trace(0.5, "right"), atol=1e-12)

    def test_lattice_face_matches_ode_oracle(self):
        spec = LatticeSpec(64, 1, ("0.5",))
        ode = discrete_ode_oracle(spec, COS, 0.01, [0.01])
        sol = solve_w_equation(COS(spec.positions), 0.01, 64, 1e-6, ["0.5"], slow_face="lattice",
                               store_every=10_000)
        assert np.max(np.abs(ode.at(0.01) - sol.at(0.01))) <= 1e-8

    def test_spectral_consistency(self):
        M, t = 128, 0.01
        sol = solve_w_equation(COS, t, M, 1e-5, ["0.5"], store_every=1000)
        eig = w_operator_eigen(M, ["0.5"], M // 4)
        assert np.max(np.abs(eig.propagate(sol.values[0], t) - sol.at(t))) <= 1e-6


class TestNeumann:
    def test_cosine_mode_decay(self):
        t = 0.01
        g = InitialProfile.cosine(0.5, 0.3, shift=0.25)
        sol = solve_neumann_segments(g, t, 512, 1e-5, ["0.25", "0.75"], store_every=1000)
        rate = (np.pi / 0.5) ** 2
        ex = exact_cells(lambda u: 0.5 + 0.3 * np.exp(-rate * t) * np.cos(2 * np.pi * (u - 0.25)), 512)
        assert np.max(np.abs(sol.at(t) - ex)) <= 1e-4

    def test_segment_mass_exact(self):
        g = InitialProfile.step([0.1, 0.3, 0.8], [0.9, 0.1, 0.5])
        sol = solve_neumann_segments(g, 0.2, 128, 1e-3, ["0.25", "0.75"])
        sm = sol.segment_mass()
        assert np.max(np.abs(sm - sm[0])) <= 1e-10

    def test_segments_are_independent(self):
        a = InitialProfile.step([0.25, 0.75], [0.8, 0.2])
        b = InitialProfile.step([0.25, 0.75, 0.9], [0.8, 0.6, 0.1])
        sa = solve_neumann_segments(a, 0.05, 128, 1e-3, ["0.25", "0.75"])
        sb = solve_neumann_segments(b, 0.05, 128, 1e-3, ["0.25", "0.75"])
        inner = slice(32, 96)
        assert np.allclose(sa.values[:, inner], sb.values[:, inner], rtol=0, atol=1e-14)

    def test_traces_tend_to_segment_means(self):
        g = InitialProfile.step([0.25, 0.5, 0.75], [0.8, 0.6, 0.2])
        sol = solve_neumann_segments(g, 2.0, 128, 0.01, ["0.25", "0.75"])
        assert weak_solution_trace(sol, 0.75, "left")[-1] == pytest.approx(0.7, abs=1e-8)
        assert weak_solution_trace(sol, 0.75, "right")[-1] == pytest.approx(0.2, abs=1e-8)
        assert weak_solution_trace(sol, 0.25, "right")[-1] == pytest.approx(0.7, abs=1e-8)

    def test_trace_of_constant(self):
        sol = solve_neumann_segments(InitialProfile.constant(0.4), 0.05, 64, 0.005, ["0.5"])
        assert np.allclose(sol.trace(0.5, "left"), 0.4)


class TestOracle:
    def test_constant(self):
        spec = LatticeSpec(32, 1, ("0.5",))
        ev = discrete_ode_oracle(spec, InitialProfile.constant(0.3), 1.0, [0.0, 0.5, 1.0])
        assert np.allclose(ev.values, 0.3, atol=1e-13)

    def test_two_sites(self):
        spec = LatticeSpec(2, 0, ())
        ev = discrete_ode_oracle(spec, np.array([0.0, 1.0]), 0.1, [0.01, 0.1])
        for t, v in zip(ev.times, ev.values):
            assert v[0] == pytest.approx(0.5 - 0.5 * np.exp(-16 * t), abs=1e-12)

    def test_heat_agreement_is_second_order(self):
        t = 0.01
        errs = []
        for N in (32, 64, 128):
            spec = LatticeSpec(N, 0, ())
            ode = discrete_ode_oracle(spec, COS, t, [t]).at(t)
            sol = solve_heat_periodic(COS, t, N, 1e-6, store_every=10_000).at(t)
            at_nodes = 0.5 * (sol + np.roll(sol, 1))
            errs.append(np.max(np.abs(ode - at_nodes)))
        assert errs[0] / errs[1] > 3.5 and errs[1] / errs[2] > 3.5

    def test_size_limit(self):
        with pytest.raises(DomainError):
            discrete_ode_oracle(LatticeSpec(4096, 1, ()), COS, 0.1, [0.1])


class TestEigen:
    def test_invariants(self):
        eig = w_operator_eigen(128, ["0.25", "0.625"], 32)
        lam = eig.eigenvalues
        assert lam[0] == 0.0
        assert np.allclose(eig.modes[0], 1.0, atol=1e-8)
        assert np.all(np.diff(lam) >= 0)
        gram = eig.modes @ eig.modes.T / 128
        assert np.max(np.abs(gram - np.eye(32))) <= 1e-10

    def test_periodic_limit(self):
        eig = w_operator_eigen(512, [], 21)
        ex = np.repeat((2 * np.pi * np.arange(11)) ** 2, 2)[1:22]
        assert np.allclose(eig.eigenvalues[1:], ex[1:], rtol=2e-3)

    def test_uniqueness_functional_decreases(self):
        sol = solve_w_equation(InitialProfile.step([0.1, 0.5], [0.9, 0.2]), 0.2, 128, 0.01, ["0.5"])
        eig = w_operator_eigen(128, ["0.5"], 32)
        R = uniqueness_functional(sol, eig)
        assert R[0] > 0
        assert np.all(np.diff(R) <= 1e-15)

    def test_mode_limit(self):
        with pytest.raises(DomainError):
            w_operator_eigen(64, ["0.5"], 17)


class TestValidation:
    def test_off_grid_point(self):
        with pytest.raises(DomainError):
            solve_w_equation(COS, 0.01, 100, 1e-3, ["0.333"])

    def test_small_grid_and_step(self):
        with pytest.raises(DomainError):
            solve_heat_periodic(COS, 0.01, 8, 1e-4)
        with pytest.raises(DomainError):
            solve_heat_periodic(COS, 0.01, 64, 0.005)
        with pytest.raises(DomainError):
            solve_heat_periodic(COS, 0.01, 64, 0.0003)

    def test_trace_needs_interfaces(self):
        sol = solve_heat_periodic(COS, 0.01, 64, 1e-3)
        with pytest.raises(DomainError):
            weak_solution_trace(sol, 0.5, "left")
        sol = solve_w_equation(COS, 0.01, 64, 1e-3, ["0.5"])
        with pytest.raises(DomainError):
            weak_solution_trace(sol, 0.5, "up")
        with pytest.raises(DomainError):
            weak_solution_trace(sol, 0.25, "left")


@settings(max_examples=30, deadline=None)
@given(st.sampled_from(["heat", "w", "neumann"]), st.sampled_from([32, 64, 128]),
       st.lists(st.floats(0, 1), min_size=2, max_size=5), st.sampled_from([1e-4, 1e-3, 1e-2]))
def test_maximum_principle(regime, M, levels, dt):
    breaks = np.linspace(0, 1, len(levels), endpoint=False) + 0.05
    g = InitialProfile.step(breaks, levels)
    T = 10 * dt
    if regime == "heat":
        sol = solve_heat_periodic(g, T, M, dt)
    elif regime == "w":
        sol = solve_w_equation(g, T, M, dt, ["0.5"])
    else:
        sol = solve_neumann_segments(g, T, M, dt, ["0.25", "0.75"])
    lo, hi = sol.values[0].min(), sol.values[0].max()
    assert sol.values.min() >= lo - 1e-12 and sol.values.max() <= hi + 1e-12


def test_export_roundtrip_is_bit_exact(tmp_path):
    sol = solve_w_equation(COS, 0.01, 64, 1e-3, ["0.25", "0.5"])
    path = write_solution(sol, tmp_path / "s.csv", {"seed": 3})
    back = read_solution(path)
    assert back.regime == sol.regime and back.M == sol.M and back.dt == sol.dt
    assert back.slow_points == sol.slow_points
    assert back.values.tobytes() == sol.values.tobytes()
    assert back.times.tobytes() == sol.times.tobytes()
