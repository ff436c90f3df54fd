import itertools

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st
from scipy import linalg, stats

from slowbond.errors import DomainError, ReplicaError
from slowbond.lattice import Configuration, LatticeSpec, exchange
from slowbond.pde import discrete_ode_oracle
from slowbond.simulator import (InitialProfile, ensemble_means, iter_ensemble, mean_occupation, replica_rng,
                                run_replica, sample_initial, simulate, time_index)


def master_equation(spec, init, t):
    """Exact law at time t from the full generator on all configurations with the same particle count."""
    N = spec.N
    n = init.particles()
    states = [np.array(b, dtype=np.uint8) for b in itertools.product([0, 1], repeat=N) if sum(b) == n]
    index = {s.tobytes(): i for i, s in enumerate(states)}
    xi = spec.conductances() * N ** 2
    Q = np.zeros((len(states), len(states)))
    for i, s in enumerate(states):
        for x in range(N):
            y = (x + 1) % N
            if s[x] != s[y]:
                nxt = s.copy()
                nxt[x], nxt[y] = s[y], s[x]
                Q[i, index[nxt.tobytes()]] += xi[x]
                Q[i, i] -= xi[x]
    p0 = np.zeros(len(states))
    p0[index[init.occupancy.tobytes()]] = 1.0
    return states, index, p0 @ linalg.expm(Q * t)


def naive_gillespie(spec, init, t, rng):
    """All-clocks Gillespie: every bond rings at N^2 xi, ringing an agreeing bond does nothing."""
    eta = init.occupancy.copy()
    rates = spec.conductances() * spec.N ** 2
    total = rates.sum()
    s = 0.0
    while True:
        s += rng.exponential(1 / total)
        if s > t:
            return eta
        x = rng.choice(spec.N, p=rates / total)
        y = (x + 1) % spec.N
        eta[x], eta[y] = eta[y], eta[x]


class TestInitial:
    def test_degenerate_profiles(self):
        spec = LatticeSpec(50, 1, ("0.5",))
        assert sample_initial(InitialProfile.constant(1.0), spec, replica_rng(0, 0)).particles() == 50
        assert sample_initial(InitialProfile.constant(0.0), spec, replica_rng(0, 0)).particles() == 0

    def test_half_density_large_n(self):
        spec = LatticeSpec(10_000, 0.5, ())
        c = sample_initial(InitialProfile.constant(0.5), spec, replica_rng(5, 0))
        assert abs(c.particles() / 10_000 - 0.5) <= 0.02

    def test_profile_outside_unit_interval(self):
        with pytest.raises(DomainError):
            InitialProfile.constant(1.2)
        with pytest.raises(DomainError):
            InitialProfile.cosine(0.5, 0.6)
        with pytest.raises(DomainError):
            InitialProfile.step([0.0, 0.5], [0.2, -0.1])

    def test_step_profile_cell_averages_exact(self):
        p = InitialProfile.step([0.25, 0.75], [0.8, 0.2])
        ca = p.cell_averages(8)
        assert np.allclose(ca, [0.2, 0.2, 0.8, 0.8, 0.8, 0.8, 0.2, 0.2])
        ca = p.cell_averages(6)
        # cells of width 1/6: [1/6, 2/6) holds 0.25
        assert ca[1] == pytest.approx((0.25 - 1 / 6) * 6 * 0.2 + (2 / 6 - 0.25) * 6 * 0.8)

    def test_table_profile_interpolates_periodically(self):
        p = InitialProfile.table([0.0, 0.5], [0.2, 0.6])
        assert p(0.25) == pytest.approx(0.4)
        assert p(0.75) == pytest.approx(0.4)


class TestSimulate:
    def test_all_ones_stays(self):
        spec = LatticeSpec(32, 1, ("0.5",))
        s = simulate(spec, Configuration(np.ones(32)), 0.1, [0.05, 0.1], replica_rng(1, 1))
        assert np.all(s.configs == 1)
        assert s.times[0] == 0.0

    def test_two_site_chain(self):
        # both bonds of the 2-cycle join the same pair, so the swap rate is 2 N^2 = 8
        spec = LatticeSpec(2, 0, ())
        init = Configuration.from_sites("10")
        t = 0.05
        Q = np.array([[-8.0, 8.0], [8.0, -8.0]])
        p = linalg.expm(Q * t)[0, 0]
        n = 100_000
        hits = sum(int(simulate(spec, init, t, [t], replica_rng(11, r)).configs[-1][1]) for r in range(n))
        assert abs(hits / n - p) <= 3 * np.sqrt(p * (1 - p) / n)

    @pytest.mark.parametrize("beta,points", [(1, ("0.5",)), (2, ("0.25", "0.75")), (0.5, ("0.4",))])
    def test_law_matches_master_equation(self, beta, points):
        spec = LatticeSpec(8, beta, points)
        init = Configuration.from_sites("11100100")
        t = 0.02
        states, index, p = master_equation(spec, init, t)
        n = 20_000
        counts = np.zeros(len(states))
        for r in range(n):
            s = simulate(spec, init, t, [t], replica_rng(3, r))
            counts[index[s.configs[-1].tobytes()]] += 1
        expected = p * n
        keep = expected >= 5
        obs = np.append(counts[keep], counts[~keep].sum())
        exp = np.append(expected[keep], expected[~keep].sum())
        if exp[-1] == 0:
            obs, exp = obs[:-1], exp[:-1]
        pval = stats.chisquare(obs, exp).pvalue
        assert pval > 1e-3

    def test_matches_naive_gillespie(self):
        spec = LatticeSpec(8, 1, ("0.5",))
        init = Configuration.from_sites("11110000")
        t = 0.03
        n = 4000
        rng = np.random.default_rng(8)
        fast = np.mean([simulate(spec, init, t, [t], replica_rng(4, r)).configs[-1] for r in range(n)], axis=0)
        slow = np.mean([naive_gillespie(spec, init, t, rng) for _ in range(n)], axis=0)
        se = np.sqrt(0.25 / n) * np.sqrt(2)
        assert np.max(np.abs(fast - slow)) <= 4.5 * se

    def test_bernoulli_is_invariant(self):
        spec = LatticeSpec(64, 1, ("0.5",))
        prof = InitialProfile.constant(0.3)
        n = 300
        times, means = ensemble_means(spec, prof, n, 0.1, [0.1], 21)
        counts = np.round(means[-1] * n)
        # per-site occupation counts are Binomial(n, 0.3)
        exp = n * 0.3
        chi2 = np.sum((counts - exp) ** 2 / (n * 0.3 * 0.7))
        assert stats.chi2.sf(chi2, spec.N) > 1e-3

    def test_errors(self):
        spec = LatticeSpec(8, 1, ())
        init = Configuration(np.zeros(8))
        with pytest.raises(DomainError):
            simulate(spec, init, -1.0, [], replica_rng(0, 0))
        with pytest.raises(DomainError):
            simulate(spec, init, 1.0, [2.0], replica_rng(0, 0))
        with pytest.raises(DomainError):
            simulate(spec, Configuration(np.zeros(6)), 1.0, [], replica_rng(0, 0))

    def test_snapshot_is_state_at_last_event_before_time(self):
        spec = LatticeSpec(16, 1, ("0.5",))
        prof = InitialProfile.cosine()
        s = run_replica(spec, prof, 0.01, [0.002, 0.004, 0.01], 9, 0, record_events=True)
        eta = s.configs[0].copy()
        k = 0
        for t_rec, snap in zip(s.times[1:], s.configs[1:]):
            while k < s.event_times.size and s.event_times[k] <= t_rec:
                i = s.event_bonds[k]
                j = (i + 1) % 16
                assert eta[i] != eta[j]
                eta[i], eta[j] = eta[j], eta[i]
                k += 1
            assert np.array_equal(eta, snap)
        assert np.all(np.diff(s.event_times) > 0)

    @settings(max_examples=25, deadline=None)
    @given(st.integers(4, 80), st.sampled_from(["0", "0.5", "1", "2"]), st.integers(0, 2 ** 32), st.floats(0.001, 0.05))
    def test_particle_number_conserved(self, N, beta, seed, T):
        spec = LatticeSpec(N, beta, ("0.5",))
        s = run_replica(spec, InitialProfile.cosine(), T, [T / 3, T / 2, T], seed, 0)
        counts = s.configs.sum(axis=1)
        assert np.all(counts == counts[0])

    def test_determinism(self):
        spec = LatticeSpec(64, 1, ("0.5",))
        a = run_replica(spec, InitialProfile.cosine(), 0.01, [0.005, 0.01], 42, 3, record_events=True)
        b = run_replica(spec, InitialProfile.cosine(), 0.01, [0.005, 0.01], 42, 3, record_events=True)
        assert a.configs.tobytes() == b.configs.tobytes()
        assert a.event_times.tobytes() == b.event_times.tobytes()
        c = run_replica(spec, InitialProfile.cosine(), 0.01, [0.005, 0.01], 42, 4)
        assert c.configs.tobytes() != a.configs.tobytes()

    def test_event_logging_does_not_change_path(self):
        spec = LatticeSpec(128, 2, ("0.5",))
        a = run_replica(spec, InitialProfile.cosine(), 0.02, [0.01, 0.02], 1, 0, record_events=True)
        b = run_replica(spec, InitialProfile.cosine(), 0.02, [0.01, 0.02], 1, 0)
        assert np.array_equal(a.configs, b.configs)
        assert a.event_times.size > 1024


class TestEnsemble:
    def test_mean_occupation_examples(self):
        spec = LatticeSpec(8, 1, ())
        ones = simulate(spec, Configuration(np.ones(8)), 0.01, [0.01], replica_rng(0, 0))
        zeros = simulate(spec, Configuration(np.zeros(8)), 0.01, [0.01], replica_rng(0, 0))
        assert np.all(mean_occupation([ones], 1) == 1.0)
        assert np.all(mean_occupation([ones, zeros], 1) == 0.5)
        with pytest.raises(DomainError):
            mean_occupation([], 0)

    def test_half_density_means(self):
        spec = LatticeSpec(64, 1, ("0.5",))
        ens = list(iter_ensemble(spec, InitialProfile.constant(0.5), 400, 0.01, [0.01], 2))
        m = mean_occupation(ens, 1)
        assert np.all(np.abs(m - 0.5) <= 0.1)

    def test_threads_do_not_change_results(self):
        spec = LatticeSpec(64, 1, ("0.5",))
        a = ensemble_means(spec, InitialProfile.cosine(), 24, 0.01, [0.005, 0.01], 7, threads=1)
        b = ensemble_means(spec, InitialProfile.cosine(), 24, 0.01, [0.005, 0.01], 7, threads=4)
        assert np.array_equal(a[1], b[1])

    @pytest.mark.parametrize("beta", ["0.5", "1", "3"])
    def test_mean_matches_discrete_ode(self, beta):
        spec = LatticeSpec(64, beta, ("0.5",))
        prof = InitialProfile.cosine()
        n = 400
        times, means = ensemble_means(spec, prof, n, 0.01, [0.01], 17, threads=2)
        ode = discrete_ode_oracle(spec, prof, 0.01, [0.01])
        assert np.max(np.abs(means[time_index(times, 0.01)] - ode.at(0.01))) <= 4 * np.sqrt(0.25 / n)

    def test_failing_replica_reports_seed(self):
        spec = LatticeSpec(16, 1, ())

        class Broken(InitialProfile):
            def __call__(self, u):
                raise RuntimeError("boom")

        bad = Broken("constant", {"c": 0.5}, lambda u: u)
        with pytest.raises(ReplicaError) as err:
            list(iter_ensemble(spec, bad, 3, 0.01, [0.01], 5))
        assert err.value.seed == (5, 0)
