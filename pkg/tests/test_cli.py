import json

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from slowbond import io
from slowbond.cli import main
from slowbond.errors import ConfigError
from slowbond.experiment import compare, parse_config, run_experiment
from slowbond.pde import solve_heat_periodic
from slowbond.simulator import InitialProfile

BASE = {"beta": "0.5", "slow_points": ["0.5"], "N_list": [32, 64], "replicas": 20, "horizon": 0.01,
        "record_times": [0.005, 0.01], "profile": {"kind": "cosine", "mean": 0.5, "amplitude": 0.3},
        "pde_M": 128, "pde_dt": 1e-4, "seed": 11}


def write_cfg(tmp_path, **changes):
    cfg = {**BASE, "out_dir": str(tmp_path / "out"), **changes}
    cfg = {k: v for k, v in cfg.items() if v is not None}
    path = tmp_path / "cfg.json"
    path.write_text(json.dumps(cfg))
    return path


class TestConfig:
    def test_all_problems_listed(self):
        bad = {**BASE, "beta": "-1", "N_list": [32, "x"], "replicas": 1, "colour": "red"}
        del bad["seed"]
        with pytest.raises(ConfigError) as err:
            parse_config(bad)
        text = "\n".join(err.value.problems)
        for word in ("beta", "N_list", "replicas", "colour", "seed"):
            assert word in text

    def test_eps_must_fit_between_slow_points(self):
        with pytest.raises(ConfigError, match="eps"):
            parse_config({**BASE, "slow_points": ["0.25", "0.3"], "eps_mollify": "0.1"})

    def test_regime_dispatch_exact(self):
        assert parse_config({**BASE, "beta": "1"}).regime == "w_equation"
        assert parse_config({**BASE, "beta": 1.0}).regime == "w_equation"
        assert parse_config({**BASE, "beta": "1.0000001"}).regime == "neumann_segments"
        assert parse_config({**BASE, "beta": "0.9999999"}).regime == "heat_periodic"

    def test_exit_code_two(self, tmp_path, capsys):
        p = tmp_path / "bad.json"
        p.write_text(json.dumps({"beta": "x"}))
        assert main(["run", str(p)]) == 2
        err = capsys.readouterr().err
        assert err.count("config error:") >= 5

    def test_unparseable_file(self, tmp_path):
        p = tmp_path / "bad.json"
        p.write_text("{not json")
        assert main(["run", str(p)]) == 2
        assert main(["run", str(tmp_path / "missing.json")]) == 2

    def test_bad_arguments(self):
        assert main(["solve", "--regime", "plasma"]) == 2


class TestRun:
    def test_small_run_and_artifacts(self, tmp_path):
        path = write_cfg(tmp_path)
        assert main(["run", str(path), "--threads", "1"]) == 0
        out = tmp_path / "out"
        meta, cols, rows = io.read_table(out / "convergence.csv")
        assert meta["seed"] == "11"
        assert len(rows) == len(BASE["N_list"]) * len(BASE["record_times"])
        assert all(float(r[cols.index("sup_dist")]) >= 0 for r in rows)
        for f in [out / "pde_solution.csv", out / "diagnostics.csv", *sorted((out / "profiles").iterdir())]:
            first = f.read_text().splitlines()[:2]
            assert first == ["# slowbond-v1", "# seed=11"] or (first[0] == "# slowbond-v1" and "seed=11" in
                                                                 f.read_text())
        assert json.loads((out / "config.json").read_text())["format"] == "slowbond-v1"

    def test_rerun_is_byte_identical_across_threads(self, tmp_path):
        a = write_cfg(tmp_path, out_dir=str(tmp_path / "a"), dump_trajectories=True)
        assert main(["run", str(a), "--threads", "1"]) in (0, 1)
        assert main(["run", str(a), "--threads", "3", "--out-dir", str(tmp_path / "b")]) in (0, 1)
        names = sorted(p.relative_to(tmp_path / "a") for p in (tmp_path / "a").rglob("*") if p.is_file())
        assert any(str(n).startswith("trajectories") for n in names)
        for n in names:
            if n.name == "config.json":
                continue
            assert (tmp_path / "a" / n).read_bytes() == (tmp_path / "b" / n).read_bytes(), n

    def test_empty_record_times(self, tmp_path):
        path = write_cfg(tmp_path, record_times=[])
        assert main(["run", str(path)]) == 1
        out = tmp_path / "out"
        assert sorted(p.name for p in out.iterdir()) == ["config.json", "notes.txt"]
        assert "record_times" in (out / "notes.txt").read_text()

    @pytest.mark.parametrize("beta,pts", [("0.5", ["0.5"]), ("1", ["0.5"]), ("3", ["0.25", "0.75"])])
    def test_constant_profile_within_mc_error(self, beta, pts):
        # a sup over ~N/L windows sits above 3 se a few percent of the time,
        # so the sup gets the run tolerance and the L1 distance gets 3 se
        cfg = parse_config({**BASE, "beta": beta, "slow_points": pts, "replicas": 40,
                            "profile": {"kind": "constant", "c": 0.5}})
        res = run_experiment(cfg)
        for r in res.rows:
            assert r["sup_dist"] <= 4 * r["mc_se"]
            assert r["L1_dist"] <= 3 * r["mc_se"]

    def test_neumann_records(self):
        cfg = parse_config({**BASE, "beta": "3", "slow_points": ["0.25", "0.75"],
                            "profile": {"kind": "step", "breaks": [0.25, 0.75], "levels": [0.8, 0.2]}})
        res = run_experiment(cfg)
        names = {r.name for r in res.records}
        assert names == {"segment_mass_drift", "interface_jump"}
        assert all(r.passed for r in res.records if r.name == "segment_mass_drift")

    def test_solve_command(self, tmp_path, capsys):
        code = main(["solve", "--regime", "neumann", "--M", "64", "--dt", "1e-3", "--T", "0.01",
                     "--slow-points", "0.25,0.75", "--out-dir", str(tmp_path)])
        assert code == 0
        sol = io.read_solution(tmp_path / "solution_neumann.csv")
        assert sol.regime == "neumann_segments" and sol.M == 64
        assert main(["solve", "--regime", "w", "--M", "100", "--slow-points", "0.333",
                     "--out-dir", str(tmp_path)]) == 2

    def test_diagnose_command(self, tmp_path):
        path = write_cfg(tmp_path, N_list=[32], replicas=30)
        assert main(["diagnose", str(path)]) in (0, 1)
        meta, cols, rows = io.read_table(tmp_path / "out" / "diagnostics.csv")
        names = {r[0] for r in rows}
        assert {"martingale_mean", "martingale_variance", "replacement", "energy_vn",
                "weak_form_residual"} <= names
        assert all(r[-1] in ("pass", "fail", "report") for r in rows)


class TestCompare:
    def test_identical(self):
        v = np.random.default_rng(0).random(64)
        c = compare(v, v, eps="0.05")
        assert c.sup == 0 and c.l1 == 0

    def test_constant_shift(self):
        v = np.random.default_rng(1).random(64) * 0.5
        c = compare(v, v + 0.2, eps="0.05", slow_points=[0.5])
        assert c.sup == pytest.approx(0.2, abs=1e-12)

    def test_mixed_grids_record_resampling(self):
        sol = solve_heat_periodic(InitialProfile.constant(0.3), 0.01, 128, 1e-3)
        c = compare(np.full(64, 0.3), sol, 0.01, "0.05")
        assert c.resampled and c.sup == pytest.approx(0.0, abs=1e-12)

    @settings(max_examples=40, deadline=None)
    @given(st.integers(0, 10 ** 6), st.sampled_from([32, 64]), st.sampled_from([32, 64, 128]),
           st.sampled_from([[], [0.5], [0.25, 0.75]]))
    def test_symmetric(self, seed, n1, n2, pts):
        rng = np.random.default_rng(seed)
        a, b = rng.random(n1), rng.random(n2)
        ab, ba = compare(a, b, eps="0.05", slow_points=pts), compare(b, a, eps="0.05", slow_points=pts)
        assert ab.sup == pytest.approx(ba.sup, abs=1e-15) and ab.l1 == pytest.approx(ba.l1, abs=1e-15)
