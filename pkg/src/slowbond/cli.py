"""Command line entry point.

Exit codes: 0 when every pass/fail check passes, 1 when any fails, 2 for
invalid configuration or arguments.
"""

from __future__ import annotations

import argparse
import json
import sys
from pathlib import Path

from . import io
from .errors import ConfigError, DomainError, ReplicaError
from .experiment import diagnose, emit, load_config, make_profile, run_experiment
from .pde import solve

EXIT_PASS, EXIT_FAIL, EXIT_CONFIG = 0, 1, 2
REGIME_NAMES = {"heat": "heat_periodic", "w": "w_equation", "neumann": "neumann_segments"}


def _common(p):
    p.add_argument("--seed", type=int, help="master seed (overrides the config)")
    p.add_argument("--threads", type=int, help="replicas simulated concurrently")
    p.add_argument("--out-dir", help="output directory (overrides the config)")


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="slowbond", description="Slow-bond exclusion process experiments.")
    sub = parser.add_subparsers(dest="command", required=True)
    run = sub.add_parser("run", help="simulate, solve the limit equation and tabulate distances")
    run.add_argument("config")
    _common(run)
    diag = sub.add_parser("diagnose", help="martingale, replacement, energy and weak-form diagnostics")
    diag.add_argument("config")
    _common(diag)
    sv = sub.add_parser("solve", help="solve one limit equation and dump the solution")
    sv.add_argument("--regime", choices=sorted(REGIME_NAMES), required=True)
    sv.add_argument("--M", type=int, default=256, help="number of cells")
    sv.add_argument("--dt", type=float, default=1e-4)
    sv.add_argument("--T", type=float, default=0.01, help="horizon")
    sv.add_argument("--slow-points", default="", help="comma-separated decimals, e.g. 0.25,0.75")
    sv.add_argument("--profile", default='{"kind": "cosine"}', help="initial profile as JSON")
    sv.add_argument("--slow-face", choices=["consistent", "lattice"], default="consistent")
    sv.add_argument("--store-every", type=int, default=1)
    _common(sv)
    return parser


def _overrides(args) -> dict:
    return {"seed": args.seed, "threads": args.threads, "out_dir": args.out_dir}


def _print_rows(rows):
    for r in rows:
        flag = "PASS" if r["pass"] else "FAIL"
        print(f"{flag} N={r['N']} t={r['t']:g} sup={r['sup_dist']:.4g} L1={r['L1_dist']:.4g} "
              f"se={r['mc_se']:.3g} tol={r['tol']:.3g}")


def _print_records(records):
    for r in records:
        extra = "" if r.passed is None else f" bound={r.bound:.4g}"
        print(f"{r.status.upper():6s} {r.name} {io.format_params(r.params)} value={r.value:.6g}{extra}")


def cmd_run(args) -> int:
    cfg = load_config(args.config, _overrides(args))
    out = Path(cfg.out_dir)
    result = run_experiment(cfg, trajectory_dir=out if cfg.dump_trajectories else None,
                            log=lambda m: print(m, file=sys.stderr))
    files = emit(result, out)
    for note in result.notes:
        print(f"NOTE {note}")
    _print_rows(result.rows)
    _print_records(result.records)
    print(f"wrote {len(files)} files to {out}")
    return EXIT_PASS if result.passed else EXIT_FAIL


def cmd_diagnose(args) -> int:
    cfg = load_config(args.config, _overrides(args))
    records = diagnose(cfg, log=lambda m: print(m, file=sys.stderr))
    out = io.ensure_dir(cfg.out_dir)
    io.write_report(out / "diagnostics.csv", records, {"seed": cfg.seed, "beta": cfg.beta, "regime": cfg.regime})
    _print_records(records)
    checks = [r.passed for r in records if r.passed is not None]
    return EXIT_PASS if all(checks) else EXIT_FAIL


def cmd_solve(args) -> int:
    try:
        profile = make_profile(json.loads(args.profile))
    except json.JSONDecodeError as exc:
        raise ConfigError(f"--profile is not valid JSON: {exc}") from exc
    except (DomainError, TypeError) as exc:
        raise ConfigError(f"--profile: {exc}") from exc
    pts = [p.strip() for p in args.slow_points.split(",") if p.strip()]
    regime = REGIME_NAMES[args.regime]
    kw = {"store_every": args.store_every}
    if regime == "w_equation":
        kw["slow_face"] = args.slow_face
    try:
        sol = solve(regime, profile, args.T, args.M, args.dt, pts, **kw)
    except DomainError as exc:
        raise ConfigError(str(exc)) from exc
    out = io.ensure_dir(args.out_dir or "out")
    path = io.write_solution(sol, out / f"solution_{args.regime}.csv",
                             {"seed": args.seed if args.seed is not None else 0})
    m = sol.mass()
    print(f"{regime}: M={sol.M} dt={sol.dt} steps={len(sol.times) - 1} mass drift={abs(m[-1] - m[0]):.3e}")
    print(f"wrote {path}")
    return EXIT_PASS


def main(argv=None) -> int:
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except SystemExit as exc:
        return EXIT_CONFIG if exc.code else EXIT_PASS
    handler = {"run": cmd_run, "diagnose": cmd_diagnose, "solve": cmd_solve}[args.command]
    try:
        return handler(args)
    except ConfigError as exc:
        for p in exc.problems:
            print(f"config error: {p}", file=sys.stderr)
        return EXIT_CONFIG
    except ReplicaError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_FAIL
    except OSError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_FAIL


if __name__ == "__main__":
    sys.exit(main())
