"""Command-line front end.

Subcommands: simulate, sweep-eta, sweep-power, via-solve, stability-check,
bench.  Exit codes: 0 success, 1 configuration/usage error, 2 divergence
detected during simulation.
"""

from __future__ import annotations

import argparse
import csv
import json
import math
import sys
import time
from dataclasses import replace
from pathlib import Path

import numpy as np

from . import harness, mdp
from .errors import NcsError
from .policy import check_necessary, check_sufficient, instability_measure


def _load_config(args) -> harness.SimConfig:
    if args.config:
        cfg = harness.SimConfig.from_file(args.config)
    else:
        cfg = harness.default_config()
    overrides = {}
    if args.seed is not None:
        overrides["seed"] = args.seed
    if args.trials is not None:
        overrides["trials"] = args.trials
    if args.horizon is not None:
        overrides["horizon"] = args.horizon
    if args.policy is not None:
        overrides["policy"] = args.policy
    if overrides:
        cfg = replace(cfg, **overrides)
        cfg.validate()
    return cfg


def _out_dir(args) -> Path:
    out = Path(args.out or ".")
    out.mkdir(parents=True, exist_ok=True)
    return out


def _json_default(obj):
    if isinstance(obj, float) and not math.isfinite(obj):
        return None
    if isinstance(obj, np.generic):
        return obj.item()
    if isinstance(obj, np.ndarray):
        return obj.tolist()
    raise TypeError(f"not JSON-serializable: {type(obj)}")


def _dump_json(payload, path: Path) -> None:
    def clean(v):
        if isinstance(v, float) and not math.isfinite(v):
            return None
        if isinstance(v, dict):
            return {k: clean(x) for k, x in v.items()}
        if isinstance(v, (list, tuple)):
            return [clean(x) for x in v]
        return v

    path.write_text(json.dumps(clean(payload), indent=2, default=_json_default) + "\n")


def _write_csv(rows: list[dict], path: Path) -> None:
    if not rows:
        path.write_text("")
        return
    with open(path, "w", newline="") as fh:
        writer = csv.DictWriter(fh, fieldnames=list(rows[0].keys()))
        writer.writeheader()
        writer.writerows(rows)


def cmd_simulate(args) -> int:
    cfg = _load_config(args)
    res = harness.monte_carlo(cfg)
    pooled = res.pooled()
    payload = {
        "config": cfg.to_dict(),
        "pooled": pooled,
        "per_trial": [m.to_dict() for m in res.per_trial],
    }
    out = _out_dir(args)
    _dump_json(payload, out / "metrics.json")
    print(json.dumps({k: pooled[k] for k in
                      ("normalized_mse", "avg_power_db", "success_rate",
                       "overflow_count", "divergence_flag")}, default=_json_default))
    return 2 if pooled["divergence_flag"] else 0


def cmd_sweep_eta(args) -> int:
    cfg = _load_config(args)
    grid = np.arange(args.eta_min, args.eta_max + 1e-12, args.eta_step)
    rows = harness.sweep_eta(cfg, grid, target_db=args.target_db)
    out = _out_dir(args)
    _write_csv(rows, out / "sweep_eta.csv")
    _dump_json({"config": cfg.to_dict(), "rows": rows}, out / "sweep_eta.json")
    best = next(r for r in rows if r["is_minimum"])
    print(f"minimum normalized MSE {best['normalized_mse']:.4g} "
          f"at eta_th = {best['eta_th']:.3g}")
    return 0


def cmd_sweep_power(args) -> int:
    cfg = _load_config(args)
    lambdas = np.logspace(args.log10_min, args.log10_max, args.points)
    rows = harness.sweep_power(cfg, lambdas, policies=tuple(args.policies.split(",")))
    out = _out_dir(args)
    _write_csv(rows, out / "sweep_power.csv")
    _dump_json({"config": cfg.to_dict(), "rows": rows}, out / "sweep_power.json")
    print(f"wrote {len(rows)} sweep rows to {out / 'sweep_power.csv'}")
    return 0


def cmd_via_solve(args) -> int:
    cfg = _load_config(args)
    system = harness.build_system(cfg)
    grid = harness.make_mdp_grid(system)
    model = mdp.build_kernel(grid, system.plant, system.channel,
                             float(system.s_mat[0, 0]), cfg.lambda_price,
                             w_bound=system.w_bound)
    sol = mdp.relative_value_iteration(model, tol=args.tol)
    out = _out_dir(args)
    mdp.solution_to_csv(grid, sol, out / "via_solution.csv")
    _dump_json({"theta": sol.theta, "residual": sol.residual,
                "iterations": sol.iterations}, out / "via_solution.json")
    print(f"theta = {sol.theta:.6g} (residual {sol.residual:.2e}, "
          f"{sol.iterations} iterations)")
    return 0


def cmd_stability_check(args) -> int:
    cfg = _load_config(args)
    system = harness.build_system(cfg)
    F = system.plant.F
    kappa = system.channel.kappa
    ok_suff, m_suff = check_sufficient(F, cfg.rate_total, cfg.p_max, cfg.tau,
                                       kappa, cfg.b_w)
    ok_nec, m_nec = check_necessary(F, cfg.rate_total, cfg.p_max, cfg.tau,
                                    kappa, cfg.b_w)
    report = {
        "instability_measure": instability_measure(F),
        "sufficient": ok_suff,
        "sufficient_margin": m_suff,
        "necessary": ok_nec,
        "necessary_margin": m_nec,
    }
    if args.out:
        _dump_json(report, _out_dir(args) / "stability.json")
    print(f"sufficient={str(ok_suff).lower()} (margin {m_suff:+.4f})  "
          f"necessary={str(ok_nec).lower()} (margin {m_nec:+.4f})")
    return 0


def cmd_bench(args) -> int:
    cfg = _load_config(args)
    system = harness.build_system(cfg)
    rng = np.random.default_rng(cfg.seed)
    n = args.decisions
    deltas = rng.normal(scale=0.5, size=(n, system.dim))
    alphas = rng.exponential(size=n) + 1e-9

    names = ["proposed", "fpc", "copc"]
    if system.dim == 1:
        names.append("via")
    rows = []
    for name in names:
        policy = harness.build_policy(system, name=name)
        theta = deltas  # proxy prediction state for table policies
        start = time.perf_counter()
        for i in range(n):
            policy.power_batch(deltas[i:i + 1], alphas[i:i + 1], theta[i:i + 1])
        elapsed = time.perf_counter() - start
        rows.append({"policy": name, "microseconds_per_decision": 1e6 * elapsed / n})
    for row in rows:
        print(f"{row['policy']:>9s}: {row['microseconds_per_decision']:8.2f} us/decision")
    if args.out:
        _write_csv(rows, _out_dir(args) / "bench.csv")
    return 0


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="ncspower",
        description="Networked-control-system power-control simulator",
    )
    sub = parser.add_subparsers(dest="command", required=True)

    def common(p):
        p.add_argument("--config", help="JSON config file (defaults to the 2-D benchmark)")
        p.add_argument("--seed", type=int)
        p.add_argument("--trials", type=int)
        p.add_argument("--horizon", type=int)
        p.add_argument("--policy", choices=harness._POLICIES)
        p.add_argument("--out", help="output directory")

    p = sub.add_parser("simulate", help="run one Monte Carlo configuration")
    common(p)
    p.set_defaults(fn=cmd_simulate)

    p = sub.add_parser("sweep-eta", help="normalized MSE across eta_th at matched power")
    common(p)
    p.add_argument("--eta-min", type=float, default=0.2)
    p.add_argument("--eta-max", type=float, default=1.2)
    p.add_argument("--eta-step", type=float, default=0.1)
    p.add_argument("--target-db", type=float, default=14.0)
    p.set_defaults(fn=cmd_sweep_eta)

    p = sub.add_parser("sweep-power", help="power-distortion frontier per policy")
    common(p)
    p.add_argument("--log10-min", type=float, default=-4.0)
    p.add_argument("--log10-max", type=float, default=6.0)
    p.add_argument("--points", type=int, default=9)
    p.add_argument("--policies", default="proposed,fpc,copc")
    p.set_defaults(fn=cmd_sweep_power)

    p = sub.add_parser("via-solve", help="brute-force value iteration (d = 1)")
    common(p)
    p.add_argument("--tol", type=float, default=1e-7)
    p.set_defaults(fn=cmd_via_solve)

    p = sub.add_parser("stability-check", help="evaluate the spectral stability conditions")
    common(p)
    p.set_defaults(fn=cmd_stability_check)

    p = sub.add_parser("bench", help="per-decision cost of each policy")
    common(p)
    p.add_argument("--decisions", type=int, default=2000)
    p.set_defaults(fn=cmd_bench)
    return parser


def main(argv=None) -> int:
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except SystemExit as exc:
        return 1 if exc.code not in (0, None) else 0
    try:
        return args.fn(args)
    except NcsError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 1


if __name__ == "__main__":
    sys.exit(main())
