"""Command-line driver.

Subcommands:
  run           closed-loop experiment, writes run artifacts
  compare       paired statistics of two run directories
  validate      feeder checks and a load flow at given injections
  tighten-only  robust bounds for one horizon, written as bounds.csv

Exit codes: 0 success, 2 configuration error, 3 data error, 4 solver
failure, 5 plant (load-flow) failure.  The default output root is taken
from the ROBUST_DISPATCH_OUT environment variable, else ``./runs``.
"""

from __future__ import annotations

import argparse
import json
import logging
import os
import sys
from pathlib import Path

import numpy as np

from . import artifacts
from .controller import RunConfig, compare_tables, run_closed_loop, table_stats
from .errors import ConfigError, DataError, PlantError, SolverError
from .feeder import FORMAT_VERSION, load_feeder, load_series
from .fixtures import default_uncertainty_path, feeder_path, series_path
from .loadflow import solve_loadflow
from .recovery import recover_all
from .socp import SolverConfig, solve_socp
from .tightening import DISTRIBUTIONS, RobustConfig, TightenedBounds, tighten
from .uncertainty import load_uncertainty_config

EXIT_OK, EXIT_CONFIG, EXIT_DATA, EXIT_SOLVER, EXIT_PLANT = 0, 2, 3, 4, 5
OUT_ENV = "ROBUST_DISPATCH_OUT"


def _output_root() -> Path:
    return Path(os.environ.get(OUT_ENV, "runs"))


def _load_inputs(args):
    fpath = feeder_path(args.feeder)
    model = load_feeder(fpath)
    series = load_series(series_path(args.feeder, args.series))
    ucfg = load_uncertainty_config(args.uncertainty or default_uncertainty_path())
    if args.family is not None:
        ucfg.family = args.family
    modelU = ucfg.build(model, series)
    if args.uncertainty_scale is not None:
        if args.uncertainty_scale < 0:
            raise ConfigError("--uncertainty-scale must be nonnegative")
        modelU = modelU.scaled(args.uncertainty_scale)
    return model, series, modelU


def _robust(args) -> RobustConfig:
    return RobustConfig(alpha_v=args.alpha_v, distribution=args.distribution)


def _solver(args) -> SolverConfig:
    return SolverConfig(workers=args.workers)


def cmd_run(args) -> int:
    model, series, modelU = _load_inputs(args)
    cfg = RunConfig(
        mode=args.mode,
        horizon=args.horizon,
        dt_hours=series.dt_hours,
        steps=args.steps,
        robust=_robust(args),
        solver=_solver(args),
        seed=args.seed,
        scenarios=args.scenarios,
    )
    out = Path(args.out) if args.out else _output_root() / f"{model.name}-{cfg.mode}-seed{cfg.seed}"
    log = run_closed_loop(model, series, modelU, cfg)
    extra = {"uncertainty": {"family": modelU.family, "refresh_period": modelU.refresh_period,
                             "growth": [list(g) for g in modelU.growth]}}
    path = artifacts.write_run(log, out, extra)
    stats = json.loads(path.read_text())["statistics"]
    print(f"run written to {out}")
    print(
        f"violation rate {stats['violation_rate']:.4f} (se {stats['violation_rate_se']:.4f}), "
        f"losses {stats['total_losses']:.6f} p.u., imbalance {stats['imbalance']:.5f}"
    )
    return EXIT_OK


def cmd_compare(args) -> int:
    sa, ta = artifacts.read_run(args.run_a)
    sb, tb = artifacts.read_run(args.run_b)
    artifacts.check_pairable(sa, sb)
    cmp = compare_tables(ta, tb)
    report = {
        "format_version": FORMAT_VERSION,
        "run_a": {"path": str(args.run_a), "mode": sa["mode"], **table_stats(ta).summary()},
        "run_b": {"path": str(args.run_b), "mode": sb["mode"], **table_stats(tb).summary()},
        "deltas": {
            "violation_rate": cmp.rate_b - cmp.rate_a,
            "losses": cmp.loss_increase,
            "net_demand_rmse": cmp.net_demand_rmse,
            "relative_net_demand_increase": cmp.relative_net_demand_increase,
            "imbalance": cmp.imbalance_b - cmp.imbalance_a,
        },
    }
    text = json.dumps(report, indent=1, sort_keys=True) + "\n"
    if args.out:
        Path(args.out).write_text(text)
    sys.stdout.write(text)
    return EXIT_OK


def _read_injections(path, model) -> np.ndarray:
    header, rows = artifacts.read_csv(path)
    if header[:4] != ["bus", "phase", "p", "q"]:
        raise DataError(f"{path}: header must be bus,phase,p,q")
    topo = model.topology
    s = np.zeros(topo.n_bp, dtype=complex)
    for row in rows:
        key = (row[0], row[1])
        if key not in topo.bp_index:
            raise DataError(f"{path}: unknown bus-phase {row[0]}.{row[1]}")
        s[topo.bp_index[key]] += float(row[2]) + 1j * float(row[3])
    return s


def cmd_validate(args) -> int:
    model = load_feeder(feeder_path(args.feeder))
    topo = model.topology
    print(f"feeder {model.name}: {len(model.buses)} buses, {len(model.branches)} branches, "
          f"{len(model.ders)} DERs, depth {max(topo.depth.values())}, radial")
    if args.injections:
        s = _read_injections(args.injections, model)
    elif args.series or args.feeder_has_series:
        series = load_series(series_path(args.feeder, args.series))
        if not 0 <= args.step < series.horizon:
            raise ConfigError(f"--step {args.step} outside series of {series.horizon} steps")
        s = -series.demand_matrix(model)[args.step]
    else:
        return EXIT_OK
    res = solve_loadflow(model, s)
    mag = np.abs(res.v)
    rows = [(f"{b}.{p}", m, np.degrees(np.angle(v))) for (b, p), m, v in zip(topo.bp, mag, res.v)]
    for name, m, a in rows:
        print(f"  {name:>10s}  |V| {m:.6f}  angle {a:9.4f}")
    print(f"sweeps {res.sweeps}, mismatch {res.mismatch:.3e}, losses {res.losses:.8f} p.u.")
    if args.out:
        artifacts.write_csv(args.out, ("element", "magnitude", "angle_deg"), rows)
    return EXIT_OK


def cmd_tighten_only(args) -> int:
    model, series, modelU = _load_inputs(args)
    window = series.window(args.start, args.horizon)
    nominal = TightenedBounds.nominal(model, window.horizon)
    socp = solve_socp(model, window, nominal, _solver(args))
    anchor = recover_all(model, socp, nominal, _solver(args))
    bounds = tighten(model, anchor, modelU, _robust(args), t0=args.start)
    out = Path(args.out) if args.out else _output_root() / f"{model.name}-bounds-t{args.start}.csv"
    out.parent.mkdir(parents=True, exist_ok=True)
    rows = []
    for k in range(bounds.horizon):
        for step, name, family, lo, hi, lam in artifacts.bounds_rows(model, bounds.step(k), args.start + k):
            rows.append((step, k, int(bounds.leads[k]), name, family, lo, hi, lam))
    artifacts.write_csv(out, ("step", "offset", "lead", "element", "family", "lower", "upper", "margin"), rows)
    print(f"bounds written to {out}; max voltage margin {bounds.lam_v.max():.6f}, "
          f"over-tight rows {int(bounds.over_tight.sum())}")
    return EXIT_OK


def _alpha(text: str) -> float:
    try:
        return float(text)
    except ValueError:
        raise argparse.ArgumentTypeError(f"not a number: {text!r}")


def build_parser() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(prog="robust-dispatch", description=__doc__.splitlines()[0])
    p.add_argument("--format-version", action="version", version=f"artifact format_version={FORMAT_VERSION}")
    p.add_argument("-v", "--verbose", action="store_true")
    sub = p.add_subparsers(dest="command", required=True)

    def inputs(sp):
        sp.add_argument("--feeder", default="13bus-stressed", help="feeder file or builtin name (2bus, 13bus, 13bus-stressed)")
        sp.add_argument("--series", help="forecast series CSV (defaults to the builtin feeder's series)")
        sp.add_argument("--uncertainty", help="uncertainty config JSON (defaults to the bundled one)")
        sp.add_argument("--family", choices=("uniform", "gaussian", "custom-unimodal"))
        sp.add_argument("--uncertainty-scale", type=float, help="multiply every error scale (0 disables uncertainty)")
        sp.add_argument("--alpha-v", type=_alpha, default=0.10)
        sp.add_argument("--distribution", choices=DISTRIBUTIONS, default="unimodal")
        sp.add_argument("--horizon", type=int, default=12)
        sp.add_argument("--workers", type=int, default=1)
        sp.add_argument("--out", help="output path (default under $%s or ./runs)" % OUT_ENV)

    r = sub.add_parser("run", help="closed-loop Monte-Carlo experiment")
    inputs(r)
    r.add_argument("--mode", choices=("deterministic", "stochastic"), default="stochastic")
    r.add_argument("--steps", type=int, default=60)
    r.add_argument("--scenarios", type=int, default=200)
    r.add_argument("--seed", type=int, default=7)
    r.set_defaults(func=cmd_run)

    c = sub.add_parser("compare", help="paired statistics of two runs")
    c.add_argument("run_a")
    c.add_argument("run_b")
    c.add_argument("--out", help="also write the report to this file")
    c.set_defaults(func=cmd_compare)

    v = sub.add_parser("validate", help="check a feeder and solve one load flow")
    v.add_argument("--feeder", required=True)
    v.add_argument("--injections", help="CSV with bus,phase,p,q net injections (p.u.)")
    v.add_argument("--series", help="forecast series; the demand at --step is used")
    v.add_argument("--step", type=int, default=0)
    v.add_argument("--out", help="write bus voltages to this CSV")
    v.set_defaults(func=cmd_validate)

    t = sub.add_parser("tighten-only", help="robust bounds for one planning horizon")
    inputs(t)
    t.add_argument("--start", type=int, default=0, help="closed-loop time of the first horizon step")
    t.set_defaults(func=cmd_tighten_only)
    return p


def main(argv=None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING, format="%(levelname)s %(message)s")
    if args.command == "validate":
        from .fixtures import BUILTIN

        args.feeder_has_series = args.feeder in BUILTIN
    try:
        return args.func(args)
    except ConfigError as exc:
        print(f"configuration error: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    except DataError as exc:
        print(f"data error: {exc}", file=sys.stderr)
        return EXIT_DATA
    except SolverError as exc:
        print(f"solver failure: {exc}", file=sys.stderr)
        return EXIT_SOLVER
    except PlantError as exc:
        print(f"plant load flow failure: {exc}", file=sys.stderr)
        return EXIT_PLANT


if __name__ == "__main__":
    sys.exit(main())
