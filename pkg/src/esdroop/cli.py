"""Command-line entry point: ``esdroop {run,compare,oracle,check-convexity,validate}``.

Exit codes: 0 success, 1 usage or input error, 2 simulation failure.
"""

from __future__ import annotations

import argparse
import json
import sys
from dataclasses import replace
from pathlib import Path

import numpy as np

from .convexity import DEFAULT_TOL
from .feeder import FeederError, load_feeder
from .powerflow import PowerFlowError, build_injections
from .scenario import (
    CONTROLLERS, ScenarioConfig, ScenarioError, brute_force_dispatch, profile_matrix, run_qsts,
    summarize, write_outputs,
)


class UsageError(Exception):
    pass


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        self.print_usage(sys.stderr)
        self.exit(1, f"{self.prog}: error: {message}\n")


def _band(text: str) -> tuple[float, float]:
    try:
        lo, hi = (float(x) for x in text.split(":"))
    except ValueError:
        raise argparse.ArgumentTypeError(f"expected VMIN:VMAX, got {text!r}") from None
    if not lo < hi:
        raise argparse.ArgumentTypeError("VMIN must be below VMAX")
    return lo, hi


def _common(p: argparse.ArgumentParser, controller: bool = True) -> None:
    p.add_argument("--feeder", default="4bus.json",
                   help="feeder JSON path or bundled name (default: 4bus.json)")
    if controller:
        p.add_argument("--controller", choices=CONTROLLERS, default="es-adaptive",
                       help="controller kind (default: es-adaptive)")
    p.add_argument("--hours", type=float, default=24.0, help="simulated horizon in hours (default: 24)")
    p.add_argument("--dt", type=float, default=30.0, help="inner step in seconds (default: 30)")
    p.add_argument("--profiles-dir", default=None,
                   help="directory of <name>.csv profiles that override bundled shapes (default: none)")
    p.add_argument("--solar-profile", default=None,
                   help="drive every inverter with this profile, e.g. solar_highvar (default: per feeder)")
    p.add_argument("--substation-pu", type=float, default=None,
                   help="source voltage magnitude (default: value in the feeder file)")
    p.add_argument("--regulators", choices=("on", "off"), default="off",
                   help="let regulator taps move (default: off, taps held)")
    p.add_argument("--objective", choices=("i2", "sloss"), default="i2",
                   help="local objective: squared branch current or branch loss (default: i2)")
    p.add_argument("--band", type=_band, default=None, metavar="VMIN:VMAX",
                   help="droop saturation voltages (default: 0.80:1.20)")
    p.add_argument("--seed", type=int, default=0, help="seed for profile jitter (default: 0)")
    p.add_argument("--price-per-kwh", type=float, default=0.08, help="energy price (default: 0.08)")
    p.add_argument("--config", default=None,
                   help="JSON file of scenario settings; command-line flags win (default: none)")
    p.add_argument("--out", default="runs", help="output directory (default: runs)")
    p.add_argument("--force", action="store_true", help="overwrite existing output files")


def build_parser() -> argparse.ArgumentParser:
    ap = _Parser(prog="esdroop", description="Quasi-static feeder simulation with local Volt-VAR control.")
    sub = ap.add_subparsers(dest="command", required=True, parser_class=_Parser)

    p = sub.add_parser("run", help="simulate one controller and write CSV + JSON")
    _common(p)
    p.add_argument("--convexity-report", action="store_true",
                   help="append per-step convexity columns (triples solver work)")

    p = sub.add_parser("compare", help="run es-adaptive, fixed-droop and oracle on one config")
    _common(p, controller=False)

    p = sub.add_parser("oracle", help="brute-force dispatch at one snapshot")
    _common(p, controller=False)
    p.add_argument("--at-step", type=int, default=0, help="snapshot step index (default: 0)")
    p.add_argument("--points", type=int, default=21, help="grid points per inverter (default: 21)")

    p = sub.add_parser("check-convexity", help="run with per-step convexity reports")
    _common(p)

    p = sub.add_parser("validate", help="load and validate a feeder file")
    p.add_argument("--feeder", required=True, help="feeder JSON path or bundled name")
    return ap


def _config(args, **over) -> ScenarioConfig:
    doc = {}
    if args.config:
        try:
            doc = json.loads(Path(args.config).read_text())
        except (OSError, json.JSONDecodeError) as exc:
            raise UsageError(f"cannot read config {args.config}: {exc}") from exc
    cfg = ScenarioConfig.from_dict(doc)
    params = dict(cfg.params)
    params["objective"] = args.objective
    if args.band is not None:
        params["v_min"], params["v_max"] = args.band
    profiles = dict(cfg.profiles)
    if args.solar_profile:
        model = load_feeder(args.feeder)
        profiles.update({pv.id: args.solar_profile for pv in model.pvs})
    kw = dict(
        feeder=args.feeder, hours=args.hours, dt=args.dt, params=params, profiles=profiles,
        profiles_dir=args.profiles_dir or cfg.profiles_dir, seed=args.seed,
        substation_pu=args.substation_pu if args.substation_pu is not None else cfg.substation_pu,
        regulators=args.regulators == "on" or cfg.regulators, price_per_kwh=args.price_per_kwh,
    )
    if hasattr(args, "controller"):
        kw["controller"] = args.controller
    kw.update(over)
    return replace(cfg, **kw)


def _stem(cfg: ScenarioConfig) -> str:
    return f"{Path(cfg.feeder).stem}_{cfg.controller}"


def _print_summary(s) -> None:
    osc = ", ".join(f"{k}={v:.1f}" for k, v in s.oscillation_index.items())
    print(f"{s.controller:>12}  {s.kwh:10.2f} kWh  cost {s.cost:8.2f}  V[{s.v_min:.4f}, {s.v_max:.4f}]  "
          f"violations {s.violations}  oscillation {{{osc}}}")


def cmd_run(args) -> int:
    cfg = _config(args, convexity_report=getattr(args, "convexity_report", False))
    model = load_feeder(cfg.feeder)
    records, summary = run_qsts(cfg, model)
    if cfg.substation_pu is not None:
        model = model.with_source_voltage(cfg.substation_pu)
    paths = write_outputs(model, records, summary, args.out, _stem(cfg), cfg.convexity_report, args.force)
    _print_summary(summary)
    print(f"wrote {paths[0]} and {paths[1]}")
    return 0


def cmd_compare(args) -> int:
    base = _config(args, controller="es-adaptive")
    model = load_feeder(base.feeder)
    out_model = model if base.substation_pu is None else model.with_source_voltage(base.substation_pu)
    runs = {}
    for kind in ("oracle", "es-adaptive", "fixed-droop"):
        params = base.params if kind == "es-adaptive" else {
            k: v for k, v in base.params.items() if k in ("v_min", "v_max")}
        cfg = replace(base, controller=kind, params=params)
        records, summary = run_qsts(cfg, model)
        runs[kind] = (cfg, records, summary)
    oracle_kwh = runs["oracle"][2].kwh
    table = []
    print(f"{'controller':>12}  {'kWh':>10}  {'gap %':>7}  {'cost':>8}  {'violations':>10}  {'v_min':>7}  {'v_max':>7}")
    for kind, (cfg, records, s) in runs.items():
        s = summarize(records, cfg.dt, cfg.price_per_kwh, model=out_model, controller=kind,
                      feeder=s.feeder, oracle_kwh=oracle_kwh)
        runs[kind] = (cfg, records, s)
        table.append(s.to_dict())
        print(f"{kind:>12}  {s.kwh:10.2f}  {s.loss_gap_pct:7.2f}  {s.cost:8.2f}  {s.violations:10d}  "
              f"{s.v_min:7.4f}  {s.v_max:7.4f}")
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    target = out / f"{Path(base.feeder).stem}_compare.json"
    if target.exists() and not args.force:
        raise UsageError(f"{target} exists (use --force to overwrite)")
    for kind, (cfg, records, s) in runs.items():
        write_outputs(out_model, records, s, out, _stem(cfg), False, args.force)
    target.write_text(json.dumps(table, indent=2, sort_keys=True) + "\n")
    print(f"wrote {target}")
    return 0


def cmd_oracle(args) -> int:
    cfg = _config(args, controller="oracle")
    model = load_feeder(cfg.feeder)
    if cfg.substation_pu is not None:
        model = model.with_source_voltage(cfg.substation_pu)
    if not 0 <= args.at_step < cfg.n_steps:
        raise UsageError(f"--at-step must lie in [0, {cfg.n_steps - 1}]")
    load_mult, pv_kw = profile_matrix(model, cfg)
    taps = {r.branch: r.taps for r in model.regulators}
    res = brute_force_dispatch(model, build_injections(model, load_mult[args.at_step]), pv_kw[args.at_step],
                               taps, points=args.points, budget=cfg.oracle_budget)
    doc = {
        "step": args.at_step, "time_s": args.at_step * cfg.dt, "mode": res.mode,
        "evaluations": res.evaluations, "objective_pu": res.objective, "loss_kw": res.loss_kw,
        "dispatch_kvar": {pv.id: float(q) for pv, q in zip(model.pvs, res.q_kvar)},
    }
    for pid, q in doc["dispatch_kvar"].items():
        print(f"{pid:>10}  {q:10.2f} kvar")
    print(f"loss {res.loss_kw:.3f} kW, objective {res.objective:.6g} pu ({res.mode}, {res.evaluations} solves)")
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    target = out / f"{Path(cfg.feeder).stem}_oracle_step{args.at_step}.json"
    if target.exists() and not args.force:
        raise UsageError(f"{target} exists (use --force to overwrite)")
    target.write_text(json.dumps(doc, indent=2) + "\n")
    print(f"wrote {target}")
    return 0


def cmd_check_convexity(args) -> int:
    cfg = _config(args, convexity_report=True)
    model = load_feeder(cfg.feeder)
    records, summary = run_qsts(cfg, model)
    if cfg.substation_pu is not None:
        model = model.with_source_voltage(cfg.substation_pu)
    paths = write_outputs(model, records, summary, args.out, _stem(cfg) + "_convexity", True, args.force)
    for k, pv in enumerate(model.pvs):
        reps = [r.convexity[k] for r in records if r.convexity and r.convexity[k] is not None]
        if not reps:
            print(f"{pv.id:>10}  no sampled steps")
            continue
        d_ok = np.mean([rep.denominator > 0 for rep in reps])
        c_ok = np.mean([rep.second_derivative >= -DEFAULT_TOL for rep in reps])
        k_ok = np.mean([rep.k_nonnegative for rep in reps])
        print(f"{pv.id:>10}  sampled {len(reps):5d}  D>0 {100 * d_ok:6.2f}%  K>=0 {100 * k_ok:6.2f}%  "
              f"curvature>=-tol {100 * c_ok:6.2f}%")
    print(f"wrote {paths[0]} and {paths[1]}")
    return 0


def cmd_validate(args) -> int:
    model = load_feeder(args.feeder)
    print(f"{model.name or args.feeder}: {len(model.buses)} buses, {len(model.branches)} branches, "
          f"{len(model.loads)} loads, {len(model.pvs)} inverters, {len(model.regulators)} regulators; ok")
    return 0


COMMANDS = {
    "run": cmd_run, "compare": cmd_compare, "oracle": cmd_oracle,
    "check-convexity": cmd_check_convexity, "validate": cmd_validate,
}


def main(argv=None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    try:
        return COMMANDS[args.command](args)
    except (UsageError, FeederError, FileNotFoundError, FileExistsError, ValueError, KeyError) as exc:
        print(f"esdroop: error: {exc}", file=sys.stderr)
        return 1
    except (ScenarioError, PowerFlowError) as exc:
        print(f"esdroop: simulation failed: {exc}", file=sys.stderr)
        return 2


if __name__ == "__main__":
    sys.exit(main())
