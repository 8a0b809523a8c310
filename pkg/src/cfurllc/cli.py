"""Command-line driver: ``cfurllc run`` and ``cfurllc validate``."""
from __future__ import annotations

import argparse
import csv
import json
import logging
import os
import sys
import time

from . import __version__
from .presets import (DEFAULT_SWEEPS, PRESETS, SWEEP_PARAMS, Plan, PlanError, load_config, parse_scenario_items,
                      parse_values, plan_to_ini, preset)
from .scenario import EXPERIMENT_KEYS, ExperimentSpec, summary, validate_scenario
from .simkit import WORKERS_ENV, run_experiment

CSV_COLUMNS = ("sweep_param", "value", "eta", "eta_ci_lo", "eta_ci_hi", "mean_log10_eps",
               "n_placements", "n_fading", "seed")
MANIFEST_NAME = "run-manifest.ini"

EXIT_OK, EXIT_INVALID, EXIT_USAGE = 0, 2, 64

log = logging.getLogger("cfurllc")


def _load_plan(target: str) -> Plan:
    if target in PRESETS:
        return preset(target)
    if os.path.exists(target):
        return load_config(target)
    raise PlanError(f"{target!r} is neither a preset ({', '.join(PRESETS)}) nor a readable config file")


def _apply_overrides(plan: Plan, pairs) -> Plan:
    scen, exp = [], {}
    for pair in pairs or ():
        if "=" not in pair:
            raise PlanError(f"override {pair!r} is not key=value")
        key, raw = (s.strip() for s in pair.split("=", 1))
        if key in EXPERIMENT_KEYS:
            exp[key] = int(raw)
        else:
            scen.append((key, raw))
    base = plan.base.replace(**parse_scenario_items(scen, "--override")) if scen else plan.base
    return plan.replace(base=base, **exp)


def resolve_plan(args) -> Plan:
    plan = _apply_overrides(_load_plan(args.target), args.override)
    if args.sweep:
        if args.sweep not in SWEEP_PARAMS:
            raise PlanError(f"unknown sweep parameter {args.sweep!r}; valid: {', '.join(SWEEP_PARAMS)}")
        if args.sweep != plan.sweep_param:
            plan = plan.replace(sweep_param=args.sweep, sweep_values=DEFAULT_SWEEPS[args.sweep])
    if args.values:
        plan = plan.replace(sweep_values=parse_values(args.values, plan.sweep_param))
    changes = {}
    if args.seed is not None:
        changes["seed"] = args.seed
    if args.placements is not None:
        changes["n_placements"] = args.placements
    if args.fading is not None:
        changes["n_fading"] = args.fading
    if args.LM is not None:
        changes["lm"] = args.LM
    return plan.replace(**changes) if changes else plan


def _fmt_value(v) -> str:
    return f"{v:g}" if isinstance(v, float) else str(v)


def _row(plan: Plan, value, res) -> list[str]:
    lo, hi = res.wilson_ci_95
    return [plan.sweep_param, _fmt_value(value), f"{res.eta:.6f}", f"{lo:.6f}", f"{hi:.6f}",
            f"{res.mean_log10_eps:.6e}", str(res.n_placements), str(res.n_fading), str(plan.seed)]


def _write_csv(path: str, rows) -> None:
    with open(path, "w", newline="", encoding="utf-8") as fh:
        w = csv.writer(fh, lineterminator="\r\n")
        w.writerow(CSV_COLUMNS)
        w.writerows(rows)


def _header(plan: Plan) -> str:
    lines = [f"cfurllc {__version__}  plan={plan.name}  seed={plan.seed}",
             f"sweep {plan.sweep_param} = {', '.join(_fmt_value(v) for v in plan.sweep_values)}",
             f"placements={plan.n_placements}  fading={plan.n_fading}"
             + (f"  LM={plan.lm}" if plan.lm else ""),
             "curves: " + ", ".join(c.name for c in plan.curves), "base scenario:", summary(plan.base)]
    return "\n".join(lines)


def run_plan(plan: Plan, out_dir: str, stream=sys.stdout) -> list[str]:
    """Run every (curve, value) point and write one CSV per curve and metric."""
    os.makedirs(out_dir, exist_ok=True)
    print(_header(plan), file=stream)
    written = []
    for curve in plan.curves:
        rows = {m: [] for m in plan.metrics}
        for value in plan.sweep_values:
            sc = plan.scenario_for(curve, value)
            if sc is None:
                print(f"  [{curve.name}] {plan.sweep_param}={_fmt_value(value)}: antenna split impossible, skipped",
                      file=stream)
                continue
            diag = validate_scenario(sc)
            for wmsg in diag.warnings:
                print(f"  warning [{curve.name}]: {wmsg}", file=stream)
            if not diag.ok:
                raise PlanError(f"[{curve.name}] {plan.sweep_param}={value}: " + "; ".join(diag.errors))
            t0 = time.perf_counter()
            res = run_experiment(ExperimentSpec(sc, plan.n_placements, plan.n_fading, plan.seed))
            for m in plan.metrics:
                rows[m].append(_row(plan, value, res.eps if m == "eps" else res.outage))
            print(f"  [{curve.name}] {plan.sweep_param}={_fmt_value(value)} (L={sc.L}, M={sc.M}): "
                  f"eta={res.eps.eta:.3f} mean log10 eps={res.eps.mean_log10_eps:.2f} "
                  f"({time.perf_counter() - t0:.1f}s)", file=stream, flush=True)
        for m in plan.metrics:
            suffix = "" if plan.metrics == ("eps",) else f"__{m}"
            path = os.path.join(out_dir, f"{plan.name}__{curve.name}{suffix}.csv")
            _write_csv(path, rows[m])
            written.append(path)
    manifest = os.path.join(out_dir, MANIFEST_NAME)
    with open(manifest, "w", encoding="utf-8") as fh:
        fh.write(f"# resolved configuration of plan {plan.name!r}; rerun with: cfurllc run {MANIFEST_NAME}\n")
        fh.write(plan_to_ini(plan))
    with open(os.path.join(out_dir, "run-manifest.json"), "w", encoding="utf-8") as fh:
        json.dump({"plan": plan.name, "version": __version__, "csv": [os.path.basename(p) for p in written],
                   "workers_env": os.environ.get(WORKERS_ENV)}, fh, indent=2, sort_keys=True)
        fh.write("\n")
    return written


def cmd_run(args) -> int:
    plan = resolve_plan(args)
    out = args.out or os.path.join("results", plan.name)
    for path in run_plan(plan, out):
        print(f"wrote {path}")
    return EXIT_OK


def cmd_validate(args) -> int:
    plan = _load_plan(args.target)
    ok = True
    print(f"plan {plan.name}: sweep {plan.sweep_param}, {len(plan.curves)} curve(s)")
    print(summary(plan.base))
    for curve in plan.curves:
        for value in plan.sweep_values:
            sc = plan.scenario_for(curve, value)
            if sc is None:
                print(f"  warning [{curve.name}] {plan.sweep_param}={_fmt_value(value)}: antenna split impossible")
                continue
            diag = validate_scenario(sc)
            for msg in diag.errors:
                ok = False
                print(f"  error [{curve.name}] {plan.sweep_param}={_fmt_value(value)}: {msg}")
            for msg in diag.warnings:
                print(f"  warning [{curve.name}] {plan.sweep_param}={_fmt_value(value)}: {msg}")
    print("valid" if ok else "invalid")
    return EXIT_OK if ok else EXIT_INVALID


def build_parser() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(prog="cfurllc", description=__doc__)
    p.add_argument("--version", action="version", version=f"%(prog)s {__version__}")
    p.add_argument("-v", "--verbose", action="store_true")
    sub = p.add_subparsers(dest="command", required=True)

    r = sub.add_parser("run", help="run a preset or config file and write CSVs")
    r.add_argument("target", help=f"preset name ({', '.join(PRESETS)}) or INI config path")
    r.add_argument("--sweep", help=f"swept parameter ({', '.join(SWEEP_PARAMS)})")
    r.add_argument("--values", help="comma-separated sweep values (default: the preset's)")
    r.add_argument("--seed", type=int)
    r.add_argument("--out", help="output directory (default results/<plan>)")
    r.add_argument("--placements", type=int)
    r.add_argument("--fading", type=int)
    r.add_argument("--LM", type=int, help="total antenna count for split-rule curves")
    r.add_argument("--override", nargs="*", metavar="KEY=VALUE", default=[])
    r.set_defaults(func=cmd_run)

    v = sub.add_parser("validate", help="check a preset or config file")
    v.add_argument("target")
    v.set_defaults(func=cmd_validate)
    return p


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(levelname)s %(name)s: %(message)s")
    try:
        return args.func(args)
    except (PlanError, OSError, ValueError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_USAGE


if __name__ == "__main__":
    sys.exit(main())
