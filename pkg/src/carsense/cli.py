"""Command-line front end: run, sweep, tune, tune-x0, validate-scenario, make-scenario."""

from __future__ import annotations

import argparse
import csv
import json
import os
import statistics
import sys
from concurrent.futures import ProcessPoolExecutor
from dataclasses import fields
from pathlib import Path

from carsense.baselines import SCHEMES
from carsense.config import Params, TuneConfig
from carsense.engine import Simulation
from carsense.scenario import (
    Scenario,
    load_scenario,
    save_scenario,
    synthesize_scenario,
)
from carsense.world import ScenarioError

SUMMARY_FIELDS = (
    "scheme", "seed", "events_total", "events_concluded_by_gate", "events_verified_by_car",
    "events_unresolved", "tp", "fp", "tn", "fn", "accuracy", "precision", "recall", "f1",
    "tasks_total", "tasks_accepted", "tasks_verified", "tasks_deadline_missed",
    "tasks_unresolved", "deadline_hits", "deadline_hit_rate", "drops",
    "churn_reallocations",
)

MEDIAN_FIELDS = ("accuracy", "precision", "recall", "f1", "deadline_hit_rate")


def _param_flags(parser: argparse.ArgumentParser) -> None:
    """One CLI flag per tunable, named after the Params field."""
    for f in fields(Params):
        flag = "--" + f.name.replace("_", "-")
        if f.type in ("bool",):
            parser.add_argument(flag, dest=f.name, type=_parse_bool, default=None,
                                metavar="BOOL")
        elif f.type in ("int", "int | None"):
            parser.add_argument(flag, dest=f.name, type=int, default=None, metavar="N")
        else:
            parser.add_argument(flag, dest=f.name, type=float, default=None, metavar="X")


def _parse_bool(text: str) -> bool:
    if text.lower() in ("1", "true", "yes", "on"):
        return True
    if text.lower() in ("0", "false", "no", "off"):
        return False
    raise argparse.ArgumentTypeError(f"expected a boolean, got {text!r}")


def params_from_args(args: argparse.Namespace) -> Params:
    overrides = {}
    for f in fields(Params):
        value = getattr(args, f.name, None)
        if value is not None:
            if f.type == "int" or (f.type == "int | None"):
                value = int(value)
            overrides[f.name] = value
    return Params().with_overrides(**overrides)


def _out_dir(args: argparse.Namespace) -> Path:
    out = args.out or os.environ.get("CARSENSE_OUT_DIR") or "out"
    path = Path(out)
    path.mkdir(parents=True, exist_ok=True)
    return path


def _write_json(path: Path, doc: dict) -> None:
    path.write_text(json.dumps(doc, indent=2) + "\n", encoding="utf-8")


def _summary_row(doc: dict) -> dict:
    row = {"scheme": doc["scheme"], "seed": doc["seed"]}
    for key in SUMMARY_FIELDS[2:]:
        row[key] = doc["summary"][key]
    return row


def _write_summary_csv(path: Path, rows: list[dict], extra_fields: tuple[str, ...] = ()) -> None:
    fieldnames = list(extra_fields) + list(SUMMARY_FIELDS)
    with path.open("w", newline="", encoding="utf-8") as fh:
        writer = csv.DictWriter(fh, fieldnames=fieldnames)
        writer.writeheader()
        writer.writerows(rows)


def run_one(scenario: Scenario, scheme: str, seed: int, params: Params,
            collect_trace: bool = False) -> tuple[dict, Simulation]:
    sim = Simulation(scenario, scheme, seed=seed, params=params, collect_trace=collect_trace)
    return sim.run(), sim


def cmd_run(args: argparse.Namespace) -> int:
    try:
        scenario = load_scenario(args.scenario)
    except ScenarioError as err:
        print(f"error: {err}", file=sys.stderr)
        return 2
    params = params_from_args(args)
    out = _out_dir(args)
    doc, sim = run_one(scenario, args.scheme, args.seed, params, collect_trace=bool(args.trace))
    _write_json(out / "metrics.json", doc)
    _write_summary_csv(out / "summary.csv", [_summary_row(doc)])
    if args.trace:
        with (out / "trace.jsonl").open("w", encoding="utf-8") as fh:
            for kind in ("allocation", "mdp", "incentive", "observations"):
                for record in sim.trace[kind]:
                    fh.write(json.dumps({"kind": kind, **record}) + "\n")
    s = doc["summary"]
    print(
        f"{args.scheme} seed={args.seed}: f1={s['f1']:.3f} accuracy={s['accuracy']:.3f} "
        f"deadline_hit_rate={s['deadline_hit_rate']:.3f} "
        f"verified={s['tasks_verified']}/{s['tasks_total']}"
    )
    print(f"wrote {out / 'metrics.json'}")
    return 0


def _sweep_worker(job: tuple) -> tuple:
    scenario_path, scheme, seed, params_dict, point = job
    scenario = load_scenario(scenario_path)
    params = Params().with_overrides(**params_dict)
    doc, _ = run_one(scenario, scheme, seed, params)
    return (scheme, seed, point, doc)


def _apply_point(params: Params, kind: str | None, value: float | None,
                 scenario: Scenario) -> Params:
    if kind is None or value is None:
        return params
    if kind == "cars":
        total = int(value)
        base = scenario.driver_counts
        base_total = max(1, sum(base.values()))
        counts = {k: (base[k] * total) // base_total for k in base}
        counts["completer"] += total - sum(counts.values())
        return params.with_overrides(
            completers=counts["completer"], aborters=counts["aborter"],
            refusers=counts["refuser"],
        )
    if kind == "aborter_share":
        # refusers stay fixed so the willing pool (and with it the fleet's
        # spatial coverage) is constant; only driver quality varies
        total = sum(scenario.driver_counts.values())
        refusers = min(scenario.driver_counts.get("refuser", 0), total)
        aborters = min(int(round(total * value)), total - refusers)
        completers = total - refusers - aborters
        return params.with_overrides(
            aborters=aborters, completers=completers, refusers=refusers,
        )
    raise ValueError(f"unknown sweep kind {kind!r}")


def cmd_sweep(args: argparse.Namespace) -> int:
    try:
        scenario = load_scenario(args.scenario)
    except ScenarioError as err:
        print(f"error: {err}", file=sys.stderr)
        return 2
    params = params_from_args(args)
    out = _out_dir(args)
    schemes = [s.strip() for s in args.schemes.split(",") if s.strip()]
    for s in schemes:
        if s not in SCHEMES:
            print(f"error: unknown scheme {s!r}", file=sys.stderr)
            return 2
    seeds = _parse_seeds(args.seeds)

    points: list[tuple[str | None, float | None]] = [(None, None)]
    if args.cars:
        points = [("cars", float(v)) for v in args.cars.split(",")]
    elif args.aborter_share:
        points = [("aborter_share", float(v)) for v in args.aborter_share.split(",")]

    jobs = []
    for kind, value in points:
        point_params = _apply_point(params, kind, value, scenario)
        for scheme in schemes:
            for seed in seeds:
                jobs.append((args.scenario, scheme, seed, point_params.to_dict(),
                             value if kind else None))

    results = []
    failures = []
    if args.jobs > 1:
        with ProcessPoolExecutor(max_workers=args.jobs) as pool:
            for res in pool.map(_sweep_worker, jobs):
                results.append(res)
    else:
        for job in jobs:
            try:
                results.append(_sweep_worker(job))
            except Exception as err:  # isolate per-run failures
                failures.append((job[1], job[2], str(err)))

    results.sort(key=lambda r: (str(r[2]), r[0], r[1]))
    rows = []
    for scheme, seed, point, doc in results:
        row = _summary_row(doc)
        row["point"] = point if point is not None else ""
        rows.append(row)
    _write_summary_csv(out / "sweep.csv", rows, extra_fields=("point",))

    median_rows = []
    groups: dict[tuple, list[dict]] = {}
    for row in rows:
        groups.setdefault((row["point"], row["scheme"]), []).append(row)
    for (point, scheme), group in sorted(groups.items(), key=lambda kv: (str(kv[0][0]), kv[0][1])):
        med = {"point": point, "scheme": scheme, "seeds": len(group)}
        for key in MEDIAN_FIELDS:
            med[f"median_{key}"] = statistics.median(r[key] for r in group)
        median_rows.append(med)
    with (out / "medians.csv").open("w", newline="", encoding="utf-8") as fh:
        fieldnames = ["point", "scheme", "seeds"] + [f"median_{k}" for k in MEDIAN_FIELDS]
        writer = csv.DictWriter(fh, fieldnames=fieldnames)
        writer.writeheader()
        writer.writerows(median_rows)

    for med in median_rows:
        label = f" point={med['point']}" if med["point"] != "" else ""
        print(
            f"{med['scheme']:17s}{label} median_f1={med['median_f1']:.3f} "
            f"median_hit_rate={med['median_deadline_hit_rate']:.3f} ({med['seeds']} seeds)"
        )
    if failures:
        print(f"{len(failures)} run(s) failed:", file=sys.stderr)
        for scheme, seed, msg in failures:
            print(f"  {scheme} seed={seed}: {msg}", file=sys.stderr)
        return 1
    print(f"wrote {out / 'sweep.csv'} and {out / 'medians.csv'}")
    return 0


def _parse_seeds(text: str) -> list[int]:
    seeds = []
    for part in text.split(","):
        part = part.strip()
        if ".." in part:
            lo, hi = part.split("..")
            seeds.extend(range(int(lo), int(hi) + 1))
        elif part:
            seeds.append(int(part))
    if not seeds:
        raise ValueError("no seeds given")
    return seeds


def cmd_tune(args: argparse.Namespace) -> int:
    from carsense.tuning import tune

    try:
        scenario = load_scenario(args.scenario)
    except ScenarioError as err:
        print(f"error: {err}", file=sys.stderr)
        return 2
    base = params_from_args(args)
    tc = TuneConfig(seed=args.seed, max_evals_per_segment=args.max_evals_per_segment)
    result = tune(scenario, base, tc, scheme=args.scheme)
    out = _out_dir(args)
    _write_json(out / "tuned.json", {
        "schema_version": 1,
        "objective": "f1",
        "scheme": args.scheme,
        "seed": args.seed,
        "f1": result.f1,
        "evaluations": result.evaluations,
        "converged": result.converged,
        "tuned": result.tuned_values,
    })
    print(f"tuned F1={result.f1:.3f} ({result.evaluations} evaluations, "
          f"{'converged' if result.converged else 'budget exhausted'})")
    for name, value in result.tuned_values.items():
        print(f"  {name} = {value:.4f}")
    print(f"wrote {out / 'tuned.json'}")
    return 0


def cmd_tune_x0(args: argparse.Namespace) -> int:
    from carsense.tuning import tune_x0

    try:
        scenario = load_scenario(args.scenario)
    except ScenarioError as err:
        print(f"error: {err}", file=sys.stderr)
        return 2
    base = params_from_args(args)
    result = tune_x0(scenario, base, seed=args.seed, scheme=args.scheme,
                     grid_step=args.grid_step)
    out = _out_dir(args)
    _write_json(out / "x0.json", {
        "schema_version": 1,
        "x0": result.x0,
        "mean_error": result.mean_error,
        "errors_by_value": {str(k): v for k, v in sorted(result.errors_by_value.items())},
    })
    print(f"best initial accessibility index: {result.x0:.2f} "
          f"(mean |belief - damage| = {result.mean_error:.4f})")
    print(f"wrote {out / 'x0.json'}")
    return 0


def cmd_validate(args: argparse.Namespace) -> int:
    try:
        scenario = load_scenario(args.scenario)
    except ScenarioError as err:
        print(f"invalid: {err}", file=sys.stderr)
        return 2
    print(
        f"ok: {scenario.name}: {scenario.grid.width}x{scenario.grid.height} grid, "
        f"{scenario.cycles} cycles, {sum(scenario.driver_counts.values())} drivers, "
        f"{len(scenario.events)} events, {len(scenario.reports)} reports"
    )
    return 0


def cmd_make_scenario(args: argparse.Namespace) -> int:
    scenario = synthesize_scenario(
        seed=args.seed,
        width=args.width,
        height=args.height,
        cycles=args.cycles,
        completers=args.completers,
        aborters=args.aborters,
        refusers=args.refusers,
        events_per_cycle=args.events_per_cycle,
        appearance_prob=args.appearance_prob,
        repair_prob=args.repair_prob,
        initial_damage_frac=args.initial_damage_frac,
        name=Path(args.out_file).stem,
    )
    save_scenario(scenario, args.out_file)
    print(f"wrote {args.out_file}")
    return 0


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="carsense",
        description="Deterministic car-sensing dispatch simulator",
    )
    sub = parser.add_subparsers(dest="command", required=True)

    p_run = sub.add_parser("run", help="run one simulation and write metrics")
    p_run.add_argument("--scenario", required=True)
    p_run.add_argument("--scheme", default="DASC", choices=SCHEMES)
    p_run.add_argument("--seed", type=int, default=0)
    p_run.add_argument("--out", default=None, help="output directory (or CARSENSE_OUT_DIR)")
    p_run.add_argument("--trace", action="store_true", help="also write trace.jsonl")
    _param_flags(p_run)
    p_run.set_defaults(func=cmd_run)

    p_sweep = sub.add_parser("sweep", help="compare schemes across seeds")
    p_sweep.add_argument("--scenario", required=True)
    p_sweep.add_argument("--schemes", default="DASC,SocialCar,Random")
    p_sweep.add_argument("--seeds", default="0..9", help="e.g. 0..9 or 1,2,3")
    p_sweep.add_argument("--cars", default=None, help="sweep total car count, e.g. 30,60,90")
    p_sweep.add_argument("--aborter-share", dest="aborter_share", default=None,
                         help="sweep aborter proportion, e.g. 0,0.33,0.67")
    p_sweep.add_argument("--jobs", type=int, default=1)
    p_sweep.add_argument("--out", default=None)
    _param_flags(p_sweep)
    p_sweep.set_defaults(func=cmd_sweep)

    p_tune = sub.add_parser("tune", help="search weights/gains for best training F1")
    p_tune.add_argument("--scenario", required=True)
    p_tune.add_argument("--scheme", default="DASC", choices=SCHEMES)
    p_tune.add_argument("--seed", type=int, default=0)
    p_tune.add_argument("--max-evals-per-segment", type=int, default=40)
    p_tune.add_argument("--out", default=None)
    _param_flags(p_tune)
    p_tune.set_defaults(func=cmd_tune)

    p_x0 = sub.add_parser("tune-x0", help="calibrate the initial accessibility index")
    p_x0.add_argument("--scenario", required=True)
    p_x0.add_argument("--scheme", default="DASC", choices=SCHEMES)
    p_x0.add_argument("--seed", type=int, default=0)
    p_x0.add_argument("--grid-step", type=float, default=0.05)
    p_x0.add_argument("--out", default=None)
    _param_flags(p_x0)
    p_x0.set_defaults(func=cmd_tune_x0)

    p_val = sub.add_parser("validate-scenario", help="check a scenario file")
    p_val.add_argument("scenario")
    p_val.set_defaults(func=cmd_validate)

    p_make = sub.add_parser("make-scenario", help="write a synthetic scenario file")
    p_make.add_argument("out_file")
    p_make.add_argument("--seed", type=int, default=0)
    p_make.add_argument("--width", type=int, default=10)
    p_make.add_argument("--height", type=int, default=10)
    p_make.add_argument("--cycles", type=int, default=36)
    p_make.add_argument("--completers", type=int, default=30)
    p_make.add_argument("--aborters", type=int, default=30)
    p_make.add_argument("--refusers", type=int, default=30)
    p_make.add_argument("--events-per-cycle", type=int, default=6)
    p_make.add_argument("--appearance-prob", type=float, default=0.012)
    p_make.add_argument("--repair-prob", type=float, default=0.05)
    p_make.add_argument("--initial-damage-frac", type=float, default=0.10)
    p_make.set_defaults(func=cmd_make_scenario)

    return parser


def main(argv: list[str] | None = None) -> int:
    args = build_parser().parse_args(argv)
    return args.func(args)


if __name__ == "__main__":
    sys.exit(main())
