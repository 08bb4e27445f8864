"""Command-line experiment runner.

    meaclab run <scenario.scn> [--seed N] [--out DIR]
    meaclab sweep <scenario.scn> --param link.bandwidth_bps --values 11e6,49e6
    meaclab plot <run-dir>
    meaclab validate <scenario.scn>

Exit code 0 on a completed run regardless of the attack verdict; nonzero
on configuration or I/O errors.  MEACLAB_OUT overrides the output root.
"""

from __future__ import annotations

import argparse
import json
import sys
from dataclasses import replace
from pathlib import Path

from .runner import OUTPUT_DIR_ENV, run_scenario, sweep, write_sweep_table
from .scenario import ScenarioError, parse_scenario, serialize_scenario


def _load(path: str):
    try:
        return parse_scenario(path)
    except FileNotFoundError:
        print(f"error: scenario file not found: {path}", file=sys.stderr)
        raise SystemExit(2)
    except ScenarioError as exc:
        print(f"error: {exc}", file=sys.stderr)
        raise SystemExit(2)


def cmd_run(args) -> int:
    scenario = _load(args.scenario)
    if args.seed is not None:
        scenario = replace(scenario, seed=args.seed)
        scenario.echo = serialize_scenario(scenario)
    report = run_scenario(scenario, args.out)
    print(json.dumps(report.to_dict(), indent=2, sort_keys=True))
    return 0


def cmd_sweep(args) -> int:
    scenario = _load(args.scenario)
    if args.seed is not None:
        scenario = replace(scenario, seed=args.seed)
        scenario.echo = serialize_scenario(scenario)
    values = []
    for tok in args.values.split(","):
        tok = tok.strip()
        try:
            values.append(int(tok))
        except ValueError:
            values.append(float(tok))
    try:
        results = sweep(scenario, args.param, values, out_dir=args.out)
    except KeyError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 2
    out_base = Path(args.out) if args.out else Path("runs") / scenario.name
    table_path = out_base / "sweep.csv"
    table_path.parent.mkdir(parents=True, exist_ok=True)
    write_sweep_table(results, table_path)
    for value, rep in results:
        print(
            f"{args.param}={value}: captured={rep.captured} "
            f"stall={rep.stall_seconds:.2f}s fixes={rep.n_fixes}"
        )
    print(f"sweep table: {table_path}")
    return 0


def cmd_plot(args) -> int:
    from .plots import render_plots

    try:
        written = render_plots(args.run_dir)
    except FileNotFoundError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 2
    for p in written:
        print(p)
    return 0


def cmd_validate(args) -> int:
    scenario = _load(args.scenario)
    print(f"ok: {args.scenario} ({scenario.name}, horizon {scenario.horizon_s} s, "
          f"{len(scenario.scene.satellites)} satellites)")
    return 0


def main(argv=None) -> int:
    ap = argparse.ArgumentParser(prog="meaclab", description=__doc__.split("\n")[0])
    sub = ap.add_subparsers(dest="command", required=True)

    p_run = sub.add_parser("run", help="execute a scenario")
    p_run.add_argument("scenario")
    p_run.add_argument("--seed", type=int, default=None)
    p_run.add_argument("--out", default=None, help=f"run directory (default runs/<name>, or ${OUTPUT_DIR_ENV})")
    p_run.set_defaults(func=cmd_run)

    p_sweep = sub.add_parser("sweep", help="run a scenario once per parameter value")
    p_sweep.add_argument("scenario")
    p_sweep.add_argument("--param", required=True, help="dotted path, e.g. link.bandwidth_bps")
    p_sweep.add_argument("--values", required=True, help="comma-separated values")
    p_sweep.add_argument("--seed", type=int, default=None)
    p_sweep.add_argument("--out", default=None)
    p_sweep.set_defaults(func=cmd_sweep)

    p_plot = sub.add_parser("plot", help="render figures from a run directory")
    p_plot.add_argument("run_dir")
    p_plot.set_defaults(func=cmd_plot)

    p_val = sub.add_parser("validate", help="parse and validate a scenario file")
    p_val.add_argument("scenario")
    p_val.set_defaults(func=cmd_validate)

    args = ap.parse_args(argv)
    return args.func(args)


if __name__ == "__main__":
    sys.exit(main())
