"""``reisim`` command line.

Outputs go to ``--out DIR`` (or ``$REISIM_OUT_DIR``); without either, tables
are printed to stdout. Exit status: 0 success, 2 bad input, 1 other failure.
"""

from __future__ import annotations

import argparse
import csv
import dataclasses
import io
import json
import os
import sys
from pathlib import Path
from typing import Sequence

import numpy as np

from . import __version__
from .config import ParseError, config_from_dict, dump_config, load_config
from .engine import ConfigError, UnknownParameter, simulate, sweep, trace_from_csv, trace_to_csv
from .gen2 import HANDLE_REPLY_BITS, Command, command_bits, command_duration, read_reply_bits, tag_reply_duration
from .geometry import Side
from .lane import ReadRateCurve, estimate_series, merge_sides, window_counts
from .lanesim import calibrate_curve, sided
from .recipes import BUILTINS, RecipeError, builtin, load_recipe, run_recipe
from .sensing import ActivationVariant, PowerMode, SensorStack, SensorTimingModel, calibrated_stack, sensor_sweep


class UsageError(ValueError):
    pass


def _out_dir(args) -> Path | None:
    out = args.out or os.environ.get("REISIM_OUT_DIR")
    return Path(out) if out else None


def _table(header: Sequence[str], rows: Sequence[Sequence], fmt: str) -> str:
    if fmt == "json":
        return json.dumps([dict(zip(header, r)) for r in rows], indent=2) + "\n"
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(header)
    for r in rows:
        w.writerow([repr(v) if isinstance(v, float) else v for v in r])
    return buf.getvalue()


def _emit(args, name: str, text: str) -> None:
    out = _out_dir(args)
    if out is None:
        sys.stdout.write(text)
        return
    out.mkdir(parents=True, exist_ok=True)
    (out / name).write_text(text)
    print(out / name)


def _config(args):
    if args.config and args.preset:
        raise UsageError("give --config or --preset, not both")
    if args.config:
        cfg = load_config(args.config)
    else:
        cfg = config_from_dict({"scenario": args.preset or "S1"})
    if args.seed is not None:
        cfg = config_from_dict({**json.loads(dump_config(cfg)), "seed": args.seed})
    return cfg


# --- subcommands ------------------------------------------------------------------------


def cmd_run(args) -> int:
    cfg = _config(args)
    res = simulate(cfg)
    out = _out_dir(args)
    summary = res.summary.to_json() if args.format == "json" else _table(
        ["key", "value"], [[k, json.dumps(v, sort_keys=True)] for k, v in sorted(res.summary.to_dict().items())], "csv")
    if out is None:
        sys.stdout.write(summary)
        return 0
    out.mkdir(parents=True, exist_ok=True)
    (out / "config.json").write_text(dump_config(cfg))
    (out / "trace.csv").write_text(trace_to_csv(res.trace))
    (out / "rounds.csv").write_text(_table(["round_index", "t_s"], list(enumerate(res.round_starts)), "csv"))
    (out / f"summary.{args.format}").write_text(summary)
    print(out)
    return 0


def _parse_value(text: str):
    try:
        return json.loads(text)
    except json.JSONDecodeError:
        return text


def cmd_sweep(args) -> int:
    cfg = _config(args)
    values = [_parse_value(v) for v in args.values.split(",")]
    sums = sweep(cfg, args.axis, values, jobs=args.jobs)
    rows = [[v, s.total_reads, s.reads_per_second, s.rounds] for v, s in zip(values, sums)]
    _emit(args, f"sweep.{args.format}", _table([args.axis, "total_reads", "reads_per_second", "rounds"],
                                               rows, args.format))
    return 0


def cmd_recipe(args) -> int:
    if bool(args.name) == bool(args.file):
        raise UsageError("give a built-in recipe name or --file, not both")
    recipe = load_recipe(args.file) if args.file else builtin(args.name, args.replications, args.seed or 0)
    if args.file and args.replications is not None:
        recipe = dataclasses.replace(recipe, replications=args.replications)
    root = _out_dir(args) or Path("reisim-out")
    report = run_recipe(recipe, root, jobs=args.jobs)
    print(report.out_dir)
    return report.status


def timing_rows(p) -> list[list]:
    rows = [[c.value, len(command_bits(c, p)), command_duration(c, p) * 1e6] for c in Command]
    rows += [
        ["reply:RN16", p.rn16_bits, tag_reply_duration(p.rn16_bits, p) * 1e6],
        ["reply:EPC", p.epc_reply_bits, tag_reply_duration(p.epc_reply_bits, p) * 1e6],
        ["reply:handle", HANDLE_REPLY_BITS, tag_reply_duration(HANDLE_REPLY_BITS, p) * 1e6],
        ["reply:read_1_word", read_reply_bits(1), tag_reply_duration(read_reply_bits(1), p) * 1e6],
        ["T1", "", p.t1 * 1e6], ["T2", "", p.t2 * 1e6], ["T3", "", p.t3 * 1e6],
        ["Tari", "", p.tari_s * 1e6], ["RTcal", "", p.rtcal_s * 1e6], ["TRcal", "", p.trcal_s * 1e6],
    ]
    return rows


def cmd_timing_table(args) -> int:
    p = _config(args).gen2
    _emit(args, f"timing.{args.format}", _table(["item", "bits", "duration_us"], timing_rows(p), args.format))
    return 0


def cmd_sensor_sweep(args) -> int:
    if args.step <= 0 or args.dmin <= 0 or args.dmax < args.dmin:
        raise UsageError("need 0 < dmin <= dmax and step > 0")
    distances = np.round(np.arange(args.dmin, args.dmax + args.step / 2, args.step), 9)
    stack = dataclasses.replace(calibrated_stack(args.critical_distance, args.margin_db),
                                variant=ActivationVariant(args.variant))
    model = SensorTimingModel(power_mode=PowerMode(args.power_mode))
    rows = sensor_sweep(distances, stack, model, trials=args.trials, seed=args.seed or 0)
    _emit(args, f"sensor.{args.format}", _table(["distance_m", "median_s", "p10_s", "p90_s", "attempts_mean"],
                                                [dataclasses.astuple(r) for r in rows], args.format))
    return 0


def _reader_windows(run_dir: Path, tau: float, side: Side):
    trace = trace_from_csv((run_dir / "trace.csv").read_text())
    rounds = [float(r["t_s"]) for r in csv.DictReader(io.StringIO((run_dir / "rounds.csv").read_text()))]
    t_end = float(json.loads((run_dir / "summary.json").read_text())["duration_s"]) \
        if (run_dir / "summary.json").exists() else None
    return window_counts(trace, tau, side, rounds, 0.0, t_end)


def cmd_estimate_lane(args) -> int:
    left, right = Path(args.left), Path(args.right)
    if args.curve:
        curve = ReadRateCurve.from_csv(args.curve)
    else:
        curve = calibrate_curve(sided(load_config(right / "config.json"), Side.right))
    wl = _reader_windows(left, args.tau, Side.left)
    wr = _reader_windows(right, args.tau, Side.right)
    k = min(len(wl), len(wr))
    windows = merge_sides(wl[:k], wr[:k])
    est = estimate_series(windows, curve)
    rows = [[w.t_start + w.tau_s, e.pos] for w, e in zip(windows, est)]
    _emit(args, f"lane.{args.format}", _table(["t_s", "pos_m"], rows, args.format))
    return 0


# --- parser -----------------------------------------------------------------------------


def build_parser() -> argparse.ArgumentParser:
    common = argparse.ArgumentParser(add_help=False)
    common.add_argument("--config", metavar="PATH", help="JSON config file")
    common.add_argument("--preset", help="start from a named preset instead of a config file")
    common.add_argument("--seed", type=int, help="override the config seed")
    common.add_argument("--out", metavar="DIR", help="output directory (default $REISIM_OUT_DIR or stdout)")
    common.add_argument("--jobs", type=int, default=1, help="parallel runs")
    common.add_argument("--format", choices=("csv", "json"), help="table format (default csv; json for run)")

    ap = argparse.ArgumentParser(prog="reisim", description="Vehicle-mounted UHF RFID simulator")
    ap.add_argument("--version", action="version", version=f"reisim {__version__}")
    sub = ap.add_subparsers(dest="command", required=True)

    p = sub.add_parser("run", parents=[common], help="simulate one configuration")
    p.set_defaults(func=cmd_run)

    p = sub.add_parser("sweep", parents=[common], help="one run per value of a config field")
    p.add_argument("--axis", required=True, help="dotted field, e.g. scenario.speed or mount.mount_angle_theta")
    p.add_argument("--values", required=True, help="comma-separated values")
    p.set_defaults(func=cmd_sweep)

    p = sub.add_parser("recipe", parents=[common], help=f"run a recipe ({', '.join(BUILTINS)})")
    p.add_argument("name", nargs="?", choices=BUILTINS)
    p.add_argument("--file", help="recipe JSON file")
    p.add_argument("--replications", type=int)
    p.set_defaults(func=cmd_recipe)

    p = sub.add_parser("timing-table", parents=[common], help="every command and reply duration")
    p.set_defaults(func=cmd_timing_table)

    p = sub.add_parser("sensor-sweep", parents=[common], help="sensor read time versus distance")
    p.add_argument("--dmin", type=float, required=True)
    p.add_argument("--dmax", type=float, required=True)
    p.add_argument("--step", type=float, required=True)
    p.add_argument("--trials", type=int, default=200)
    p.add_argument("--variant", choices=[v.value for v in ActivationVariant],
                   default=SensorStack().variant.value)
    p.add_argument("--power-mode", choices=[m.value for m in PowerMode], default=PowerMode.passive.value)
    p.add_argument("--critical-distance", type=float, default=0.65,
                   help="distance where mean forward power sits --margin-db from tag sensitivity")
    p.add_argument("--margin-db", type=float, default=-1.0)
    p.set_defaults(func=cmd_sensor_sweep)

    p = sub.add_parser("estimate-lane", parents=[common], help="lateral position from two reader runs")
    p.add_argument("--left", required=True, help="run directory of the left reader")
    p.add_argument("--right", required=True, help="run directory of the right reader")
    p.add_argument("--curve", help="ReadRateCurve CSV (default: calibrate from the right run's config)")
    p.add_argument("--tau", type=float, default=0.1, help="window length in seconds")
    p.set_defaults(func=cmd_estimate_lane)
    return ap


def main(argv: Sequence[str] | None = None) -> int:
    args = build_parser().parse_args(argv)
    if args.format is None:
        args.format = "json" if args.func is cmd_run else "csv"
    try:
        return args.func(args)
    except (ParseError, ConfigError, UnknownParameter, RecipeError, UsageError) as e:
        print(f"error: {e}", file=sys.stderr)
        return 2
    except (OSError, ValueError) as e:
        print(f"error: {e}", file=sys.stderr)
        return 1


if __name__ == "__main__":
    sys.exit(main())
