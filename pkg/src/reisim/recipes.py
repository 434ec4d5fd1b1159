"""Experiment recipes: parameter grids run with replications, written as CSV.

Each recipe writes into ``<out>/<name>/``: its config, CSV tables, optional
per-run traces and a manifest holding the config hash, seed and a SHA-256 of
every file. Files are assembled in a scratch directory and moved into place
only when the recipe finishes, so a failure leaves no partial output.
"""

from __future__ import annotations

import csv
import dataclasses
import hashlib
import io
import itertools
import json
import math
import shutil
import tempfile
from dataclasses import dataclass
from pathlib import Path
from typing import Any, Sequence

import numpy as np

from .config import ParseError, config_from_dict, config_hash, dump_config
from .engine import SimConfig, derive_seed, run_many, set_param, simulate, trace_to_csv
from .gen2 import Gen2Params, Inventory, Result
from .geometry import MPH
from .lanesim import calibrate_curve, lane_correlation_run
from .presets import PRESETS, lane_preset, preset, sign_preset
from .rflink import ConstantLink, EncodingScheme
from .sensing import SensorStack, SensorTimingModel, calibrated_stack, sensor_sweep


class RecipeError(ValueError):
    pass


@dataclass(frozen=True)
class ExperimentRecipe:
    """``sweeps`` is a list of (axis, values); the grid is their Cartesian product.

    Axis ``preset`` swaps in a named preset (keeping the base seed); other
    axes are dotted SimConfig paths. ``kind`` selects how a cell is measured.
    """

    name: str
    base_config: SimConfig
    sweeps: tuple[tuple[str, tuple], ...] = ()
    replications: int = 1
    outputs: tuple[str, ...] = ()
    kind: str = "grid"
    write_traces: bool = False

    def __post_init__(self):
        if self.replications < 1:
            raise RecipeError("replications must be >= 1")
        axes = [a for a, _ in self.sweeps]
        if len(set(axes)) != len(axes):
            raise RecipeError("sweep axis names must be unique")
        if self.kind not in _KINDS:
            raise RecipeError(f"unknown recipe kind {self.kind!r}")


def _fmt(v) -> str:
    if isinstance(v, float):
        return repr(v)
    if hasattr(v, "value"):
        return str(v.value)
    return str(v)


def _csv(header: Sequence[str], rows: Sequence[Sequence]) -> str:
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(header)
    for r in rows:
        w.writerow([_fmt(v) for v in r])
    return buf.getvalue()


def replication_seed(base_seed: int, r: int) -> int:
    # common random numbers: every grid cell sees the same replication seeds
    return derive_seed(base_seed, "replication", r)


def cell_config(recipe: ExperimentRecipe, cell: dict[str, Any]) -> SimConfig:
    cfg = recipe.base_config
    if "preset" in cell:
        cfg = dataclasses.replace(preset(cell["preset"]), seed=cfg.seed)
    for axis, value in cell.items():
        if axis != "preset":
            cfg = set_param(cfg, axis, value)
    return cfg


def grid(recipe: ExperimentRecipe) -> list[dict[str, Any]]:
    axes = [a for a, _ in recipe.sweeps]
    return [dict(zip(axes, combo)) for combo in itertools.product(*(v for _, v in recipe.sweeps))]


def validate(recipe: ExperimentRecipe) -> None:
    """Fail before any run: unknown presets or axes, and invalid values."""
    for axis, values in recipe.sweeps:
        if axis == "preset":
            bad = [v for v in values if v not in PRESETS]
            if bad:
                raise RecipeError(f"unknown preset(s) {bad}; choose from {', '.join(PRESETS)}")
    if recipe.kind == "grid":
        for cell in grid(recipe):
            cell_config(recipe, cell)
    elif recipe.kind == "encoding":
        for axis, _ in recipe.sweeps:
            if axis not in ("snr_dB", "gen2.encoding"):
                raise RecipeError(f"encoding recipes sweep snr_dB and gen2.encoding, not {axis!r}")
    elif recipe.kind == "lane":
        _only(recipe, "speed_mph")
    elif recipe.kind == "sensor":
        _only(recipe, "distance_m")


def _only(recipe: ExperimentRecipe, axis: str) -> None:
    if [a for a, _ in recipe.sweeps] != [axis]:
        raise RecipeError(f"{recipe.kind} recipes sweep exactly one axis, {axis!r}")


# --- measurements -----------------------------------------------------------------------


def _run_grid(recipe: ExperimentRecipe, jobs: int) -> dict[str, str]:
    cells = grid(recipe)
    cfgs = [dataclasses.replace(cell_config(recipe, c), seed=replication_seed(recipe.base_config.seed, r))
            for c in cells for r in range(recipe.replications)]
    files: dict[str, str] = {}
    if recipe.write_traces:
        sums = []
        for k, cfg in enumerate(cfgs):
            res = simulate(cfg)
            sums.append(res.summary)
            files[f"traces/run{k:04d}.csv"] = trace_to_csv(res.trace)
    else:
        sums = run_many(cfgs, jobs)
    axes = [a for a, _ in recipe.sweeps]
    runs, rows = [], []
    for i, cell in enumerate(cells):
        block = sums[i * recipe.replications:(i + 1) * recipe.replications]
        reads = np.array([s.total_reads for s in block], float)
        for r, s in enumerate(block):
            runs.append([*cell.values(), r, cfgs[i * recipe.replications + r].seed, s.total_reads,
                         s.rounds, sum(s.dwell_per_tag.values())])
        rows.append([*cell.values(), recipe.replications, float(reads.mean()),
                     float(reads.std(ddof=1)) if reads.size > 1 else 0.0,
                     float(sum(block[0].dwell_per_tag.values()))])
    files["summary.csv"] = _csv([*axes, "replications", "reads_mean", "reads_std", "dwell_s"], rows)
    files["runs.csv"] = _csv([*axes, "replication", "seed", "total_reads", "rounds", "dwell_s"], runs)
    return files


def encoding_point(p: Gen2Params, snr_dB: float, seed: int, dwell_s: float) -> tuple[int, int]:
    """(successful reads, singulation attempts) for one tag at a fixed SNR over ``dwell_s``."""
    from .engine import _tag_streams

    inv = Inventory(p, [ConstantLink(snr_dB)], [_tag_streams(seed, "tag")], ["tag"])
    inv.run(0.0, dwell_s)
    h = inv.histogram
    attempts = h[Result.success.value] + h[Result.ack_timeout.value] + h[Result.link_margin_failure.value]
    return h[Result.success.value], attempts


def _run_encoding(recipe: ExperimentRecipe, jobs: int) -> dict[str, str]:
    base = recipe.base_config
    dwell = base.duration_s if base.duration_s is not None else 0.2
    rows = []
    for cell in grid(recipe):
        p = base.gen2
        if "gen2.encoding" in cell:
            p = dataclasses.replace(p, encoding=EncodingScheme(cell["gen2.encoding"]))
        res = np.array([encoding_point(p, float(cell["snr_dB"]), replication_seed(base.seed, r), dwell)
                        for r in range(recipe.replications)], float)
        rate = np.divide(res[:, 0], res[:, 1], out=np.zeros(len(res)), where=res[:, 1] > 0)
        rows.append([float(cell["snr_dB"]), p.encoding, recipe.replications,
                     float(res[:, 0].mean()), float(rate.mean())])
    return {"encoding.csv": _csv(["snr_dB", "encoding", "replications", "reads_mean",
                                  "attempt_success_mean"], rows)}


def _run_lane(recipe: ExperimentRecipe, jobs: int) -> dict[str, str]:
    base = recipe.base_config
    curve = calibrate_curve(base)
    corr, series = [], []
    for (speed,) in (tuple(c.values()) for c in grid(recipe)):
        for r in range(recipe.replications):
            run = lane_correlation_run(base, curve, float(speed), replication_seed(base.seed, r))
            corr.append([float(speed), r, run.correlation])
            if r == 0:
                series += [[float(speed), float(t), float(e), float(g)]
                           for t, e, g in zip(run.t, run.estimate, run.truth)]
    return {
        "curve.csv": _csv(["offset_m", "probability"], list(zip(curve.offsets, curve.probabilities))),
        "correlation.csv": _csv(["speed_mph", "replication", "correlation"], corr),
        "series.csv": _csv(["speed_mph", "t_s", "estimate_m", "truth_m"], series),
    }


def _run_sensor(recipe: ExperimentRecipe, jobs: int) -> dict[str, str]:
    base = recipe.base_config
    stack = calibrated_stack(base=SensorStack(gen2=base.gen2, multipath=base.multipath))
    distances = [float(d) for _, vals in recipe.sweeps for d in vals]
    rows = sensor_sweep(distances, stack, SensorTimingModel(), trials=recipe.replications, seed=base.seed)
    return {"sensor.csv": _csv(["distance_m", "median_s", "p10_s", "p90_s", "attempts_mean"],
                               [dataclasses.astuple(r) for r in rows])}


_KINDS = {"grid": _run_grid, "encoding": _run_encoding, "lane": _run_lane, "sensor": _run_sensor}


# --- built-ins ------------------------------------------------------------------------


def _snr_grid() -> tuple[float, ...]:
    return tuple(float(v) for v in range(-6, 21))


def builtin(name: str, replications: int | None = None, seed: int = 0) -> ExperimentRecipe:
    """The recipes behind each figure's data; ``replications`` overrides the default count."""
    if name == "fig9-encoding":
        r = ExperimentRecipe(name, SimConfig(duration_s=0.2, seed=seed),
                             (("snr_dB", _snr_grid()), ("gen2.encoding", tuple(e.value for e in EncodingScheme))),
                             30, ("encoding.csv",), "encoding")
    elif name == "fig10-correlation":
        r = ExperimentRecipe(name, lane_preset(seed=seed), (("speed_mph", (10.0, 40.0)),), 30,
                             ("curve.csv", "correlation.csv", "series.csv"), "lane")
    elif name == "fig11-scenarios":
        # S5 keeps S2's 5 m standoff on a 25 m radius bend toward the sign; with the
        # 45 deg mount the longer dwell brings its reads level with S1
        base = sign_preset("S1", seed=seed)
        r = ExperimentRecipe(name, base, (
            ("preset", ("S1", "S2", "S3", "S4", "S5", "S6")),
            ("scenario.speed", (15.0 * MPH, 30.0 * MPH)),
            ("mount.mount_angle_theta", (0.0, math.radians(45.0))),
        ), 30, ("summary.csv", "runs.csv"), "grid", write_traces=True)
    elif name == "fig13-sensor-time":
        r = ExperimentRecipe(name, SimConfig(multipath=SensorStack().multipath, seed=seed),
                             (("distance_m", tuple(round(0.30 + 0.05 * k, 2) for k in range(10))),),
                             200, ("sensor.csv",), "sensor")
    else:
        raise RecipeError(f"unknown recipe {name!r}; choose from {', '.join(BUILTINS)}")
    if replications is not None:
        r = dataclasses.replace(r, replications=replications)
    return r


BUILTINS = ("fig9-encoding", "fig10-correlation", "fig11-scenarios", "fig13-sensor-time")


_RECIPE_KEYS = {"name", "base_config", "sweeps", "replications", "outputs", "kind", "write_traces"}


def load_recipe(path) -> ExperimentRecipe:
    """Recipe from JSON: ``base_config`` uses the config-file format, ``sweeps`` is [[axis, [values]], ...]."""
    try:
        data = json.loads(Path(path).read_text())
    except json.JSONDecodeError as e:
        raise ParseError(f"line {e.lineno} column {e.colno}", e.msg) from None
    if not isinstance(data, dict):
        raise ParseError("<root>", "top level must be a JSON object")
    unknown = sorted(set(data) - _RECIPE_KEYS)
    if unknown:
        raise RecipeError(f"{unknown[0]}: unknown key")
    if "name" not in data:
        raise RecipeError("name: required")
    sweeps = tuple((str(a), tuple(v)) for a, v in data.get("sweeps", ()))
    return ExperimentRecipe(
        name=str(data["name"]),
        base_config=config_from_dict(data.get("base_config", {})),
        sweeps=sweeps,
        replications=int(data.get("replications", 1)),
        outputs=tuple(data.get("outputs", ())),
        kind=data.get("kind", "grid"),
        write_traces=bool(data.get("write_traces", False)),
    )


# --- running --------------------------------------------------------------------------


@dataclass(frozen=True)
class RecipeReport:
    status: int
    out_dir: Path
    files: tuple[str, ...]


def manifest(recipe: ExperimentRecipe, files: dict[str, str]) -> str:
    body = {
        "recipe": recipe.name,
        "kind": recipe.kind,
        "seed": recipe.base_config.seed,
        "config_hash": config_hash(recipe.base_config),
        "replications": recipe.replications,
        "sweeps": [[axis, [_fmt(v) for v in values]] for axis, values in recipe.sweeps],
        "files": {k: hashlib.sha256(v.encode()).hexdigest() for k, v in sorted(files.items())},
    }
    return json.dumps(body, sort_keys=True, indent=2) + "\n"


def run_recipe(recipe: ExperimentRecipe, out_root, jobs: int = 1) -> RecipeReport:
    validate(recipe)
    out_root = Path(out_root)
    out_root.mkdir(parents=True, exist_ok=True)
    files = {"config.json": dump_config(recipe.base_config)}
    files.update(_KINDS[recipe.kind](recipe, jobs))
    missing = [o for o in recipe.outputs if o not in files]
    if missing:
        raise RecipeError(f"recipe did not produce {missing}")
    files["manifest.json"] = manifest(recipe, files)
    final = out_root / recipe.name
    scratch = Path(tempfile.mkdtemp(prefix=f".{recipe.name}-", dir=out_root))
    try:
        for rel, text in files.items():
            path = scratch / rel
            path.parent.mkdir(parents=True, exist_ok=True)
            path.write_text(text)
        if final.exists():
            shutil.rmtree(final)
        scratch.rename(final)
    except BaseException:
        shutil.rmtree(scratch, ignore_errors=True)
        raise
    return RecipeReport(0, final, tuple(sorted(files)))
