"""Discrete-event driver: a moving reader inventorying roadside tags.

The protocol clock is the time authority. Whenever the reader samples a
link, the vehicle pose is evaluated at that instant from the speed profile.
Every random draw comes from a stream named by (seed, component, tag id), so
toggling one component leaves the others' draws untouched.
"""

from __future__ import annotations

import bisect
import csv
import dataclasses
import enum
import io
import json
import math
import zlib
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass, field
from typing import Any, Sequence

import numpy as np

from .gen2 import Gen2Params, Inventory, InventoryOutcome, ReadEvent, TagStreams
from .geometry import (
    AntennaMount,
    RoadScenario,
    TagPlacement,
    antenna_tag_geometry,
    dwell_windows,
    vehicle_pose,
)
from .lane import tau_max
from .rflink import MultipathModel, RadioConfig, ShadowingStream, link_from_geometry


class ConfigError(ValueError):
    """Invalid simulation configuration; ``path`` names the offending field."""

    def __init__(self, path: str, message: str):
        super().__init__(f"{path}: {message}")
        self.path = path


class UnknownParameter(KeyError):
    pass


class TraceDetail(str, enum.Enum):
    events_only = "events_only"
    full_protocol = "full_protocol"


@dataclass(frozen=True)
class SimConfig:
    scenario: RoadScenario = field(default_factory=RoadScenario)
    mount: AntennaMount = field(default_factory=AntennaMount)
    radio: RadioConfig = field(default_factory=RadioConfig)
    multipath: MultipathModel = field(default_factory=MultipathModel)
    gen2: Gen2Params = field(default_factory=Gen2Params)
    # None: the time needed to drive the scenario length
    duration_s: float | None = None
    seed: int = 0
    trace_detail: TraceDetail = TraceDetail.events_only
    # lane-estimation window; must stay below tau_max at the top speed
    tau_s: float | None = None

    def __post_init__(self):
        if self.duration_s is not None and not self.duration_s > 0:
            raise ConfigError("duration_s", "must be > 0")
        if not 0 <= self.seed < 2**64:
            raise ConfigError("seed", "must be a 64-bit unsigned integer")
        if self.tau_s is not None:
            if self.tau_s <= 0:
                raise ConfigError("tau_s", "must be > 0")
            sc = self.scenario
            v = max(seg[1] for seg in sc.speed_profile)
            if v > 0:
                bound = tau_max(sc.lane_width_W, v, sc.max_turn_angle_alpha_max)
                if self.tau_s >= bound:
                    raise ConfigError(
                        "tau_s",
                        f"{self.tau_s!r} s is not below the lane-departure bound "
                        f"W/(2 v cos alpha_max) = {bound!r} s",
                    )

    @property
    def horizon(self) -> float:
        return self.duration_s if self.duration_s is not None else self.scenario.horizon()


@dataclass
class RunSummary:
    total_reads_per_tag: dict[str, int]
    reads_per_second: float
    dwell_per_tag: dict[str, float]
    outcome_histogram: dict[str, int]
    duration_s: float
    rounds: int

    @property
    def total_reads(self) -> int:
        return sum(self.total_reads_per_tag.values())

    def to_dict(self) -> dict[str, Any]:
        d = dataclasses.asdict(self)
        d["total_reads"] = self.total_reads
        return d

    def to_json(self) -> str:
        return json.dumps(self.to_dict(), sort_keys=True, indent=2) + "\n"

    def to_text(self) -> str:
        lines = [f"total_reads = {self.total_reads}",
                 f"reads_per_second = {self.reads_per_second!r}",
                 f"duration_s = {self.duration_s!r}",
                 f"rounds = {self.rounds}"]
        lines += [f"reads.{k} = {v}" for k, v in sorted(self.total_reads_per_tag.items())]
        lines += [f"dwell_s.{k} = {v!r}" for k, v in sorted(self.dwell_per_tag.items())]
        lines += [f"outcome.{k} = {v}" for k, v in sorted(self.outcome_histogram.items())]
        return "\n".join(lines) + "\n"


@dataclass
class RunResult:
    trace: list[ReadEvent]
    summary: RunSummary
    round_starts: list[float]
    outcomes: list[InventoryOutcome] | None = None


def named_rng(seed: int, component: str, key: str = "") -> np.random.Generator:
    ss = np.random.SeedSequence([seed, zlib.crc32(component.encode()), zlib.crc32(key.encode())])
    return np.random.default_rng(ss)


class ScenarioLink:
    """Time-varying link between the vehicle's antenna and one tag."""

    def __init__(self, cfg: SimConfig, tag: TagPlacement, windows: Sequence[tuple[float, float]]):
        self.cfg = cfg
        self.tag = tag
        self.windows = list(windows)
        self._starts = [w[0] for w in self.windows]
        mp = cfg.multipath
        self.shadow = ShadowingStream(named_rng(cfg.seed, "shadowing", tag.tag_id),
                                      mp.excess_noise_sigma_dB, mp.coherence_s)

    def in_window(self, t: float) -> bool:
        i = bisect.bisect_right(self._starts, t) - 1
        return i >= 0 and t <= self.windows[i][1]

    def __call__(self, t: float):
        cfg = self.cfg
        in_beam = self.in_window(t)
        if in_beam:
            rng_, ang, _ = antenna_tag_geometry(vehicle_pose(cfg.scenario, t), cfg.mount, self.tag)
        else:
            rng_, ang = math.inf, math.pi
        return link_from_geometry(t, rng_, ang, in_beam, cfg.mount, self.tag, cfg.radio,
                                  cfg.multipath, self.shadow.value(t) if in_beam else 0.0)

    def checkpoints(self, t0: float, t1: float) -> list[float]:
        return self.shadow.boundaries(t0, t1)

    def next_change(self, t: float) -> float:
        return self.shadow.next_boundary(t)


def _tag_streams(seed: int, tag_id: str) -> TagStreams:
    return TagStreams(named_rng(seed, "slots", tag_id), named_rng(seed, "bit_errors", tag_id),
                      named_rng(seed, "rn16", tag_id))


def simulate(cfg: SimConfig) -> RunResult:
    """Run one configuration and keep the interrogation log alongside the trace."""
    horizon = cfg.horizon
    tags = list(cfg.scenario.tag_placements)
    ids = [t.tag_id for t in tags]
    if len(set(ids)) != len(ids):
        raise ConfigError("scenario.tag_placements", "tag_id values must be unique")
    windows = [dwell_windows(cfg.scenario, cfg.mount, t, horizon) for t in tags]
    links = [ScenarioLink(cfg, t, w) for t, w in zip(tags, windows)]
    flat = sorted((a, b, i) for i, ws in enumerate(windows) for a, b in ws)
    starts = [a for a, _, _ in flat]

    longest = max((b - a for a, b, _ in flat), default=0.0)

    def active(t: float) -> list[int]:
        k = bisect.bisect_right(starts, t)
        lo = bisect.bisect_left(starts, t - longest)
        return [flat[j][2] for j in range(lo, k) if flat[j][1] >= t]

    def idle_until(t: float) -> float:
        if active(t):
            return t
        k = bisect.bisect_right(starts, t)
        return starts[k] if k < len(starts) else math.inf

    inv = Inventory(cfg.gen2, links, [_tag_streams(cfg.seed, i) for i in ids], ids,
                    [t.epc_hex for t in tags], active_fn=active, idle_until=idle_until)
    events = inv.run(0.0, horizon)
    trace = [dataclasses.replace(e, vehicle_pose_at_read=vehicle_pose(cfg.scenario, e.t)) for e in events]
    reads = {i: 0 for i in ids}
    for e in trace:
        reads[e.tag_id] += 1
    dwell = {i: float(sum(min(b, horizon) - max(a, 0.0) for a, b in ws)) for i, ws in zip(ids, windows)}
    summary = RunSummary(reads, len(trace) / horizon, dwell, dict(inv.histogram), horizon, inv.round_index)
    outcomes = inv.outcomes if cfg.trace_detail is TraceDetail.full_protocol else None
    return RunResult(trace, summary, inv.round_starts, outcomes)


def run(cfg: SimConfig) -> tuple[list[ReadEvent], RunSummary]:
    res = simulate(cfg)
    return res.trace, res.summary


# --- parameter sweeps ---------------------------------------------------------------


def _coerce(current, value):
    if isinstance(current, enum.Enum):
        return type(current)(value)
    if isinstance(current, bool) or current is None:
        return value
    if isinstance(current, (int, float)) and not isinstance(value, (int, float)):
        raise UnknownParameter(f"value {value!r} is not numeric")
    if isinstance(current, (tuple, list)) and not isinstance(value, (tuple, list)):
        raise UnknownParameter(f"value {value!r} is not a sequence")
    if isinstance(current, float):
        return float(value)
    return value


def set_param(obj, path: str, value):
    """Return a copy of ``obj`` with the dotted field ``path`` replaced.

    ``scenario.speed`` is shorthand for a constant speed profile (m/s).
    """
    head, _, rest = path.partition(".")
    if dataclasses.is_dataclass(obj) and isinstance(obj, RoadScenario) and path == "speed":
        return dataclasses.replace(obj, speed_profile=((0.0, float(value)),))
    names = {f.name for f in dataclasses.fields(obj)} if dataclasses.is_dataclass(obj) else set()
    if head not in names:
        raise UnknownParameter(path)
    cur = getattr(obj, head)
    try:
        new = set_param(cur, rest, value) if rest else _coerce(cur, value)
    except UnknownParameter as e:
        sep = "." if rest else ": "
        raise UnknownParameter(f"{head}{sep}{e.args[0]}") from None
    return dataclasses.replace(obj, **{head: new})


def derive_seed(seed: int, axis: str, index: int) -> int:
    ss = np.random.SeedSequence([seed, zlib.crc32(axis.encode()), index])
    return int(ss.generate_state(1, np.uint64)[0])


def sweep_configs(cfg_template: SimConfig, axis: str, values: Sequence) -> list[SimConfig]:
    return [dataclasses.replace(set_param(cfg_template, axis, v), seed=derive_seed(cfg_template.seed, axis, k))
            for k, v in enumerate(values)]


def _summary_only(cfg: SimConfig) -> RunSummary:
    return simulate(cfg).summary


def run_many(cfgs: Sequence[SimConfig], jobs: int = 1) -> list[RunSummary]:
    """Run configurations, in parallel when ``jobs > 1``; order is preserved."""
    if jobs <= 1 or len(cfgs) <= 1:
        return [_summary_only(c) for c in cfgs]
    with ProcessPoolExecutor(max_workers=jobs) as ex:
        return list(ex.map(_summary_only, cfgs))


def sweep(cfg_template: SimConfig, axis: str, values: Sequence, jobs: int = 1) -> list[RunSummary]:
    """One independent run per value, each with its own derived seed."""
    return run_many(sweep_configs(cfg_template, axis, values), jobs)


# --- trace I/O ------------------------------------------------------------------------


TRACE_COLUMNS = ("t_s", "tag_id", "epc_hex", "round_index", "x_m", "y_m", "snr_db")


def trace_to_csv(trace: Sequence[ReadEvent]) -> str:
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(TRACE_COLUMNS)
    for e in trace:
        pose = e.vehicle_pose_at_read
        x, y = (pose.x, pose.y) if pose is not None else (math.nan, math.nan)
        w.writerow([repr(e.t), e.tag_id, e.epc, e.round_index, repr(x), repr(y), repr(e.snr_at_read_dB)])
    return buf.getvalue()


def trace_from_csv(text: str) -> list[ReadEvent]:
    from .geometry import Pose2D

    rows = list(csv.DictReader(io.StringIO(text)))
    if rows and tuple(rows[0]) != TRACE_COLUMNS:
        raise ValueError(f"trace columns must be {','.join(TRACE_COLUMNS)}")
    out = []
    for r in rows:
        x, y = float(r["x_m"]), float(r["y_m"])
        pose = None if math.isnan(x) else Pose2D(x, y, 0.0)
        out.append(ReadEvent(float(r["t_s"]), r["tag_id"], r["epc_hex"], int(r["round_index"]),
                             float(r["snr_db"]), pose))
    return out


def closed_form_reads(dwell_s: float, round_s: float) -> int:
    """Reads of a lone, always-powered tag over a dwell: one per full round."""
    return int(math.floor(dwell_s / round_s))

