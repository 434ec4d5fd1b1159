"""Simulator-backed lane estimation: curve calibration and correlation runs.

Both functions take a single-reader lane configuration (as built by
``lane_preset``); the opposite reader is its mirror image.
"""

from __future__ import annotations

import dataclasses
from dataclasses import dataclass

import numpy as np
from scipy.optimize import isotonic_regression

from .engine import SimConfig, set_param, simulate
from .geometry import MPH, LateralProfile, Side, vehicle_pose
from .lane import (
    CalibrationSource,
    CountWindow,
    ReadRateCurve,
    cross_correlation,
    estimate_series,
    merge_sides,
    window_counts,
)

CALIBRATION_OFFSETS = tuple(float(v) for v in np.round(np.arange(-1.2, 1.2 + 1e-9, 0.1), 6))


def mirror(cfg: SimConfig) -> SimConfig:
    """Same lane run seen by a reader on the other side of the vehicle."""
    m = cfg.mount
    side = Side.left if m.side is Side.right else Side.right
    tags = tuple(dataclasses.replace(t, position=(t.position[0], -t.position[1], t.position[2]),
                                     tag_id=f"{side.value}-{k:04d}")
                 for k, t in enumerate(cfg.scenario.tag_placements))
    return dataclasses.replace(
        cfg,
        scenario=dataclasses.replace(cfg.scenario, tag_placements=tags),
        mount=dataclasses.replace(m, side=side, lateral_offset=-m.lateral_offset),
    )


def sided(cfg: SimConfig, side: Side | str) -> SimConfig:
    return cfg if cfg.mount.side is Side(side) else mirror(cfg)


def reader_windows(cfg: SimConfig, tau_s: float | None = None) -> list[CountWindow]:
    res = simulate(cfg)
    tau = tau_s if tau_s is not None else cfg.tau_s
    if tau is None:
        raise ValueError("lane runs need tau_s")
    return window_counts(res.trace, tau, cfg.mount.side, res.round_starts, 0.0, cfg.horizon)


def calibrate_curve(
    cfg: SimConfig,
    offsets=CALIBRATION_OFFSETS,
    speed_mph: float = 10.0,
    length_m: float = 30.0,
    seed: int = 99,
) -> ReadRateCurve:
    """Right-reader detection frequency with the vehicle held at fixed lateral offsets.

    The raw frequencies are made non-increasing in offset by isotonic
    regression, since moving away from the right edge can only lose reads.
    """
    base = set_param(sided(cfg, Side.right), "scenario.speed", speed_mph * MPH)
    base = dataclasses.replace(base, seed=seed, scenario=dataclasses.replace(base.scenario, length_m=length_m))
    freq, weight = [], []
    for x in offsets:
        c = dataclasses.replace(base, scenario=dataclasses.replace(
            base.scenario, lateral_profile=LateralProfile(offset=float(x), amplitude=0.0)))
        w = reader_windows(c)
        n = sum(cw.n for cw in w)
        freq.append(sum(cw.z_right for cw in w) / n if n else 0.0)
        weight.append(max(n, 1))
    p = isotonic_regression(freq, weights=weight, increasing=False).x
    return ReadRateCurve(tuple(float(v) for v in offsets), tuple(float(v) for v in np.clip(p, 0.0, 1.0)),
                         CalibrationSource.synthetic_from_sim)


@dataclass(frozen=True)
class LaneRun:
    t: np.ndarray
    estimate: np.ndarray
    truth: np.ndarray
    correlation: float


def lane_correlation_run(cfg: SimConfig, curve: ReadRateCurve, speed_mph: float, seed: int) -> LaneRun:
    """Left and right readers over the weaving run; estimate vs true offset at each window end."""
    cfg = dataclasses.replace(set_param(cfg, "scenario.speed", speed_mph * MPH), seed=seed)
    left, right = sided(cfg, Side.left), sided(cfg, Side.right)
    windows = merge_sides(reader_windows(left), reader_windows(right))
    est = np.array([e.pos for e in estimate_series(windows, curve)])
    t = np.array([w.t_start + w.tau_s for w in windows])
    truth = np.array([vehicle_pose(cfg.scenario, float(ti)).y for ti in t])
    return LaneRun(t, est, truth, cross_correlation(est, truth))
