"""Named scenario constructors.

Sign scenarios put one tag beside the road at ``(0, -l, height)`` with the
reader antenna on the vehicle's right side. Lane scenarios put marker tags
along both lane edges and look down at them.

Standoffs for S1-S4 (3, 5, 7, 9 m), the S5 curvature, the S6 heights and the
radio numbers below are placeholders chosen for a dwell-limited desk setup;
every one is overridable.
"""

from __future__ import annotations

import dataclasses
import math

from .engine import SimConfig
from .gen2 import Gen2Params
from .geometry import (
    MPH,
    AntennaMount,
    Facing,
    LateralProfile,
    RoadScenario,
    ScenarioId,
    Side,
    TagPlacement,
    TagRole,
)
from .rflink import EncodingScheme, MultipathMode, MultipathModel, RadioConfig

SIGN_STANDOFF_M = {"S1": 3.0, "S2": 5.0, "S3": 7.0, "S4": 9.0, "S5": 5.0, "S6": 3.0}
SIGN_HEIGHT_M = 2.0
SIGN_ANTENNA_HEIGHT_M = 1.2
SIGN_BEAMWIDTH = math.radians(80.0)
SIGN_GAIN_DBI = 9.0
SIGN_TAG_SENSITIVITY_DBM = -20.0
S5_CURVATURE = 1.0 / 25.0
S6_REFLECTION = -0.7

LANE_WIDTH_M = 3.6
LANE_MARKER_SPACING_M = 0.5
LANE_ANTENNA_HEIGHT_M = 0.5
LANE_ANTENNA_OFFSET_M = 0.9
LANE_BEAMWIDTH = math.radians(120.0)
LANE_TAPER = 2.0
LANE_GAIN_DBI = 6.0
LANE_TX_DBM = 9.0
# a slow, robust link: one EPC reply outlasts a marker's transit at 40 mph
LANE_GEN2 = Gen2Params(tari_s=25e-6, dr=8.0, blf_Hz=40e3, encoding=EncodingScheme.Miller8)

PRESETS = ("S1", "S2", "S3", "S4", "S5", "S6", "lane_straight")


def sign_preset(
    name: str,
    speed_mph: float = 15.0,
    theta_deg: float = 45.0,
    seed: int = 0,
    tag_height_offset: float = 0.0,
    **overrides,
) -> SimConfig:
    """Sign-inventory configuration for scenario S1..S6.

    ``tag_height_offset`` shifts the sign tag relative to the reference
    height (S6 compares -0.3 m, 0 and +0.3 m).
    """
    if name not in SIGN_STANDOFF_M:
        raise KeyError(f"unknown sign scenario {name!r}")
    l = overrides.pop("standoff", SIGN_STANDOFF_M[name])
    curvature = overrides.pop("curvature", S5_CURVATURE if name == "S5" else 0.0)
    tag = TagPlacement((0.0, -l, SIGN_HEIGHT_M + tag_height_offset), role=TagRole.traffic_sign,
                       tag_id=f"{name}-sign")
    scenario = RoadScenario(
        id=ScenarioId(name),
        lateral_standoff_l=l,
        curvature=curvature,
        tag_placements=(tag,),
        speed_profile=((0.0, speed_mph * MPH),),
        start_s=-40.0,
        length_m=80.0,
    )
    mount = AntennaMount(
        mount_angle_theta=math.radians(theta_deg),
        beamwidth_alpha=SIGN_BEAMWIDTH,
        height=SIGN_ANTENNA_HEIGHT_M,
        boresight_gain_dBi=SIGN_GAIN_DBI,
        facing=Facing.side_horizontal,
        side=Side.right,
    )
    radio = RadioConfig(tag_chip_sensitivity_dBm=SIGN_TAG_SENSITIVITY_DBM)
    if name == "S6":
        mp = MultipathModel(mode=MultipathMode.two_ray, ground_reflection_coefficient=S6_REFLECTION,
                            excess_noise_sigma_dB=2.0)
    else:
        mp = MultipathModel(excess_noise_sigma_dB=2.0)
    cfg = SimConfig(scenario=scenario, mount=mount, radio=radio, multipath=mp,
                    gen2=Gen2Params(encoding=EncodingScheme.Miller2), seed=seed)
    return _apply(cfg, overrides)


def lane_preset(
    side: Side | str = Side.right,
    speed_mph: float = 10.0,
    seed: int = 0,
    amplitude: float = 0.6,
    wavelength: float = 60.0,
    offset: float = 0.0,
    length_m: float = 120.0,
    tau_s: float | None = 0.1,
    marker_spacing: float = LANE_MARKER_SPACING_M,
    antenna_offset: float = LANE_ANTENNA_OFFSET_M,
    height: float = LANE_ANTENNA_HEIGHT_M,
    beamwidth: float = LANE_BEAMWIDTH,
    taper: float = LANE_TAPER,
    gen2: Gen2Params = LANE_GEN2,
    sigma_dB: float = 2.0,
    **overrides,
) -> SimConfig:
    """One downward-looking reader over the lane edge on ``side``.

    The vehicle weaves sinusoidally inside the lane (positive offsets to
    the left); marker tags sit on the lane edge every ``marker_spacing``.
    """
    side = Side(side)
    W = LANE_WIDTH_M
    sign = 1.0 if side is Side.left else -1.0
    n_tags = int(length_m / marker_spacing) + 1
    tags = tuple(
        TagPlacement((k * marker_spacing, sign * W / 2, 0.0), role=TagRole.lane_marker,
                     tag_id=f"{side.value}-{k:04d}")
        for k in range(n_tags)
    )
    scenario = RoadScenario(
        id=ScenarioId.lane_straight,
        lane_width_W=W,
        lateral_standoff_l=W / 2,
        tag_placements=tags,
        speed_profile=((0.0, speed_mph * MPH),),
        start_s=0.0,
        length_m=length_m,
        lateral_profile=LateralProfile(offset=offset, amplitude=amplitude, wavelength=wavelength),
    )
    mount = AntennaMount(
        mount_angle_theta=0.0,
        beamwidth_alpha=beamwidth,
        height=height,
        lateral_offset=sign * antenna_offset,
        boresight_gain_dBi=LANE_GAIN_DBI,
        facing=Facing.downward,
        side=side,
        taper_exponent=taper,
    )
    cfg = SimConfig(scenario=scenario, mount=mount, radio=RadioConfig(tx_power_dBm=LANE_TX_DBM),
                    multipath=MultipathModel(excess_noise_sigma_dB=sigma_dB),
                    gen2=gen2, seed=seed, tau_s=tau_s)
    return _apply(cfg, overrides)


def _apply(cfg: SimConfig, overrides: dict) -> SimConfig:
    from .engine import set_param

    for path, value in overrides.items():
        cfg = set_param(cfg, path.replace("__", "."), value)
    return cfg


def preset(name: str, **kwargs) -> SimConfig:
    if name == "lane_straight":
        return lane_preset(**kwargs)
    if name in SIGN_STANDOFF_M:
        return sign_preset(name, **kwargs)
    raise KeyError(f"unknown preset {name!r}; choose from {', '.join(PRESETS)}")


def with_seed(cfg: SimConfig, seed: int) -> SimConfig:
    return dataclasses.replace(cfg, seed=seed)
