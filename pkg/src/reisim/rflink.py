"""Forward and backscatter link budget.

Free-space Friis loss, an optional two-ray ground reflection term, and
log-normal shadowing drawn once per (tag, coherence interval).
"""

from __future__ import annotations

import enum
import math
from dataclasses import dataclass

import numpy as np
from scipy.special import erfc

from .geometry import (
    AntennaMount,
    RoadScenario,
    TagPlacement,
    TagRole,
    antenna_tag_geometry,
    vehicle_pose,
)

SPEED_OF_LIGHT = 299_792_458.0
NEG_INF = -math.inf


class MultipathMode(str, enum.Enum):
    free_space = "free_space"
    two_ray = "two_ray"


class EncodingScheme(str, enum.Enum):
    """Tag-to-reader encoding; ``M`` is subcarrier cycles per symbol."""

    FM0 = "FM0"
    Miller2 = "Miller2"
    Miller4 = "Miller4"
    Miller8 = "Miller8"

    @property
    def M(self) -> int:
        return {"FM0": 1, "Miller2": 2, "Miller4": 4, "Miller8": 8}[self.value]


@dataclass(frozen=True)
class RadioConfig:
    tx_power_dBm: float = 30.0
    reader_sensitivity_dBm: float = -90.0
    tag_chip_sensitivity_dBm: float = -18.0
    frequency_Hz: float = 902e6
    tag_gain_dBi: float = 2.0
    backscatter_loss_dB: float = 5.0

    def __post_init__(self):
        if not 860e6 <= self.frequency_Hz <= 960e6:
            raise ValueError("frequency_Hz must lie in the UHF RFID band [860, 960] MHz")

    @property
    def wavelength(self) -> float:
        return SPEED_OF_LIGHT / self.frequency_Hz


@dataclass(frozen=True)
class MultipathModel:
    mode: MultipathMode = MultipathMode.free_space
    ground_reflection_coefficient: float = -0.7
    noise_floor_dBm: float = -100.0
    excess_noise_sigma_dB: float = 0.0
    coherence_s: float = 0.05

    def __post_init__(self):
        if not -1.0 <= self.ground_reflection_coefficient <= 0.0:
            raise ValueError("ground_reflection_coefficient must lie in [-1, 0]")
        if self.excess_noise_sigma_dB < 0:
            raise ValueError("excess_noise_sigma_dB must be >= 0")
        if self.coherence_s <= 0:
            raise ValueError("coherence_s must be > 0")


@dataclass(frozen=True)
class LinkSample:
    t: float
    forward_power_at_tag_dBm: float
    backscatter_power_at_reader_dBm: float
    in_beam: bool
    tag_powered: bool
    reader_detects: bool
    snr_dB: float


def free_space_path_loss_dB(distance: float, frequency_Hz: float) -> float:
    lam = SPEED_OF_LIGHT / frequency_Hz
    return 20.0 * math.log10(4.0 * math.pi * distance / lam)


def two_ray_factor_dB(
    distance: float, antenna_height: float, tag_height: float, gamma: float, frequency_Hz: float
) -> float:
    """Gain of direct + ground-reflected ray relative to the direct ray alone."""
    horiz2 = max(distance * distance - (antenna_height - tag_height) ** 2, 0.0)
    d_ref = math.sqrt(horiz2 + (antenna_height + tag_height) ** 2)
    k = 2.0 * math.pi * frequency_Hz / SPEED_OF_LIGHT
    phase = k * (d_ref - distance)
    a = gamma * distance / d_ref
    mag2 = (1.0 + a * math.cos(phase)) ** 2 + (a * math.sin(phase)) ** 2
    if mag2 <= 0.0:
        return NEG_INF
    return 10.0 * math.log10(mag2)


def one_way_loss_dB(distance, cfg: RadioConfig, mp: MultipathModel, antenna_height=None, tag_height=None):
    loss = free_space_path_loss_dB(distance, cfg.frequency_Hz)
    if mp.mode is MultipathMode.two_ray:
        if antenna_height is None or tag_height is None:
            raise ValueError("two_ray mode needs antenna_height and tag_height")
        loss -= two_ray_factor_dB(
            distance, antenna_height, tag_height, mp.ground_reflection_coefficient, cfg.frequency_Hz
        )
    return loss


def forward_power(
    distance: float,
    geometry_gain_dB: float,
    cfg: RadioConfig,
    mp: MultipathModel,
    antenna_height: float | None = None,
    tag_height: float | None = None,
) -> float:
    """Power reaching the tag chip (dBm). ``geometry_gain_dB`` is the reader antenna gain toward the tag."""
    if distance <= 0:
        raise ValueError("range must be > 0")
    return (
        cfg.tx_power_dBm
        + geometry_gain_dB
        + cfg.tag_gain_dBi
        - one_way_loss_dB(distance, cfg, mp, antenna_height, tag_height)
    )


def backscatter_power(
    distance: float,
    geometry_gain_dB: float,
    cfg: RadioConfig,
    mp: MultipathModel,
    antenna_height: float | None = None,
    tag_height: float | None = None,
) -> float:
    """Backscattered power at the reader (dBm): the one-way loss is paid twice."""
    if distance <= 0:
        raise ValueError("range must be > 0")
    loss = one_way_loss_dB(distance, cfg, mp, antenna_height, tag_height)
    return (
        cfg.tx_power_dBm
        + 2.0 * (geometry_gain_dB + cfg.tag_gain_dBi)
        - 2.0 * loss
        - cfg.backscatter_loss_dB
    )


def q_function(x):
    return 0.5 * erfc(np.asarray(x, dtype=float) / math.sqrt(2.0))


def snr_to_bit_error_rate(snr_dB, encoding: EncodingScheme, processing_gain: bool = True):
    """Coherent binary BER on the effective SNR.

    Miller-M integrates M subcarrier cycles per bit, worth 10*log10(M) dB
    over FM0 at the same SNR.
    """
    snr = np.asarray(snr_dB, dtype=float)
    gain = 10.0 * math.log10(encoding.M) if processing_gain else 0.0
    lin = np.power(10.0, (snr + gain) / 10.0)
    ber = q_function(np.sqrt(2.0 * lin))
    return float(ber) if ber.ndim == 0 else ber


class ShadowingStream:
    """Log-normal shadowing, one N(0, sigma) dB draw per coherence interval.

    Draws are generated sequentially so the value for interval k does not
    depend on the order of queries.
    """

    def __init__(self, rng: np.random.Generator, sigma_dB: float, coherence_s: float):
        self._rng = rng
        self.sigma_dB = sigma_dB
        self.coherence_s = coherence_s
        self._draws = np.empty(0)

    def value(self, t: float) -> float:
        if self.sigma_dB == 0.0:
            return 0.0
        k = int(math.floor(t / self.coherence_s))
        if k < 0:
            k = 0
        if k >= self._draws.size:
            extra = self._rng.normal(0.0, self.sigma_dB, size=max(k + 1 - self._draws.size, 256))
            self._draws = np.concatenate([self._draws, extra])
        return float(self._draws[k])

    def boundaries(self, t0: float, t1: float) -> list[float]:
        """Interval boundaries strictly inside (t0, t1)."""
        if self.sigma_dB == 0.0:
            return []
        c = self.coherence_s
        k = math.floor(t0 / c) + 1
        out = []
        while k * c < t1:
            out.append(k * c)
            k += 1
        return out

    def next_boundary(self, t: float) -> float:
        if self.sigma_dB == 0.0:
            return math.inf
        return (math.floor(t / self.coherence_s) + 1) * self.coherence_s


def _unlinked(t: float, snr: float = NEG_INF) -> LinkSample:
    return LinkSample(t, NEG_INF, NEG_INF, False, False, False, snr)


def link_from_geometry(
    t: float,
    distance: float,
    off_boresight: float,
    in_beam: bool,
    mount: AntennaMount,
    tag: TagPlacement,
    cfg: RadioConfig,
    mp: MultipathModel,
    shadow_dB: float = 0.0,
) -> LinkSample:
    if not in_beam or distance <= 0.0:
        return _unlinked(t)
    g = mount.gain_dBi(off_boresight)
    fwd = forward_power(distance, g, cfg, mp, mount.height, tag.position[2]) + shadow_dB
    bs = 2.0 * fwd - cfg.tx_power_dBm - cfg.backscatter_loss_dB
    powered = fwd >= cfg.tag_chip_sensitivity_dBm
    detects = powered and bs >= cfg.reader_sensitivity_dBm
    return LinkSample(t, fwd, bs, True, powered, detects, bs - mp.noise_floor_dBm)


def sample_link(
    t: float,
    scenario: RoadScenario,
    mount: AntennaMount,
    tag: TagPlacement,
    cfg: RadioConfig,
    mp: MultipathModel,
    rng_stream: ShadowingStream | None = None,
) -> LinkSample:
    """Instantaneous link state between the moving reader and one tag."""
    pose = vehicle_pose(scenario, t)
    distance, ang, in_beam = antenna_tag_geometry(pose, mount, tag)
    shadow = rng_stream.value(t) if rng_stream is not None else 0.0
    return link_from_geometry(t, distance, ang, in_beam, mount, tag, cfg, mp, shadow)


class StaticLink:
    """Link to a stationary tag at a fixed range on boresight (bench setups)."""

    def __init__(
        self,
        distance: float,
        cfg: RadioConfig,
        mp: MultipathModel,
        mount: AntennaMount,
        shadowing: ShadowingStream | None = None,
        tag_height: float | None = None,
    ):
        self.distance = distance
        self.cfg = cfg
        self.mp = mp
        self.mount = mount
        self.shadowing = shadowing
        self.tag = TagPlacement((0.0, 0.0, mount.height if tag_height is None else tag_height),
                                role=TagRole.sensor_tag, tag_id="bench")
        self._fwd0 = forward_power(distance, mount.boresight_gain_dBi, cfg, mp, mount.height, self.tag.position[2])

    def __call__(self, t: float) -> LinkSample:
        shadow = self.shadowing.value(t) if self.shadowing is not None else 0.0
        fwd = self._fwd0 + shadow
        bs = 2.0 * fwd - self.cfg.tx_power_dBm - self.cfg.backscatter_loss_dB
        powered = fwd >= self.cfg.tag_chip_sensitivity_dBm
        detects = powered and bs >= self.cfg.reader_sensitivity_dBm
        return LinkSample(t, fwd, bs, True, powered, detects, bs - self.mp.noise_floor_dBm)

    def checkpoints(self, t0: float, t1: float) -> list[float]:
        return self.shadowing.boundaries(t0, t1) if self.shadowing is not None else []

    def next_change(self, t: float) -> float:
        return self.shadowing.next_boundary(t) if self.shadowing is not None else math.inf


class ConstantLink:
    """Always-in-beam link with a fixed SNR; powered unless told otherwise."""

    def __init__(self, snr_dB: float, powered: bool = True):
        self.snr_dB = snr_dB
        self.powered = powered

    def __call__(self, t: float) -> LinkSample:
        return LinkSample(t, 0.0 if self.powered else NEG_INF, 0.0, True, self.powered, self.powered, self.snr_dB)

    def checkpoints(self, t0, t1):
        return []

    def next_change(self, t):
        return math.inf
