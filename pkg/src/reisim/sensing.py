"""Read-out time of RFID sensor tags.

T_total = query processing + activation + propagation. Query processing is
the Gen 2 inventory and access exchange; activation is the time the tag IC
(plus sensor, plus MCU) needs before it can answer the Read; propagation
covers moving the data through auxiliary memory. A power dip anywhere in
the exchange restarts it from scratch, and the lost time is charged.
"""

from __future__ import annotations

import enum
from dataclasses import dataclass, field, replace

import numpy as np

from .gen2 import (
    HANDLE_REPLY_BITS,
    Command,
    Flag,
    Gen2Params,
    access_cycle,
    command_duration,
    read_reply_bits,
    singulation_oracle_duration,
    tag_reply_duration,
)
from .geometry import AntennaMount, Facing
from .rflink import MultipathModel, RadioConfig, ShadowingStream, StaticLink, forward_power


class UnknownVariant(KeyError):
    pass


class GiveUp(RuntimeError):
    pass


class ActivationVariant(str, enum.Enum):
    tag_ic = "tag_ic"
    tag_ic_plus_sensor = "tag_ic_plus_sensor"
    tag_ic_sensor_mcu = "tag_ic_sensor_mcu"


class PowerMode(str, enum.Enum):
    passive = "passive"
    assisted = "assisted"


def _default_activation() -> dict[ActivationVariant, float]:
    # placeholder magnitudes; only their ordering is meaningful
    return {
        ActivationVariant.tag_ic: 1e-3,
        ActivationVariant.tag_ic_plus_sensor: 5e-3,
        ActivationVariant.tag_ic_sensor_mcu: 20e-3,
    }


@dataclass(frozen=True)
class SensorTimingModel:
    query_processing_s: float = 0.0
    activation_s: dict = field(default_factory=_default_activation)
    propagation_s: float = 1e-3
    power_mode: PowerMode = PowerMode.passive
    # assisted tags run the sensor from a battery
    assisted_activation_scale: float = 0.1
    assisted_sensitivity_gain_dB: float = 12.0

    def __post_init__(self):
        act = {ActivationVariant(k): float(v) for k, v in self.activation_s.items()}
        object.__setattr__(self, "activation_s", act)
        if self.query_processing_s < 0 or self.propagation_s < 0 or any(v < 0 for v in act.values()):
            raise ValueError("timing components must be >= 0")
        order = [act.get(v) for v in ActivationVariant if v in act]
        if any(b < a for a, b in zip(order, order[1:])):
            raise ValueError("activation times must not decrease from tag_ic to tag_ic_sensor_mcu")
        if not 0.0 <= self.assisted_activation_scale <= 1.0:
            raise ValueError("assisted_activation_scale must lie in [0, 1]")

    def activation(self, variant: ActivationVariant | str) -> float:
        try:
            v = ActivationVariant(variant)
            base = self.activation_s[v]
        except (ValueError, KeyError):
            raise UnknownVariant(f"no activation time for variant {variant!r}") from None
        if self.power_mode is PowerMode.assisted:
            return base * self.assisted_activation_scale
        return base


def t_total(model: SensorTimingModel, activation_variant: ActivationVariant | str) -> float:
    return model.query_processing_s + model.activation(activation_variant) + model.propagation_s


def access_oracle_duration(p: Gen2Params, word_count: int, handle: int = 0, rn16: int = 0) -> float:
    """Noiseless Q=0 singulation plus ReqRN, handle, Read and data reply."""
    return (singulation_oracle_duration(p, 0, Flag.A, rn16)
            + command_duration(Command.ReqRN, p, rn16=rn16) + p.t1
            + tag_reply_duration(HANDLE_REPLY_BITS, p) + p.t2
            + command_duration(Command.Read, p, rn16=handle, word_count=word_count) + p.t1
            + tag_reply_duration(read_reply_bits(word_count), p) + p.t2)


@dataclass(frozen=True)
class SensorStack:
    """Reader, antenna and channel for a bench sensor read."""

    gen2: Gen2Params = field(default_factory=Gen2Params)
    radio: RadioConfig = field(default_factory=RadioConfig)
    multipath: MultipathModel = field(default_factory=lambda: MultipathModel(excess_noise_sigma_dB=0.5))
    mount: AntennaMount = field(default_factory=lambda: AntennaMount(mount_angle_theta=0.0,
                                                                     facing=Facing.side_horizontal))
    word_count: int = 4
    variant: ActivationVariant = ActivationVariant.tag_ic_sensor_mcu
    max_attempts: int = 50
    max_time_s: float = 60.0


@dataclass(frozen=True)
class SensorReadResult:
    t_total_s: float
    attempts: int
    succeeded: bool


def calibrated_stack(
    critical_distance_m: float = 0.65,
    margin_dB: float = -1.0,
    base: SensorStack | None = None,
) -> SensorStack:
    """Set tx power so the mean forward power at ``critical_distance_m`` sits
    ``margin_dB`` from the tag's sensitivity."""
    base = base or SensorStack()
    r = base.radio
    fwd = forward_power(critical_distance_m, base.mount.boresight_gain_dBi, r, base.multipath,
                        base.mount.height, base.mount.height)
    tx = r.tx_power_dBm + (r.tag_chip_sensitivity_dBm + margin_dB - fwd)
    return replace(base, radio=replace(r, tx_power_dBm=tx))


def _effective_radio(stack: SensorStack, model: SensorTimingModel) -> RadioConfig:
    if model.power_mode is PowerMode.assisted:
        return replace(stack.radio, tag_chip_sensitivity_dBm=stack.radio.tag_chip_sensitivity_dBm
                       - model.assisted_sensitivity_gain_dB)
    return stack.radio


def simulate_sensor_read(
    distance_m: float,
    stack: SensorStack,
    model: SensorTimingModel,
    rng: np.random.Generator,
    strict: bool = False,
) -> SensorReadResult:
    """Time to read ``stack.word_count`` sensor words from a tag at ``distance_m``.

    The protocol exchange is simulated; activation and propagation from
    ``model`` are spent inside the exchange, between the Read command and the
    data reply, so the tag must stay powered through them.
    """
    if distance_m <= 0:
        raise ValueError("distance_m must be > 0")
    mp = stack.multipath
    shadow_rng = np.random.default_rng(rng.integers(0, 2**63))
    proto_rng = np.random.default_rng(rng.integers(0, 2**63))
    link = StaticLink(distance_m, _effective_radio(stack, model), mp, stack.mount,
                      ShadowingStream(shadow_rng, mp.excess_noise_sigma_dB, mp.coherence_s))
    delays = [("activation", model.activation(stack.variant)), ("propagation", model.propagation_s)]
    res = access_cycle(stack.gen2, link, proto_rng, stack.word_count, 0.0, delays,
                       max_attempts=stack.max_attempts, max_time_s=stack.max_time_s)
    if not res.success and strict:
        raise GiveUp(f"no successful read after {res.attempts} attempts")
    return SensorReadResult(res.duration, res.attempts, res.success)


@dataclass(frozen=True)
class SweepRow:
    distance_m: float
    median_s: float
    p10_s: float
    p90_s: float
    attempts_mean: float


def sensor_sweep(
    distances,
    stack: SensorStack,
    model: SensorTimingModel,
    trials: int = 200,
    seed: int = 0,
) -> list[SweepRow]:
    """Quantiles of total read time per distance; trial k uses the same seed at every distance."""
    rows = []
    for d in distances:
        t = np.empty(trials)
        a = np.empty(trials)
        for k in range(trials):
            r = simulate_sensor_read(float(d), stack, model, np.random.default_rng([seed, k]))
            t[k] = r.t_total_s
            a[k] = r.attempts
        rows.append(SweepRow(float(d), float(np.median(t)), float(np.quantile(t, 0.1)),
                             float(np.quantile(t, 0.9)), float(a.mean())))
    return rows


def model_for(stack: SensorStack, **kwargs) -> SensorTimingModel:
    """Timing model whose query term is the noiseless access-exchange time of ``stack``."""
    return SensorTimingModel(query_processing_s=access_oracle_duration(stack.gen2, stack.word_count), **kwargs)
