"""Deterministic simulator of vehicle-mounted UHF RFID (EPC Gen 2) readers."""

__version__ = "0.1.0"

from .config import dump_config, load_config
from .engine import RunSummary, SimConfig, run, simulate, sweep
from .gen2 import Gen2Params, ReadEvent
from .geometry import AntennaMount, RoadScenario, TagPlacement, coverage_length_boresight, coverage_length_tilted
from .lane import ReadRateCurve, cross_correlation, estimate_position, tau_max
from .presets import lane_preset, preset, sign_preset
from .rflink import EncodingScheme, MultipathModel, RadioConfig
from .sensing import SensorTimingModel, simulate_sensor_read, t_total

__all__ = [
    "AntennaMount",
    "EncodingScheme",
    "Gen2Params",
    "MultipathModel",
    "RadioConfig",
    "ReadEvent",
    "ReadRateCurve",
    "RoadScenario",
    "RunSummary",
    "SensorTimingModel",
    "SimConfig",
    "TagPlacement",
    "coverage_length_boresight",
    "coverage_length_tilted",
    "cross_correlation",
    "dump_config",
    "estimate_position",
    "lane_preset",
    "load_config",
    "preset",
    "run",
    "sign_preset",
    "simulate",
    "simulate_sensor_read",
    "sweep",
    "t_total",
    "tau_max",
]
