"""JSON configuration files for SimConfig.

A file is a JSON object with the SimConfig sections (``scenario``,
``mount``, ``radio``, ``multipath``, ``gen2``) and top-level fields. Sections
may be partial: given keys are merged over the defaults. ``scenario`` may
also be a preset name (``"S1"`` .. ``"S6"``, ``"lane_straight"``), with
``preset_options`` passed to the preset constructor.

Units: meters, seconds, dB/dBm, Hz; angles in radians.
"""

from __future__ import annotations

import dataclasses
import hashlib
import json
import typing
from pathlib import Path
from typing import Any

import pydantic
from pydantic import TypeAdapter

from .engine import ConfigError, SimConfig
from .presets import PRESETS, preset

SCHEMA_PATH = Path(__file__).with_name("simconfig.schema.json")

_ADAPTER = TypeAdapter(SimConfig)


class ParseError(ValueError):
    """The file is not a JSON object; ``key`` names where parsing stopped."""

    def __init__(self, key: str, message: str):
        super().__init__(f"{key}: {message}")
        self.key = key


class ValidationError(ConfigError):
    """A field failed validation; ``path`` is its dotted location."""

    @property
    def key(self) -> str:
        return self.path


def _dataclass_of(tp) -> list[type]:
    """Dataclass types reachable from a field annotation (through Optional and tuples)."""
    if dataclasses.is_dataclass(tp):
        return [tp]
    out = []
    for arg in typing.get_args(tp):
        if arg is not Ellipsis:
            out += _dataclass_of(arg)
    return out


def _check_keys(data, cls: type, path: str) -> None:
    if isinstance(data, list):
        for i, item in enumerate(data):
            _check_keys(item, cls, f"{path}.{i}")
        return
    if not isinstance(data, dict):
        return
    hints = typing.get_type_hints(cls)
    names = {f.name for f in dataclasses.fields(cls)}
    for key, value in data.items():
        here = f"{path}.{key}" if path else key
        if key not in names:
            raise ValidationError(here, "unknown key")
        for sub in _dataclass_of(hints[key]):
            _check_keys(value, sub, here)


def _merge(base: dict, over: dict) -> dict:
    out = dict(base)
    for k, v in over.items():
        out[k] = _merge(out[k], v) if isinstance(v, dict) and isinstance(out.get(k), dict) else v
    return out


def _loc(loc: tuple) -> str:
    return ".".join(str(p) for p in loc if not (isinstance(p, str) and p.startswith("function-")))


def _refine(path: str, msg: str) -> str:
    """Append the field a dataclass check complains about, when its message starts with one."""
    cls = SimConfig
    for part in filter(None, path.split(".")):
        if part.isdigit():
            continue
        subs = _dataclass_of(typing.get_type_hints(cls).get(part))
        if not subs:
            return path
        cls = subs[0]
    word = msg.split(" ", 1)[0]
    if word in {f.name for f in dataclasses.fields(cls)}:
        return f"{path}.{word}" if path else word
    return path


def config_to_dict(cfg: SimConfig) -> dict[str, Any]:
    return _ADAPTER.dump_python(cfg, mode="json")


def config_from_dict(data: dict[str, Any]) -> SimConfig:
    """Validate a config tree; raises ValidationError naming the offending key."""
    if not isinstance(data, dict):
        raise ParseError("<root>", "top level must be a JSON object")
    data = dict(data)
    options = data.pop("preset_options", {})
    scenario = data.get("scenario")
    if isinstance(scenario, str):
        if scenario not in PRESETS:
            raise ValidationError("scenario", f"unknown preset {scenario!r}; choose from {', '.join(PRESETS)}")
        if not isinstance(options, dict):
            raise ValidationError("preset_options", "must be an object")
        try:
            base = preset(scenario, **options)
        except (TypeError, KeyError, ValueError) as e:
            raise ValidationError("preset_options", str(e)) from None
        del data["scenario"]
    else:
        if options:
            raise ValidationError("preset_options", "only valid when scenario names a preset")
        base = SimConfig()
    _check_keys(data, SimConfig, "")
    merged = _merge(config_to_dict(base), data)
    try:
        return _ADAPTER.validate_python(merged)
    except pydantic.ValidationError as e:
        err = e.errors()[0]
        cause = err.get("ctx", {}).get("error")
        path = _loc(err["loc"])
        if isinstance(cause, ConfigError):
            path = f"{path}.{cause.path}" if path else cause.path
            msg = str(cause).split(": ", 1)[1]
        else:
            msg = str(cause) if cause is not None else err["msg"]
            path = _refine(path, msg)
        raise ValidationError(path or "<root>", msg) from None


def load_config(path) -> SimConfig:
    text = Path(path).read_text()
    try:
        data = json.loads(text)
    except json.JSONDecodeError as e:
        raise ParseError(f"line {e.lineno} column {e.colno}", e.msg) from None
    return config_from_dict(data)


def dump_config(cfg: SimConfig) -> str:
    """Canonical JSON text; ``load_config`` on it reproduces ``cfg`` exactly."""
    return json.dumps(config_to_dict(cfg), sort_keys=True, indent=2) + "\n"


def config_hash(cfg: SimConfig) -> str:
    canon = json.dumps(config_to_dict(cfg), sort_keys=True, separators=(",", ":"))
    return hashlib.sha256(canon.encode()).hexdigest()


def json_schema() -> dict[str, Any]:
    return _ADAPTER.json_schema()


def schema_text() -> str:
    return json.dumps(json_schema(), sort_keys=True, indent=2) + "\n"

