"""Key-value configuration files.

INI-style sections ``[scenario]``, ``[model]``, ``[train]``, ``[link]`` and
``[pipeline]`` whose keys are the field names of the corresponding
dataclasses. Speeds may be given as ``ue_speed_kmh`` for convenience.
"""

from __future__ import annotations

import configparser
import dataclasses
import json
from pathlib import Path

from .channel import ScenarioConfig, kmh
from .estimator.training import TrainConfig
from .harness import LinkSimConfig

SECTIONS = ("scenario", "model", "train", "link", "pipeline")


class ConfigError(ValueError):
    pass


def _parse_value(raw: str):
    text = raw.strip()
    if text.lower() in ("none", "null", ""):
        return None
    if text.lower() in ("true", "false"):
        return text.lower() == "true"
    try:
        return json.loads(text)
    except json.JSONDecodeError:
        pass
    if "," in text:
        return [_parse_value(part) for part in text.split(",")]
    return text


def read_config(path) -> dict[str, dict]:
    parser = configparser.ConfigParser()
    parser.optionxform = str
    try:
        with open(path) as fh:
            parser.read_file(fh)
    except (OSError, configparser.Error) as exc:
        raise ConfigError(f"cannot read config {path}: {exc}") from exc
    unknown = set(parser.sections()) - set(SECTIONS)
    if unknown:
        raise ConfigError(f"unknown config sections: {sorted(unknown)}")
    return {sec: {k: _parse_value(v) for k, v in parser[sec].items()} for sec in parser.sections()}


def merge(file_values: dict, overrides: dict) -> dict:
    """Overrides win; ``None`` in overrides means 'not given'."""
    out = dict(file_values)
    out.update({k: v for k, v in overrides.items() if v is not None})
    return out


def _build(cls, values: dict, section: str):
    names = {f.name for f in dataclasses.fields(cls)}
    unknown = set(values) - names
    if unknown:
        raise ConfigError(f"unknown keys in [{section}]: {sorted(unknown)}")
    try:
        return cls(**values)
    except (TypeError, ValueError) as exc:
        raise ConfigError(f"invalid [{section}] settings: {exc}") from exc


def scenario_from(values: dict) -> ScenarioConfig:
    values = dict(values)
    if "ue_speed_kmh" in values:
        speed = values.pop("ue_speed_kmh")
        if speed is not None:
            values["ue_speed_mps"] = kmh(float(speed))
    return _build(ScenarioConfig, values, "scenario")


def train_from(values: dict) -> TrainConfig:
    return _build(TrainConfig, values, "train")


def link_from(values: dict) -> LinkSimConfig:
    values = dict(values)
    if isinstance(values.get("snr_db"), (int, float)):
        values["snr_db"] = [values["snr_db"]]
    return _build(LinkSimConfig, values, "link")


def write_config(path, sections: dict[str, dict]) -> None:
    parser = configparser.ConfigParser()
    parser.optionxform = str
    for sec, values in sections.items():
        parser[sec] = {k: json.dumps(v) for k, v in values.items()}
    with open(Path(path), "w") as fh:
        parser.write(fh)
