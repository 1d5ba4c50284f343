"""Plain-text run configuration: flat ``key = value`` pairs in sections.

Sections map 1:1 onto the config dataclasses: [train] for the top-level
fields, then [backbone], [hide], [crf], [switch]. Unknown keys are
rejected with their section; parse errors report the line.
"""

from __future__ import annotations

import configparser
import dataclasses
from pathlib import Path

from .backbone import BackboneConfig
from .densecrf import CrfParams
from .hideseek import HidePolicy
from .losses import SwitchPolicy
from .pipeline import TrainConfig


class ConfigError(Exception):
    pass


def _parse_bool(raw: str) -> bool:
    low = raw.strip().lower()
    if low in ("1", "true", "yes", "on"):
        return True
    if low in ("0", "false", "no", "off"):
        return False
    raise ValueError(f"not a boolean: {raw!r}")


def _parse_tuple(raw: str):
    return tuple(float(v) if "." in v or "e" in v.lower() else int(v)
                 for v in raw.replace(",", " ").split())


_SECTION_SPECS = {
    "train": (TrainConfig, ("backbone", "hide", "crf", "switch")),
    "backbone": (BackboneConfig, ()),
    "hide": (HidePolicy, ("mean_pixel",)),  # mean_pixel is dataset-derived
    "crf": (CrfParams, ()),
    "switch": (SwitchPolicy, ()),
}


def _converters(cls, skip):
    out = {}
    for f in dataclasses.fields(cls):
        if f.name in skip:
            continue
        if f.type in ("int", int):
            out[f.name] = int
        elif f.type in ("float", float):
            out[f.name] = float
        elif f.type in ("bool", bool):
            out[f.name] = _parse_bool
        elif f.type in ("str", str):
            out[f.name] = str.strip
        elif f.name in ("widths", "loss_weights"):
            out[f.name] = _parse_tuple
    return out


def train_config_from_ini(path) -> TrainConfig:
    parser = configparser.ConfigParser()
    try:
        with open(path) as f:
            parser.read_file(f, source=str(path))
    except configparser.Error as e:
        raise ConfigError(f"config parse error: {e}") from e
    kwargs_by_section: dict[str, dict] = {}
    for section in parser.sections():
        if section not in _SECTION_SPECS:
            raise ConfigError(f"{path}: unknown section [{section}] "
                              f"(expected one of {sorted(_SECTION_SPECS)})")
        cls, skip = _SECTION_SPECS[section]
        convert = _converters(cls, skip)
        values = {}
        for key, raw in parser.items(section):
            if key not in convert:
                raise ConfigError(f"{path}: unknown key {key!r} in section [{section}]")
            try:
                values[key] = convert[key](raw)
            except ValueError as e:
                raise ConfigError(f"{path}: bad value for {key!r} in [{section}]: {e}") from e
        kwargs_by_section[section] = values
    train_kwargs = kwargs_by_section.get("train", {})
    try:
        for section, field_name in (("backbone", "backbone"), ("hide", "hide"),
                                    ("crf", "crf"), ("switch", "switch")):
            if section in kwargs_by_section:
                cls = _SECTION_SPECS[section][0]
                train_kwargs[field_name] = cls(**kwargs_by_section[section])
        return TrainConfig(**train_kwargs)
    except (TypeError, ValueError) as e:
        raise ConfigError(f"{path}: invalid configuration: {e}") from e


def _format_value(value):
    if isinstance(value, bool):
        return "true" if value else "false"
    if isinstance(value, (tuple, list)):
        return ", ".join(str(v) for v in value)
    return str(value)


def train_config_to_ini(config: TrainConfig) -> str:
    lines = []
    sub = {"backbone": config.backbone, "hide": config.hide,
           "crf": config.crf, "switch": config.switch}
    lines.append("[train]")
    for f in dataclasses.fields(TrainConfig):
        if f.name in sub:
            continue
        lines.append(f"{f.name} = {_format_value(getattr(config, f.name))}")
    for section, obj in sub.items():
        lines.append("")
        lines.append(f"[{section}]")
        skip = _SECTION_SPECS[section][1]
        for f in dataclasses.fields(obj):
            if f.name in skip:
                continue
            lines.append(f"{f.name} = {_format_value(getattr(obj, f.name))}")
    return "\n".join(lines) + "\n"


def apply_overrides(config: TrainConfig, overrides: dict) -> TrainConfig:
    """New config with dotted-key overrides applied, e.g. {"switch.mode": "none"}."""
    data = {"train": {}, "backbone": {}, "hide": {}, "crf": {}, "switch": {}}
    for dotted, raw in overrides.items():
        if "." in dotted:
            section, key = dotted.split(".", 1)
        else:
            section, key = "train", dotted
        if section not in data:
            raise ConfigError(f"unknown override section {section!r} in {dotted!r}")
        cls, skip = _SECTION_SPECS[section]
        convert = _converters(cls, skip)
        if key not in convert:
            raise ConfigError(f"unknown override key {dotted!r}")
        try:
            data[section][key] = convert[key](raw)
        except ValueError as e:
            raise ConfigError(f"bad override value for {dotted!r}: {e}") from e
    new = dataclasses.replace(config, **data["train"]) if data["train"] else config
    for field_name in ("backbone", "hide", "crf", "switch"):
        if data[field_name]:
            new = dataclasses.replace(
                new, **{field_name: dataclasses.replace(getattr(new, field_name),
                                                        **data[field_name])})
    return new
