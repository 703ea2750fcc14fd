"""Preset files: flat ``key = value`` pairs under section headers.

Sections map onto config dataclasses::

    [scenario]  ScenarioConfig
    [run]       RunConfig scalars (mac, r_tx, replications, ...)
    [sub6]      Sub6Config
    [ad]        AdCycleConfig

Unknown sections or keys are rejected, and every value is parsed against the
declared field type.  Presets are looked up in ``$MACSIM_PRESET_DIR`` (an
os.pathsep separated list) before the bundled directory.
"""
from __future__ import annotations

import configparser
import dataclasses
import os
from pathlib import Path

from .engine import RunConfig
from .ref80211ad import AdCycleConfig
from .scenario import ConfigError, ScenarioConfig
from .sub6 import Sub6Config

BUNDLED = Path(__file__).with_name("presets")
SECTIONS = {"scenario": ScenarioConfig, "run": RunConfig, "sub6": Sub6Config, "ad": AdCycleConfig}
_NESTED = {"scenario", "sub6", "ad"}


def search_path() -> list[Path]:
    extra = os.environ.get("MACSIM_PRESET_DIR", "")
    return [Path(p) for p in extra.split(os.pathsep) if p] + [BUNDLED]


def available() -> list[str]:
    names = set()
    for d in search_path():
        if d.is_dir():
            names.update(p.stem for p in d.glob("*.ini"))
    return sorted(names)


def locate(name: str) -> Path:
    p = Path(name)
    if p.suffix == ".ini" and p.is_file():
        return p
    for d in search_path():
        cand = d / f"{name}.ini"
        if cand.is_file():
            return cand
    raise ConfigError(f"preset {name!r} not found; known presets: {', '.join(available())}")


def _fields(cls) -> dict[str, dataclasses.Field]:
    return {f.name: f for f in dataclasses.fields(cls) if f.name not in _NESTED}


def parse_value(text: str, type_name: str):
    text = text.strip()
    t = type_name.replace(" ", "")
    if t.endswith("|None"):
        if text.lower() in ("", "none"):
            return None
        t = t[: -len("|None")]
    try:
        if t == "bool":
            low = text.lower()
            if low in ("true", "yes", "1", "on"):
                return True
            if low in ("false", "no", "0", "off"):
                return False
            raise ValueError(text)
        if t == "int":
            return int(text.replace("_", ""))
        if t == "float":
            return float(text)
        if t == "str":
            return text
        if t.startswith("tuple[float"):
            return tuple(float(x) for x in text.split(",") if x.strip())
    except ValueError:
        raise ConfigError(f"cannot read {text!r} as {type_name}") from None
    raise ConfigError(f"unsupported field type {type_name}")


def format_value(value) -> str:
    if isinstance(value, tuple):
        return ", ".join(f"{x:g}" for x in value)
    if value is None:
        return "none"
    return str(value).lower() if isinstance(value, bool) else str(value)


def _section_kwargs(section: str, items) -> dict:
    known = _fields(SECTIONS[section])
    out = {}
    for key, text in items:
        if key not in known:
            raise ConfigError(f"unknown key {section}.{key}")
        out[key] = parse_value(text, str(known[key].type))
    return out


def build(values: dict[str, dict]) -> RunConfig:
    """RunConfig from per-section keyword dicts."""
    for section in values:
        if section not in SECTIONS:
            raise ConfigError(f"unknown section [{section}]")
    nested = {s: SECTIONS[s](**values.get(s, {})) for s in _NESTED}
    return RunConfig(**values.get("run", {}), **nested)


def read(path: str | Path) -> dict[str, dict]:
    parser = configparser.ConfigParser(interpolation=None)
    parser.optionxform = str
    with open(path) as fh:
        parser.read_file(fh)
    out = {}
    for section in parser.sections():
        if section not in SECTIONS:
            raise ConfigError(f"{path}: unknown section [{section}]")
        out[section] = _section_kwargs(section, parser.items(section))
    return out


def load(name: str, overrides: list[str] | tuple[str, ...] = ()) -> RunConfig:
    values = read(locate(name))
    for item in overrides:
        section, key, val = split_override(item)
        values.setdefault(section, {})[key] = val
    return build(values)


def split_override(item: str) -> tuple[str, str, object]:
    """``section.key=value`` or a bare ``key=value`` that names one field uniquely."""
    if "=" not in item:
        raise ConfigError(f"override {item!r} is not key=value")
    lhs, text = item.split("=", 1)
    lhs = lhs.strip()
    if "." in lhs:
        section, key = lhs.split(".", 1)
        if section not in SECTIONS:
            raise ConfigError(f"unknown section [{section}]")
    else:
        owners = [s for s in SECTIONS if lhs in _fields(SECTIONS[s])]
        if len(owners) != 1:
            raise ConfigError(f"override key {lhs!r} is "
                              + ("ambiguous" if owners else "unknown"))
        section, key = owners[0], lhs
    return section, key, _section_kwargs(section, [(key, text)])[key]


def dump(cfg: RunConfig) -> str:
    parts = []
    objs = {"scenario": cfg.scenario, "run": cfg, "sub6": cfg.sub6, "ad": cfg.ad}
    for section, obj in objs.items():
        parts.append(f"[{section}]")
        for key in _fields(SECTIONS[section]):
            parts.append(f"{key} = {format_value(getattr(obj, key))}")
        parts.append("")
    return "\n".join(parts)


def save(cfg: RunConfig, path: str | Path) -> None:
    Path(path).write_text(dump(cfg))


def set_value(path: str | Path, section: str, key: str, value) -> None:
    """Rewrite one key in a preset file, keeping the rest of the file as is."""
    if key not in _fields(SECTIONS[section]):
        raise ConfigError(f"unknown key {section}.{key}")
    lines = Path(path).read_text().splitlines()
    current, done, out = None, False, []
    for line in lines:
        stripped = line.strip()
        if stripped.startswith("[") and stripped.endswith("]"):
            if current == section and not done:
                out.append(f"{key} = {format_value(value)}")
                done = True
            current = stripped[1:-1]
        elif current == section and stripped.split("=", 1)[0].strip() == key:
            line, done = f"{key} = {format_value(value)}", True
        out.append(line)
    if not done:
        if current != section:
            out.append(f"[{section}]")
        out.append(f"{key} = {format_value(value)}")
    Path(path).write_text("\n".join(out) + "\n")
