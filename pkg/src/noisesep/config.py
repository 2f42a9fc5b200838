"""key=value config files mapped onto dataclasses."""

from __future__ import annotations

import dataclasses
import typing
from pathlib import Path
from typing import Any, Mapping

from .errors import ConfigError


def parse_kv_text(text: str) -> dict[str, str]:
    out = {}
    for lineno, raw in enumerate(text.splitlines(), start=1):
        line = raw.split("#", 1)[0].strip()
        if not line:
            continue
        key, sep, value = line.partition("=")
        if not sep:
            raise ConfigError(f"line {lineno}: expected key=value, got {raw!r}")
        out[key.strip()] = value.strip()
    return out


def read_kv_file(path) -> dict[str, str]:
    return parse_kv_text(Path(path).read_text(encoding="utf-8"))


def _coerce(value: str, tp: Any, key: str):
    origin = typing.get_origin(tp)
    args = typing.get_args(tp)
    if origin is typing.Union or (origin is not None and type(None) in args):
        if value.lower() in ("none", ""):
            return None
        tp = next(a for a in args if a is not type(None))
        origin = typing.get_origin(tp)
    try:
        if tp is bool:
            if value.lower() in ("1", "true", "yes", "on"):
                return True
            if value.lower() in ("0", "false", "no", "off"):
                return False
            raise ValueError(value)
        if tp is int:
            return int(value)
        if tp is float:
            return float(value)
        if tp is Path:
            return Path(value)
        if origin is tuple:
            parts = [p for p in value.replace(",", " ").split() if p]
            return tuple(_coerce(p, a, key) for p, a in zip(parts, typing.get_args(tp)))
        return value
    except ValueError:
        raise ConfigError(f"{key}: cannot interpret {value!r} as {tp}") from None


def from_mapping(cls, values: Mapping[str, str], strict: bool = False):
    """Build dataclass ``cls`` from string values; unknown keys are ignored
    unless ``strict``."""
    hints = typing.get_type_hints(cls)
    kwargs = {}
    names = {f.name for f in dataclasses.fields(cls)}
    for k, v in values.items():
        if k in names:
            kwargs[k] = _coerce(v, hints[k], k)
        elif strict:
            raise ConfigError(f"unknown key {k!r} for {cls.__name__}")
    try:
        return cls(**kwargs)
    except TypeError as exc:
        raise ConfigError(str(exc)) from None


def to_mapping(obj) -> dict[str, str]:
    out = {}
    for f in dataclasses.fields(obj):
        v = getattr(obj, f.name)
        if isinstance(v, tuple):
            v = ",".join(repr(x) if isinstance(x, float) else str(x) for x in v)
        elif isinstance(v, float):
            v = repr(v)
        out[f.name] = str(v)
    return out
