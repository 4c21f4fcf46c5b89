"""Plain ``key = value`` config files."""

from __future__ import annotations

import dataclasses
import types
import typing
from pathlib import Path


class ConfigError(ValueError):
    pass


def read_kv(path: str | Path) -> dict[str, str]:
    """Parse ``key = value`` lines; ``#`` starts a comment, blank lines are skipped."""
    out = {}
    with open(path, encoding="utf-8") as f:
        for lineno, raw in enumerate(f, start=1):
            line = raw.split("#", 1)[0].strip()
            if not line:
                continue
            key, sep, value = line.partition("=")
            if not sep:
                raise ConfigError(f"{path}:{lineno}: expected key = value")
            out[key.strip().replace("-", "_")] = value.strip()
    return out


def write_kv(pairs: dict, path: str | Path) -> None:
    with open(path, "w", encoding="utf-8") as f:
        for k, v in pairs.items():
            f.write(f"{k}={v}\n")


_TRUE = {"1", "true", "yes", "on"}
_FALSE = {"0", "false", "no", "off"}


def coerce(value: str, kind, key: str = "value"):
    """Convert a config string to ``kind`` (bool, int, float or str)."""
    try:
        if kind is bool:
            v = value.strip().lower()
            if v in _TRUE:
                return True
            if v in _FALSE:
                return False
            raise ValueError(value)
        if kind is int:
            return int(value)
        if kind is float:
            return float(value)
    except ValueError:
        raise ConfigError(f"{key}: cannot read {value!r} as {kind.__name__}") from None
    return value


def from_mapping(cls, values: dict[str, str]):
    """Build dataclass ``cls`` from string values, checking keys and types."""
    hints = typing.get_type_hints(cls)
    names = {f.name for f in dataclasses.fields(cls)}
    kwargs = {}
    for key, raw in values.items():
        if key not in names:
            raise ConfigError(f"unknown setting {key!r}")
        kind = hints[key]
        if typing.get_origin(kind) in (typing.Union, types.UnionType):
            kind = next(a for a in typing.get_args(kind) if a is not type(None))
        kwargs[key] = coerce(raw, kind, key) if isinstance(raw, str) else raw
    return cls(**kwargs)
