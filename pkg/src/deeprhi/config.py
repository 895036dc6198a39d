"""Flat ``key = value`` configuration files.

Blank lines and ``#`` comments are ignored. Each config kind is a frozen
dataclass; values are converted according to the field's annotated type.
"""

from __future__ import annotations

import dataclasses
import typing
from pathlib import Path


class ConfigError(ValueError):
    pass


def parse_kv(text: str) -> dict[str, str]:
    out: dict[str, str] = {}
    for lineno, raw in enumerate(text.splitlines(), 1):
        line = raw.split("#", 1)[0].strip()
        if not line:
            continue
        if "=" not in line:
            raise ConfigError(f"line {lineno}: expected 'key = value', got {raw!r}")
        key, _, value = line.partition("=")
        out[key.strip()] = value.strip()
    return out


def read_kv(path) -> dict[str, str]:
    try:
        return parse_kv(Path(path).read_text())
    except OSError as exc:
        raise ConfigError(f"cannot read config {path}: {exc}") from exc


def _convert(value: str, typ, key: str):
    origin = typing.get_origin(typ)
    try:
        if typ is bool:
            low = value.lower()
            if low in ("1", "true", "yes", "on"):
                return True
            if low in ("0", "false", "no", "off"):
                return False
            raise ValueError(value)
        if typ is int:
            return int(value)
        if typ is float:
            return float(value)
        if typ is str:
            return value
        if origin is tuple:
            (inner, *_) = typing.get_args(typ)
            return tuple(_convert(v.strip(), inner, key) for v in value.split(",") if v.strip())
    except ValueError as exc:
        raise ConfigError(f"{key}: cannot parse {value!r} as {typ}") from exc
    raise ConfigError(f"{key}: unsupported field type {typ}")


def _format(value) -> str:
    if isinstance(value, bool):
        return "true" if value else "false"
    if isinstance(value, float):
        return repr(value)
    if isinstance(value, tuple):
        return ",".join(_format(v) for v in value)
    return str(value)


class KVConfig:
    """Mixin for frozen dataclasses that round-trip through key-value text."""

    @classmethod
    def from_dict(cls, values: dict[str, str], strict: bool = True):
        hints = typing.get_type_hints(cls)
        names = {f.name for f in dataclasses.fields(cls)}
        unknown = set(values) - names
        if strict and unknown:
            raise ConfigError(f"unknown {cls.__name__} keys: {sorted(unknown)}")
        kwargs = {k: _convert(v, hints[k], k) for k, v in values.items() if k in names}
        obj = cls(**kwargs)
        obj.validate()
        return obj

    @classmethod
    def from_file(cls, path):
        return cls.from_dict(read_kv(path))

    def with_overrides(self, overrides: dict[str, str]):
        merged = {k: _format(v) for k, v in dataclasses.asdict(self).items()}
        merged.update(overrides)
        return type(self).from_dict(merged)

    def to_text(self) -> str:
        return "".join(f"{k} = {_format(v)}\n" for k, v in dataclasses.asdict(self).items())

    def save(self, path) -> None:
        Path(path).write_text(self.to_text())

    def validate(self) -> None:
        pass
