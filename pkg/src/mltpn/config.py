"""Flat ``key = value`` config files for the dataclass configs.

Keys are ``<section>.<field>``; values are numbers, enum tokens, or
comma-separated number lists. ``#`` starts a comment.
"""
from __future__ import annotations

import dataclasses
import types
import typing
from pathlib import Path
from typing import Any, TypeVar

C = TypeVar("C")


class ConfigError(ValueError):
    pass


def _format(value: Any) -> str:
    if isinstance(value, (tuple, list)):
        return ", ".join(_format(v) for v in value)
    if isinstance(value, bool):
        return "true" if value else "false"
    if isinstance(value, float):
        return repr(value)
    return str(value)


def dumps(obj: Any, section: str) -> str:
    lines = []
    for f in dataclasses.fields(obj):
        lines.append(f"{section}.{f.name} = {_format(getattr(obj, f.name))}")
    return "\n".join(lines) + "\n"


def _parse(raw: str, typ: Any, key: str) -> Any:
    origin = typing.get_origin(typ)
    try:
        if origin is tuple:
            (inner, *_rest) = typing.get_args(typ)
            return tuple(_parse(p.strip(), inner, key) for p in raw.split(",") if p.strip())
        if typ is bool:
            if raw.lower() not in ("true", "false"):
                raise ValueError(raw)
            return raw.lower() == "true"
        if typ is int:
            return int(raw)
        if typ is float:
            return float(raw)
        if origin is typing.Union or origin is types.UnionType:  # optional values
            if raw.lower() in ("none", ""):
                return None
            return _parse(raw, typing.get_args(typ)[0], key)
        return raw
    except ValueError as exc:
        raise ConfigError(f"{key}: cannot parse {raw!r} as {typ}") from exc


def parse_pairs(text: str) -> dict[str, str]:
    pairs = {}
    for lineno, raw in enumerate(text.splitlines(), 1):
        line = raw.split("#", 1)[0].strip()
        if not line:
            continue
        if "=" not in line:
            raise ConfigError(f"line {lineno}: expected 'key = value', got {raw!r}")
        key, value = (s.strip() for s in line.split("=", 1))
        pairs[key] = value
    return pairs


def loads(cls: type[C], text: str, section: str, strict: bool = True) -> C:
    """Build ``cls`` from the ``section.*`` keys; missing keys keep defaults."""
    hints = typing.get_type_hints(cls)
    names = {f.name for f in dataclasses.fields(cls)}
    kwargs = {}
    for key, value in parse_pairs(text).items():
        if not key.startswith(section + "."):
            continue
        name = key[len(section) + 1:]
        if name not in names:
            if strict:
                raise ConfigError(f"unknown key {key!r}")
            continue
        kwargs[name] = _parse(value, hints[name], key)
    try:
        return cls(**kwargs)
    except (TypeError, ValueError) as exc:
        raise ConfigError(str(exc)) from exc


def load(cls: type[C], path: str | Path, section: str) -> C:
    return loads(cls, Path(path).read_text(), section)
