"""Flat ``key=value`` configuration files mapped onto frozen dataclasses."""

from __future__ import annotations

import dataclasses
from pathlib import Path


def parse_kv(text: str) -> dict:
    out = {}
    for n, raw in enumerate(text.splitlines(), 1):
        line = raw.split("#", 1)[0].strip()
        if not line:
            continue
        if "=" not in line:
            raise ValueError(f"line {n}: expected key=value, got {raw!r}")
        k, v = (s.strip() for s in line.split("=", 1))
        if k in out:
            raise ValueError(f"line {n}: duplicate key {k!r}")
        out[k] = v
    return out


def _coerce(value: str, like):
    if isinstance(like, bool):
        low = value.lower()
        if low not in ("true", "false", "1", "0", "yes", "no"):
            raise ValueError(f"not a boolean: {value!r}")
        return low in ("true", "1", "yes")
    if isinstance(like, int):
        return int(value)
    if isinstance(like, float):
        return float(value)
    if isinstance(like, tuple):
        return tuple(type(like[0])(x) if like else float(x) for x in value.split(",") if x.strip())
    return value


def from_kv(cls, values: dict, base=None):
    """Build ``cls`` from string values; unknown keys are rejected."""
    base = base if base is not None else cls()
    names = {f.name for f in dataclasses.fields(cls)}
    unknown = sorted(set(values) - names)
    if unknown:
        raise ValueError(f"unknown config key(s): {', '.join(unknown)}")
    typed = {k: _coerce(v, getattr(base, k)) if isinstance(v, str) else v for k, v in values.items()}
    return dataclasses.replace(base, **typed)


def format_value(v) -> str:
    if isinstance(v, bool):
        return "true" if v else "false"
    if isinstance(v, float):
        return repr(v)
    if isinstance(v, tuple):
        return ",".join(format_value(x) for x in v)
    return str(v)


def to_kv(cfg) -> str:
    return "".join(f"{f.name}={format_value(getattr(cfg, f.name))}\n" for f in dataclasses.fields(cfg))


def load_kv(cls, path, base=None):
    p = Path(path)
    if not p.exists():
        raise FileNotFoundError(str(p))
    return from_kv(cls, parse_kv(p.read_text()), base)
