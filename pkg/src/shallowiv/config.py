"""Flat ``key = value`` config files.

Blank lines and lines starting with ``#`` are ignored. Keys are case
sensitive; values are kept as strings and converted by the consumer.
"""

from __future__ import annotations

from dataclasses import fields
from pathlib import Path


def parse_kv(text, source="<string>"):
    out = {}
    for lineno, raw in enumerate(text.splitlines(), start=1):
        line = raw.split("#", 1)[0].strip()
        if not line:
            continue
        key, sep, value = line.partition("=")
        if not sep:
            key, sep, value = line.partition(":")
        if not sep or not key.strip():
            raise ValueError(f"{source}:{lineno}: expected 'key = value', got {raw!r}")
        out[key.strip()] = value.strip()
    return out


def read_kv(path):
    path = Path(path)
    return parse_kv(path.read_text(), str(path))


def format_kv(mapping):
    return "".join(f"{k} = {v}\n" for k, v in mapping.items())


def write_kv(path, mapping):
    Path(path).write_text(format_kv(mapping))


def dataclass_from_kv(cls, kv, **overrides):
    """Build dataclass ``cls`` from string values; keys not in ``cls`` are ignored.

    ``overrides`` that are not None win over ``kv``.
    """
    values = {}
    for f in fields(cls):
        if overrides.get(f.name) is not None:
            values[f.name] = overrides[f.name]
        elif f.name in kv:
            default = f.default
            conv = type(default) if default is not None else str
            values[f.name] = int(float(kv[f.name])) if conv is int else conv(kv[f.name])
    return cls(**values)
