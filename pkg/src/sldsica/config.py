"""Flat key-value run configuration files.

One ``key value`` (or ``key = value``) pair per line, '#' comments,
no nesting.  Validation errors always name the offending key.
"""

from __future__ import annotations

from pathlib import Path

from .errors import ConfigInvalid, IoError


def parse_config(path) -> dict[str, str]:
    try:
        text = Path(path).read_text(encoding="utf-8")
    except OSError as err:
        raise IoError(f"cannot read config {path}: {err}") from err
    out: dict[str, str] = {}
    for lineno, raw in enumerate(text.splitlines(), 1):
        line = raw.split("#", 1)[0].strip()
        if not line:
            continue
        if "=" in line:
            key, _, val = line.partition("=")
        else:
            parts = line.split(maxsplit=1)
            if len(parts) != 2:
                raise ConfigInvalid(f"line {lineno}: expected 'key value', got {raw!r}")
            key, val = parts
        key = key.strip()
        val = val.strip()
        if not key or not val:
            raise ConfigInvalid(f"line {lineno}: empty key or value in {raw!r}")
        out[key] = val
    return out


class RunConfig:
    """Typed access over a parsed flat config; missing keys raise loudly."""

    def __init__(self, values: dict[str, str], source: str = "<config>"):
        self.values = dict(values)
        self.source = source

    @classmethod
    def from_file(cls, path) -> "RunConfig":
        return cls(parse_config(path), source=str(path))

    def get_int(self, key: str, default: int | None = None) -> int:
        if key not in self.values:
            if default is None:
                raise ConfigInvalid(f"{self.source}: missing required key {key!r}")
            return default
        try:
            return int(self.values[key])
        except ValueError:
            raise ConfigInvalid(
                f"{self.source}: key {key!r} must be an integer, got {self.values[key]!r}"
            ) from None

    def get_float(self, key: str, default: float | None = None) -> float:
        if key not in self.values:
            if default is None:
                raise ConfigInvalid(f"{self.source}: missing required key {key!r}")
            return default
        try:
            return float(self.values[key])
        except ValueError:
            raise ConfigInvalid(
                f"{self.source}: key {key!r} must be a number, got {self.values[key]!r}"
            ) from None

    def get_str(self, key: str, default: str | None = None) -> str:
        if key not in self.values:
            if default is None:
                raise ConfigInvalid(f"{self.source}: missing required key {key!r}")
            return default
        return self.values[key]

    def get_optional_int(self, key: str) -> int | None:
        if key not in self.values or self.values[key].lower() in ("none", "off"):
            return None
        return self.get_int(key)
