"""Plain-text key=value run configs with flag and environment overrides."""

from __future__ import annotations

import dataclasses
import os
from pathlib import Path

from .model import RunConfig

SEED_ENV = "CMB_SEED"


def _coerce(key: str, raw: str):
    defaults = RunConfig()
    if not hasattr(defaults, key):
        known = ", ".join(f.name for f in dataclasses.fields(RunConfig))
        raise KeyError(f"unknown config key {key!r} (known: {known})")
    ref = getattr(defaults, key)
    raw = raw.strip()
    try:
        if isinstance(ref, tuple):
            return tuple(int(v) for v in raw.replace(" ", "").split(",") if v)
        if isinstance(ref, bool):
            return raw.lower() in ("1", "true", "yes", "on")
        return type(ref)(raw)
    except ValueError:
        raise ValueError(f"config key {key!r}: cannot read {raw!r} as {type(ref).__name__}") from None


def parse_pairs(lines, source: str = "<flags>") -> dict:
    """Parse ``key=value`` lines; blank lines and ``#`` comments are skipped."""
    out = {}
    for n, line in enumerate(lines, start=1):
        line = line.split("#", 1)[0].strip()
        if not line:
            continue
        if "=" not in line:
            raise ValueError(f"{source}:{n}: expected key=value, got {line!r}")
        key, val = (part.strip() for part in line.split("=", 1))
        out[key] = _coerce(key, val)
    return out


def load_config(path=None, overrides: dict | None = None, env=None) -> RunConfig:
    """Defaults <- file <- CMB_SEED <- explicit overrides."""
    env = os.environ if env is None else env
    values = {}
    if path is not None:
        p = Path(path)
        values.update(parse_pairs(p.read_text().splitlines(), str(p)))
    if env.get(SEED_ENV, "").strip():
        values["seed"] = _coerce("seed", env[SEED_ENV])
    values.update(overrides or {})
    return RunConfig(**values)


def dump_config(config: RunConfig) -> str:
    lines = []
    for key, val in config.to_dict().items():
        if isinstance(val, list):
            val = ",".join(str(v) for v in val)
        lines.append(f"{key}={val}")
    return "\n".join(lines) + "\n"
