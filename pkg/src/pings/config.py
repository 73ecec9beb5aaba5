"""Flat ``key = value`` configuration with dotted section keys.

    # comment
    train.epochs = 5000
    train.batch = 512
    gmm.weights = 0.5, 0.3, 0.2
    gmm.means = 2.5 0 -1.5; -2 2 1; 0 -2.5 2

Lists use commas or whitespace, matrix rows are separated by ``;``.
"""

from __future__ import annotations

import dataclasses
import hashlib
import json
from pathlib import Path

import numpy as np

from .gmm import DEFAULT_GMM, GmmSpec


class ConfigError(ValueError):
    pass


def parse_config_text(text: str, source: str = "<config>") -> dict[str, str]:
    out: dict[str, str] = {}
    for lineno, raw in enumerate(text.splitlines(), start=1):
        line = raw.split("#", 1)[0].strip()
        if not line:
            continue
        if "=" not in line:
            raise ConfigError(f"{source}:{lineno}: expected 'key = value', got {raw.strip()!r}")
        key, value = (s.strip() for s in line.split("=", 1))
        if not key or any(c.isspace() for c in key):
            raise ConfigError(f"{source}:{lineno}: bad key {key!r}")
        if key in out:
            raise ConfigError(f"{source}:{lineno}: duplicate key {key!r}")
        out[key] = value
    return out


def load_config(path) -> dict[str, str]:
    p = Path(path)
    try:
        text = p.read_text()
    except OSError as exc:
        raise ConfigError(f"cannot read config {p}: {exc.strerror}") from None
    return parse_config_text(text, str(p))


def parse_overrides(items: list[str] | None) -> dict[str, str]:
    """``--set key=value`` pairs."""
    out = {}
    for item in items or ():
        if "=" not in item:
            raise ConfigError(f"override {item!r} is not key=value")
        k, v = (s.strip() for s in item.split("=", 1))
        out[k] = v
    return out


def section(flat: dict[str, str], name: str) -> dict[str, str]:
    prefix = name + "."
    return {k[len(prefix):]: v for k, v in flat.items() if k.startswith(prefix)}


def _numbers(text: str) -> list[float]:
    return [float(tok) for tok in text.replace(",", " ").split()]


def _coerce(value: str, current, key: str):
    try:
        if isinstance(current, bool):
            low = value.lower()
            if low not in ("true", "false", "1", "0", "yes", "no"):
                raise ValueError(value)
            return low in ("true", "1", "yes")
        if isinstance(current, int):
            return int(value)
        if isinstance(current, float):
            return float(value)
        if isinstance(current, tuple):
            return tuple(int(x) for x in _numbers(value))
        return value
    except ValueError:
        raise ConfigError(f"{key}: cannot interpret {value!r} as {type(current).__name__}") from None


def apply_section(obj, values: dict[str, str], name: str):
    """Return a copy of dataclass ``obj`` with string ``values`` applied."""
    fields = {f.name for f in dataclasses.fields(obj)}
    changes = {}
    for key, value in values.items():
        if key not in fields:
            raise ConfigError(f"unknown key {name}.{key}; known: {', '.join(sorted(fields))}")
        changes[key] = _coerce(value, getattr(obj, key), f"{name}.{key}")
    try:
        return dataclasses.replace(obj, **changes)
    except ValueError as exc:
        raise ConfigError(f"{name}: {exc}") from None


def gmm_from_section(values: dict[str, str]) -> GmmSpec:
    if not values:
        return DEFAULT_GMM
    if "file" in values:
        rest = {k: v for k, v in values.items() if k != "file"}
        if rest:
            raise ConfigError("gmm.file cannot be combined with inline gmm keys")
        return gmm_from_section(section(load_config(values["file"]), "gmm"))
    unknown = set(values) - {"weights", "means", "stds"}
    if unknown:
        raise ConfigError(f"unknown gmm keys: {', '.join(sorted(unknown))}")
    base = DEFAULT_GMM.to_dict()
    try:
        w = _numbers(values["weights"]) if "weights" in values else base["weights"]
        mu = [_numbers(r) for r in values["means"].split(";")] if "means" in values else base["means"]
        sd = [_numbers(r) for r in values["stds"].split(";")] if "stds" in values else base["stds"]
        return GmmSpec(np.array(w), np.array(mu), np.array(sd))
    except ValueError as exc:
        raise ConfigError(f"gmm: {exc}") from None


def _jsonable(obj):
    if isinstance(obj, np.ndarray):
        return obj.tolist()
    if isinstance(obj, tuple):
        return list(obj)
    raise TypeError(type(obj).__name__)


def config_hash(resolved: dict) -> str:
    blob = json.dumps(resolved, sort_keys=True, default=_jsonable, separators=(",", ":"))
    return hashlib.sha256(blob.encode()).hexdigest()[:16]


def flatten(resolved: dict, prefix: str = "") -> list[tuple[str, str]]:
    """Nested dict -> sorted dotted ``(key, value)`` pairs for headers."""
    out = []
    for key in sorted(resolved):
        value = resolved[key]
        name = f"{prefix}{key}"
        if isinstance(value, dict):
            out.extend(flatten(value, name + "."))
        else:
            out.append((name, json.dumps(value, default=_jsonable)))
    return out
