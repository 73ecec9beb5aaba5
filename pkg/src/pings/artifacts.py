"""Text artifacts: '#'-prefixed metadata headers, sample files and
delimited tables.

Every file starts with the tool version, the command line, the seed and a
hash of the resolved configuration, followed by ``# key: value`` lines.
Sample rows are space-separated floats with 17 significant digits, which
round-trip float64 exactly.
"""

from __future__ import annotations

from pathlib import Path

import numpy as np

from . import __version__
from .config import config_hash, flatten

TOOL = "pings"


class ArtifactError(ValueError):
    pass


def header_lines(command: str, seed: int, resolved: dict, extra: dict | None = None) -> list[str]:
    lines = [f"# tool: {TOOL} {__version__}", f"# command: {command}", f"# seed: {seed}",
             f"# config_hash: {config_hash(resolved)}"]
    lines += [f"# config.{k}: {v}" for k, v in flatten(resolved)]
    for k, v in (extra or {}).items():
        lines.append(f"# {k}: {v}")
    return lines


def parse_header(lines) -> dict[str, str]:
    meta = {}
    for line in lines:
        if not line.startswith("#"):
            break
        body = line[1:].strip()
        if ":" in body:
            k, v = body.split(":", 1)
            meta[k.strip()] = v.strip()
    return meta


def format_row(values) -> str:
    return " ".join(f"{float(v):.17g}" for v in values)


def write_text(path, lines: list[str]) -> None:
    p = Path(path)
    if not p.parent.is_dir():
        raise ArtifactError(f"output directory {p.parent} does not exist")
    try:
        p.write_text("\n".join(lines) + "\n")
    except OSError as exc:
        raise ArtifactError(f"cannot write {p}: {exc.strerror}") from None


def write_samples(path, points: np.ndarray, header: list[str]) -> None:
    write_text(path, header + [format_row(row) for row in np.atleast_2d(points) if row.size])


def read_samples(path, dim: int | None = 3) -> tuple[np.ndarray, dict[str, str]]:
    """Return (points, header) and fail with the line number on bad rows."""
    p = Path(path)
    try:
        text = p.read_text()
    except OSError as exc:
        raise ArtifactError(f"cannot read {p}: {exc.strerror}") from None
    lines = text.splitlines()
    meta = parse_header(lines)
    rows = []
    for lineno, line in enumerate(lines, start=1):
        if not line.strip() or line.startswith("#"):
            continue
        try:
            row = [float(tok) for tok in line.split()]
        except ValueError:
            raise ArtifactError(f"{p}:{lineno}: non-numeric value in {line.strip()!r}") from None
        if dim is None:
            dim = len(row)
        if len(row) != dim:
            raise ArtifactError(f"{p}:{lineno}: expected {dim} columns, got {len(row)}")
        if not all(np.isfinite(row)):
            raise ArtifactError(f"{p}:{lineno}: non-finite value")
        rows.append(row)
    points = np.array(rows, dtype=float).reshape(-1, dim or 0)
    return points, meta


def write_table(path, columns: list[str], rows, header: list[str], delimiter: str = "\t") -> None:
    body = [delimiter.join(columns)]
    for row in rows:
        body.append(delimiter.join(v if isinstance(v, str) else f"{float(v):.17g}" if isinstance(v, float) else str(v)
                                   for v in row))
    write_text(path, header + body)


def read_table(path, delimiter: str = "\t") -> tuple[list[str], list[list[str]], dict[str, str]]:
    lines = Path(path).read_text().splitlines()
    meta = parse_header(lines)
    body = [ln for ln in lines if ln and not ln.startswith("#")]
    if not body:
        raise ArtifactError(f"{path}: no column header")
    cols = body[0].split(delimiter)
    rows = []
    for ln in body[1:]:
        fields = ln.split(delimiter)
        if len(fields) != len(cols):
            raise ArtifactError(f"{path}: row has {len(fields)} fields, expected {len(cols)}")
        rows.append(fields)
    return cols, rows, meta
