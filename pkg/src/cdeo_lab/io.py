"""CSV/JSON artifact helpers.

Floats are written with 17 significant digits so that reading a file back
reproduces every value bit for bit.
"""
from __future__ import annotations

import hashlib
import json
import math
from pathlib import Path
from typing import Any, Iterable, Mapping, Sequence


def fmt(v: Any) -> str:
    if isinstance(v, (bool,)):
        return "1" if v else "0"
    if isinstance(v, (int,)):
        return str(v)
    if isinstance(v, str):
        return v
    return "%.17g" % float(v)


def config_hash(config: Mapping[str, Any]) -> str:
    canon = json.dumps(config, sort_keys=True, separators=(",", ":"), default=str)
    return hashlib.sha256(canon.encode()).hexdigest()


def header_lines(meta: Mapping[str, Any] | None) -> list[str]:
    if not meta:
        return []
    return [f"# {k}: {json.dumps(v, sort_keys=True, default=str)}" for k, v in meta.items()]


def write_csv(path: str | Path, columns: Sequence[str], rows: Iterable[Sequence[Any]],
              meta: Mapping[str, Any] | None = None) -> Path:
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    lines = header_lines(meta)
    lines.append(",".join(columns))
    lines.extend(",".join(fmt(v) for v in row) for row in rows)
    path.write_text("\n".join(lines) + "\n")
    return path


def read_csv(path: str | Path) -> tuple[list[str], list[list[str]], dict[str, Any]]:
    """Returns ``(columns, rows, meta)``; values are left as strings."""
    meta: dict[str, Any] = {}
    columns: list[str] | None = None
    rows: list[list[str]] = []
    for line in Path(path).read_text().splitlines():
        if not line.strip():
            continue
        if line.startswith("#"):
            key, _, val = line[1:].strip().partition(":")
            try:
                meta[key.strip()] = json.loads(val)
            except json.JSONDecodeError:
                meta[key.strip()] = val.strip()
            continue
        parts = line.split(",")
        if columns is None:
            columns = parts
        else:
            rows.append(parts)
    if columns is None:
        raise ValueError(f"{path}: no header row")
    return columns, rows, meta


def _clean(obj: Any) -> Any:
    if isinstance(obj, float):
        return obj if math.isfinite(obj) else str(obj)
    if isinstance(obj, dict):
        return {k: _clean(v) for k, v in obj.items()}
    if isinstance(obj, (list, tuple)):
        return [_clean(v) for v in obj]
    if hasattr(obj, "item"):
        return _clean(obj.item())
    return obj


def write_json(path: str | Path, payload: Mapping[str, Any]) -> Path:
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    path.write_text(json.dumps(_clean(dict(payload)), indent=2, sort_keys=True) + "\n")
    return path
