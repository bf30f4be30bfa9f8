"""CSV/JSON writers and run manifests.

CSV: UTF-8, LF line endings, one header row, floats at 17 significant
digits so values round-trip exactly. JSON reports carry ``schema_version``.
"""

from __future__ import annotations

import csv
import hashlib
import json
import math
from pathlib import Path
from typing import Mapping, Sequence

import numpy as np

from .errors import ConfigError

SCHEMA_VERSION = "1.0"


def _fmt(v) -> str:
    if isinstance(v, (bool, np.bool_)):
        return "1" if v else "0"
    if isinstance(v, (int, np.integer)):
        return str(int(v))
    if isinstance(v, str):
        return v
    return format(float(v), ".17g")


def write_csv(path, columns: Mapping[str, Sequence]) -> Path:
    """Write equal-length columns, in mapping order."""
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    names = list(columns)
    cols = [list(np.asarray(columns[n]).ravel()) if not isinstance(columns[n], list) else columns[n]
            for n in names]
    lengths = {len(c) for c in cols}
    if len(lengths) > 1:
        raise ValueError(f"CSV columns have different lengths {sorted(lengths)}")
    with path.open("w", encoding="utf-8", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(names)
        for row in zip(*cols):
            w.writerow([_fmt(v) for v in row])
    return path


def read_csv(path) -> dict[str, np.ndarray]:
    path = Path(path)
    if not path.exists():
        raise ConfigError(f"expected output file {path} is missing")
    with path.open(encoding="utf-8", newline="") as fh:
        rows = list(csv.reader(fh))
    header, body = rows[0], rows[1:]
    out = {}
    for i, name in enumerate(header):
        col = [r[i] for r in body]
        try:
            out[name] = np.array(col, dtype=float)
        except ValueError:  # text column, e.g. a regime label
            out[name] = np.array(col, dtype=str)
    return out


def _jsonable(obj):
    if isinstance(obj, dict):
        return {str(k): _jsonable(v) for k, v in obj.items()}
    if isinstance(obj, (list, tuple)):
        return [_jsonable(v) for v in obj]
    if isinstance(obj, np.ndarray):
        return [_jsonable(v) for v in obj.tolist()]
    if isinstance(obj, (np.bool_, bool)):
        return bool(obj)
    if isinstance(obj, (np.integer,)):
        return int(obj)
    if isinstance(obj, (float, np.floating)):
        v = float(obj)
        # JSON has no inf/nan; keep them readable as strings
        return v if math.isfinite(v) else str(v)
    return obj


def write_json(path, payload: dict) -> Path:
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    body = {"schema_version": SCHEMA_VERSION, **_jsonable(payload)}
    path.write_text(json.dumps(body, indent=2, sort_keys=False) + "\n", encoding="utf-8", newline="\n")
    return path


def read_json(path) -> dict:
    path = Path(path)
    if not path.exists():
        raise ConfigError(f"expected output file {path} is missing")
    return json.loads(path.read_text(encoding="utf-8"))


def file_sha256(path) -> str:
    return hashlib.sha256(Path(path).read_bytes()).hexdigest()


def config_hash(raw: dict) -> str:
    canon = json.dumps(_jsonable(raw), sort_keys=True, separators=(",", ":"))
    return hashlib.sha256(canon.encode("utf-8")).hexdigest()


def write_manifest(out_dir, command: str, raw_config: dict, files: Sequence[Path], extra: dict = None) -> Path:
    """Run manifest: echoed config, its content hash and hashes of every output."""
    out_dir = Path(out_dir)
    entries = {Path(f).relative_to(out_dir).as_posix(): file_sha256(f) for f in sorted(files)}
    payload = {
        "command": command,
        "config": raw_config,
        "config_hash": config_hash(raw_config),
        "outputs": entries,
    }
    if extra:
        payload.update(extra)
    return write_json(out_dir / "manifest.json", payload)


def field_columns(t: np.ndarray, x: np.ndarray, **fields: np.ndarray) -> dict[str, np.ndarray]:
    """Long-format (t, x, field...) columns from (M+1, n) arrays."""
    M1, n = len(t), len(x)
    cols = {"t": np.repeat(t, n), "x": np.tile(x, M1)}
    for name, f in fields.items():
        if f.shape != (M1, n):
            raise ValueError(f"field {name} has shape {f.shape}, expected {(M1, n)}")
        cols[name] = f.ravel()
    return cols


def columns_to_field(cols: Mapping[str, np.ndarray], name: str, M1: int, n: int) -> np.ndarray:
    f = np.asarray(cols[name], dtype=float)
    if f.size != M1 * n:
        raise ConfigError(f"column {name} has {f.size} values, expected {M1 * n}")
    return f.reshape(M1, n)
