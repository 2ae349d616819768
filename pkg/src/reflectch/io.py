"""Self-describing output files: JSON reports, CSV path dumps and run manifests.

Every file carries the config hash, the root seed and a version string.
Report payloads never contain wall-clock data, so identical runs produce
identical payload bytes; timing goes into the separate ``meta`` block.
"""

from __future__ import annotations

import csv
import hashlib
import json
import math
import subprocess
from pathlib import Path

import numpy as np

from . import __version__
from .spectral import GridSpec


def _plain(obj):
    """Convert numpy scalars/arrays and non-finite floats to JSON-safe values."""
    if isinstance(obj, dict):
        return {str(k): _plain(v) for k, v in obj.items()}
    if isinstance(obj, (list, tuple)):
        return [_plain(v) for v in obj]
    if isinstance(obj, np.ndarray):
        return _plain(obj.tolist())
    if isinstance(obj, (np.bool_,)):
        return bool(obj)
    if isinstance(obj, np.integer):
        return int(obj)
    if isinstance(obj, (float, np.floating)):
        x = float(obj)
        if math.isnan(x):
            return "nan"
        if math.isinf(x):
            return "inf" if x > 0 else "-inf"
        return x
    if hasattr(obj, "as_dict"):
        return _plain(obj.as_dict())
    return obj


def canonical_json(obj) -> str:
    return json.dumps(_plain(obj), sort_keys=True, separators=(",", ":"))


def config_hash(config: dict) -> str:
    return hashlib.sha256(canonical_json(config).encode()).hexdigest()[:16]


def version_string() -> str:
    try:
        out = subprocess.run(
            ["git", "describe", "--always", "--dirty", "--tags"],
            cwd=Path(__file__).resolve().parent,
            capture_output=True,
            text=True,
            timeout=5,
        )
        if out.returncode == 0 and out.stdout.strip():
            return f"{__version__}+{out.stdout.strip()}"
    except (OSError, subprocess.SubprocessError):
        pass
    return __version__


def report_document(kind: str, config: dict, seed: int, payload: dict, meta: dict | None = None) -> dict:
    return {
        "kind": kind,
        "version": version_string(),
        "seed": seed,
        "config_hash": config_hash(config),
        "config": _plain(config),
        "payload": _plain(payload),
        "meta": _plain(meta or {}),
    }


def write_json(path, document: dict):
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    path.write_text(json.dumps(_plain(document), indent=2, sort_keys=True) + "\n")
    return path


def read_json(path) -> dict:
    return json.loads(Path(path).read_text())


def _header_lines(grid: GridSpec | None, seed: int, config: dict) -> list[str]:
    lines = [f"# version: {version_string()}", f"# seed: {seed}", f"# config_hash: {config_hash(config)}"]
    if grid is not None:
        lines.insert(0, f"# grid: m_points={grid.m_points}")
    return lines


def write_paths_csv(path, values: np.ndarray, grid: GridSpec, seed: int, config: dict):
    """One row per path, one column per grid point."""
    values = np.atleast_2d(values)
    if values.shape[1] != grid.m_points:
        raise ValueError("values do not match the grid")
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    with path.open("w", newline="") as fh:
        for line in _header_lines(grid, seed, config):
            fh.write(line + "\n")
        w = csv.writer(fh)
        w.writerow([f"theta={t:.10g}" for t in grid.theta])
        for row in values:
            w.writerow([repr(float(x)) for x in row])
    return path


def read_paths_csv(path) -> tuple[np.ndarray, GridSpec, dict]:
    header = {}
    rows = []
    with Path(path).open() as fh:
        for line in fh:
            if line.startswith("#"):
                key, _, val = line[1:].partition(":")
                header[key.strip()] = val.strip()
                continue
            if line.startswith("theta="):
                continue
            rows.append([float(x) for x in line.strip().split(",")])
    m = int(header["grid"].split("=")[1])
    return np.array(rows), GridSpec(m), header


def write_table_csv(path, rows: list[dict], seed: int, config: dict):
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    with path.open("w", newline="") as fh:
        for line in _header_lines(None, seed, config):
            fh.write(line + "\n")
        if rows:
            w = csv.DictWriter(fh, fieldnames=list(rows[0]))
            w.writeheader()
            for r in rows:
                w.writerow({k: _plain(v) for k, v in r.items()})
    return path


def write_trajectory_csv(path, traj, seed: int, config: dict):
    """Rows of (time, a_0, ..., a_N)."""
    rows = [{"time": t, **{f"a{n}": a[n] for n in range(a.size)}} for t, a in zip(traj.times, traj.coeffs)]
    return write_table_csv(path, rows, seed, config)


def write_manifest(out_dir, command: str, config: dict, seed: int, files: list, status: dict):
    doc = {
        "command": command,
        "version": version_string(),
        "seed": seed,
        "config_hash": config_hash(config),
        "config": _plain(config),
        "files": [str(Path(f).name) for f in files],
        "status": _plain(status),
    }
    return write_json(Path(out_dir) / "manifest.json", doc)
