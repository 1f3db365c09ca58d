"""Snapshots, sidecars, tables and the run manifest.

A ``.fld`` snapshot is one JSON header line ``{"L", "label", "n"}`` (sorted keys)
followed by n^3 little-endian float64 samples in C order of the ij-indexed grid.
"""
import json
import logging
import os
from typing import Dict, List, Tuple

import numpy as np
import pandas as pd

from hartree_lab.errors import SizingError, StateFileError
from hartree_lab.spectral_grid import Field, make_grid

logger = logging.getLogger(__name__)

FLOAT_FORMAT = "%.12e"


def _ensure_parent(path: str):
    parent = os.path.dirname(path)
    if parent:
        os.makedirs(parent, exist_ok=True)


def sidecar_path(field_path: str) -> str:
    stem, _ = os.path.splitext(field_path)
    return stem + ".json"


def save_field(u: Field, path: str) -> str:
    _ensure_parent(path)
    header = json.dumps({"L": u.grid.half_width, "label": u.label, "n": u.grid.points_per_dim}, sort_keys=True)
    with open(path, "wb") as f:
        f.write(header.encode("utf-8") + b"\n")
        f.write(np.ascontiguousarray(u.values, dtype="<f8").tobytes(order="C"))
    return path


def load_field(path: str) -> Field:
    """Read a ``.fld`` snapshot.

    Raises:
        StateFileError: when the file is missing, the header is unreadable, or the
            payload does not hold exactly n^3 finite samples.
    """
    try:
        with open(path, "rb") as f:
            raw = f.read()
    except FileNotFoundError:
        raise StateFileError(f"state file not found: {path}", path=path)
    newline = raw.find(b"\n")
    if newline < 0:
        raise StateFileError(f"state file {path} has no header line", path=path)
    try:
        header = json.loads(raw[:newline].decode("utf-8"))
        grid = make_grid(float(header["L"]), int(header["n"]))
        label = str(header.get("label", ""))
    except (ValueError, KeyError, TypeError, SizingError) as e:
        raise StateFileError(f"state file {path} has a corrupt header: {e}", path=path)
    payload = raw[newline + 1:]
    expected = 8 * grid.points_per_dim ** 3
    if len(payload) != expected:
        raise StateFileError(f"state file {path} holds {len(payload)} bytes of samples, expected {expected}",
                             path=path)
    values = np.frombuffer(payload, dtype="<f8").reshape(grid.shape).astype(np.float64)
    try:
        return Field(grid, values, label)
    except ValueError as e:
        raise StateFileError(f"state file {path} is corrupt: {e}", path=path)


def write_json(payload: Dict, path: str) -> str:
    _ensure_parent(path)
    with open(path, "w", encoding="utf-8") as f:
        json.dump(payload, f, indent=2, sort_keys=True)
        f.write("\n")
    return path


def load_sidecar(path: str) -> Dict:
    try:
        with open(path, "r", encoding="utf-8") as f:
            payload = json.load(f)
    except FileNotFoundError:
        raise StateFileError(f"sidecar not found: {path}", path=path)
    except json.JSONDecodeError as e:
        raise StateFileError(f"sidecar {path} is not valid JSON: {e}", path=path)
    if not isinstance(payload, dict) or "family" not in payload:
        raise StateFileError(f"sidecar {path} does not describe a solved state", path=path)
    return payload


def save_result(result, out_dir: str, stem: str) -> Tuple[str, str]:
    """Write the state snapshot and its JSON sidecar; returns both paths."""
    field_path = os.path.join(out_dir, f"{stem}.fld")
    save_field(result.state, field_path)
    json_path = write_json(result.sidecar(), sidecar_path(field_path))
    return field_path, json_path


def load_state(path: str) -> Tuple[Field, Dict]:
    return load_field(path), load_sidecar(sidecar_path(path))


def write_csv(frame: pd.DataFrame, path: str) -> str:
    _ensure_parent(path)
    frame.to_csv(path, index=False, float_format=FLOAT_FORMAT)
    return path


def write_gnuplot_script(path: str, data_file: str, columns: Tuple[int, int], xlabel: str, ylabel: str,
                         title: str, logscale_y: bool = False) -> str:
    """Data-only plotting: a gnuplot script that reads the CSV next to it."""
    lines = [
        "set datafile separator ','",
        f"set title '{title}'",
        f"set xlabel '{xlabel}'",
        f"set ylabel '{ylabel}'",
        "set key outside",
    ]
    if logscale_y:
        lines.append("set logscale y")
    data = os.path.basename(data_file)
    x, y = columns
    lines.append(f"plot '{data}' every ::1 using {x}:{y} with linespoints notitle")
    _ensure_parent(path)
    with open(path, "w", encoding="utf-8") as f:
        f.write("\n".join(lines) + "\n")
    return path


class Manifest:
    """Artifacts written by one run, each with the hash of the configuration that produced it."""

    def __init__(self, out_dir: str, config_hash: str):
        self.out_dir = out_dir
        self.config_hash = config_hash
        self.entries: List[Dict] = []

    def add(self, path: str, kind: str) -> str:
        self.entries.append({
            "path": os.path.relpath(path, self.out_dir),
            "kind": kind,
            "config_hash": self.config_hash,
        })
        return path

    def write(self) -> str:
        path = os.path.join(self.out_dir, "manifest.json")
        manifest_path = os.path.relpath(path, self.out_dir)
        existing = {}
        if os.path.exists(path):
            try:
                with open(path, "r", encoding="utf-8") as f:
                    existing = {e["path"]: e for e in json.load(f).get("artifacts", [])}
            except (json.JSONDecodeError, KeyError, TypeError, AttributeError):
                logger.warning("replacing unreadable manifest %s", path)
        existing.update({e["path"]: e for e in self.entries})
        existing.pop(manifest_path, None)
        artifacts = [existing[key] for key in sorted(existing)]
        return write_json({"artifacts": artifacts}, path)
