"""Readers for saoi-sim output directories.

Everything here is file-format plumbing: episode CSVs, summary.csv, and
manifest.json are parsed verbatim and validated, never recomputed. All
failure modes raise PlotDataError with a message naming the missing file
or column.
"""

from __future__ import annotations

import csv
import json
import os
import re
from dataclasses import dataclass

import numpy as np

EXPECTED_FILES = ("summary.csv, manifest.json, and per-episode "
                  "<scheme>_<seed>.csv logs written by saoi-sim")

_EPISODE_RE = re.compile(r"(.+)_(\d+)\.csv$")


class PlotDataError(Exception):
    """Input directory does not contain what the requested figure needs."""


@dataclass
class Cell:
    """One (scheme, seed) episode log plus its manifest-side metadata."""

    scheme: str
    seed: int
    path: str
    gu_pos: list | None  # [[x, y], ...] static GU positions, if recorded


def load_episode(path: str) -> dict[str, np.ndarray]:
    """Parse one per-slot episode CSV into {column name: float array}."""
    if not os.path.isfile(path):
        raise PlotDataError(f"{path} not found; expected {EXPECTED_FILES}")
    with open(path, newline="") as fh:
        reader = csv.reader(fh)
        header = next(reader, None)
        rows = [[float(x) for x in row] for row in reader]
    if not header or not rows:
        raise PlotDataError(f"{path}: no data rows")
    data = np.asarray(rows, dtype=float)
    return {name: data[:, j] for j, name in enumerate(header)}


def require_columns(cols: dict, needed, path: str) -> None:
    for name in needed:
        if name not in cols:
            raise PlotDataError(f"{path}: missing column '{name}'")


def indexed_columns(cols: dict[str, np.ndarray], prefix: str) -> list[np.ndarray]:
    """All arrays named prefix0, prefix1, ... in index order."""
    out = []
    while f"{prefix}{len(out)}" in cols:
        out.append(cols[f"{prefix}{len(out)}"])
    return out


def discover(in_dir: str):
    """Locate the manifest (if any) and every episode cell under in_dir.

    Prefers manifest.json (which keeps the run's scheme order and carries
    GU positions); falls back to filename scanning for bare CSV folders.
    """
    if not os.path.isdir(in_dir):
        raise PlotDataError(f"{in_dir} is not a directory; expected a "
                            f"saoi-sim output directory with {EXPECTED_FILES}")
    manifest = None
    manifest_path = os.path.join(in_dir, "manifest.json")
    if os.path.isfile(manifest_path):
        with open(manifest_path) as fh:
            manifest = json.load(fh)

    cells: list[Cell] = []
    if manifest is not None and manifest.get("cells"):
        for c in manifest["cells"]:
            cells.append(Cell(str(c["scheme"]), int(c["seed"]),
                              os.path.join(in_dir, c["file"]),
                              c.get("gu_pos")))
    else:
        for name in sorted(os.listdir(in_dir)):
            match = _EPISODE_RE.fullmatch(name)
            if match and name != "summary.csv":
                cells.append(Cell(match.group(1), int(match.group(2)),
                                  os.path.join(in_dir, name), None))
    if not cells:
        raise PlotDataError(f"no episode logs found in {in_dir}; expected "
                            f"{EXPECTED_FILES}")
    return manifest, cells


def load_summary(in_dir: str, needed) -> tuple[list[dict], str]:
    """summary.csv as a list of string-valued row dicts, plus its path."""
    path = os.path.join(in_dir, "summary.csv")
    if not os.path.isfile(path):
        raise PlotDataError(f"{path} not found; expected {EXPECTED_FILES} "
                            f"in {in_dir}")
    with open(path, newline="") as fh:
        reader = csv.DictReader(fh)
        header = reader.fieldnames or []
        for name in needed:
            if name not in header:
                raise PlotDataError(f"{path}: missing column '{name}'")
        rows = list(reader)
    if not rows:
        raise PlotDataError(f"{path}: no data rows")
    return rows, path
