"""CSV and manifest helpers shared by the command-line runners."""

from __future__ import annotations

import csv
import json
from pathlib import Path


def fmt(x: float) -> str:
    """Round-trip float formatting independent of locale."""
    return repr(float(x))


def write_csv(path, header, rows) -> None:
    with open(path, "w", newline="") as f:
        w = csv.writer(f, lineterminator="\n")
        w.writerow(header)
        for row in rows:
            w.writerow([fmt(x) if isinstance(x, float) else x for x in row])


def read_csv(path) -> list[dict[str, str]]:
    with open(path, newline="") as f:
        return list(csv.DictReader(f))


def write_manifest(out_dir, payload: dict) -> Path:
    path = Path(out_dir) / "manifest.json"
    path.write_text(json.dumps(payload, indent=2, sort_keys=True) + "\n")
    return path
