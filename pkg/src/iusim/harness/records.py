"""CSV tables and JSON run manifests for study outputs."""
from __future__ import annotations

import csv
import hashlib
import io
import json
import math
from pathlib import Path

from ..data import _atomic_write


def _cell(v):
    if isinstance(v, float):
        return "nan" if math.isnan(v) else format(v, ".17g")
    if isinstance(v, bool):
        return "true" if v else "false"
    return "" if v is None else str(v)


def write_table(rows: list[dict], path, columns=None) -> None:
    if columns is None:
        columns = list(rows[0]) if rows else []
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(columns)
    for r in rows:
        w.writerow([_cell(r.get(c)) for c in columns])
    _atomic_write(path, buf.getvalue().encode("utf-8"))


def read_table(path) -> list[dict]:
    with open(path, newline="", encoding="utf-8") as fh:
        return list(csv.DictReader(fh))


def sha256_file(path) -> str:
    h = hashlib.sha256()
    with open(path, "rb") as fh:
        for chunk in iter(lambda: fh.read(1 << 16), b""):
            h.update(chunk)
    return h.hexdigest()


def write_run_manifest(path, seed: int, config: dict, inputs=()) -> dict:
    """Record seed, configuration and SHA-256 of every input file."""
    doc = {
        "seed": seed,
        "config": config,
        "input_hashes": {str(p): sha256_file(p) for p in inputs if Path(p).is_file()},
    }
    _atomic_write(path, (json.dumps(doc, indent=1, sort_keys=True, default=str) + "\n").encode("utf-8"))
    return doc
