"""Line-delimited JSON with an optional leading metadata record.

The first line of every file we write is ``{"_meta": {...}}`` carrying tool
version, config hash and seed; readers skip it. Keys are sorted and floats
use Python's shortest round-trip repr, so equal inputs give equal bytes.
"""

from __future__ import annotations

import json

from salcloud.errors import MalformedRecord

META_KEY = "_meta"


def dumps(record: dict) -> str:
    return json.dumps(record, sort_keys=True, separators=(",", ":"), allow_nan=False)


def write(path, records, meta: dict | None = None) -> None:
    with open(path, "w", encoding="utf-8", newline="\n") as fh:
        if meta is not None:
            fh.write(dumps({META_KEY: meta}) + "\n")
        for rec in records:
            fh.write(dumps(rec) + "\n")


def read(path):
    """Yield ``(line_no, record)`` for every data line (1-based)."""
    with open(path, encoding="utf-8") as fh:
        for line_no, line in enumerate(fh, start=1):
            if not line.strip():
                continue
            try:
                rec = json.loads(line)
            except json.JSONDecodeError as exc:
                raise MalformedRecord(f"invalid JSON ({exc.msg})", line_no) from None
            if not isinstance(rec, dict):
                raise MalformedRecord("record is not an object", line_no)
            if META_KEY in rec:
                continue
            yield line_no, rec


def read_meta(path) -> dict | None:
    with open(path, encoding="utf-8") as fh:
        first = fh.readline()
    try:
        rec = json.loads(first)
    except json.JSONDecodeError:
        return None
    return rec.get(META_KEY) if isinstance(rec, dict) else None
