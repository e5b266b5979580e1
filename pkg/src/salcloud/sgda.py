"""Saliency-guided augmentation of a ground-truth sampling database.

Foreground objects are cropped from scenes, a classification dataset is
split from them, and each Easy/Moderate object gets an extra copy with its
most salient points removed. Originals are always kept.

Database file layout (version 1, all integers little-endian)::

    8 bytes   magic  b"SCGTDB\\x00\\x01"
    u32       format version
    u32       header length in bytes
    header    UTF-8 JSON: {"meta": {...}, "objects": [record, ...]}
    payload   float32 LE, 4 per point, objects concatenated in order

Each object record holds ``scene_id``, ``source_id``, ``class``,
``difficulty``, ``box`` (cx cy cz l w h yaw), ``num_points``, ``offset``
(first point's index in the payload) and ``provenance``.
"""

from __future__ import annotations

import hashlib
import json
import logging
import struct
from dataclasses import dataclass, field

import numpy as np

from salcloud.errors import DataError, EmptyInput
from salcloud.geom import OrientedBox, points_in_box
from salcloud.pointset import CLASSES, DIFFICULTIES, PointSample, class_id
from salcloud.saliency import DropSchedule, saliency_drop

log = logging.getLogger(__name__)

DB_MAGIC = b"SCGTDB\x00\x01"
DB_VERSION = 1
AUGMENT_LEVELS = ("Easy", "Moderate")


@dataclass
class GtObject:
    sample: PointSample
    box: OrientedBox
    scene_id: str
    provenance: dict = field(default_factory=lambda: {"kind": "original"})

    @property
    def label(self) -> int:
        return self.sample.label

    @property
    def difficulty(self) -> str:
        return self.sample.difficulty

    @property
    def is_original(self) -> bool:
        return self.provenance.get("kind") == "original"


@dataclass
class GtDatabase:
    objects: list = field(default_factory=list)
    meta: dict = field(default_factory=dict)

    def counts(self) -> dict:
        out = {c: 0 for c in CLASSES}
        for o in self.objects:
            out[CLASSES[o.label]] += 1
        return out

    def manifest(self) -> dict:
        by_level = {}
        by_kind = {}
        for o in self.objects:
            by_level[o.difficulty] = by_level.get(o.difficulty, 0) + 1
            kind = o.provenance.get("kind", "original")
            by_kind[kind] = by_kind.get(kind, 0) + 1
        return {
            "format": "salcloud-gtdb",
            "version": DB_VERSION,
            "num_objects": len(self.objects),
            "num_points": int(sum(o.sample.k for o in self.objects)),
            "per_class": self.counts(),
            "per_difficulty": dict(sorted(by_level.items())),
            "per_provenance": dict(sorted(by_kind.items())),
            "meta": self.meta,
        }


def extract_objects(scene_points, boxes, labels, difficulties, scene_id: str = "",
                    min_points: int = 20) -> list:
    """Crop each box's points from a scene, discarding sparse objects."""
    pts = np.asarray(scene_points)
    out = []
    for i, (box, label, diff) in enumerate(zip(boxes, labels, difficulties)):
        mask = points_in_box(box, pts[:, :3]) if len(pts) else np.zeros(0, dtype=bool)
        n = int(mask.sum())
        if n < min_points:
            log.debug("scene %s object %d: %d points < %d, discarded", scene_id, i, n, min_points)
            continue
        sample = PointSample(pts[mask], class_id(label), diff, f"{scene_id}_{i:03d}")
        out.append(GtObject(sample, box, scene_id))
    return out


def _hash_fraction(scene_id: str) -> float:
    digest = hashlib.sha256(scene_id.encode("utf-8")).digest()
    return int.from_bytes(digest[:8], "big") / 2 ** 64


def split_scenes(scene_ids, val_fraction: float = 0.5, train_ids=None, val_ids=None) -> dict:
    """Assign every scene id to "train", "val" or None (excluded).

    Explicit id lists win; otherwise a hash of the id decides, so the split
    depends only on the id itself.
    """
    out = {}
    if train_ids is not None or val_ids is not None:
        train_ids, val_ids = set(train_ids or ()), set(val_ids or ())
        overlap = train_ids & val_ids
        if overlap:
            raise DataError(f"scene ids in both splits: {sorted(overlap)[:5]}")
        for s in scene_ids:
            out[s] = "train" if s in train_ids else "val" if s in val_ids else None
        return out
    for s in scene_ids:
        out[s] = "val" if _hash_fraction(s) < val_fraction else "train"
    return out


def build_classification_dataset(objects, val_fraction: float = 0.5, train_ids=None, val_ids=None) -> dict:
    """Train/val manifest over object indices, split by scene id."""
    if not objects:
        raise EmptyInput("no objects to build a dataset from")
    assignment = split_scenes(sorted({o.scene_id for o in objects}), val_fraction, train_ids, val_ids)
    manifest = {"train": [], "val": [], "counts": {"train": {c: 0 for c in CLASSES}, "val": {c: 0 for c in CLASSES}},
                "split_rule": ("explicit" if train_ids is not None or val_ids is not None
                               else f"sha256(scene_id) < {val_fraction} -> val")}
    for i, o in enumerate(objects):
        split = assignment[o.scene_id]
        if split is None:
            continue
        manifest[split].append(i)
        manifest["counts"][split][CLASSES[o.label]] += 1
    return manifest


def augment_database(db: GtDatabase, model, sched: DropSchedule | None = None, seed: int = 0,
                     loss: str = "ce", freqs=None) -> GtDatabase:
    """Originals plus one saliency-dropped copy per Easy/Moderate original.

    Objects whose dropping fails are logged and skipped.
    """
    sched = sched or DropSchedule()
    augmented, skipped = [], []
    for idx, obj in enumerate(db.objects):
        if not obj.is_original or obj.difficulty not in AUGMENT_LEVELS:
            continue
        try:
            res = saliency_drop(model, obj.sample, sched, loss, freqs)
        except DataError as exc:
            log.warning("object %d (%s) not augmented: %s", idx, obj.sample.source_id, exc)
            skipped.append({"index": idx, "source_id": obj.sample.source_id, "reason": str(exc)})
            continue
        prov = {"kind": "saliency_augmented", "parent": idx, "schedule": sched.as_dict(),
                "seed": seed, "rounds": res.rounds, "remainder": res.remainder}
        sample = PointSample(res.sample.points, obj.label, obj.difficulty, obj.sample.source_id + "_sd")
        augmented.append(GtObject(sample, obj.box, obj.scene_id, prov))
    meta = dict(db.meta)
    meta["augmentation"] = {"schedule": sched.as_dict(), "seed": seed, "loss": loss,
                            "augmented": len(augmented), "skipped": skipped,
                            "levels": list(AUGMENT_LEVELS)}
    return GtDatabase(list(db.objects) + augmented, meta)


def _object_record(obj: GtObject, offset: int) -> dict:
    return {
        "scene_id": obj.scene_id,
        "source_id": obj.sample.source_id,
        "class": CLASSES[obj.label],
        "difficulty": obj.difficulty,
        "box": [float(v) for v in obj.box.as_array()],
        "num_points": obj.sample.k,
        "offset": offset,
        "provenance": obj.provenance,
    }


def database_bytes(db: GtDatabase) -> bytes:
    records, chunks, offset = [], [], 0
    for obj in db.objects:
        records.append(_object_record(obj, offset))
        chunks.append(np.asarray(obj.sample.points, dtype="<f4").tobytes())
        offset += obj.sample.k
    header = json.dumps({"meta": db.meta, "objects": records}, sort_keys=True,
                        separators=(",", ":")).encode("utf-8")
    return DB_MAGIC + struct.pack("<II", DB_VERSION, len(header)) + header + b"".join(chunks)


def write_database(db: GtDatabase, path, manifest_path=None) -> None:
    with open(path, "wb") as fh:
        fh.write(database_bytes(db))
    if manifest_path is not None:
        with open(manifest_path, "w", encoding="utf-8") as fh:
            json.dump(db.manifest(), fh, sort_keys=True, indent=2)
            fh.write("\n")


def parse_database(data: bytes) -> GtDatabase:
    if data[:8] != DB_MAGIC:
        raise DataError("not a ground-truth database (bad magic)")
    if len(data) < 16:
        raise DataError("truncated database header")
    version, header_len = struct.unpack("<II", data[8:16])
    if version != DB_VERSION:
        raise DataError(f"unsupported database version {version}")
    header_end = 16 + header_len
    try:
        header = json.loads(data[16:header_end].decode("utf-8"))
    except (UnicodeDecodeError, json.JSONDecodeError) as exc:
        raise DataError(f"corrupt database header: {exc}") from None
    payload = data[header_end:]
    total = sum(r["num_points"] for r in header["objects"])
    if len(payload) != total * 16:
        raise DataError(f"payload holds {len(payload)} bytes, expected {total * 16}")
    pts = np.frombuffer(payload, dtype="<f4").reshape(-1, 4)
    objects = []
    for r in header["objects"]:
        chunk = pts[r["offset"]:r["offset"] + r["num_points"]].astype(np.float64)
        sample = PointSample(chunk, r["class"], r["difficulty"], r["source_id"])
        objects.append(GtObject(sample, OrientedBox.from_array(r["box"]), r["scene_id"], r["provenance"]))
    return GtDatabase(objects, header["meta"])


def read_database(path) -> GtDatabase:
    with open(path, "rb") as fh:
        return parse_database(fh.read())


def difficulty_or_default(d) -> str:
    return d if d in DIFFICULTIES else "Unknown"
