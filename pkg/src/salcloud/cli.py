"""Command-line batch pipelines.

Every subcommand takes its parameters from built-in defaults, an optional
``--config`` file (YAML or JSON) and command-line flags, in increasing
precedence. The merged configuration is hashed; the hash, tool version and
seed are embedded in every artifact written.

Exit codes: 0 success, 1 usage/config error, 2 malformed data,
3 internal invariant violation.
"""

from __future__ import annotations

import argparse
import csv
import hashlib
import json
import logging
import sys
from pathlib import Path

import numpy as np
import yaml

from salcloud import __version__, jsonl
from salcloud.errors import ConfigError, DataError, EmptyInput, InvariantViolation
from salcloud.pointset import CLASSES

log = logging.getLogger("salcloud")

TOOL = "salcloud"
EXIT_OK, EXIT_CONFIG, EXIT_DATA, EXIT_INVARIANT = 0, 1, 2, 3

def _floats(text) -> list:
    if isinstance(text, (list, tuple)):
        return [float(v) for v in text]
    return [float(v) for v in str(text).split(",") if v.strip()]


def _bool(v) -> bool:
    if isinstance(v, bool):
        return v
    if str(v).lower() in ("1", "true", "yes", "on"):
        return True
    if str(v).lower() in ("0", "false", "no", "off"):
        return False
    raise ValueError(f"not a boolean: {v!r}")


# "in" must exist, "in?" must exist when given, "out" is created.
_COERCE = {"int": int, "float": float, "str": str, "bool": _bool, "floats": _floats,
           "in": str, "out": str, "in?": str}


def opt(kind, default=None, help="", required=False, choices=None):
    return {"kind": kind, "default": default, "help": help, "required": required, "choices": choices}


COMMANDS = {
    "make-synthetic": {
        "help": "write a synthetic KITTI tree, detection corpus or object database",
        "options": {
            "kind": opt("str", "kitti", "what to generate", choices=("kitti", "detections", "objects")),
            "out": opt("out", None, "output directory", required=True),
            "n": opt("int", 4, "scenes (kitti), frames (detections) or objects (objects)"),
            "planted": opt("int", 10, "accurate-but-low-confidence clusters (detections)"),
            "objects_per_scene": opt("int", 3, "objects per scene (kitti)"),
            "noise": opt("float", 0.03, "point jitter in metres (objects)"),
            "seed": opt("int", 0, "random seed"),
        },
    },
    "extract": {
        "help": "crop ground-truth objects from a KITTI-style tree into a database",
        "options": {
            "kitti_root": opt("in", None, "directory holding velodyne/, label_2/, calib/", required=True),
            "out": opt("out", None, "output directory", required=True),
            "min_points": opt("int", 20, "discard objects with fewer LiDAR points"),
            "val_fraction": opt("float", 0.5, "hash-split fraction of scenes sent to val"),
            "train_list": opt("in?", None, "file of train scene ids (explicit split)"),
            "val_list": opt("in?", None, "file of val scene ids (explicit split)"),
            "seed": opt("int", 0, "recorded seed (extraction is deterministic)"),
        },
    },
    "train-elite": {
        "help": "train the point classifier on a database split",
        "options": {
            "database": opt("in", None, "ground-truth database file", required=True),
            "dataset_manifest": opt("in", None, "train/val manifest", required=True),
            "out": opt("out", None, "output directory", required=True),
            "epochs": opt("int", 10),
            "learning_rate": opt("float", 0.01),
            "weight_decay": opt("float", 0.0002),
            "momentum": opt("float", 0.9),
            "batch_size": opt("int", 16),
            "loss": opt("str", "ce", choices=("ce", "wce")),
            "seed": opt("int", 0, "seed for initialisation and shuffling"),
        },
    },
    "saliency": {
        "help": "per-point saliency scores for database objects",
        "options": {
            "checkpoint": opt("in", None, "classifier checkpoint", required=True),
            "database": opt("in", None, "ground-truth database file", required=True),
            "out": opt("out", None, "output directory", required=True),
            "dataset_manifest": opt("in?", None, "manifest, needed when split is not 'all'"),
            "split": opt("str", "all", choices=("all", "train", "val")),
            "loss": opt("str", "ce", choices=("ce", "wce")),
            "csv": opt("bool", False, "also write one heatmap CSV per sample"),
            "seed": opt("int", 0, "recorded seed (scores are deterministic)"),
        },
    },
    "augment": {
        "help": "append saliency-dropped copies of Easy/Moderate objects to a database",
        "options": {
            "database": opt("in", None, "ground-truth database file", required=True),
            "checkpoint": opt("in", None, "classifier checkpoint", required=True),
            "out": opt("out", None, "output directory", required=True),
            "alpha": opt("float", 0.1),
            "beta": opt("float", 0.0),
            "drop_interval": opt("int", 5),
            "min_points": opt("int", 10),
            "loss": opt("str", "ce", choices=("ce", "wce")),
            "seed": opt("int", 0, "recorded in provenance"),
        },
    },
    "ccm": {
        "help": "confidence correction and NMS over a detection dump",
        "options": {
            "detections": opt("in", None, "detection dump (JSONL)", required=True),
            "out": opt("out", None, "output directory", required=True),
            "score_thres1": opt("float", 0.01),
            "score_thres2": opt("float", 0.45),
            "iou_thres": opt("float", 0.1),
            "delta_c": opt("float", 0.2),
            "iou_thres_missed": opt("float", 0.9),
            "neighbor_thres_missed": opt("int", 10),
            "iou_mode": opt("str", "3d", choices=("3d", "bev")),
            "include_self": opt("bool", True),
            "nms_iou": opt("float", 0.1),
            "seed": opt("int", 0, "recorded seed (correction is deterministic)"),
        },
    },
    "eval": {
        "help": "AP_R11 / AP_R40 per class and difficulty",
        "options": {
            "detections": opt("in", None, "detection dump (JSONL)", required=True),
            "gt": opt("in", None, "ground-truth dump (JSONL)", required=True),
            "out": opt("out", None, "output directory", required=True),
            "mode": opt("str", "3d", choices=("3d", "bev")),
            "iou_car": opt("float", 0.7),
            "iou_pedestrian": opt("float", 0.5),
            "iou_cyclist": opt("float", 0.5),
            "seed": opt("int", 0, "recorded seed (evaluation is deterministic)"),
        },
    },
    "dropexp": {
        "help": "accuracy under saliency drop versus random drop",
        "options": {
            "checkpoint": opt("in", None, "classifier checkpoint", required=True),
            "out": opt("out", None, "output directory", required=True),
            "database": opt("in?", None, "database to test on (else synthetic samples)"),
            "dataset_manifest": opt("in?", None, "manifest, needed when split is not 'all'"),
            "split": opt("str", "val", choices=("all", "train", "val")),
            "n_samples": opt("int", 300, "synthetic test samples when no database is given"),
            "noise": opt("float", 0.06, "synthetic point jitter"),
            "data_seed": opt("int", 1, "synthetic test-set seed"),
            "fractions": opt("floats", [0.0, 0.05, 0.1, 0.2, 0.4], "comma-separated drop fractions"),
            "repeats": opt("int", 10, "random-drop repeats per fraction"),
            "drop_interval": opt("int", 5),
            "min_points": opt("int", 10),
            "seed": opt("int", 0, "base seed for random drops"),
        },
    },
}


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        raise ConfigError(message)


def build_parser() -> argparse.ArgumentParser:
    p = _Parser(prog=TOOL, description="Saliency-guided point-cloud toolkit.")
    p.add_argument("--version", action="version", version=f"{TOOL} {__version__}")
    p.add_argument("--log-level", default="INFO", choices=("DEBUG", "INFO", "WARNING", "ERROR"))
    sub = p.add_subparsers(dest="command", parser_class=_Parser)
    for name, cmd in COMMANDS.items():
        sp = sub.add_parser(name, help=cmd["help"], description=cmd["help"])
        sp.add_argument("--config", help="YAML or JSON file of parameters")
        for key, o in cmd["options"].items():
            flag = "--" + key.replace("_", "-")
            if o["kind"] == "bool":
                sp.add_argument(flag, dest=key, action=argparse.BooleanOptionalAction, default=None,
                                help=f"{o['help']} (default {o['default']})".strip())
            else:
                sp.add_argument(flag, dest=key, default=None, choices=o["choices"],
                                help=f"{o['help']} (default {o['default']})".strip())
    return p


def load_config_file(path) -> dict:
    try:
        with open(path, encoding="utf-8") as fh:
            data = yaml.safe_load(fh)
    except OSError as exc:
        raise ConfigError(f"cannot read config {path}: {exc.strerror}") from None
    except yaml.YAMLError as exc:
        raise ConfigError(f"config {path} is not valid YAML/JSON: {exc}") from None
    if data is None:
        return {}
    if not isinstance(data, dict):
        raise ConfigError(f"config {path} must be a mapping")
    return data


def resolve_config(command: str, flags: dict, file_cfg: dict | None = None) -> tuple:
    """Merge defaults < file < flags. Returns (config, source per key).

    A config file may hold flat keys and per-command sections (keyed by the
    command name); sections for other commands are ignored.
    """
    options = COMMANDS[command]["options"]
    file_cfg = dict(file_cfg or {})
    section = file_cfg.pop(command, None) or {}
    for other in COMMANDS:
        file_cfg.pop(other, None)
    if not isinstance(section, dict):
        raise ConfigError(f"config section {command!r} must be a mapping")
    file_cfg.update(section)
    file_cfg = {k.replace("-", "_"): v for k, v in file_cfg.items()}
    unknown = sorted(set(file_cfg) - set(options))
    if unknown:
        raise ConfigError(f"unknown config keys for {command}: {unknown}")

    cfg, source = {}, {}
    for key, o in options.items():
        value, src = o["default"], "default"
        if key in file_cfg:
            value, src = file_cfg[key], "file"
        if flags.get(key) is not None:
            value, src = flags[key], "flag"
        if value is not None:
            try:
                value = _COERCE[o["kind"]](value)
            except (TypeError, ValueError):
                raise ConfigError(f"{key}: cannot interpret {value!r} as {o['kind']}") from None
            if o["choices"] and value not in o["choices"]:
                raise ConfigError(f"{key}: {value!r} not in {list(o['choices'])}")
        elif o["required"]:
            raise ConfigError(f"missing required parameter {key!r} (flag --{key.replace('_', '-')})")
        cfg[key], source[key] = value, src
    return cfg, source


def validate_paths(command: str, cfg: dict) -> None:
    for key, o in COMMANDS[command]["options"].items():
        if o["kind"] in ("in", "in?") and cfg.get(key) is not None and not Path(cfg[key]).exists():
            raise ConfigError(f"{key}: input path {cfg[key]} does not exist")


def config_hash(command: str, cfg: dict) -> str:
    # The output location does not change results, so it is left out.
    body = {k: v for k, v in cfg.items() if k != "out"}
    text = json.dumps({"command": command, "config": body}, sort_keys=True, separators=(",", ":"))
    return hashlib.sha256(text.encode("utf-8")).hexdigest()


def make_meta(command: str, cfg: dict) -> dict:
    return {"tool": TOOL, "version": __version__, "command": command,
            "config_hash": config_hash(command, cfg), "seed": cfg.get("seed")}


def _check(cond: bool, message: str) -> None:
    if not cond:
        raise InvariantViolation(message)


def _write_json(path: Path, obj) -> None:
    with open(path, "w", encoding="utf-8", newline="\n") as fh:
        json.dump(obj, fh, sort_keys=True, indent=2, allow_nan=False)
        fh.write("\n")


def _read_json(path) -> dict:
    try:
        with open(path, encoding="utf-8") as fh:
            return json.load(fh)
    except json.JSONDecodeError as exc:
        raise DataError(f"{path}: invalid JSON at line {exc.lineno}: {exc.msg}") from None


def _load_model(path):
    from salcloud.elitenet import model_from_dict

    try:
        return model_from_dict(_read_json(path))
    except (KeyError, TypeError, ValueError) as exc:
        raise DataError(f"{path}: bad checkpoint: {exc}") from None


def _read_ids(path) -> list:
    with open(path, encoding="utf-8") as fh:
        return [line.strip() for line in fh if line.strip()]


def _select(db, cfg: dict) -> list:
    """Database objects for cfg['split'] ('all' ignores the manifest)."""
    if cfg["split"] == "all":
        return list(db.objects)
    if cfg.get("dataset_manifest") is None:
        raise ConfigError(f"split {cfg['split']!r} needs --dataset-manifest")
    manifest = _read_json(cfg["dataset_manifest"])
    try:
        idx = manifest[cfg["split"]]
        return [db.objects[i] for i in idx]
    except (KeyError, IndexError, TypeError):
        raise DataError(f"{cfg['dataset_manifest']}: manifest does not match the database") from None


def _print_counts(counts: dict, title: str) -> None:
    print(title)
    for c in CLASSES:
        print(f"  {c}: {counts.get(c, 0)}")


# ---------------------------------------------------------------- commands


def cmd_make_synthetic(cfg: dict, meta: dict, out: Path) -> None:
    from salcloud import synthetic

    if cfg["kind"] == "kitti":
        synthetic.write_synthetic_kitti(out, n_scenes=cfg["n"], seed=cfg["seed"],
                                        objects_per_scene=cfg["objects_per_scene"])
        _write_json(out / "synthetic_meta.json", {"meta": meta})
        print(f"wrote {cfg['n']} scenes to {out}")
    elif cfg["kind"] == "detections":
        from salcloud.ccm import write_detections
        from salcloud.evaluation import write_gt

        frames, gt = synthetic.make_detection_corpus(cfg["n"], cfg["planted"], cfg["seed"])
        write_detections(out / "detections.jsonl", frames, meta)
        write_gt(out / "gt.jsonl", gt, meta)
        print(f"wrote {len(frames)} frames, {sum(len(f.detections) for f in frames)} detections")
    else:
        from salcloud.geom import OrientedBox
        from salcloud.sgda import GtDatabase, GtObject, build_classification_dataset, write_database

        samples = synthetic.make_object_dataset(cfg["n"], cfg["seed"], noise=cfg["noise"])
        objects = []
        for s in samples:
            lo, hi = s.points[:, :3].min(axis=0), s.points[:, :3].max(axis=0)
            c, size = (lo + hi) / 2, hi - lo + 0.02
            box = OrientedBox(*(float(v) for v in c), *(float(v) for v in size), 0.0)
            objects.append(GtObject(s, box, s.source_id))
        db = GtDatabase(objects, meta)
        write_database(db, out / "gt_database.bin", out / "gt_database_manifest.json")
        manifest = build_classification_dataset(objects)
        manifest["meta"] = meta
        _write_json(out / "dataset_manifest.json", manifest)
        _print_counts(db.counts(), f"wrote {len(objects)} objects")


def cmd_extract(cfg: dict, meta: dict, out: Path) -> None:
    from salcloud.kitti_io import camera_box_to_lidar, kitti_difficulty, read_calib_file, read_label_file, \
        read_velodyne_file
    from salcloud.sgda import GtDatabase, build_classification_dataset, difficulty_or_default, \
        extract_objects, write_database

    root = Path(cfg["kitti_root"])
    velo_dir = root / "velodyne"
    scenes = sorted(p.stem for p in velo_dir.glob("*.bin")) if velo_dir.is_dir() else []
    if not scenes:
        log.warning("no scans found under %s; writing an empty database", velo_dir)
    objects = []
    for scene_id in scenes:
        label_path, calib_path = root / "label_2" / f"{scene_id}.txt", root / "calib" / f"{scene_id}.txt"
        for p in (label_path, calib_path):
            if not p.exists():
                raise DataError(f"scene {scene_id}: missing {p}")
        pts = read_velodyne_file(velo_dir / f"{scene_id}.bin")
        try:
            calib = read_calib_file(calib_path)
        except DataError as exc:
            raise type(exc)(f"{calib_path}: {exc}") from None
        labels = [lab for lab in read_label_file(label_path) if lab.cls in CLASSES]
        boxes = [camera_box_to_lidar(lab, calib) for lab in labels]
        diffs = [difficulty_or_default(kitti_difficulty(lab)) for lab in labels]
        found = extract_objects(pts, boxes, [lab.cls for lab in labels], diffs, scene_id, cfg["min_points"])
        log.info("scene %s: %d labelled, %d kept", scene_id, len(labels), len(found))
        objects.extend(found)

    db = GtDatabase(objects, dict(meta, min_points=cfg["min_points"]))
    write_database(db, out / "gt_database.bin", out / "gt_database_manifest.json")
    train_ids = _read_ids(cfg["train_list"]) if cfg["train_list"] else None
    val_ids = _read_ids(cfg["val_list"]) if cfg["val_list"] else None
    try:
        manifest = build_classification_dataset(objects, cfg["val_fraction"], train_ids, val_ids)
    except EmptyInput:
        manifest = {"train": [], "val": [], "counts": {"train": {c: 0 for c in CLASSES},
                                                       "val": {c: 0 for c in CLASSES}},
                    "split_rule": "empty"}
    manifest["meta"] = meta
    manifest["database"] = "gt_database.bin"
    _write_json(out / "dataset_manifest.json", manifest)
    _check(len(manifest["train"]) + len(manifest["val"]) <= len(objects), "split holds more objects than exist")
    _print_counts(db.counts(), f"extracted {len(objects)} objects from {len(scenes)} scenes")


def cmd_train_elite(cfg: dict, meta: dict, out: Path) -> None:
    from salcloud.elitenet import TrainConfig, evaluate, init_model, save_model, train
    from salcloud.sgda import read_database

    db = read_database(cfg["database"])
    manifest = _read_json(cfg["dataset_manifest"])
    try:
        train_set = [db.objects[i].sample for i in manifest["train"]]
        val_set = [db.objects[i].sample for i in manifest.get("val", [])]
    except (KeyError, IndexError, TypeError):
        raise DataError(f"{cfg['dataset_manifest']}: manifest does not match the database") from None
    try:
        tcfg = TrainConfig(cfg["epochs"], cfg["learning_rate"], cfg["weight_decay"], cfg["momentum"],
                           cfg["batch_size"], cfg["seed"], cfg["loss"])
    except ValueError as exc:
        raise ConfigError(str(exc)) from None
    result = train(init_model(cfg["seed"]), train_set, tcfg)
    train_rep = evaluate(result.model, train_set)
    val_rep = evaluate(result.model, val_set) if val_set else None
    save_model(result.model, out / "elite_model.json", dict(meta, train_config=cfg_public(cfg)))
    _write_json(out / "metrics.json", {
        "meta": meta, "loss_history": result.loss_history, "n_train": len(train_set), "n_val": len(val_set),
        "train": train_rep.as_dict(), "val": val_rep.as_dict() if val_rep else None,
    })
    print(f"train accuracy {train_rep.accuracy:.4f} ({len(train_set)} samples)")
    if val_rep:
        print(f"val accuracy {val_rep.accuracy:.4f} ({len(val_set)} samples)")


def cmd_saliency(cfg: dict, meta: dict, out: Path) -> None:
    from salcloud.saliency import dataset_frequencies, saliency_scores
    from salcloud.sgda import read_database

    model = _load_model(cfg["checkpoint"])
    objects = _select(read_database(cfg["database"]), cfg)
    samples = [o.sample for o in objects]
    freqs = dataset_frequencies(samples) if cfg["loss"] == "wce" and samples else None
    records, skipped = [], []
    heat_dir = out / "heatmaps"
    if cfg["csv"]:
        heat_dir.mkdir(exist_ok=True)
    for i, s in enumerate(samples):
        try:
            scores = saliency_scores(model, s, cfg["loss"], freqs)
        except DataError as exc:
            log.warning("sample %d (%s) skipped: %s", i, s.source_id, exc)
            skipped.append({"index": i, "source_id": s.source_id, "reason": str(exc)})
            continue
        _check(len(scores) == s.k, "score count differs from point count")
        records.append({"index": i, "source_id": s.source_id, "label": CLASSES[s.label],
                        "scores": [float(v) for v in scores]})
        if cfg["csv"]:
            with open(heat_dir / f"{i:05d}_{s.source_id}.csv", "w", newline="", encoding="utf-8") as fh:
                w = csv.writer(fh, lineterminator="\n")
                w.writerow(["x", "y", "z", "intensity", "saliency"])
                for p, v in zip(s.points, scores):
                    w.writerow([repr(float(p[0])), repr(float(p[1])), repr(float(p[2])), repr(float(p[3])),
                                repr(float(v))])
    jsonl.write(out / "saliency.jsonl", records, dict(meta, skipped=skipped))
    print(f"scored {len(records)} samples, skipped {len(skipped)}")


def cmd_augment(cfg: dict, meta: dict, out: Path) -> None:
    from salcloud.saliency import DropSchedule, dataset_frequencies
    from salcloud.sgda import augment_database, read_database, write_database

    model = _load_model(cfg["checkpoint"])
    db = read_database(cfg["database"])
    try:
        sched = DropSchedule(cfg["alpha"], cfg["beta"], cfg["drop_interval"], cfg["min_points"])
    except ValueError as exc:
        raise ConfigError(str(exc)) from None
    freqs = dataset_frequencies([o.sample for o in db.objects]) if cfg["loss"] == "wce" and db.objects else None
    db.meta = dict(db.meta, run=meta)
    aug = augment_database(db, model, sched, cfg["seed"], cfg["loss"], freqs)
    n_new = aug.meta["augmentation"]["augmented"]
    _check(len(aug.objects) == len(db.objects) + n_new, "augmented database lost objects")
    write_database(aug, out / "gt_database_aug.bin", out / "gt_database_aug_manifest.json")
    _print_counts(aug.counts(), f"{len(db.objects)} originals + {n_new} augmented")


def cmd_ccm(cfg: dict, meta: dict, out: Path) -> None:
    from salcloud.ccm import CcmParams, read_detections, result_records, run_pipeline

    try:
        params = CcmParams(cfg["score_thres1"], cfg["score_thres2"], cfg["iou_thres"], cfg["delta_c"],
                           cfg["iou_thres_missed"], cfg["neighbor_thres_missed"], iou_mode=cfg["iou_mode"],
                           include_self=cfg["include_self"])
    except ValueError as exc:
        raise ConfigError(str(exc)) from None
    frames = read_detections(cfg["detections"])
    results, events = run_pipeline(frames, params, cfg["nms_iou"])
    records = result_records(results)
    for r in records:
        _check(r["rectified_score"] > params.score_thres2, "kept box below the final threshold")
    summary = {
        "frames": len(frames),
        "input_boxes": sum(len(f.detections) for f in frames),
        "kept": len(records),
        "rescued_boxes": sum(e["event"] == "rescue" for e in events),
        "rescued_final": sum(r["audit"]["rescued"] for r in records),
        "dropped_stage1": sum(e["event"] == "drop_stage1" for e in events),
        "dropped_score": sum(e["event"] == "drop_score" for e in events),
        "nms_suppressed": sum(e["event"] == "nms_suppress" for e in events),
    }
    jsonl.write(out / "corrected.jsonl", records, meta)
    jsonl.write(out / "audit.jsonl", events + [{"summary": summary}], meta)
    print(" ".join(f"{k}={v}" for k, v in summary.items()))


def cmd_eval(cfg: dict, meta: dict, out: Path) -> None:
    from salcloud.evaluation import MatchConfig, evaluate_frames, read_gt, read_scored_detections, \
        write_ap_csv, write_pr_csv

    try:
        mcfg = MatchConfig({0: cfg["iou_car"], 1: cfg["iou_pedestrian"], 2: cfg["iou_cyclist"]}, cfg["mode"])
    except ValueError as exc:
        raise ConfigError(str(exc)) from None
    gt = read_gt(cfg["gt"])
    dets = read_scored_detections(cfg["detections"])
    rows = evaluate_frames(dets, gt, mcfg)
    comment = json.dumps(meta, sort_keys=True, separators=(",", ":"))
    write_ap_csv(out / "ap.csv", rows, comment)
    write_pr_csv(out / "pr.csv", rows, comment)
    for r in rows:
        if r.n_gt:
            print(f"{CLASSES[r.label]:<10} {r.bucket:<8} AP_R11={r.ap[11]:7.2f} AP_R40={r.ap[40]:7.2f} "
                  f"(gt {r.n_gt}, det {r.n_det})")


def cmd_dropexp(cfg: dict, meta: dict, out: Path) -> None:
    from salcloud.experiments import drop_experiment
    from salcloud.sgda import read_database
    from salcloud.synthetic import make_object_dataset

    model = _load_model(cfg["checkpoint"])
    if cfg["database"]:
        samples = [o.sample for o in _select(read_database(cfg["database"]), cfg)]
    else:
        samples = make_object_dataset(cfg["n_samples"], cfg["data_seed"], noise=cfg["noise"], prefix="test")
    if not samples:
        raise EmptyInput("no samples to run the drop experiment on")
    for f in cfg["fractions"]:
        if not 0.0 <= f < 1.0:
            raise ConfigError(f"drop fraction {f} outside [0, 1)")
    rows = drop_experiment(model, samples, cfg["fractions"], cfg["repeats"], cfg["seed"],
                           cfg["drop_interval"], cfg["min_points"])
    with open(out / "dropexp.csv", "w", newline="", encoding="utf-8") as fh:
        fh.write("# " + json.dumps(meta, sort_keys=True, separators=(",", ":")) + "\n")
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(["fraction", "method", "accuracy", "accuracy_std"] + [f"acc_{c}" for c in CLASSES]
                   + ["repeats", "points_dropped", "seed"])
        for r in rows:
            per = ["" if np.isnan(a) else repr(round(a, 6)) for a in r.per_class]
            w.writerow([r.fraction, r.method, repr(round(r.accuracy, 6)), repr(round(r.accuracy_std, 6))]
                       + per + [r.repeats, r.points_dropped, cfg["seed"]])
    for r in rows:
        print(f"{r.fraction:5.2f} {r.method} acc={r.accuracy:.4f}")


HANDLERS = {
    "make-synthetic": cmd_make_synthetic,
    "extract": cmd_extract,
    "train-elite": cmd_train_elite,
    "saliency": cmd_saliency,
    "augment": cmd_augment,
    "ccm": cmd_ccm,
    "eval": cmd_eval,
    "dropexp": cmd_dropexp,
}


def cfg_public(cfg: dict) -> dict:
    return {k: v for k, v in cfg.items() if k != "out"}


def run(argv=None) -> int:
    args = build_parser().parse_args(argv)
    logging.basicConfig(level=args.log_level, stream=sys.stderr, format="%(levelname)s %(name)s: %(message)s")
    if args.command is None:
        raise ConfigError("no command given (see --help)")
    flags = {k: v for k, v in vars(args).items() if k not in ("command", "config", "log_level")}
    file_cfg = load_config_file(args.config) if args.config else {}
    cfg, source = resolve_config(args.command, flags, file_cfg)
    for key in sorted(cfg):
        log.info("config %s = %r (%s)", key, cfg[key], source[key])
    validate_paths(args.command, cfg)
    out = Path(cfg["out"])
    out.mkdir(parents=True, exist_ok=True)
    meta = make_meta(args.command, cfg)
    HANDLERS[args.command](cfg, meta, out)
    return EXIT_OK


def main(argv=None) -> int:
    try:
        return run(argv)
    except ConfigError as exc:
        print(f"{TOOL}: error: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    except DataError as exc:
        print(f"{TOOL}: malformed data: {exc}", file=sys.stderr)
        return EXIT_DATA
    except OSError as exc:
        print(f"{TOOL}: cannot read input: {exc}", file=sys.stderr)
        return EXIT_DATA
    except InvariantViolation as exc:
        print(f"{TOOL}: invariant violated: {exc}", file=sys.stderr)
        return EXIT_INVARIANT


if __name__ == "__main__":
    sys.exit(main())
