import csv
import json

import numpy as np
import pytest

from cli_helpers import sample_set, write_hand_eval, write_object_db, write_rescue_dump, write_scene
from salcloud import jsonl
from salcloud.cli import config_hash, main, resolve_config
from salcloud.elitenet import load_model, save_model
from salcloud.errors import ConfigError
from salcloud.pointset import PointSample
from salcloud.saliency import saliency_scores
from salcloud.sgda import read_database


@pytest.fixture
def model_path(tmp_path, trained):
    path = tmp_path / "model.json"
    save_model(trained[0], path)
    return path


def test_no_command_and_bad_flags(capsys):
    assert main([]) == 1
    assert main(["ccm", "--detections"]) == 1
    assert main(["eval", "--mode", "2d", "--detections", "a", "--gt", "b", "--out", "c"]) == 1


def test_config_precedence(tmp_path):
    cfg, src = resolve_config("ccm", {"delta_c": "0.1", "out": "o", "detections": "d"},
                              {"delta_c": 0.3, "score_thres2": 0.5, "ccm": {"nms_iou": 0.2}, "eval": {"mode": "x"}})
    assert (cfg["delta_c"], src["delta_c"]) == (0.1, "flag")
    assert (cfg["score_thres2"], src["score_thres2"]) == (0.5, "file")
    assert (cfg["nms_iou"], src["nms_iou"]) == (0.2, "file")
    assert (cfg["iou_thres"], src["iou_thres"]) == (0.1, "default")
    with pytest.raises(ConfigError):
        resolve_config("ccm", {"out": "o", "detections": "d"}, {"bogus": 1})
    h1 = config_hash("ccm", dict(cfg, out="a"))
    assert h1 == config_hash("ccm", dict(cfg, out="b")) != config_hash("ccm", dict(cfg, delta_c=0.0))


def test_config_file(tmp_path):
    write_rescue_dump(tmp_path / "d.jsonl")
    (tmp_path / "c.yaml").write_text(f"detections: {tmp_path / 'd.jsonl'}\nccm:\n  delta_c: 0.0\n")
    assert main(["ccm", "--config", str(tmp_path / "c.yaml"), "--out", str(tmp_path / "o")]) == 0
    assert [r for _, r in jsonl.read(tmp_path / "o" / "corrected.jsonl")] == []
    (tmp_path / "bad.yaml").write_text("[1, 2]\n")
    assert main(["ccm", "--config", str(tmp_path / "bad.yaml"), "--out", str(tmp_path / "o")]) == 1


def test_extract(tmp_path, rng, capsys):
    root = tmp_path / "kitti"
    write_scene(root, "000000", [("Car", 50), ("Pedestrian", 40)], rng)
    write_scene(root, "000001", [("Cyclist", 30), ("Car", 5)], rng)
    assert main(["extract", "--kitti-root", str(root), "--out", str(tmp_path / "db")]) == 0
    out = capsys.readouterr().out
    assert "Car: 1" in out and "Pedestrian: 1" in out and "Cyclist: 1" in out
    db = read_database(tmp_path / "db" / "gt_database.bin")
    assert len(db.objects) == 3 and db.meta["seed"] == 0 and db.meta["min_points"] == 20
    manifest = json.loads((tmp_path / "db" / "gt_database_manifest.json").read_text())
    assert manifest["per_class"] == {"Car": 1, "Pedestrian": 1, "Cyclist": 1}
    ds = json.loads((tmp_path / "db" / "dataset_manifest.json").read_text())
    assert sorted(ds["train"] + ds["val"]) == [0, 1, 2] and "config_hash" in ds["meta"]


def test_extract_empty_and_malformed(tmp_path, rng, capsys, caplog):
    (tmp_path / "empty" / "velodyne").mkdir(parents=True)
    assert main(["extract", "--kitti-root", str(tmp_path / "empty"), "--out", str(tmp_path / "o")]) == 0
    assert "no scans found" in caplog.text
    assert read_database(tmp_path / "o" / "gt_database.bin").objects == []
    root = tmp_path / "kitti"
    write_scene(root, "000000", [("Car", 50)], rng)
    (root / "label_2" / "000000.txt").write_text("Car 0 0 0 1 2 3\n")
    assert main(["extract", "--kitti-root", str(root), "--out", str(tmp_path / "o2")]) == 2
    assert "000000.txt:1" in capsys.readouterr().err
    assert main(["extract", "--kitti-root", str(tmp_path / "missing"), "--out", str(tmp_path / "o3")]) == 1


def test_train_elite(tmp_path, capsys):
    assert main(["make-synthetic", "--kind", "objects", "--n", "200", "--out", str(tmp_path / "s")]) == 0
    args = ["train-elite", "--database", str(tmp_path / "s" / "gt_database.bin"),
            "--dataset-manifest", str(tmp_path / "s" / "dataset_manifest.json")]
    assert main(args + ["--out", str(tmp_path / "m")]) == 0
    metrics = json.loads((tmp_path / "m" / "metrics.json").read_text())
    assert metrics["train"]["accuracy"] >= 0.95 and metrics["meta"]["seed"] == 0
    assert len(metrics["loss_history"]) == 11
    assert "train accuracy" in capsys.readouterr().out
    assert main(args + ["--out", str(tmp_path / "m2")]) == 0
    assert (tmp_path / "m" / "elite_model.json").read_bytes() == (tmp_path / "m2" / "elite_model.json").read_bytes()
    assert main(["train-elite", "--database", str(tmp_path / "s" / "gt_database.bin"),
                 "--dataset-manifest", str(tmp_path / "nope.json"), "--out", str(tmp_path / "m3")]) == 1
    (tmp_path / "empty.json").write_text('{"train": [], "val": []}')
    assert main(["train-elite", "--database", str(tmp_path / "s" / "gt_database.bin"),
                 "--dataset-manifest", str(tmp_path / "empty.json"), "--out", str(tmp_path / "m4")]) == 2


def test_saliency(tmp_path, model_path, trained, caplog):
    s = sample_set(1)[0]
    write_object_db(tmp_path / "db.bin", [s])
    assert main(["saliency", "--checkpoint", str(model_path), "--database", str(tmp_path / "db.bin"),
                 "--out", str(tmp_path / "o"), "--csv"]) == 0
    recs = [r for _, r in jsonl.read(tmp_path / "o" / "saliency.jsonl")]
    assert len(recs) == 1
    stored = read_database(tmp_path / "db.bin").objects[0].sample
    np.testing.assert_array_equal(recs[0]["scores"], saliency_scores(load_model(model_path), stored))
    rows = list(csv.reader(open(next((tmp_path / "o" / "heatmaps").iterdir()))))
    assert rows[0] == ["x", "y", "z", "intensity", "saliency"] and len(rows) == s.k + 1
    degenerate = PointSample(np.tile([1.0, 2, 3, 0.5], (12, 1)), 0, "Easy", "flat")
    write_object_db(tmp_path / "db2.bin", [degenerate, s])
    assert main(["saliency", "--checkpoint", str(model_path), "--database", str(tmp_path / "db2.bin"),
                 "--out", str(tmp_path / "o2")]) == 0
    assert len([r for _, r in jsonl.read(tmp_path / "o2" / "saliency.jsonl")]) == 1
    meta = jsonl.read_meta(tmp_path / "o2" / "saliency.jsonl")
    assert meta["skipped"][0]["source_id"] == "flat"
    assert "(flat) skipped" in caplog.text


def test_augment(tmp_path, model_path):
    s = sample_set(1)[0]
    for diff, expected in (("Easy", 2), ("Hard", 1)):
        write_object_db(tmp_path / f"{diff}.bin", [s], diff)
        out = tmp_path / f"o{diff}"
        assert main(["augment", "--database", str(tmp_path / f"{diff}.bin"), "--checkpoint", str(model_path),
                     "--out", str(out), "--alpha", "0.2"]) == 0
        db = read_database(out / "gt_database_aug.bin")
        assert len(db.objects) == expected
    assert db.meta["run"]["seed"] == 0
    assert main(["augment", "--database", str(tmp_path / "Easy.bin"), "--checkpoint", str(model_path),
                 "--out", str(tmp_path / "bad"), "--drop-interval", "0"]) == 1


def test_ccm(tmp_path, capsys):
    write_rescue_dump(tmp_path / "d.jsonl")
    assert main(["ccm", "--detections", str(tmp_path / "d.jsonl"), "--out", str(tmp_path / "o")]) == 0
    audit = [r for _, r in jsonl.read(tmp_path / "o" / "audit.jsonl")]
    assert audit[-1]["summary"]["rescued_final"] == 1 and audit[-1]["summary"]["kept"] == 1
    assert main(["ccm", "--detections", str(tmp_path / "d.jsonl"), "--out", str(tmp_path / "o0"),
                 "--delta-c", "0"]) == 0
    assert [r for _, r in jsonl.read(tmp_path / "o0" / "corrected.jsonl")] == []
    (tmp_path / "empty.jsonl").write_text("")
    assert main(["ccm", "--detections", str(tmp_path / "empty.jsonl"), "--out", str(tmp_path / "oe")]) == 0
    assert [r for _, r in jsonl.read(tmp_path / "oe" / "corrected.jsonl")] == []
    with open(tmp_path / "d.jsonl", "a") as fh:
        fh.write("{not json\n")
    capsys.readouterr()
    assert main(["ccm", "--detections", str(tmp_path / "d.jsonl"), "--out", str(tmp_path / "o1")]) == 2
    assert "line 14" in capsys.readouterr().err


def ap_rows(path):
    lines = path.read_text().splitlines()
    assert lines[0].startswith("# ")
    return list(csv.DictReader(lines[1:]))


def test_eval(tmp_path, capsys):
    write_hand_eval(tmp_path, perfect=True)
    assert main(["eval", "--detections", str(tmp_path / "det.jsonl"), "--gt", str(tmp_path / "gt.jsonl"),
                 "--out", str(tmp_path / "o")]) == 0
    rows = [r for r in ap_rows(tmp_path / "o" / "ap.csv") if r["class"] == "Car"]
    assert all(r["AP_R11"] == "100.0" and r["AP_R40"] == "100.0" for r in rows)
    write_hand_eval(tmp_path, perfect=False)
    assert main(["eval", "--detections", str(tmp_path / "det.jsonl"), "--gt", str(tmp_path / "gt.jsonl"),
                 "--out", str(tmp_path / "o2")]) == 0
    rows = [r for r in ap_rows(tmp_path / "o2" / "ap.csv") if r["class"] == "Car"]
    assert all(r["AP_R11"] == "0.0" and r["AP_R40"] == "0.0" for r in rows)
    jsonl.write(tmp_path / "det.jsonl", [{"frame_id": "zzz", "class": "Car", "box": [0, 0, 0, 1, 1, 1, 0],
                                          "confidence": 0.5}])
    assert main(["eval", "--detections", str(tmp_path / "det.jsonl"), "--gt", str(tmp_path / "gt.jsonl"),
                 "--out", str(tmp_path / "o3")]) == 2


def test_eval_hand_case(tmp_path):
    from salcloud.evaluation import GtBox, write_gt
    from salcloud.geom import OrientedBox

    gts = [OrientedBox(10 * i, 0, 0, 4, 1.7, 1.5, 0) for i in range(10)]
    far = [OrientedBox(10 * i, 50, 0, 4, 1.7, 1.5, 0) for i in range(10)]
    flags = [True] * 5 + [False] * 5 + [False, True] * 5
    dets, t, f = [], iter(gts), iter(far)
    for k, tp in enumerate(flags):
        box = next(t) if tp else next(f)
        dets.append({"frame_id": "f", "class": "Car", "box": [float(v) for v in box.as_array()],
                     "confidence": 1.0 - 0.01 * k})
    write_gt(tmp_path / "gt.jsonl", {"f": [GtBox(b, 0, "Easy") for b in gts]})
    jsonl.write(tmp_path / "det.jsonl", dets)
    assert main(["eval", "--detections", str(tmp_path / "det.jsonl"), "--gt", str(tmp_path / "gt.jsonl"),
                 "--out", str(tmp_path / "o")]) == 0
    row = next(r for r in ap_rows(tmp_path / "o" / "ap.csv") if r["class"] == "Car" and r["difficulty"] == "Easy")
    assert abs(float(row["AP_R11"]) - 77.27) <= 0.01


def test_dropexp(tmp_path, model_path):
    args = ["dropexp", "--checkpoint", str(model_path), "--n-samples", "30", "--repeats", "2",
            "--fractions", "0,0.2"]
    assert main(args + ["--out", str(tmp_path / "a")]) == 0
    assert main(args + ["--out", str(tmp_path / "b")]) == 0
    text = (tmp_path / "a" / "dropexp.csv").read_text()
    assert text == (tmp_path / "b" / "dropexp.csv").read_text()
    rows = list(csv.DictReader(text.splitlines()[1:]))
    assert rows[0]["accuracy"] == rows[1]["accuracy"] and rows[0]["fraction"] == "0.0"
    assert float(rows[2]["accuracy"]) <= float(rows[3]["accuracy"])
    assert main(args[:-1] + ["0,1.5", "--out", str(tmp_path / "c")]) == 1
