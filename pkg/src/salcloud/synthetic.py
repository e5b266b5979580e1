"""Synthetic stand-ins for KITTI data.

Used by the tests, the acceptance suite and the ``make-synthetic`` CLI
command so every pipeline can run without the real dataset.
"""

from __future__ import annotations

import math

import numpy as np

from salcloud.geom import OrientedBox, points_in_box
from salcloud.pointset import CLASSES, DIFFICULTIES, PointSample

# Object-frame extents (l, w, h) ranges per class.
SIZE_RANGES = {
    0: ((3.6, 4.6), (1.5, 1.9), (1.4, 1.7)),
    1: ((0.5, 0.9), (0.5, 0.8), (1.5, 1.9)),
    2: ((1.6, 1.9), (0.5, 0.8), (1.6, 1.9)),
}
POINT_RANGES = {0: (110, 220), 1: (70, 150), 2: (80, 170)}


def _box_surface(rng, n, lo, hi):
    """Uniform-ish samples on the faces of an axis-aligned box."""
    lo, hi = np.asarray(lo, float), np.asarray(hi, float)
    ext = hi - lo
    areas = np.array([ext[1] * ext[2], ext[1] * ext[2], ext[0] * ext[2], ext[0] * ext[2], ext[0] * ext[1], ext[0] * ext[1]])
    face = rng.choice(6, size=n, p=areas / areas.sum())
    pts = lo + rng.uniform(size=(n, 3)) * ext
    axis = face // 2
    upper = face % 2 == 1
    pts[np.arange(n), axis] = np.where(upper, hi[axis], lo[axis])
    return pts


def _cylinder(rng, n, cx, cy, z0, z1, radius):
    t = rng.uniform(0, 2 * np.pi, n)
    z = rng.uniform(z0, z1, n)
    return np.column_stack([cx + radius * np.cos(t), cy + radius * np.sin(t), z])


def _car(rng, n, l, w, h):
    n_body = int(n * 0.6)
    body = _box_surface(rng, n_body, (-l / 2, -w / 2, -h / 2), (l / 2, w / 2, -h / 2 + 0.55 * h))
    cab_l = 0.5 * l
    cabin = _box_surface(rng, n - n_body, (-0.35 * l, -0.42 * w, -h / 2 + 0.55 * h),
                         (-0.35 * l + cab_l, 0.42 * w, h / 2))
    inten = np.concatenate([rng.uniform(0.25, 0.5, n_body), rng.uniform(0.0, 0.12, n - n_body)])
    return np.vstack([body, cabin]), inten


def _pedestrian(rng, n, l, w, h):
    n_head = max(n // 8, 3)
    n_legs = n // 3
    n_torso = n - n_head - n_legs
    torso = _cylinder(rng, n_torso, 0.0, 0.0, -h / 2 + 0.47 * h, h / 2 - 0.14 * h, 0.45 * min(l, w) / 2 + 0.08)
    legs = np.vstack([
        _cylinder(rng, n_legs // 2, 0.0, 0.1, -h / 2, -h / 2 + 0.47 * h, 0.07),
        _cylinder(rng, n_legs - n_legs // 2, 0.0, -0.1, -h / 2, -h / 2 + 0.47 * h, 0.07),
    ])
    d = rng.normal(size=(n_head, 3))
    head = 0.11 * d / np.linalg.norm(d, axis=1, keepdims=True) + np.array([0.0, 0.0, h / 2 - 0.11])
    pts = np.vstack([torso, legs, head])
    return pts, rng.uniform(0.2, 0.45, len(pts))


def _cyclist(rng, n, l, w, h):
    n_bike = n // 2
    n_rider = n - n_bike
    r = 0.33
    t = rng.uniform(0, 2 * np.pi, n_bike)
    which = rng.integers(0, 2, n_bike)
    cx = np.where(which == 0, -l / 2 + r, l / 2 - r)
    wheels = np.column_stack([cx + r * np.cos(t), rng.normal(0, 0.02, n_bike), -h / 2 + r + r * np.sin(t)])
    rider = _cylinder(rng, n_rider, 0.0, 0.0, -h / 2 + 0.45 * h, h / 2, 0.18)
    inten = np.concatenate([rng.uniform(0.02, 0.15, n_bike), rng.uniform(0.2, 0.45, n_rider)])
    return np.vstack([wheels, rider]), inten


_MAKERS = {0: _car, 1: _pedestrian, 2: _cyclist}


def object_points(rng, label: int, n: int | None = None, noise: float = 0.03,
                  visible_only: bool = True, size=None):
    """Points of one synthetic object in its own frame (centre at origin,
    heading +x) and the sampled (l, w, h)."""
    if size is None:
        size = tuple(rng.uniform(*r) for r in SIZE_RANGES[label])
    l, w, h = size
    if n is None:
        n = int(rng.integers(*POINT_RANGES[label]))
    # Oversample then keep the half facing a random sensor direction.
    raw_n = 2 * n if visible_only else n
    xyz, inten = _MAKERS[label](rng, raw_n, l, w, h)
    if visible_only:
        az = rng.uniform(0, 2 * np.pi)
        view = np.array([math.cos(az), math.sin(az)])
        facing = xyz[:, :2] @ view
        keep = np.argsort(-facing, kind="stable")[:n]
        keep.sort()
        xyz, inten = xyz[keep], inten[keep]
    xyz = xyz + rng.normal(0, noise, size=xyz.shape)
    # Keep every point inside the closed object box.
    half = np.array([l, w, h]) / 2 - 0.01
    xyz = np.clip(xyz, -half, half)
    return np.column_stack([xyz, np.clip(inten, 0.0, 1.0)]), (l, w, h)


def _place(pts, yaw, center):
    c, s = math.cos(yaw), math.sin(yaw)
    out = pts.copy()
    out[:, 0] = c * pts[:, 0] - s * pts[:, 1] + center[0]
    out[:, 1] = s * pts[:, 0] + c * pts[:, 1] + center[1]
    out[:, 2] = pts[:, 2] + center[2]
    return out


def make_object_dataset(n: int, seed: int = 0, noise: float = 0.03, balanced: bool = True,
                        prefix: str = "obj") -> list:
    """Labelled object samples with random heading, one per class in turn
    when ``balanced`` (else Car-heavy like KITTI)."""
    rng = np.random.default_rng(seed)
    out = []
    for i in range(n):
        if balanced:
            label = i % 3
        else:
            label = int(rng.choice(3, p=[0.7, 0.2, 0.1]))
        pts, _ = object_points(rng, label, noise=noise)
        pts = _place(pts, rng.uniform(-np.pi, np.pi), (0.0, 0.0, 0.0))
        difficulty = DIFFICULTIES[int(rng.integers(0, 3))]
        out.append(PointSample(pts, label, difficulty, f"{prefix}{seed}_{i:05d}"))
    return out


def make_scene(rng, n_objects: int = 3, n_background: int = 2000, extent: float = 40.0):
    """A flat synthetic scene. Returns (points (n, 4) float32, list of
    (OrientedBox, label, n_points))."""
    objects = []
    clouds = []
    placed = []
    for _ in range(n_objects):
        label = int(rng.integers(0, 3))
        pts, (l, w, h) = object_points(rng, label, visible_only=False)
        for _attempt in range(50):
            cx, cy = rng.uniform(5, extent), rng.uniform(-extent / 2, extent / 2)
            if all(math.hypot(cx - px, cy - py) > 6.0 for px, py in placed):
                break
        placed.append((cx, cy))
        yaw = float(rng.uniform(-np.pi, np.pi))
        cz = -1.7 + h / 2
        box = OrientedBox(cx, cy, cz, l, w, h, yaw)
        clouds.append(_place(pts[:, :3], yaw, (cx, cy, cz)))
        clouds[-1] = np.column_stack([clouds[-1], pts[:, 3]])
        objects.append((box, label, len(pts)))
    ground = np.column_stack([
        rng.uniform(0, extent + 5, n_background),
        rng.uniform(-extent / 2 - 3, extent / 2 + 3, n_background),
        np.full(n_background, -1.75) + rng.normal(0, 0.02, n_background),
        rng.uniform(0, 0.3, n_background),
    ])
    # Ground points must not leak into any object box.
    inside = np.zeros(n_background, dtype=bool)
    for box, _, _ in objects:
        inside |= points_in_box(box, ground)
    scene = np.vstack(clouds + [ground[~inside]]) if clouds else ground[~inside]
    return scene.astype(np.float32), objects


def jitter_box(rng, box: OrientedBox, pos: float, size: float = 0.0, yaw: float = 0.0) -> OrientedBox:
    return OrientedBox(
        box.cx + rng.normal(0, pos), box.cy + rng.normal(0, pos), box.cz + rng.normal(0, pos),
        box.l * (1 + rng.normal(0, size)), box.w * (1 + rng.normal(0, size)),
        box.h * (1 + rng.normal(0, size)), box.yaw + rng.normal(0, yaw),
    )


def random_gt_box(rng, label: int, extent: float = 40.0) -> OrientedBox:
    l, w, h = (rng.uniform(*r) for r in SIZE_RANGES[label])
    return OrientedBox(rng.uniform(5, extent), rng.uniform(-extent / 2, extent / 2), -1.7 + h / 2,
                       l, w, h, rng.uniform(-np.pi, np.pi))


def class_name(label: int) -> str:
    return CLASSES[label]


def _vote_cluster(rng, gt: OrientedBox, n: int, pos: float, size: float, yaw: float):
    return [jitter_box(rng, gt, pos, size, yaw) for _ in range(n)]


def make_detection_corpus(n_frames: int = 50, n_planted: int = 10, seed: int = 0,
                          cars_per_frame=(1, 3), fp_per_frame=(0, 3)):
    """Synthetic Car detections imitating a vote-based detector.

    Every ground-truth car gets a loose cluster of vote boxes with decent
    confidence. ``n_planted`` extra cars (spread over the first frames) get
    a dense, tightly agreeing cluster whose confidence is too low to pass
    the final threshold without the missed-detection increment. Scattered
    false positives have few neighbours.

    Returns ``(frames, gt)``: a list of ``ccm.DetectionFrame`` and a dict
    frame_id -> list of ``evaluation.GtBox``.
    """
    from salcloud.ccm import Detection, DetectionFrame
    from salcloud.evaluation import GtBox
    from salcloud.geom import iou_3d

    rng = np.random.default_rng(seed)
    frames, gt = [], {}
    planted_frames = set(range(min(n_planted, n_frames)))
    extra = n_planted - len(planted_frames)
    for f in range(n_frames):
        frame_id = f"{f:06d}"
        dets, gts = [], []
        n_cars = int(rng.integers(cars_per_frame[0], cars_per_frame[1] + 1))
        n_plant = (1 if f in planted_frames else 0) + (1 if extra > 0 and f < extra else 0)
        centres = []
        for k in range(n_cars + n_plant):
            for _attempt in range(100):
                box = random_gt_box(rng, 0)
                if all(math.hypot(box.cx - x, box.cy - y) > 8.0 for x, y in centres):
                    break
            centres.append((box.cx, box.cy))
            gts.append(GtBox(box, 0, DIFFICULTIES[int(rng.integers(0, 3))]))
            planted = k >= n_cars
            if planted:
                votes = _vote_cluster(rng, box, int(rng.integers(12, 17)), 0.02, 0.005, 0.005)
                for v in votes:
                    dets.append(Detection(v, 0, float(rng.uniform(0.25, 0.33)),
                                          float(np.clip(iou_3d(v, box) + rng.normal(0, 0.02), 0, 1))))
            else:
                votes = _vote_cluster(rng, box, int(rng.integers(6, 16)), 0.15, 0.03, 0.03)
                for v in votes:
                    true_iou = iou_3d(v, box)
                    dets.append(Detection(v, 0, float(rng.uniform(0.45, 0.95)),
                                          float(np.clip(true_iou + rng.normal(0, 0.05), 0, 1))))
        for _ in range(int(rng.integers(fp_per_frame[0], fp_per_frame[1] + 1))):
            fp = random_gt_box(rng, 0)
            if any(math.hypot(fp.cx - x, fp.cy - y) < 8.0 for x, y in centres):
                continue
            for v in _vote_cluster(rng, fp, int(rng.integers(1, 4)), 0.3, 0.05, 0.1):
                dets.append(Detection(v, 0, float(rng.uniform(0.3, 0.8)), float(rng.uniform(0.1, 0.5))))
        order = rng.permutation(len(dets))
        frames.append(DetectionFrame(frame_id, [dets[i] for i in order]))
        gt[frame_id] = gts
    return frames, gt


def write_synthetic_kitti(root, n_scenes: int = 4, seed: int = 0, objects_per_scene: int = 3,
                          val_fraction: float = 0.5) -> None:
    """Write a KITTI-style tree (velodyne, label_2, calib, ImageSets)."""
    from pathlib import Path

    from salcloud.kitti_io import CANONICAL_TR, Calib, KittiLabel, calib_text, lidar_box_to_camera, velodyne_bytes

    root = Path(root)
    for sub in ("velodyne", "label_2", "calib", "ImageSets"):
        (root / sub).mkdir(parents=True, exist_ok=True)
    rng = np.random.default_rng(seed)
    calib = Calib(np.eye(3), CANONICAL_TR + np.array([[0, 0, 0, 0.01], [0, 0, 0, -0.08], [0, 0, 0, -0.27]]))
    # (2D height px, occlusion) per difficulty
    strata = {"Easy": (60.0, 0), "Moderate": (30.0, 1), "Hard": (26.0, 2)}
    ids = []
    for s in range(n_scenes):
        scene_id = f"{s:06d}"
        ids.append(scene_id)
        pts, objects = make_scene(rng, objects_per_scene)
        (root / "velodyne" / f"{scene_id}.bin").write_bytes(velodyne_bytes(pts))
        (root / "calib" / f"{scene_id}.txt").write_text(calib_text(calib))
        lines = []
        for box, label, _n in objects:
            loc, dims, ry = lidar_box_to_camera(box, calib)
            diff = DIFFICULTIES[int(rng.integers(0, 3))]
            height, occ = strata[diff]
            bbox = (500.0, 150.0, 560.0, 150.0 + height)
            lab = KittiLabel(CLASSES[label], 0.0, occ, 0.0, bbox, dims, loc, ry)
            lines.append(lab.to_line())
        lines.append("DontCare -1 -1 -10 0.0 0.0 10.0 10.0 -1 -1 -1 -1000 -1000 -1000 -10")
        (root / "label_2" / f"{scene_id}.txt").write_text("\n".join(lines) + "\n")
    (root / "ImageSets" / "all.txt").write_text("\n".join(ids) + "\n")
