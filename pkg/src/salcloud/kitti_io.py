"""Readers for KITTI object-detection files and frame conversions.

Formats:

* velodyne ``.bin``: packed little-endian float32 quadruples (x, y, z, r).
* ``label_2/*.txt``: 15 space-separated fields per object: type, truncated,
  occluded, alpha, bbox (left top right bottom), dimensions (h w l),
  location (x y z, camera frame, bottom centre), rotation_y.
* ``calib/*.txt``: ``name: v1 v2 ...`` lines; ``R0_rect`` (9 values) and
  ``Tr_velo_to_cam`` (12 values) are required, others are ignored.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from salcloud.errors import MalformedCalib, MalformedLabel, MalformedScan, SingularCalib
from salcloud.geom import OrientedBox

KITTI_CLASSES = ("Car", "Van", "Truck", "Pedestrian", "Person_sitting", "Cyclist", "Tram", "Misc", "DontCare")
_SCAN_DTYPE = np.dtype("<f4")


def read_velodyne(data: bytes) -> np.ndarray:
    if len(data) % 16:
        raise MalformedScan(f"scan length {len(data)} is not a multiple of 16 bytes")
    return np.frombuffer(data, dtype=_SCAN_DTYPE).reshape(-1, 4).copy()


def read_velodyne_file(path) -> np.ndarray:
    with open(path, "rb") as fh:
        return read_velodyne(fh.read())


def velodyne_bytes(points) -> bytes:
    pts = np.asarray(points)
    if pts.ndim != 2 or pts.shape[1] != 4:
        raise MalformedScan(f"expected (n, 4) points, got {pts.shape}")
    return pts.astype(_SCAN_DTYPE).tobytes()


@dataclass(frozen=True)
class KittiLabel:
    cls: str
    truncation: float
    occlusion: int
    alpha: float
    bbox: tuple            # left, top, right, bottom (px)
    dimensions: tuple      # h, w, l (m)
    location: tuple        # x, y, z (m, camera frame, bottom centre)
    rotation_y: float

    @property
    def bbox_height(self) -> float:
        return self.bbox[3] - self.bbox[1]

    def to_line(self) -> str:
        vals = [self.cls, self.truncation, self.occlusion, self.alpha, *self.bbox,
                *self.dimensions, *self.location, self.rotation_y]
        return " ".join(v if isinstance(v, str) else repr(v) for v in vals)


def _float(tok: str, idx: int) -> float:
    # float() accepts "inf"/"nan" and underscores; KITTI fields never do.
    try:
        if "_" in tok:
            raise ValueError
        v = float(tok)
    except ValueError:
        raise MalformedLabel(f"field {idx}: not a number: {tok!r}", idx) from None
    if not math.isfinite(v):
        raise MalformedLabel(f"field {idx}: non-finite value {tok!r}", idx)
    return v


def parse_label_line(text: str) -> KittiLabel:
    fields = text.split()
    if len(fields) != 15:
        raise MalformedLabel(f"expected 15 fields, got {len(fields)}", min(len(fields), 15))
    cls = fields[0]
    if cls not in KITTI_CLASSES:
        raise MalformedLabel(f"field 0: unknown class {cls!r}", 0)
    nums = [_float(tok, i) for i, tok in enumerate(fields[1:], start=1)]
    occ = nums[1]
    if occ != int(occ) or int(occ) not in (-1, 0, 1, 2, 3):
        raise MalformedLabel(f"field 2: occlusion must be an integer 0..3, got {fields[2]!r}", 2)
    return KittiLabel(cls, nums[0], int(occ), nums[2], tuple(nums[3:7]), tuple(nums[7:10]),
                      tuple(nums[10:13]), nums[13])


def read_label_file(path) -> list:
    out = []
    with open(path, encoding="utf-8") as fh:
        for line_no, line in enumerate(fh, start=1):
            if not line.strip():
                continue
            try:
                out.append(parse_label_line(line))
            except MalformedLabel as exc:
                raise MalformedLabel(f"{path}:{line_no}: {exc}", exc.field_index) from None
    return out


@dataclass
class Calib:
    R0: np.ndarray              # (3, 3) rectification
    Tr_velo_to_cam: np.ndarray  # (3, 4)
    P2: np.ndarray | None = None

    def __post_init__(self):
        self.R0 = np.asarray(self.R0, dtype=np.float64).reshape(3, 3)
        self.Tr_velo_to_cam = np.asarray(self.Tr_velo_to_cam, dtype=np.float64).reshape(3, 4)
        if not (np.all(np.isfinite(self.R0)) and np.all(np.isfinite(self.Tr_velo_to_cam))):
            raise MalformedCalib("calibration matrices must be finite")

    def check_rotation(self, tol: float = 1e-2) -> None:
        rot = self.Tr_velo_to_cam[:, :3]
        err = np.linalg.norm(rot.T @ rot - np.eye(3))
        if err >= tol:
            raise MalformedCalib(f"Tr_velo_to_cam rotation is not orthonormal (||R^T R - I|| = {err:.3g})")

    def velo_to_rect_matrix(self) -> np.ndarray:
        """4x4 homogeneous map LiDAR -> rectified camera."""
        tr = np.eye(4)
        tr[:3, :] = self.Tr_velo_to_cam
        r0 = np.eye(4)
        r0[:3, :3] = self.R0
        return r0 @ tr

    def rect_to_velo_matrix(self) -> np.ndarray:
        m = self.velo_to_rect_matrix()
        if abs(np.linalg.det(m)) < 1e-12:
            raise SingularCalib("R0_rect @ Tr_velo_to_cam is not invertible")
        return np.linalg.inv(m)

    def rect_to_velo(self, pts) -> np.ndarray:
        pts = np.atleast_2d(np.asarray(pts, dtype=np.float64))
        h = np.column_stack([pts, np.ones(len(pts))])
        return (h @ self.rect_to_velo_matrix().T)[:, :3]

    def velo_to_rect(self, pts) -> np.ndarray:
        pts = np.atleast_2d(np.asarray(pts, dtype=np.float64))
        h = np.column_stack([pts, np.ones(len(pts))])
        return (h @ self.velo_to_rect_matrix().T)[:, :3]


def parse_calib(text: str) -> Calib:
    mats = {}
    for line_no, line in enumerate(text.splitlines(), start=1):
        if not line.strip():
            continue
        if ":" not in line:
            raise MalformedCalib(f"line {line_no}: expected 'name: values'")
        name, _, rest = line.partition(":")
        try:
            mats[name.strip()] = np.array([float(v) for v in rest.split()], dtype=np.float64)
        except ValueError:
            raise MalformedCalib(f"line {line_no}: non-numeric value in {name.strip()!r}") from None
    r0 = mats.get("R0_rect", mats.get("R_rect"))
    tr = mats.get("Tr_velo_to_cam", mats.get("Tr_velo_cam"))
    if r0 is None or r0.size != 9:
        raise MalformedCalib("missing or malformed R0_rect (9 values)")
    if tr is None or tr.size != 12:
        raise MalformedCalib("missing or malformed Tr_velo_to_cam (12 values)")
    p2 = mats.get("P2")
    calib = Calib(r0, tr, p2.reshape(3, 4) if p2 is not None and p2.size == 12 else None)
    calib.check_rotation()
    return calib


def read_calib_file(path) -> Calib:
    with open(path, encoding="utf-8") as fh:
        return parse_calib(fh.read())


def calib_text(calib: Calib) -> str:
    p2 = calib.P2 if calib.P2 is not None else np.hstack([np.eye(3), np.zeros((3, 1))])
    rows = [("P2", p2.ravel()), ("R0_rect", calib.R0.ravel()), ("Tr_velo_to_cam", calib.Tr_velo_to_cam.ravel())]
    return "".join(f"{name}: " + " ".join(repr(float(v)) for v in vals) + "\n" for name, vals in rows)


# Canonical KITTI axes: camera x = -lidar y, camera y = -lidar z, camera z = lidar x.
CANONICAL_TR = np.array([[0.0, -1.0, 0.0, 0.0], [0.0, 0.0, -1.0, 0.0], [1.0, 0.0, 0.0, 0.0]])


def _rect_to_velo_rotation(calib: Calib) -> np.ndarray:
    return calib.rect_to_velo_matrix()[:3, :3]


def camera_box_to_lidar(label: KittiLabel, calib: Calib) -> OrientedBox:
    """Camera-frame label -> LiDAR-frame box centred on its volume.

    The label's bottom-centre location is lifted by h/2 along the camera's
    up direction (-y) before the inverse calibration is applied. The heading
    (camera-frame direction (cos ry, 0, -sin ry)) is mapped through the same
    rotation; with the canonical axes this gives ``yaw = -rotation_y - pi/2``.
    """
    h, w, l = label.dimensions
    x, y, z = label.location
    center_cam = np.array([x, y - h / 2.0, z])
    center = calib.rect_to_velo(center_cam)[0]
    ry = label.rotation_y
    heading = _rect_to_velo_rotation(calib) @ np.array([math.cos(ry), 0.0, -math.sin(ry)])
    yaw = math.atan2(heading[1], heading[0])
    return OrientedBox(float(center[0]), float(center[1]), float(center[2]), l, w, h, yaw)


def lidar_box_to_camera(box: OrientedBox, calib: Calib) -> tuple:
    """Inverse of :func:`camera_box_to_lidar`: returns (location, (h, w, l),
    rotation_y) in the rectified camera frame."""
    center_cam = calib.velo_to_rect(box.center)[0]
    loc = (float(center_cam[0]), float(center_cam[1] + box.h / 2.0), float(center_cam[2]))
    heading_l = np.array([math.cos(box.yaw), math.sin(box.yaw), 0.0])
    heading_c = calib.velo_to_rect_matrix()[:3, :3] @ heading_l
    ry = math.atan2(-heading_c[2], heading_c[0])
    return loc, (box.h, box.w, box.l), ry


def kitti_difficulty(label: KittiLabel):
    """Standard KITTI strata from 2D height, occlusion and truncation.

    Returns "Easy", "Moderate", "Hard" or None when the object meets none.
    """
    height = label.bbox_height
    if height >= 40 and label.occlusion <= 0 and label.truncation <= 0.15:
        return "Easy"
    if height >= 25 and label.occlusion <= 1 and label.truncation <= 0.30:
        return "Moderate"
    if height >= 25 and label.occlusion <= 2 and label.truncation <= 0.50:
        return "Hard"
    return None
