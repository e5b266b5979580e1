"""Oriented 3D boxes: containment, face distances, centrality and IoU.

Boxes live in the LiDAR frame. ``yaw`` rotates the box about +z,
counter-clockwise seen from above, and the box length ``l`` runs along the
heading. Points are arrays whose first three entries are x, y, z; any extra
channels (intensity) are ignored by the geometry.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from salcloud.errors import DegenerateBox, PointOutsideBox

# Absolute slack for the closed-box containment test.
CONTAIN_EPS = 1e-9


def normalize_yaw(yaw: float) -> float:
    """Wrap an angle into (-pi, pi]. In-range angles are returned untouched."""
    yaw = float(yaw)
    if -math.pi < yaw <= math.pi:
        return yaw
    yaw = math.remainder(yaw, 2.0 * math.pi)
    if yaw <= -math.pi:
        yaw += 2.0 * math.pi
    return yaw


@dataclass(frozen=True)
class OrientedBox:
    cx: float
    cy: float
    cz: float
    l: float
    w: float
    h: float
    yaw: float = 0.0

    def __post_init__(self):
        vals = (self.cx, self.cy, self.cz, self.l, self.w, self.h, self.yaw)
        if not all(math.isfinite(v) for v in vals):
            raise DegenerateBox(f"non-finite box parameters: {vals}")
        if self.l <= 0 or self.w <= 0 or self.h <= 0:
            raise DegenerateBox(f"box sides must be positive, got l={self.l} w={self.w} h={self.h}")
        object.__setattr__(self, "yaw", normalize_yaw(self.yaw))

    @classmethod
    def from_array(cls, arr) -> "OrientedBox":
        vals = [float(v) for v in arr]
        if len(vals) != 7:
            raise DegenerateBox(f"expected 7 box values, got {len(vals)}")
        return cls(*vals)

    def as_array(self) -> np.ndarray:
        return np.array([self.cx, self.cy, self.cz, self.l, self.w, self.h, self.yaw])

    @property
    def center(self) -> np.ndarray:
        return np.array([self.cx, self.cy, self.cz])

    @property
    def volume(self) -> float:
        return self.l * self.w * self.h

    @property
    def z_min(self) -> float:
        return self.cz - self.h / 2.0

    @property
    def z_max(self) -> float:
        return self.cz + self.h / 2.0

    def bev_corners(self) -> np.ndarray:
        """Footprint corners as a (4, 2) array in counter-clockwise order."""
        c, s = math.cos(self.yaw), math.sin(self.yaw)
        hl, hw = self.l / 2.0, self.w / 2.0
        local = np.array([[hl, hw], [-hl, hw], [-hl, -hw], [hl, -hw]])
        rot = np.array([[c, -s], [s, c]])
        return local @ rot.T + np.array([self.cx, self.cy])

    def corners(self) -> np.ndarray:
        """All eight corners, (8, 3): bottom face then top face."""
        bev = self.bev_corners()
        bottom = np.column_stack([bev, np.full(4, self.z_min)])
        top = np.column_stack([bev, np.full(4, self.z_max)])
        return np.vstack([bottom, top])

    def rotated_about(self, angle: float, pivot=(0.0, 0.0)) -> "OrientedBox":
        """Rigidly rotate the box about a vertical axis through ``pivot``."""
        c, s = math.cos(angle), math.sin(angle)
        dx, dy = self.cx - pivot[0], self.cy - pivot[1]
        return OrientedBox(
            pivot[0] + c * dx - s * dy,
            pivot[1] + s * dx + c * dy,
            self.cz, self.l, self.w, self.h, self.yaw + angle,
        )


def to_local(box: OrientedBox, points) -> np.ndarray:
    """Express points (..., >=3) in the box frame: heading along +x."""
    pts = np.asarray(points, dtype=np.float64)
    d = pts[..., :3] - box.center
    c, s = math.cos(box.yaw), math.sin(box.yaw)
    x = c * d[..., 0] + s * d[..., 1]
    y = -s * d[..., 0] + c * d[..., 1]
    return np.stack([x, y, d[..., 2]], axis=-1)


def points_in_box(box: OrientedBox, points, eps: float = CONTAIN_EPS) -> np.ndarray:
    """Boolean mask of points inside the closed box."""
    local = to_local(box, points)
    half = np.array([box.l, box.w, box.h]) / 2.0
    return np.all(np.abs(local) <= half + eps, axis=-1)


def contains_point(box: OrientedBox, p) -> bool:
    return bool(points_in_box(box, np.asarray(p, dtype=np.float64)[None, :])[0])


@dataclass(frozen=True)
class FaceDistances:
    f: float
    b: float
    l: float
    r: float
    u: float
    d: float


def face_distances(box: OrientedBox, p) -> FaceDistances:
    """Perpendicular distances from an interior point to the six faces.

    ``f``/``b`` are measured along the heading, ``l``/``r`` along the box's
    left (+y local) and right, ``u``/``d`` along +z and -z.
    """
    if not contains_point(box, p):
        raise PointOutsideBox(f"point {tuple(np.asarray(p)[:3])} is outside box")
    x, y, z = to_local(box, np.asarray(p, dtype=np.float64)[None, :])[0]
    hl, hw, hh = box.l / 2.0, box.w / 2.0, box.h / 2.0
    # Points within the containment slack are clamped onto the face.
    f, b = max(hl - x, 0.0), max(hl + x, 0.0)
    left, right = max(hw - y, 0.0), max(hw + y, 0.0)
    u, d = max(hh - z, 0.0), max(hh + z, 0.0)
    return FaceDistances(f, b, left, right, u, d)


def centrality_mask(box: OrientedBox, p) -> float:
    """Centre-ness weight in [0, 1]: 1 at the centre, 0 on any face."""
    fd = face_distances(box, p)
    ratio = 1.0
    for a, b in ((fd.f, fd.b), (fd.l, fd.r), (fd.u, fd.d)):
        ratio *= min(a, b) / max(a, b)
    return float(np.cbrt(ratio))


def polygon_area(poly: np.ndarray) -> float:
    """Signed shoelace area; positive for counter-clockwise vertex order."""
    if len(poly) < 3:
        return 0.0
    x, y = poly[:, 0], poly[:, 1]
    return 0.5 * float(np.dot(x, np.roll(y, -1)) - np.dot(np.roll(x, -1), y))


def clip_convex(subject: np.ndarray, clip: np.ndarray) -> np.ndarray:
    """Sutherland-Hodgman: clip polygon ``subject`` by convex CCW ``clip``."""
    output = [tuple(v) for v in subject]
    n = len(clip)
    for i in range(n):
        if not output:
            break
        ax, ay = clip[i]
        bx, by = clip[(i + 1) % n]
        ex, ey = bx - ax, by - ay

        def side(px, py):
            return ex * (py - ay) - ey * (px - ax)

        inp = output
        output = []
        prev = inp[-1]
        s_prev = side(*prev)
        for cur in inp:
            s_cur = side(*cur)
            if s_cur >= 0:
                if s_prev < 0:
                    t = s_prev / (s_prev - s_cur)
                    output.append((prev[0] + t * (cur[0] - prev[0]), prev[1] + t * (cur[1] - prev[1])))
                output.append(cur)
            elif s_prev >= 0:
                t = s_prev / (s_prev - s_cur)
                output.append((prev[0] + t * (cur[0] - prev[0]), prev[1] + t * (cur[1] - prev[1])))
            prev, s_prev = cur, s_cur
    return np.array(output, dtype=np.float64).reshape(-1, 2)


def _bev_overlap_area(a: OrientedBox, b: OrientedBox) -> float:
    # Circumscribed circles that do not touch cannot overlap.
    ra = math.hypot(a.l, a.w) / 2.0
    rb = math.hypot(b.l, b.w) / 2.0
    if math.hypot(a.cx - b.cx, a.cy - b.cy) > ra + rb:
        return 0.0
    poly = clip_convex(a.bev_corners(), b.bev_corners())
    return max(polygon_area(poly), 0.0)


def _ordered(a: OrientedBox, b: OrientedBox):
    # Evaluating in a canonical order makes the result exactly symmetric.
    return (a, b) if tuple(a.as_array()) <= tuple(b.as_array()) else (b, a)


def bev_iou(a: OrientedBox, b: OrientedBox) -> float:
    """IoU of the ground-plane footprints."""
    if a == b:
        return 1.0
    a, b = _ordered(a, b)
    inter = _bev_overlap_area(a, b)
    if inter <= 0.0:
        return 0.0
    union = a.l * a.w + b.l * b.w - inter
    return float(min(max(inter / union, 0.0), 1.0))


def iou_3d(a: OrientedBox, b: OrientedBox) -> float:
    """Volumetric IoU: footprint overlap times vertical overlap."""
    if a == b:
        return 1.0
    a, b = _ordered(a, b)
    dz = min(a.z_max, b.z_max) - max(a.z_min, b.z_min)
    if dz <= 0.0:
        return 0.0
    area = _bev_overlap_area(a, b)
    if area <= 0.0:
        return 0.0
    inter = area * dz
    union = a.volume + b.volume - inter
    return float(min(max(inter / union, 0.0), 1.0))


def iou(a: OrientedBox, b: OrientedBox, mode: str = "3d") -> float:
    if mode == "3d":
        return iou_3d(a, b)
    if mode == "bev":
        return bev_iou(a, b)
    raise ValueError(f"unknown IoU mode {mode!r}")


def iou_matrix(boxes_a, boxes_b, mode: str = "3d") -> np.ndarray:
    out = np.zeros((len(boxes_a), len(boxes_b)))
    for i, a in enumerate(boxes_a):
        for j, b in enumerate(boxes_b):
            out[i, j] = iou(a, b, mode)
    return out


def monte_carlo_iou(a: OrientedBox, b: OrientedBox, n_samples: int = 200_000, seed: int = 0,
                    bev: bool = False) -> float:
    """Rejection-sampling IoU estimate, used as an independent oracle.

    Samples uniformly inside the axis-aligned bounding volume of both boxes
    and returns |A and B| / |A or B| over the sample counts. With ``bev`` the
    z extent is ignored (footprint IoU).
    """
    if n_samples < 1:
        raise ValueError("n_samples must be >= 1")
    corners = np.vstack([a.corners(), b.corners()])
    lo, hi = corners.min(axis=0), corners.max(axis=0)
    rng = np.random.default_rng(seed)
    pts = rng.uniform(lo, hi, size=(n_samples, 3))

    def inside(box):
        local = to_local(box, pts)
        half = np.array([box.l, box.w, box.h]) / 2.0
        hit = np.abs(local) <= half
        if bev:
            return hit[:, 0] & hit[:, 1]
        return hit.all(axis=1)

    in_a, in_b = inside(a), inside(b)
    union = np.count_nonzero(in_a | in_b)
    if union == 0:
        return 0.0
    return np.count_nonzero(in_a & in_b) / union
