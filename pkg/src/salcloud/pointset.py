"""Point-set primitives: per-sample normalization, spherical coordinates,
farthest point sampling, ball query and score-ranked selection.

A point cloud is an ``(n, 4)`` float array of x, y, z, intensity.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np

from salcloud.errors import BadCount, DegenerateSample, EmptyPointSet

CLASSES = ("Car", "Pedestrian", "Cyclist")
DIFFICULTIES = ("Easy", "Moderate", "Hard")
CLASS_TO_ID = {name: i for i, name in enumerate(CLASSES)}


def class_id(label) -> int:
    if isinstance(label, str):
        try:
            return CLASS_TO_ID[label]
        except KeyError:
            raise ValueError(f"unknown class {label!r}") from None
    label = int(label)
    if not 0 <= label < len(CLASSES):
        raise ValueError(f"class id out of range: {label}")
    return label


def as_points(points) -> np.ndarray:
    """Coerce to a float64 ``(n, 4)`` array, padding missing intensity with 0."""
    pts = np.asarray(points, dtype=np.float64)
    if pts.ndim == 1:
        pts = pts[None, :]
    if pts.ndim != 2 or pts.shape[1] not in (3, 4):
        raise ValueError(f"expected (n, 3) or (n, 4) points, got shape {pts.shape}")
    if pts.shape[1] == 3:
        pts = np.column_stack([pts, np.zeros(len(pts))])
    return pts


@dataclass
class PointSample:
    """One foreground object: its points, class and KITTI difficulty."""

    points: np.ndarray
    label: int
    difficulty: str = "Moderate"
    source_id: str = ""

    def __post_init__(self):
        self.points = as_points(self.points)
        self.label = class_id(self.label)
        if len(self.points) < 1:
            raise EmptyPointSet("a sample needs at least one point")
        if not np.all(np.isfinite(self.points)):
            raise ValueError(f"non-finite coordinates in sample {self.source_id!r}")

    @property
    def k(self) -> int:
        return len(self.points)

    def with_points(self, points) -> "PointSample":
        return PointSample(points, self.label, self.difficulty, self.source_id)


@dataclass
class NormalizedSample:
    points: np.ndarray
    scale: float
    centroid: np.ndarray = field(default_factory=lambda: np.zeros(4))


def normalize_sample(sample) -> NormalizedSample:
    """Centre all four channels on their mean and divide by the largest
    4-D norm of the centred points.

    Accepts a :class:`PointSample` or a raw point array.
    """
    pts = sample.points if isinstance(sample, PointSample) else as_points(sample)
    if len(pts) < 2:
        raise DegenerateSample("normalization needs at least two points")
    centroid = pts.mean(axis=0)
    centred = pts - centroid
    scale = float(np.sqrt((centred ** 2).sum(axis=1)).max())
    if scale == 0.0:
        raise DegenerateSample("all points coincide; cannot normalize")
    return NormalizedSample(centred / scale, scale, centroid)


def denormalize(ns: NormalizedSample) -> np.ndarray:
    return ns.points * ns.scale + ns.centroid


@dataclass(frozen=True)
class SphericalCoords:
    """``phi`` is the elevation above the xy-plane, ``varphi`` the azimuth
    measured from +y toward +x."""

    r: float
    phi: float
    varphi: float

    def to_cartesian(self, core=(0.0, 0.0, 0.0)) -> np.ndarray:
        cp = math.cos(self.phi)
        return np.array([
            core[0] + self.r * cp * math.sin(self.varphi),
            core[1] + self.r * cp * math.cos(self.varphi),
            core[2] + self.r * math.sin(self.phi),
        ])


def to_spherical(p, core=(0.0, 0.0, 0.0)) -> SphericalCoords:
    d = np.asarray(p, dtype=np.float64)[:3] - np.asarray(core, dtype=np.float64)
    r = float(np.sqrt(np.dot(d, d)))
    if r == 0.0:
        return SphericalCoords(0.0, 0.0, 0.0)
    phi = math.asin(max(-1.0, min(1.0, d[2] / r)))
    varphi = math.atan2(d[0], d[1])
    return SphericalCoords(r, phi, varphi)


def fps(points, m: int, start_index: int = 0) -> np.ndarray:
    """Greedy farthest point sampling on xyz. Ties go to the lowest index."""
    pts = np.asarray(points, dtype=np.float64)[:, :3]
    n = len(pts)
    if m < 1 or m > n:
        raise BadCount(f"cannot sample m={m} of n={n} points")
    if not 0 <= start_index < n:
        raise BadCount(f"start_index {start_index} out of range for n={n}")
    chosen = np.empty(m, dtype=np.int64)
    chosen[0] = start_index
    min_d = np.sum((pts - pts[start_index]) ** 2, axis=1)
    # Chosen points get -1 so duplicates of them (distance 0) still win.
    min_d[start_index] = -1.0
    for i in range(1, m):
        nxt = int(np.argmax(min_d))
        chosen[i] = nxt
        min_d = np.minimum(min_d, np.sum((pts - pts[nxt]) ** 2, axis=1))
        min_d[nxt] = -1.0
    return chosen


def ball_query(center, points, radius: float, k_max: int) -> np.ndarray:
    """Up to ``k_max`` indices within ``radius`` (xyz), nearest first.

    When nothing falls inside the ball the single nearest point is returned,
    so a group is never empty.
    """
    pts = np.asarray(points, dtype=np.float64)
    if len(pts) == 0:
        raise EmptyPointSet("ball query over an empty point set")
    if radius <= 0 or k_max < 1:
        raise BadCount(f"need radius > 0 and k_max >= 1, got {radius}, {k_max}")
    c = np.asarray(center, dtype=np.float64)[:3]
    dist = np.sqrt(np.sum((pts[:, :3] - c) ** 2, axis=1))
    order = np.argsort(dist, kind="stable")
    inside = order[dist[order] <= radius]
    if len(inside) == 0:
        return order[:1]
    return inside[:k_max]


def topk_by_score(scores, m: int) -> np.ndarray:
    """Indices of the ``m`` highest scores, descending; ties by lowest index."""
    s = np.asarray(scores, dtype=np.float64)
    if m < 1 or m > len(s):
        raise BadCount(f"cannot select m={m} of n={len(s)} scores")
    return np.argsort(-s, kind="stable")[:m]
