"""Point saliency from a radial point shift, and saliency-guided dropping.

A point's score estimates how much the classification loss would rise if
the point were pulled onto the sample's core (the centroid of the
normalized sample): ``s = -(dL/dr) * r`` with ``r`` the 3-D distance to the
core. The intensity channel joins the same directional derivative with a
core intensity of zero.
"""

from __future__ import annotations

import logging
from dataclasses import dataclass

import numpy as np

from salcloud.elitenet import EliteModel, class_frequencies, loss_and_input_grad, wce_alpha
from salcloud.errors import TooFewPoints
from salcloud.pointset import PointSample, normalize_sample

log = logging.getLogger(__name__)


def scores_from_gradient(points: np.ndarray, grad: np.ndarray) -> np.ndarray:
    """Saliency of normalized ``points`` given dL/dp, core at the origin."""
    xyz, g = points[:, :3], grad[:, :3]
    r = np.sqrt(np.sum(xyz ** 2, axis=1))
    safe_r = np.where(r > 0, r, 1.0)
    dl_dr = np.sum(g * xyz, axis=1) / safe_r
    s = -dl_dr * r - grad[:, 3] * points[:, 3]
    return np.where(r > 0, s, 0.0)


def _class_weights(loss: str, freqs):
    if loss == "ce":
        return None
    if loss == "wce":
        if freqs is None:
            raise ValueError("WCE saliency needs class frequencies")
        return wce_alpha(freqs)
    raise ValueError(f"loss must be 'ce' or 'wce', got {loss!r}")


def saliency_scores(model: EliteModel, sample: PointSample, loss: str = "ce", freqs=None) -> np.ndarray:
    """Per-point saliency scores, aligned with ``sample.points``."""
    ns = normalize_sample(sample)
    _, grad = loss_and_input_grad(model, ns.points, sample.label, _class_weights(loss, freqs))
    return scores_from_gradient(ns.points, grad)


@dataclass(frozen=True)
class DropSchedule:
    alpha: float = 0.1
    beta: float = 0.0
    drop_interval: int = 5
    min_points: int = 10

    def __post_init__(self):
        if self.alpha < 0 or self.beta < 0:
            raise ValueError("alpha and beta must be >= 0")
        if self.drop_interval < 1 or self.min_points < 1:
            raise ValueError("drop_interval and min_points must be >= 1")

    def n_drop(self, k: int) -> int:
        """Points the schedule asks to remove from a k-point sample."""
        # Small epsilon so e.g. 0.1 * 100 + 5 is not floored to 14.
        return int(np.floor(self.alpha * k + self.beta + 1e-9))

    def n_rounds(self, k: int) -> int:
        return self.n_drop(k) // self.drop_interval

    def expected_points(self, k: int) -> int:
        """Point count after dropping (partial final rounds are skipped)."""
        return max(k - self.n_rounds(k) * self.drop_interval, self.min_points)

    def as_dict(self) -> dict:
        return {"alpha": self.alpha, "beta": self.beta,
                "drop_interval": self.drop_interval, "min_points": self.min_points}


@dataclass
class DropResult:
    sample: PointSample
    kept: np.ndarray        # indices into the input sample, ascending
    rounds: int
    remainder: int          # requested drops skipped by the whole-round loop bound


def saliency_drop(model: EliteModel, sample: PointSample, sched: DropSchedule | None = None,
                  loss: str = "ce", freqs=None) -> DropResult:
    """Remove high-saliency points in rounds of ``drop_interval``.

    Every round re-normalizes the surviving points, recomputes the loss and
    scores and keeps the lowest-scoring ones. The survivors are returned in
    their original coordinates.
    """
    sched = sched or DropSchedule()
    k = sample.k
    if k <= sched.min_points:
        raise TooFewPoints(f"sample {sample.source_id!r} has {k} <= min_points={sched.min_points}")
    d = sched.n_drop(k)
    n_rounds = d // sched.drop_interval
    weights = _class_weights(loss, freqs)
    kept = np.arange(k)
    rounds = 0
    for _ in range(n_rounds):
        n_keep = max(len(kept) - sched.drop_interval, sched.min_points)
        if n_keep >= len(kept):
            break
        current = sample.points[kept]
        ns = normalize_sample(current)
        _, grad = loss_and_input_grad(model, ns.points, sample.label, weights)
        s = scores_from_gradient(ns.points, grad)
        lowest = np.sort(np.argsort(s, kind="stable")[:n_keep])
        kept = kept[lowest]
        rounds += 1
    return DropResult(sample.with_points(sample.points[kept]), kept, rounds, d - n_rounds * sched.drop_interval)


def drop_points(model: EliteModel, sample: PointSample, sched: DropSchedule | None = None,
                loss: str = "ce", freqs=None) -> PointSample:
    return saliency_drop(model, sample, sched, loss, freqs).sample


def drop_points_random(sample: PointSample, d: int, seed: int = 0) -> PointSample:
    """Remove ``d`` uniformly chosen points; deterministic for a seed."""
    k = sample.k
    if d < 0 or d >= k:
        raise TooFewPoints(f"cannot drop {d} of {k} points")
    rng = np.random.default_rng(seed)
    keep = np.sort(rng.choice(k, size=k - d, replace=False))
    return sample.with_points(sample.points[keep])


def dataset_frequencies(dataset) -> np.ndarray:
    return class_frequencies([s.label for s in dataset])
