"""Saliency-drop versus random-drop degradation sweep."""

from __future__ import annotations

import logging
from dataclasses import dataclass

import numpy as np

from salcloud.elitenet import predict, report_from_predictions
from salcloud.errors import DataError
from salcloud.saliency import DropSchedule, drop_points_random, saliency_drop

log = logging.getLogger(__name__)


@dataclass
class DropRow:
    fraction: float
    method: str                 # "SD" or "RD"
    accuracy: float             # mean over repeats
    accuracy_std: float
    per_class: list             # mean per-class accuracy over repeats
    repeats: int
    points_dropped: int         # total over the dataset (one repeat)


def drop_experiment(model, samples, fractions=(0.0, 0.05, 0.1, 0.2, 0.4), repeats: int = 10,
                    seed: int = 0, drop_interval: int = 5, min_points: int = 10) -> list:
    """Accuracy after dropping a fraction of each sample's points.

    SD removes points by saliency (deterministic for a fixed model); RD
    removes the same number of points per sample uniformly at random, once
    per repeat with seeds derived from ``seed``.
    """
    labels = [s.label for s in samples]
    rows = []
    for fraction in fractions:
        sched = DropSchedule(alpha=fraction, beta=0.0, drop_interval=drop_interval, min_points=min_points)
        sd_samples, counts = [], []
        for s in samples:
            try:
                res = saliency_drop(model, s, sched)
                sd_samples.append(res.sample)
                counts.append(s.k - res.sample.k)
            except DataError as exc:
                log.debug("sample %s kept whole: %s", s.source_id, exc)
                sd_samples.append(s)
                counts.append(0)
        sd = report_from_predictions(labels, predict(model, sd_samples))
        rows.append(DropRow(fraction, "SD", sd.accuracy, 0.0, sd.per_class_accuracy, 1, int(sum(counts))))

        accs, per_class = [], []
        for r in range(repeats):
            rd_samples = [
                drop_points_random(s, c, seed=_derived_seed(seed, fraction, r, i)) if c else s
                for i, (s, c) in enumerate(zip(samples, counts))
            ]
            rep = report_from_predictions(labels, predict(model, rd_samples))
            accs.append(rep.accuracy)
            per_class.append(rep.per_class_accuracy)
        rows.append(DropRow(fraction, "RD", float(np.mean(accs)), float(np.std(accs)),
                            [float(v) for v in np.nanmean(np.array(per_class), axis=0)], repeats,
                            int(sum(counts))))
    return rows


def _derived_seed(seed: int, fraction: float, repeat: int, index: int) -> int:
    return int(np.random.SeedSequence([seed, int(round(fraction * 1e6)), repeat, index]).generate_state(1)[0])
