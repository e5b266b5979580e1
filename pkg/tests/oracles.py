"""Independent reference implementations used by the tests."""

import itertools

import numpy as np

from salcloud.elitenet import forward_batch, loss_and_input_grad, sample_loss
from salcloud.geom import iou


def activation_pattern(model, pts):
    tape = forward_batch(model, [pts])
    masks = [a > 0 for a in tape.mlp_acts[1:]] + [a > 0 for a in tape.fc_acts[1:-1]]
    return [m.tobytes() for m in masks] + [tape.argmax.tobytes()]


def fd_relative_errors(model, pts, label, rng, n_probes=20, delta=1e-4, max_tries=2000):
    """Central-difference check of dL/dx at ``n_probes`` (point, channel) probes.

    Probes are drawn from points that win at least one max-pool channel
    (elsewhere the gradient is identically zero). A probe whose +-delta
    step changes the ReLU/argmax pattern straddles a kink where the
    derivative is undefined, so it is redrawn.
    """
    _, grad = loss_and_input_grad(model, pts, label)
    critical = np.unique(forward_batch(model, [pts]).argmax)
    base = activation_pattern(model, pts)
    errs = []
    for _ in range(max_tries):
        if len(errs) == n_probes:
            break
        i, c = int(rng.choice(critical)), int(rng.integers(0, pts.shape[1]))
        plus, minus = pts.copy(), pts.copy()
        plus[i, c] += delta
        minus[i, c] -= delta
        if activation_pattern(model, plus) != base or activation_pattern(model, minus) != base:
            continue
        fd = (sample_loss(model, plus, label) - sample_loss(model, minus, label)) / (2 * delta)
        errs.append(abs(grad[i, c] - fd) / (abs(grad[i, c]) + 1e-8))
    assert len(errs) == n_probes, "could not find enough smooth probes"
    return errs


def brute_match(det_boxes, det_scores, gt_boxes, thresh, mode="3d"):
    """Greedy matching spelled out with plain loops."""
    order = sorted(range(len(det_boxes)), key=lambda i: (-det_scores[i], i))
    used, out = set(), [-1] * len(det_boxes)
    for i in order:
        best, best_v = -1, -1.0
        for j in range(len(gt_boxes)):
            if j in used:
                continue
            v = iou(det_boxes[i], gt_boxes[j], mode)
            if v > best_v:
                best, best_v = j, v
        if best >= 0 and best_v >= thresh:
            out[i] = best
            used.add(best)
    return out


def brute_nms(boxes, scores, thresh, labels, mode="3d"):
    """O(n^2) NMS: a box survives if no kept higher-ranked same-class box overlaps it."""
    order = sorted(range(len(boxes)), key=lambda i: (-scores[i], i))
    keep = []
    for i in order:
        if all(labels[k] != labels[i] or iou(boxes[k], boxes[i], mode) <= thresh for k in keep):
            keep.append(i)
    return keep


def all_subsets(n):
    return itertools.chain.from_iterable(itertools.combinations(range(n), m) for m in range(n + 1))
