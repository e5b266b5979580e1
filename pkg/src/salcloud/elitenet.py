"""Tiny point-cloud classifier: shared per-point MLP, max-pool, FC head.

Everything is plain numpy with a hand-written reverse pass specialised to
this architecture, so gradients reach the input coordinates exactly.
Samples of different sizes are processed together by stacking their points
and pooling per segment.
"""

from __future__ import annotations

import json
import math
from dataclasses import dataclass, field

import numpy as np

from salcloud.errors import (
    BadFrequency,
    EmptyDataset,
    ShapeMismatch,
    StaleTape,
)
from salcloud.pointset import CLASSES, NormalizedSample, PointSample, normalize_sample

CHECKPOINT_FORMAT = "salcloud-elite"
CHECKPOINT_VERSION = 1
LOG_CLAMP = 1e-12
WCE_EPS = 0.001


@dataclass
class EliteModel:
    """Per-point layers (``mlp``, ReLU after each) feed a channel-wise max-pool;
    ``fc`` layers use ReLU on all but the last, which emits logits."""

    mlp: list
    fc: list
    input_dim: int = 4
    num_classes: int = 3

    def __post_init__(self):
        dim = self.input_dim
        for w, b in list(self.mlp) + list(self.fc):
            if w.shape[0] != dim or b.shape != (w.shape[1],):
                raise ShapeMismatch(f"layer {w.shape}/{b.shape} does not chain from width {dim}")
            dim = w.shape[1]
        if dim != self.num_classes:
            raise ShapeMismatch(f"head emits {dim} logits, expected {self.num_classes}")

    def params(self) -> list:
        out = []
        for w, b in list(self.mlp) + list(self.fc):
            out.extend([w, b])
        return out

    def copy(self) -> "EliteModel":
        return EliteModel([(w.copy(), b.copy()) for w, b in self.mlp],
                          [(w.copy(), b.copy()) for w, b in self.fc],
                          self.input_dim, self.num_classes)


def init_model(seed: int = 0, mlp_widths=(32, 64, 128), fc_widths=(64,),
               input_dim: int = 4, num_classes: int = 3) -> EliteModel:
    """He-uniform weights, zero biases."""
    rng = np.random.default_rng(seed)

    def layer(n_in, n_out):
        bound = math.sqrt(6.0 / n_in)
        return rng.uniform(-bound, bound, size=(n_in, n_out)), np.zeros(n_out)

    mlp, dim = [], input_dim
    for width in mlp_widths:
        mlp.append(layer(dim, width))
        dim = width
    fc = []
    for width in list(fc_widths) + [num_classes]:
        fc.append(layer(dim, width))
        dim = width
    return EliteModel(mlp, fc, input_dim, num_classes)


@dataclass
class ForwardTape:
    """Everything the reverse pass needs. Row indices in ``argmax`` are
    global rows of the stacked point matrix."""

    mlp_acts: list          # input followed by each post-ReLU activation
    argmax: np.ndarray      # (B, C) winning row per sample and channel
    fc_acts: list           # pooled feature followed by each FC output (post-ReLU)
    logits: np.ndarray
    probs: np.ndarray
    offsets: np.ndarray     # start row of every sample, plus total rows
    loss: float | None = None

    @property
    def n_points(self) -> np.ndarray:
        return np.diff(self.offsets)


def _softmax(logits: np.ndarray) -> np.ndarray:
    z = logits - logits.max(axis=-1, keepdims=True)
    e = np.exp(z)
    return e / e.sum(axis=-1, keepdims=True)


def _points_of(s) -> np.ndarray:
    if isinstance(s, NormalizedSample):
        return s.points
    return np.asarray(s, dtype=np.float64)


def forward_batch(model: EliteModel, point_sets) -> ForwardTape:
    arrays = [_points_of(p) for p in point_sets]
    if not arrays or any(len(a) == 0 for a in arrays):
        raise ShapeMismatch("every sample needs at least one point")
    for a in arrays:
        if a.ndim != 2 or a.shape[1] != model.input_dim:
            raise ShapeMismatch(f"expected (k, {model.input_dim}) points, got {a.shape}")
    sizes = np.array([len(a) for a in arrays])
    offsets = np.concatenate([[0], np.cumsum(sizes)])
    h = np.vstack(arrays)
    mlp_acts = [h]
    for w, b in model.mlp:
        h = np.maximum(h @ w + b, 0.0)
        mlp_acts.append(h)

    starts = offsets[:-1]
    pooled = np.maximum.reduceat(h, starts, axis=0)
    seg = np.repeat(np.arange(len(arrays)), sizes)
    rows = np.arange(len(h))[:, None]
    # First row attaining the max; later duplicates receive no gradient.
    cand = np.where(h == pooled[seg], rows, len(h))
    argmax = np.minimum.reduceat(cand, starts, axis=0)

    g = pooled
    fc_acts = [g]
    for i, (w, b) in enumerate(model.fc):
        g = g @ w + b
        if i < len(model.fc) - 1:
            g = np.maximum(g, 0.0)
        fc_acts.append(g)
    logits = g
    return ForwardTape(mlp_acts, argmax, fc_acts, logits, _softmax(logits), offsets)


def forward(model: EliteModel, sample) -> tuple:
    """Class probabilities for one (normalized) sample plus its tape."""
    tape = forward_batch(model, [sample])
    return tape.probs[0], tape


def ce_loss(probs, label: int) -> float:
    return float(-math.log(max(float(np.asarray(probs)[label]), LOG_CLAMP)))


def wce_alpha(freqs, eps: float = WCE_EPS) -> np.ndarray:
    """Per-class weights 1 / (F_c - eps)."""
    f = np.asarray(freqs, dtype=np.float64)
    if np.any(f <= eps):
        raise BadFrequency(f"class frequencies must exceed eps={eps}: {f.tolist()}")
    return 1.0 / (f - eps)


def wce_loss(probs, label: int, freqs, eps: float = WCE_EPS) -> float:
    return float(wce_alpha(freqs, eps)[label]) * ce_loss(probs, label)


def class_frequencies(labels, num_classes: int = 3) -> np.ndarray:
    counts = np.bincount(np.asarray(labels, dtype=np.int64), minlength=num_classes)
    return counts / counts.sum()


def _loss_and_dlogits(tape: ForwardTape, labels, class_weights=None):
    labels = np.asarray(labels, dtype=np.int64)
    if len(labels) != len(tape.probs):
        raise StaleTape(f"{len(labels)} labels for a tape of {len(tape.probs)} samples")
    n = len(labels)
    picked = np.maximum(tape.probs[np.arange(n), labels], LOG_CLAMP)
    per_sample = -np.log(picked)
    dlogits = tape.probs.copy()
    dlogits[np.arange(n), labels] -= 1.0
    if class_weights is not None:
        w = np.asarray(class_weights)[labels]
        per_sample = per_sample * w
        dlogits *= w[:, None]
    return per_sample, dlogits


def _backward(model: EliteModel, tape: ForwardTape, dlogits: np.ndarray, need_params: bool = True):
    """Reverse pass. Returns (param grads in ``model.params()`` order, dX)."""
    fc_grads = []
    g = dlogits
    for i in range(len(model.fc) - 1, -1, -1):
        w, _ = model.fc[i]
        if i < len(model.fc) - 1:
            g = g * (tape.fc_acts[i + 1] > 0)
        a_in = tape.fc_acts[i]
        if need_params:
            fc_grads.append((a_in.T @ g, g.sum(axis=0)))
        g = g @ w.T
    fc_grads.reverse()

    n_rows = tape.offsets[-1]
    n_ch = g.shape[1]
    dh = np.zeros((n_rows, n_ch))
    np.add.at(dh, (tape.argmax, np.broadcast_to(np.arange(n_ch), tape.argmax.shape)), g)

    mlp_grads = []
    for i in range(len(model.mlp) - 1, -1, -1):
        w, _ = model.mlp[i]
        dz = dh * (tape.mlp_acts[i + 1] > 0)
        if need_params:
            mlp_grads.append((tape.mlp_acts[i].T @ dz, dz.sum(axis=0)))
        dh = dz @ w.T
    mlp_grads.reverse()

    grads = []
    if need_params:
        for gw, gb in mlp_grads + fc_grads:
            grads.extend([gw, gb])
    return grads, dh


def backward_to_inputs(model: EliteModel, sample, label: int, tape: ForwardTape,
                       class_weights=None) -> np.ndarray:
    """Gradient of the (optionally class-weighted) cross entropy with respect
    to every point's four channels, shape ``(k, 4)``.

    Max-pool routes each channel's gradient to its first maximal point only.
    """
    pts = _points_of(sample)
    if len(tape.probs) != 1 or tape.offsets[-1] != len(pts) or tape.mlp_acts[0].shape != pts.shape:
        raise StaleTape("tape does not belong to this sample")
    if not np.array_equal(tape.mlp_acts[0], pts):
        raise StaleTape("sample changed since the forward pass")
    per_sample, dlogits = _loss_and_dlogits(tape, [label], class_weights)
    tape.loss = float(per_sample[0])
    _, dx = _backward(model, tape, dlogits, need_params=False)
    return dx


def loss_and_input_grad(model: EliteModel, points, label: int, class_weights=None):
    probs, tape = forward(model, points)
    dx = backward_to_inputs(model, points, label, tape, class_weights)
    return tape.loss, dx


def sample_loss(model: EliteModel, points, label: int, class_weights=None) -> float:
    tape = forward_batch(model, [points])
    per_sample, _ = _loss_and_dlogits(tape, [label], class_weights)
    return float(per_sample[0])


@dataclass
class TrainConfig:
    epochs: int = 10
    learning_rate: float = 0.01
    weight_decay: float = 0.0002
    momentum: float = 0.9
    batch_size: int = 16
    seed: int = 0
    loss: str = "ce"

    def __post_init__(self):
        if self.epochs < 0 or self.batch_size < 1:
            raise ValueError("epochs must be >= 0 and batch_size >= 1")
        if self.learning_rate < 0 or self.weight_decay < 0 or not 0 <= self.momentum < 1:
            raise ValueError("learning_rate, weight_decay must be >= 0 and momentum in [0, 1)")
        if self.loss not in ("ce", "wce"):
            raise ValueError(f"loss must be 'ce' or 'wce', got {self.loss!r}")


@dataclass
class TrainResult:
    model: EliteModel
    loss_history: list = field(default_factory=list)  # dataset mean loss before training, then per epoch


def _normalized_arrays(dataset) -> list:
    return [normalize_sample(s).points for s in dataset]


def mean_loss(model: EliteModel, arrays, labels, class_weights=None, batch_size: int = 64) -> float:
    total = 0.0
    for i in range(0, len(arrays), batch_size):
        tape = forward_batch(model, arrays[i:i + batch_size])
        per_sample, _ = _loss_and_dlogits(tape, labels[i:i + batch_size], class_weights)
        total += float(per_sample.sum())
    return total / len(arrays)


def train(model: EliteModel, dataset, cfg: TrainConfig | None = None) -> TrainResult:
    """Mini-batch SGD with momentum and L2 weight decay on normalized samples.

    The input model is left untouched; a trained copy is returned.
    """
    cfg = cfg or TrainConfig()
    if not dataset:
        raise EmptyDataset("cannot train on an empty dataset")
    labels = np.array([s.label for s in dataset], dtype=np.int64)
    if len(np.unique(labels)) < 2:
        raise EmptyDataset("training needs at least two classes present")
    arrays = _normalized_arrays(dataset)
    weights = None
    if cfg.loss == "wce":
        weights = wce_alpha(class_frequencies(labels, model.num_classes))

    model = model.copy()
    params = model.params()
    velocity = [np.zeros_like(p) for p in params]
    rng = np.random.default_rng(cfg.seed)
    history = [mean_loss(model, arrays, labels, weights)]
    for _ in range(cfg.epochs):
        order = rng.permutation(len(arrays))
        for start in range(0, len(order), cfg.batch_size):
            idx = order[start:start + cfg.batch_size]
            tape = forward_batch(model, [arrays[i] for i in idx])
            _, dlogits = _loss_and_dlogits(tape, labels[idx], weights)
            grads, _ = _backward(model, tape, dlogits / len(idx))
            for p, g, v in zip(params, grads, velocity):
                g = g + cfg.weight_decay * p
                v *= cfg.momentum
                v += g
                p -= cfg.learning_rate * v
        history.append(mean_loss(model, arrays, labels, weights))
    return TrainResult(model, history)


def predict(model: EliteModel, samples, batch_size: int = 64) -> np.ndarray:
    """Predicted class ids for a list of samples (normalized internally)."""
    arrays = [normalize_sample(s).points for s in samples]
    return predict_arrays(model, arrays, batch_size)


def predict_arrays(model: EliteModel, arrays, batch_size: int = 64) -> np.ndarray:
    out = []
    for i in range(0, len(arrays), batch_size):
        out.append(np.argmax(forward_batch(model, arrays[i:i + batch_size]).probs, axis=1))
    return np.concatenate(out) if out else np.zeros(0, dtype=np.int64)


@dataclass
class EvalReport:
    accuracy: float
    per_class_accuracy: list        # NaN for classes absent from the dataset
    average_accuracy: float         # mean over classes present
    confusion: np.ndarray           # rows: true class, columns: predicted

    def as_dict(self) -> dict:
        return {
            "accuracy": self.accuracy,
            "average_accuracy": self.average_accuracy,
            "per_class_accuracy": {
                CLASSES[i]: (None if math.isnan(a) else a) for i, a in enumerate(self.per_class_accuracy)
            },
            "confusion": self.confusion.tolist(),
        }


def report_from_predictions(labels, preds, num_classes: int = 3) -> EvalReport:
    labels = np.asarray(labels, dtype=np.int64)
    preds = np.asarray(preds, dtype=np.int64)
    if len(labels) == 0:
        raise EmptyDataset("cannot evaluate an empty dataset")
    confusion = np.zeros((num_classes, num_classes), dtype=np.int64)
    np.add.at(confusion, (labels, preds), 1)
    counts = confusion.sum(axis=1)
    per_class = [float(confusion[c, c] / counts[c]) if counts[c] else float("nan") for c in range(num_classes)]
    present = [a for a in per_class if not math.isnan(a)]
    return EvalReport(float(np.trace(confusion) / len(labels)), per_class,
                      float(np.mean(present)), confusion)


def evaluate(model: EliteModel, dataset) -> EvalReport:
    if not dataset:
        raise EmptyDataset("cannot evaluate an empty dataset")
    labels = [s.label for s in dataset]
    return report_from_predictions(labels, predict(model, dataset), model.num_classes)


def _layer_record(w, b):
    return {"in": int(w.shape[0]), "out": int(w.shape[1]),
            "weight": w.ravel(order="C").tolist(), "bias": b.tolist()}


def model_to_dict(model: EliteModel, meta: dict | None = None) -> dict:
    return {
        "format": CHECKPOINT_FORMAT,
        "version": CHECKPOINT_VERSION,
        "input_dim": model.input_dim,
        "num_classes": model.num_classes,
        "mlp": [_layer_record(w, b) for w, b in model.mlp],
        "fc": [_layer_record(w, b) for w, b in model.fc],
        "meta": meta or {},
    }


def model_from_dict(d: dict) -> EliteModel:
    if d.get("format") != CHECKPOINT_FORMAT:
        raise ValueError(f"not an elite checkpoint (format={d.get('format')!r})")
    if d.get("version") != CHECKPOINT_VERSION:
        raise ValueError(f"unsupported checkpoint version {d.get('version')!r}")

    def layers(recs):
        out = []
        for r in recs:
            w = np.array(r["weight"], dtype=np.float64).reshape(r["in"], r["out"])
            out.append((w, np.array(r["bias"], dtype=np.float64)))
        return out

    return EliteModel(layers(d["mlp"]), layers(d["fc"]), d["input_dim"], d["num_classes"])


def save_model(model: EliteModel, path, meta: dict | None = None) -> None:
    # Python's float repr round-trips exactly, so the text file is bit-exact.
    with open(path, "w", encoding="utf-8") as fh:
        json.dump(model_to_dict(model, meta), fh, sort_keys=True)
        fh.write("\n")


def load_model(path) -> EliteModel:
    with open(path, encoding="utf-8") as fh:
        return model_from_dict(json.load(fh))


def load_checkpoint_meta(path) -> dict:
    with open(path, encoding="utf-8") as fh:
        return json.load(fh).get("meta", {})
