"""Forward kernels for ball-local geometric normalization and the
cross-stage skip connection used in the detector backbone."""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from salcloud.errors import EmptyBatch, ShapeMismatch


@dataclass
class LocalGroup:
    center: np.ndarray      # (d,)
    neighbors: np.ndarray   # (k, d)

    def __post_init__(self):
        self.center = np.asarray(self.center, dtype=np.float64).reshape(-1)
        self.neighbors = np.asarray(self.neighbors, dtype=np.float64)
        if self.neighbors.ndim == 1:
            self.neighbors = self.neighbors[None, :]
        if self.neighbors.shape[1] != self.center.shape[0]:
            raise ShapeMismatch(f"neighbors {self.neighbors.shape} vs center {self.center.shape}")


@dataclass
class GnmParams:
    alpha: np.ndarray
    beta: np.ndarray
    eps: float = 1e-5

    def __post_init__(self):
        self.alpha = np.asarray(self.alpha, dtype=np.float64)
        self.beta = np.asarray(self.beta, dtype=np.float64)
        if self.eps <= 0:
            raise ValueError("eps must be positive")

    @classmethod
    def identity(cls, d: int, eps: float = 1e-5) -> "GnmParams":
        return cls(np.ones(d), np.zeros(d), eps)


def _check_groups(groups) -> int:
    if not groups:
        raise EmptyBatch("GNM needs at least one group")
    d = groups[0].center.shape[0]
    for g in groups:
        if len(g.neighbors) == 0:
            raise EmptyBatch("every group needs at least one neighbor")
        if g.center.shape[0] != d:
            raise ShapeMismatch("feature width differs across groups")
    return d


def gnm_sigma(groups) -> float:
    """One scalar deviation over every group, neighbor and channel.

    Groups may have different neighbor counts; the mean runs over the true
    number of elements.
    """
    d = _check_groups(groups)
    total = sum(float(np.sum((g.neighbors - g.center) ** 2)) for g in groups)
    count = sum(len(g.neighbors) for g in groups) * d
    return float(np.sqrt(total / count))


def gnm_forward(groups, params: GnmParams) -> list:
    """Normalize neighbor features about their group centre, then append
    the raw features: each group yields a ``(k, 2d)`` array."""
    d = _check_groups(groups)
    if params.alpha.shape != (d,) or params.beta.shape != (d,):
        raise ShapeMismatch(f"GNM params must have width {d}")
    sigma = gnm_sigma(groups)
    out = []
    for g in groups:
        normed = params.alpha * (g.neighbors - g.center) / (sigma + params.eps) + params.beta
        out.append(np.concatenate([normed, g.neighbors], axis=1))
    return out


class LinearReLU:
    def __init__(self, weight, bias):
        self.weight = np.asarray(weight, dtype=np.float64)
        self.bias = np.asarray(bias, dtype=np.float64)

    def __call__(self, x):
        return np.maximum(x @ self.weight + self.bias, 0.0)

    @classmethod
    def random(cls, d_in: int, d_out: int, rng) -> "LinearReLU":
        return cls(rng.normal(0, 1 / np.sqrt(d_in), (d_in, d_out)), rng.normal(0, 0.1, d_out))


class ResidualBlock:
    """Two-layer residual lift ``d_in -> d_out``. The shortcut is identity
    when widths match, otherwise a linear projection."""

    def __init__(self, w1, b1, w2, b2, shortcut=None):
        self.w1, self.b1 = np.asarray(w1, float), np.asarray(b1, float)
        self.w2, self.b2 = np.asarray(w2, float), np.asarray(b2, float)
        self.shortcut = None if shortcut is None else np.asarray(shortcut, float)
        d_in, d_out = self.w1.shape[0], self.w2.shape[1]
        if self.shortcut is None and d_in != d_out:
            raise ShapeMismatch("identity shortcut needs d_in == d_out")

    def __call__(self, x):
        h = np.maximum(x @ self.w1 + self.b1, 0.0)
        skip = x if self.shortcut is None else x @ self.shortcut
        return h @ self.w2 + self.b2 + skip

    @classmethod
    def random(cls, d_in: int, d_out: int, rng, hidden: int | None = None) -> "ResidualBlock":
        hidden = hidden or d_out
        shortcut = None if d_in == d_out else rng.normal(0, 1 / np.sqrt(d_in), (d_in, d_out))
        return cls(rng.normal(0, 1 / np.sqrt(d_in), (d_in, hidden)), rng.normal(0, 0.1, hidden),
                   rng.normal(0, 1 / np.sqrt(hidden), (hidden, d_out)), rng.normal(0, 0.1, d_out),
                   shortcut)


def identity(x):
    return x


def zero_map(d_out: int):
    def f(x):
        return np.zeros((x.shape[0], d_out))
    return f


def scb_forward(f_prev, f_cur, phi_pre, phi_pos) -> np.ndarray:
    """``phi_pos(phi_pre(f_prev) + f_cur)`` for the same k sampled points."""
    f_prev = np.asarray(f_prev, dtype=np.float64)
    f_cur = np.asarray(f_cur, dtype=np.float64)
    if f_prev.ndim != 2 or f_cur.ndim != 2 or len(f_prev) != len(f_cur):
        raise ShapeMismatch(f"stage features misaligned: {f_prev.shape} vs {f_cur.shape}")
    lifted = phi_pre(f_prev)
    if lifted.shape != f_cur.shape:
        raise ShapeMismatch(f"phi_pre produced {lifted.shape}, expected {f_cur.shape}")
    return phi_pos(lifted + f_cur)
