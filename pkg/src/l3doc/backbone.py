"""Permutation-invariant point-cloud classifier built from reconstructed kernels.

Every point passes independently through a shared MLP whose per-layer
weights are the (1,1,w_in,w_out) kernels handed in by the factorization;
a global max over the point axis pools each object into one feature
vector, and a small per-task head maps it to class scores.

Points are canonically ordered (lexicographic sort) before the MLP:
mathematically a no-op for this architecture, it guarantees the logits
are *bit-identical* under any permutation of an object's points, which
BLAS-backed matmuls do not promise on their own.
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import Sequence

import numpy as np

from . import autodiff as ad
from .autodiff import ShapeError, Tensor
from .errors import ConfigError, DataError
from .factorization import POINTNET_WIDTHS


@dataclass(frozen=True)
class BackboneConfig:
    widths: tuple[int, ...] = POINTNET_WIDTHS
    head_widths: tuple[int, ...] = (256,)
    loss_kind: str = "squared"

    def __post_init__(self):
        object.__setattr__(self, "widths", tuple(int(w) for w in self.widths))
        object.__setattr__(self, "head_widths", tuple(int(w) for w in self.head_widths))
        if self.loss_kind not in ("squared", "cross_entropy"):
            raise ConfigError(f"unknown loss kind {self.loss_kind!r}")

    def head_dims(self, n_classes: int) -> tuple[int, ...]:
        return (self.widths[-1], *self.head_widths, n_classes)


def canonical_order(points: np.ndarray) -> np.ndarray:
    """Sort an (n, d) point set lexicographically by coordinates."""
    return points[np.lexsort(points.T[::-1])]


def forward(batch: np.ndarray, kernels: Sequence[Tensor], biases: Sequence[Tensor],
            head_weights: Sequence[Tensor], head_biases: Sequence[Tensor]) -> Tensor:
    """Class scores (b, c) for a (b, n_pts, d) batch of point clouds."""
    batch = np.asarray(batch, dtype=np.float64)
    if batch.ndim != 3 or batch.shape[1] < 1:
        raise ShapeError(f"forward: batch must be (b, n_pts, d), got {batch.shape}")
    d = batch.shape[2]
    chain = [d] + [int(k.shape[3]) for k in kernels]
    for i, k in enumerate(kernels):
        if k.shape[:2] != (1, 1) or k.shape[2] != chain[i]:
            raise ShapeError(f"forward: layer {i + 1} kernel {k.shape} breaks width chain {chain}")
    x = ad.constant(np.stack([canonical_order(obj) for obj in batch]))
    for k, b in zip(kernels, biases):
        w = ad.reshape(k, (int(k.shape[2]), int(k.shape[3])))
        x = ad.relu(ad.add(ad.matmul(x, w), b))
    pooled = ad.max_pool_points(x)
    h = pooled
    for i, (w, b) in enumerate(zip(head_weights, head_biases)):
        h = ad.add(ad.matmul(h, w), b)
        if i < len(head_weights) - 1:
            h = ad.relu(h)
    return h


def one_hot(labels: Sequence[int], n_classes: int) -> np.ndarray:
    labels = np.asarray(labels, dtype=np.int64)
    if labels.ndim != 1:
        raise DataError(f"labels must be a flat index vector, got shape {labels.shape}")
    if labels.size and (labels.min() < 0 or labels.max() >= n_classes):
        raise DataError(f"label index out of range [0, {n_classes}): {labels}")
    out = np.zeros((labels.size, n_classes))
    out[np.arange(labels.size), labels] = 1.0
    return out


def logits_to_probs(logits: Tensor) -> Tensor:
    return ad.softmax(logits, axis=-1)


def classification_loss(logits: Tensor, targets: np.ndarray, kind: str = "squared") -> Tensor:
    """Mean per-object loss between softmax probabilities and one-hot targets.

    "squared" is the sum of squared differences; "cross_entropy" is the
    ablation alternative.
    """
    targets = np.asarray(targets, dtype=np.float64)
    if tuple(targets.shape) != tuple(logits.shape):
        raise ShapeError(f"classification_loss: targets {targets.shape} vs logits {logits.shape}")
    b = targets.shape[0]
    probs = logits_to_probs(logits)
    if kind == "squared":
        return ad.scale(ad.sq_l2_diff(probs, ad.constant(targets)), 1.0 / b)
    if kind == "cross_entropy":
        picked = ad.mul(ad.log(probs), ad.constant(targets))
        return ad.scale(ad.sum_all(picked), -1.0 / b)
    raise ConfigError(f"unknown loss kind {kind!r}")


def accuracy(logits, labels: Sequence[int]) -> float:
    """Argmax match rate; ties resolve to the lowest class index."""
    scores = logits.data if isinstance(logits, Tensor) else np.asarray(logits)
    labels = np.asarray(labels, dtype=np.int64)
    pred = np.argmax(scores, axis=-1)
    return float(np.mean(pred == labels))
