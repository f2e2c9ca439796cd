from __future__ import annotations

import numpy as np

from ..geometry import ShapeGraph
from ..varifold import KernelConfig, dist_sq, grad_dist_sq


def softmax(logits: np.ndarray) -> np.ndarray:
    z = logits - logits.max(axis=-1, keepdims=True)
    e = np.exp(z)
    return e / e.sum(axis=-1, keepdims=True)


def log_softmax(logits: np.ndarray) -> np.ndarray:
    z = logits - logits.max(axis=-1, keepdims=True)
    return z - np.log(np.exp(z).sum(axis=-1, keepdims=True))


def cross_entropy_loss(logits: np.ndarray, labels) -> tuple[float, np.ndarray]:
    """Mean negative log-likelihood over the batch and its gradient w.r.t. the logits."""
    logits = np.atleast_2d(logits)
    labels = np.asarray(labels, dtype=np.int64)
    b, c = logits.shape
    if labels.shape != (b,):
        raise ValueError(f"expected {b} labels, got shape {labels.shape}")
    if labels.min() < 0 or labels.max() >= c:
        raise ValueError(f"labels must lie in [0, {c}), got range [{labels.min()}, {labels.max()}]")
    lp = log_softmax(logits)
    loss = -lp[np.arange(b), labels].mean()
    grad = np.exp(lp)
    grad[np.arange(b), labels] -= 1.0
    return float(loss), grad / b


def varifold_recon_loss(output: ShapeGraph, target: ShapeGraph, k: KernelConfig) -> tuple[float, np.ndarray]:
    """Squared varifold distance of a reconstruction to its target, with the
    gradient w.r.t. the reconstruction's vertices.

    Near-zero-length output edges are clamped (they contribute nothing)
    instead of raising, since decoders emit them early in training.
    """
    loss = dist_sq(output, target, k, clamp=True)
    return loss, grad_dist_sq(output, target, k, clamp=True)
