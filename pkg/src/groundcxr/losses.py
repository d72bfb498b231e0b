"""Pre-training objectives: contrastive alignment, pair matching, report
generation cross-entropy, and their weighted sum.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .autodiff import Tensor, log_softmax


@dataclass
class LossWeights:
    """Scalar weights for the composite objective; the contrastive
    temperature is an initial value for a learnable parameter."""

    itm_weight: float = 1.0
    lm_weight: float = 1.0
    entity_weight: float = 1.0
    itc_temperature_init: float = 0.07

    def __post_init__(self):
        if min(self.itm_weight, self.lm_weight, self.entity_weight) < 0:
            raise ValueError("loss weights must be non-negative")
        if self.itc_temperature_init <= 0:
            raise ValueError("itc temperature must be positive")


def itc_loss(image_proj: Tensor, text_proj: Tensor, temperature) -> Tensor:
    """Symmetric in-batch InfoNCE over cosine similarities.

    Rows of both inputs must be L2-normalized; pair i is the positive for
    row i in both directions.  `temperature` may be a scalar or a learnable
    0-d tensor.
    """
    if image_proj.shape[0] == 0:
        raise ValueError("empty batch")
    if image_proj.shape != text_proj.shape:
        raise ValueError("projection batches must have equal shape")
    if not isinstance(temperature, Tensor):
        temperature = Tensor(float(temperature))
    batch = image_proj.shape[0]
    logits = (image_proj @ text_proj.swapaxes(-1, -2)) / temperature
    targets = np.arange(batch)
    i2t = -log_softmax(logits, axis=-1)[targets, targets].mean()
    t2i = -log_softmax(logits.swapaxes(-1, -2), axis=-1)[targets, targets].mean()
    return (i2t + t2i) * 0.5


def itm_loss(match_logits: Tensor, labels: np.ndarray) -> Tensor:
    """Mean cross-entropy over (match, no-match) logits."""
    labels = np.asarray(labels, dtype=bool)
    if labels.ndim != 1 or labels.size == 0:
        raise ValueError("labels must be a non-empty 1-D boolean array")
    if match_logits.shape != (labels.size, 2):
        raise ValueError("match_logits must be (B, 2)")
    log_probs = log_softmax(match_logits, axis=-1)
    # column 0 = match, column 1 = no-match
    picked = log_probs[np.arange(labels.size), np.where(labels, 0, 1)]
    return -picked.mean()


def itm_accuracy(match_logits: Tensor, labels: np.ndarray) -> float:
    predicted_match = match_logits.data[:, 0] > match_logits.data[:, 1]
    return float((predicted_match == np.asarray(labels, dtype=bool)).mean())


def derangement(batch: int, rng: np.random.Generator) -> np.ndarray:
    """Uniform random permutation of 0..batch-1 with no fixed points."""
    if batch < 2:
        raise ValueError("derangement needs at least two elements")
    while True:
        perm = rng.permutation(batch)
        if not (perm == np.arange(batch)).any():
            return perm


def lm_loss(step_logits: Tensor, targets: np.ndarray, mask: np.ndarray) -> Tensor:
    """Mean masked next-token cross-entropy.

    step_logits (B, L, V) or (L, V); targets and mask match its leading
    shape.  Raises when every position is masked.
    """
    targets = np.asarray(targets)
    mask = np.asarray(mask, dtype=bool)
    if targets.shape != mask.shape or targets.shape != step_logits.shape[:-1]:
        raise ValueError("targets/mask must match logits leading shape")
    total = int(mask.sum())
    if total == 0:
        raise ValueError("all target positions are masked")
    log_probs = log_softmax(step_logits, axis=-1)
    flat = log_probs.reshape(-1, step_logits.shape[-1])
    picked = flat[np.arange(flat.shape[0]), targets.reshape(-1)]
    weights = mask.reshape(-1).astype(np.float64) / total
    return -(picked * Tensor(weights)).sum()


def total_loss(itc: Tensor, itm: Tensor, lm: Tensor, entity: Tensor,
               weights: LossWeights) -> Tensor:
    return (itc + weights.itm_weight * itm + weights.lm_weight * lm
            + weights.entity_weight * entity)
