"""Multi-label focal loss with prevalence-based class weights.

Per element, with p the predicted probability and a_c the class weight:

    label 1:  a_c * (1 - p)^gamma * (-ln p)
    label 0:  (1 - a_c) * p^gamma * (-ln(1 - p))

averaged over batch * classes. gamma=0 with a_c=0.5 reduces to half the
binary cross-entropy. Probabilities are clamped to [1e-12, 1 - 1e-12] before
the logs; the clamped region contributes zero gradient.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

_CLAMP = 1e-12


@dataclass
class FocalLossConfig:
    gamma: float = 2.0
    class_weights: np.ndarray | float = 0.5  # a_c per class, or one shared value

    def weights_for(self, num_classes: int) -> np.ndarray:
        w = np.asarray(self.class_weights, dtype=np.float64)
        if w.ndim == 0:
            w = np.full(num_classes, float(w))
        if w.shape != (num_classes,):
            raise ValueError(f"expected {num_classes} class weights, got {w.shape}")
        return w


def focal_loss(probs, labels, cfg: FocalLossConfig) -> float:
    """Mean focal loss over a (B, C) batch of probabilities."""
    p = np.asarray(getattr(probs, "data", probs), dtype=np.float64)
    y = np.asarray(labels, dtype=np.float64)
    if p.shape != y.shape:
        raise ValueError(f"probs {p.shape} and labels {y.shape} differ")
    a = cfg.weights_for(p.shape[-1])
    pc = np.clip(p, _CLAMP, 1.0 - _CLAMP)
    pos = a * (1.0 - pc) ** cfg.gamma * (-np.log(pc))
    neg = (1.0 - a) * pc ** cfg.gamma * (-np.log(1.0 - pc))
    return float(np.mean(np.where(y == 1.0, pos, neg)))


def focal_loss_backward(probs, labels, cfg: FocalLossConfig) -> np.ndarray:
    """d(mean focal loss)/d(probs), zero where the clamp was active."""
    p = np.asarray(getattr(probs, "data", probs), dtype=np.float64)
    y = np.asarray(labels, dtype=np.float64)
    a = cfg.weights_for(p.shape[-1])
    g = cfg.gamma
    pc = np.clip(p, _CLAMP, 1.0 - _CLAMP)
    one_m = 1.0 - pc
    # d/dp of  -a (1-p)^g ln p   and of  -(1-a) p^g ln(1-p)
    dpos = a * (g * one_m ** (g - 1.0) * np.log(pc) - one_m ** g / pc)
    dneg = (1.0 - a) * (pc ** g / one_m - g * pc ** (g - 1.0) * np.log(one_m))
    grad = np.where(y == 1.0, dpos, dneg)
    grad[(p <= _CLAMP) | (p >= 1.0 - _CLAMP)] = 0.0
    return grad / p.size


def prevalence_weights(
    labels, clamp_lo: float = 0.05, clamp_hi: float = 0.95
) -> np.ndarray:
    """Per-class weights a_c = clamp(1 - prevalence_c, lo, hi) from a 0/1
    label matrix (N, C). Rare positives get weights near the ceiling."""
    y = np.asarray(labels, dtype=np.float64)
    if y.ndim != 2 or y.shape[0] < 1:
        raise ValueError(f"expected a non-empty (N, C) label matrix, got {y.shape}")
    prevalence = y.mean(axis=0)
    return np.clip(1.0 - prevalence, clamp_lo, clamp_hi)
