"""Masked binary cross-entropy over note-onset cells.

The loss reads only cells where the mask is 1 (the set of onset positions);
its gradient is exactly zero everywhere else.  Predictions are clamped to
[eps, 1-eps] before the logs so saturated sigmoids stay finite.
"""

from __future__ import annotations

import warnings

import numpy as np

CLAMP_EPS = 1e-7


def masked_bce(pred, target, mask, reduction="sum", clamp=CLAMP_EPS):
    """Return (loss, gradient w.r.t. pred).

    ``reduction`` is "sum" (default: plain sum over masked cells) or "mean"
    (sum divided by the mask count; 0 with a warning for an empty mask).
    """
    if pred.shape != target.shape or pred.shape != mask.shape:
        raise ValueError(
            f"shape mismatch: pred {pred.shape}, target {target.shape}, mask {mask.shape}"
        )
    if reduction not in ("sum", "mean"):
        raise ValueError(f"unknown reduction {reduction!r}")

    p = np.clip(pred, clamp, 1.0 - clamp)
    per_cell = -(target * np.log(p) + (1.0 - target) * np.log1p(-p)) * mask
    total = per_cell.sum()

    # clamp is part of the function: zero slope where it is active
    inside = (pred > clamp) & (pred < 1.0 - clamp)
    grad = mask * inside * (p - target) / (p * (1.0 - p))

    if reduction == "mean":
        n = mask.sum()
        if n == 0:
            warnings.warn("masked_bce: empty mask with mean reduction, loss = 0")
            return 0.0, np.zeros_like(grad)
        return float(total / n), grad / n
    return float(total), grad
