"""Response distillation, the occupancy surrogate task loss, and the total.

Response distillation compares teacher and student prediction heads with a
mean absolute error per head (the signed form would cancel); the surrogate
task loss is a binary cross-entropy between per-cell occupancy logits and
the foreground mask, standing in for a full detection loss at toy scale.
The total loss is a weighted sum; unit weights give the plain four-term sum.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .geometry import ForegroundMask
from .losses_rcd import LossResult
from .tensor import ScalarGrid


@dataclass(frozen=True)
class HeadOutputs:
    """Equally-shaped prediction-head tensors from one network."""

    heads: tuple[np.ndarray, ...]

    def __post_init__(self) -> None:
        if len(self.heads) < 1:
            raise ValueError("need at least one head")
        shape = self.heads[0].shape
        if any(h.shape != shape for h in self.heads):
            raise ValueError("heads must all share one shape")


@dataclass(frozen=True)
class LossWeights:
    w_rcd: float = 1.0
    w_rwd: float = 1.0
    w_src: float = 1.0
    w_res: float = 1.0

    def __post_init__(self) -> None:
        for name in ("w_rcd", "w_rwd", "w_src", "w_res"):
            v = getattr(self, name)
            if not (np.isfinite(v) and v >= 0):
                raise ValueError(f"{name} must be finite and >= 0, got {v}")


def response_loss(yl: HeadOutputs, yc: HeadOutputs) -> LossResult:
    """Mean absolute error averaged over heads; gradient w.r.t. student heads.

    The returned gradient is stacked as ``(n_heads, *head_shape)``.
    """
    if len(yl.heads) != len(yc.heads):
        raise ValueError(f"head count mismatch: {len(yl.heads)} vs {len(yc.heads)}")
    if yl.heads[0].shape != yc.heads[0].shape:
        raise ValueError(
            f"head shape mismatch: {yl.heads[0].shape} vs {yc.heads[0].shape}")
    n = len(yl.heads)
    value = 0.0
    grads = []
    for t, s in zip(yl.heads, yc.heads):
        value += float(np.mean(np.abs(t - s))) / n
        grads.append(np.sign(s - t) / (n * t.size))
    return LossResult(value, np.stack(grads))


def src_loss(pred_occupancy: ScalarGrid, fg: ForegroundMask) -> LossResult:
    """Mean binary cross-entropy of sigmoid(logits) against the foreground mask."""
    if pred_occupancy.shape != (fg.h, fg.w):
        raise ValueError(
            f"occupancy shape {pred_occupancy.shape} != mask {(fg.h, fg.w)}")
    z = pred_occupancy.data
    y = fg.mask.astype(np.float64)
    # stable form: max(z,0) - z*y + log(1 + exp(-|z|))
    per_cell = np.maximum(z, 0.0) - z * y + np.log1p(np.exp(-np.abs(z)))
    n = z.size
    sigmoid = np.where(z >= 0, 1.0 / (1.0 + np.exp(-z)),
                       np.exp(z) / (1.0 + np.exp(z)))
    return LossResult(float(per_cell.mean()), (sigmoid - y) / n)


def total_loss(rcd: LossResult, rwd: LossResult, src: LossResult,
               res: LossResult, lw: LossWeights) -> LossResult:
    """Weighted sum of the four parts; gradients must share one shape."""
    shapes = {rcd.grad.shape, rwd.grad.shape, src.grad.shape, res.grad.shape}
    if len(shapes) != 1:
        raise ValueError(f"gradients must share one parameterization, got {shapes}")
    value = (lw.w_rcd * rcd.value + lw.w_rwd * rwd.value
             + lw.w_src * src.value + lw.w_res * res.value)
    grad = (lw.w_rcd * rcd.grad + lw.w_rwd * rwd.grad
            + lw.w_src * src.grad + lw.w_res * res.grad)
    return LossResult(float(value), grad)
