"""Bidirectional ray-contrastive distillation loss and its student gradient.

Per sampled ray the loss forms a softmax-style ratio in two directions: one
with student vectors at the negative positions (student term) and one with
teacher vectors there (teacher term).  Both numerators share the pooled
positive pair.  The final value is ``-log`` of the ray-averaged sum of both
term ratios; the teacher map is a constant, so the gradient flows into the
student map only, through pooling, the optional L2 normalization, the dot
products, and the log.

Ratios are evaluated with a per-entry max-subtraction so raw (unnormalized)
feature dot products cannot overflow the exponentials.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from .sampling import SampleSet, pool_window
from .tensor import FeatureMap

_LOG_FLOOR = 1e-300


@dataclass(frozen=True)
class RcdConfig:
    tau: float = 0.07        # contrastive temperature
    xi: float = 1e-6         # denominator guard
    normalize: bool = True   # L2-normalize pooled vectors before dot products
    count_all_rays: bool = False   # average over nominal rays instead of active ones
    sum_log_variant: bool = False  # conventional per-ray -log form, for comparison only

    def __post_init__(self) -> None:
        if not self.tau > 0:
            raise ValueError(f"tau must be > 0, got {self.tau}")
        if self.xi < 0:
            raise ValueError(f"xi must be >= 0, got {self.xi}")


@dataclass(frozen=True)
class LossResult:
    """Scalar loss plus the gradient tensor, shared by all loss modules."""

    value: float
    grad: np.ndarray
    status: str = "ok"


def _unit(v: np.ndarray) -> np.ndarray:
    """Row-wise L2 normalization; an exactly-zero vector stays zero."""
    n = np.linalg.norm(v, axis=-1, keepdims=True)
    return np.divide(v, n, out=np.zeros_like(v), where=n > 0)


def _unit_backprop(v: np.ndarray, g_hat: np.ndarray) -> np.ndarray:
    """Pull a gradient w.r.t. v/|v| back to v (zero at the |v|=0 kink)."""
    n = np.linalg.norm(v, axis=-1, keepdims=True)
    vhat = np.divide(v, n, out=np.zeros_like(v), where=n > 0)
    g = (g_hat - vhat * np.sum(vhat * g_hat, axis=-1, keepdims=True))
    return np.divide(g, n, out=np.zeros_like(g), where=n > 0)


def _ratio(sims: np.ndarray, xi: float) -> tuple[float, np.ndarray]:
    """exp(sims[0]) / (sum(exp(sims)) + xi), stabilized; also each summand's share.

    Returns ``(ratio, share)`` where ``share[k] = exp(sims[k]) / denominator``.
    """
    m = sims.max()
    e = np.exp(sims - m)
    den = e.sum() + xi * math.exp(-m)
    share = e / den
    return float(share[0]), share


def _entry_vectors(e, cfg: RcdConfig, student: FeatureMap | None,
                   teacher: FeatureMap | None, m: int):
    """Pooled (and optionally normalized) vectors, negatives in canonical order.

    Negatives are re-sorted by cell so value and gradient are independent of
    the order they were drawn in.  When maps are given, vectors are pooled
    fresh from them; otherwise the SampleSet snapshots are used.
    """
    order = np.lexsort((e.negatives[:, 1], e.negatives[:, 0]))
    negs = e.negatives[order]
    if student is None:
        u, vns = e.student_pos, e.student_negs[order]
        t, wns = e.teacher_pos, e.teacher_negs[order]
    else:
        u = _pool(student, e.positive, m)
        vns = np.stack([_pool(student, tuple(c), m) for c in negs])
        t = _pool(teacher, e.positive, m)
        wns = np.stack([_pool(teacher, tuple(c), m) for c in negs])
    if cfg.normalize:
        return negs, u, vns, t, wns, _unit(u), _unit(vns), _unit(t), _unit(wns)
    return negs, u, vns, t, wns, u, vns, t, wns


def _pool(f: FeatureMap, cell: tuple[int, int], m: int) -> np.ndarray:
    h0, h1, w0, w1 = pool_window(cell, m, f.h, f.w)
    return f.data[:, h0:h1, w0:w1].mean(axis=(1, 2))


def rcd_student_term(s: SampleSet, cfg: RcdConfig) -> float:
    """Sum over rays of the student-side contrastive ratio (snapshot vectors)."""
    total = 0.0
    for e in s.entries:
        _, _, _, _, _, uh, vh, th, _ = _entry_vectors(e, cfg, None, None, s.m)
        sims = np.concatenate(([uh @ th], vh @ th)) / cfg.tau
        r, _ = _ratio(sims, cfg.xi)
        total += r
    return total


def rcd_teacher_term(s: SampleSet, cfg: RcdConfig) -> float:
    """Sum over rays of the teacher-side ratio (negatives from the teacher map)."""
    total = 0.0
    for e in s.entries:
        _, _, _, _, _, uh, _, th, wh = _entry_vectors(e, cfg, None, None, s.m)
        sims = np.concatenate(([uh @ th], wh @ uh)) / cfg.tau
        r, _ = _ratio(sims, cfg.xi)
        total += r
    return total


def rcd_loss(student: FeatureMap, teacher: FeatureMap, s: SampleSet,
             cfg: RcdConfig) -> LossResult:
    """Total contrastive distillation loss with analytic student gradient.

    Vectors are pooled fresh from the maps at the SampleSet's cells, so the
    value is a differentiable function of ``student`` alone.  An empty
    SampleSet contributes nothing and is flagged ``"no-positive"``.
    """
    if student.shape != teacher.shape:
        raise ValueError(f"student shape {student.shape} != teacher {teacher.shape}")
    grad = np.zeros(student.shape)
    if len(s.entries) == 0:
        return LossResult(0.0, grad, "no-positive")

    n_avg = s.n_ray if cfg.count_all_rays else len(s.entries)
    rows = []
    total_sum = 0.0
    sumlog_value = 0.0
    for e in s.entries:
        negs, u, vns, t, wns, uh, vh, th, wh = _entry_vectors(e, cfg, student, teacher, s.m)
        sims_s = np.concatenate(([uh @ th], vh @ th)) / cfg.tau
        r_s, p = _ratio(sims_s, cfg.xi)
        sims_t = np.concatenate(([uh @ th], wh @ uh)) / cfg.tau
        r_t, g = _ratio(sims_t, cfg.xi)
        total_sum += r_s + r_t
        if cfg.sum_log_variant:
            sumlog_value += (-math.log(max(r_s, _LOG_FLOOR))
                             - math.log(max(r_t, _LOG_FLOOR)))
        rows.append((e, negs, u, vns, uh, vh, th, wh, r_s, p, r_t, g))

    if cfg.sum_log_variant:
        value = sumlog_value / (2.0 * n_avg)
    else:
        value = -math.log(max(total_sum / n_avg, _LOG_FLOOR))

    for e, negs, u, vns, uh, vh, th, wh, r_s, p, r_t, g in rows:
        if cfg.sum_log_variant:
            c_s = -1.0 / (2.0 * n_avg * max(r_s, _LOG_FLOOR))
            c_t = -1.0 / (2.0 * n_avg * max(r_t, _LOG_FLOOR))
        else:
            c_s = c_t = -1.0 / max(total_sum, _LOG_FLOOR)

        # student term: d r_s / d u_hat and d r_s / d v_hat_k
        du_hat = c_s * r_s * (1.0 - p[0]) / cfg.tau * th
        dv_hat = (-c_s * r_s / cfg.tau) * p[1:, None] * th[None, :]
        # teacher term: u appears in the numerator and every denominator entry
        du_hat = du_hat + c_t * r_t / cfg.tau * (
            (1.0 - g[0]) * th - g[1:] @ wh)

        if cfg.normalize:
            du = _unit_backprop(u, du_hat)
            dv = _unit_backprop(vns, dv_hat)
        else:
            du, dv = du_hat, dv_hat

        h0, h1, w0, w1 = pool_window(e.positive, s.m, student.h, student.w)
        grad[:, h0:h1, w0:w1] += du[:, None, None] / ((h1 - h0) * (w1 - w0))
        for k, cell in enumerate(negs):
            h0, h1, w0, w1 = pool_window(tuple(cell), s.m, student.h, student.w)
            grad[:, h0:h1, w0:w1] += dv[k][:, None, None] / ((h1 - h0) * (w1 - w0))

    return LossResult(float(value), grad)
