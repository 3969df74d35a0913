"""KL-weighted feature distillation along rays.

Spatial attention maps for the two modalities are softmaxes over per-cell
mean absolute activation.  Restricting both attention maps to one ray's
cells and renormalizing (with a small floor, since slices of a global
softmax are not distributions on their own) gives two per-ray distributions
whose KL divergence, teacher as reference, scores how badly the student
mislocates activation on that ray.  Broadcasting each ray's score to its
cells, scaling background cells down, and unifying each object at the
maximum score over the rays crossing it yields the weight map for an L1
feature-mimicry loss.

With ``detach_weights`` (the default) the weight map is a constant during
backprop; otherwise the gradient also flows through the student attention
chain, treating each object's max-achieving ray as locally constant.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .geometry import ForegroundMask, RayPartition
from .losses_rcd import LossResult
from .tensor import FeatureMap, ScalarGrid, channel_abs_mean, softmax_flat


@dataclass(frozen=True)
class RwdConfig:
    s_bg: float = 0.25      # background weight scale
    eps: float = 1e-12      # per-ray renormalization floor
    detach_weights: bool = True

    def __post_init__(self) -> None:
        if not (0.0 < self.s_bg <= 1.0):
            raise ValueError(f"s_bg must be in (0, 1], got {self.s_bg}")
        if not self.eps > 0:
            raise ValueError(f"eps must be > 0, got {self.eps}")


@dataclass(frozen=True)
class RayWeights:
    """Per-ray nonnegative mismatch scores."""

    a: np.ndarray


@dataclass(frozen=True)
class RwdOutput:
    """Loss result plus the intermediate maps, for dumping and inspection."""

    result: LossResult
    attention_student: ScalarGrid
    attention_teacher: ScalarGrid
    ray_weights: RayWeights
    weight_map: ScalarGrid


def attention_map(f: FeatureMap) -> ScalarGrid:
    """Spatial attention: softmax over the mean absolute channel activation."""
    return softmax_flat(channel_abs_mean(f))


def _ray_restrict(grid: np.ndarray, cells: np.ndarray, eps: float
                  ) -> tuple[np.ndarray, float]:
    vals = grid[cells[:, 0], cells[:, 1]] + eps
    total = vals.sum()
    return vals / total, total


def ray_kl(sc: ScalarGrid, sl: ScalarGrid, p: RayPartition, eps: float
           ) -> RayWeights:
    """KL(teacher ray slice || student ray slice) for every ray.

    Both attention maps are restricted to each ray, floored by ``eps`` and
    renormalized before the divergence, so every score is finite and >= 0.
    Rays with no cells score 0.
    """
    a = np.zeros(p.n_ray)
    for i in range(p.n_ray):
        cells = p.ray_cells[i]
        if len(cells) == 0:
            continue
        q, _ = _ray_restrict(sl.data, cells, eps)
        r, _ = _ray_restrict(sc.data, cells, eps)
        a[i] = float(np.sum(q * np.log(q / r)))
    return RayWeights(a=a)


def _object_rays(p: RayPartition, fg: ForegroundMask) -> dict[int, np.ndarray]:
    """Ray indices intersecting each object (excluded cells ignored)."""
    out: dict[int, np.ndarray] = {}
    for oid in np.unique(fg.owner[fg.owner >= 0]):
        rays = p.assignment[(fg.owner == oid) & (p.assignment >= 0)]
        out[int(oid)] = np.unique(rays)
    return out


def weight_map(a: RayWeights, p: RayPartition, fg: ForegroundMask,
               cfg: RwdConfig) -> ScalarGrid:
    """Broadcast ray scores to cells: scaled background, per-object maxima.

    Background cells carry ``s_bg * A_ray``; all cells of one object carry
    the unscaled maximum ``A_i`` over the rays intersecting it.  Excluded
    cells (origin, outside a restricted field of view) carry 0.
    """
    base = np.where(p.assignment >= 0, a.a[np.clip(p.assignment, 0, None)], 0.0)
    out = np.where(fg.mask, base, cfg.s_bg * base)
    for oid, rays in _object_rays(p, fg).items():
        if len(rays) == 0:
            continue
        cells = (fg.owner == oid) & (p.assignment >= 0)
        out[cells] = a.a[rays].max()
    out[p.assignment < 0] = 0.0
    return ScalarGrid(out)


def weighted_l1_loss(student: FeatureMap, teacher: FeatureMap,
                     weights: ScalarGrid) -> LossResult:
    """Weighted per-cell mean absolute feature difference, weights constant.

    value = (1/(H*W)) * sum_hw w[h,w] * (1/D) * sum_d |teacher - student|;
    the gradient is the matching sign pattern, zero where the residual is 0.
    """
    if student.shape != teacher.shape:
        raise ValueError(f"student shape {student.shape} != teacher {teacher.shape}")
    if weights.shape != (student.h, student.w):
        raise ValueError(f"weight shape {weights.shape} != grid {(student.h, student.w)}")
    resid = teacher.data - student.data
    cell_err = np.abs(resid).mean(axis=0)
    scale = 1.0 / (student.h * student.w)
    value = float(scale * np.sum(weights.data * cell_err))
    grad = weights.data[None] * np.sign(student.data - teacher.data) * (scale / student.d)
    return LossResult(value, grad)


def rwd_loss(student: FeatureMap, teacher: FeatureMap, p: RayPartition,
             fg: ForegroundMask, cfg: RwdConfig) -> RwdOutput:
    """Full pipeline: attention maps -> ray KL -> weight map -> weighted L1.

    Under ``detach_weights=False`` the gradient additionally flows through
    the weight map's dependence on the student attention (renormalized ray
    slices, global softmax, mean absolute channel activation).
    """
    sc = attention_map(student)
    sl = attention_map(teacher)
    a = ray_kl(sc, sl, p, cfg.eps)
    w = weight_map(a, p, fg, cfg)
    direct = weighted_l1_loss(student, teacher, w)
    if cfg.detach_weights:
        return RwdOutput(direct, sc, sl, a, w)

    h, wd = student.h, student.w
    cell_err = np.abs(teacher.data - student.data).mean(axis=0)
    scale = 1.0 / (h * wd)

    # dL/dA_i: background cells contribute s_bg * err, each object's cells
    # contribute err to its max-achieving ray only.
    dA = np.zeros(p.n_ray)
    bg = (~fg.mask) & (p.assignment >= 0)
    np.add.at(dA, p.assignment[bg], cfg.s_bg * cell_err[bg] * scale)
    for oid, rays in _object_rays(p, fg).items():
        if len(rays) == 0:
            continue
        i_star = int(rays[np.argmax(a.a[rays])])
        cells = (fg.owner == oid) & (p.assignment >= 0)
        dA[i_star] += cell_err[cells].sum() * scale

    # through each ray's renormalized student slice into the attention map
    d_sc = np.zeros((h, wd))
    for i in range(p.n_ray):
        if dA[i] == 0.0 or len(p.ray_cells[i]) == 0:
            continue
        cells = p.ray_cells[i]
        q, _ = _ray_restrict(sl.data, cells, cfg.eps)
        r, total = _ray_restrict(sc.data, cells, cfg.eps)
        dr = dA[i] * (-q / r)
        d_sc[cells[:, 0], cells[:, 1]] += (dr - np.dot(dr, r)) / total

    # through the global softmax and the mean absolute channel activation
    s = sc.data
    d_u = s * (d_sc - np.sum(s * d_sc))
    chain = d_u[None] * np.sign(student.data) / student.d

    result = LossResult(direct.value, direct.grad + chain)
    return RwdOutput(result, sc, sl, a, w)
