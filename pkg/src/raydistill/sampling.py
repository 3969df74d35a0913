"""Positive/negative sample selection along rays and local feature pooling.

Each ray that crosses a foreground object contributes one positive cell and
up to ``n_neg`` negative cells.  The positive is the object cell nearest the
owning object's footprint centroid (the owner is the radially nearest object
on the ray); negatives are drawn without replacement from the ray's
non-foreground cells with Gaussian probability centered on the positive, so
nearby depth-incorrect locations are sampled preferentially.  Feature
vectors are mean-pooled over an ``m x m`` window clipped at grid borders.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .geometry import ForegroundMask, RayPartition
from .rng import substream
from .tensor import FeatureMap


@dataclass(frozen=True)
class SamplerConfig:
    sigma: float = 2.0   # Gaussian width, grid-cell units
    n_neg: int = 5
    m: int = 3           # pooling window, odd
    seed: int = 0

    def __post_init__(self) -> None:
        if not self.sigma > 0:
            raise ValueError(f"sigma must be > 0, got {self.sigma}")
        if self.n_neg < 1:
            raise ValueError(f"n_neg must be >= 1, got {self.n_neg}")
        if self.m < 1 or self.m % 2 == 0:
            raise ValueError(f"m must be odd and >= 1, got {self.m}")


@dataclass(frozen=True)
class SampleEntry:
    """One ray's contrastive samples with pooled feature snapshots."""

    ray: int
    positive: tuple[int, int]
    negatives: np.ndarray            # (n, 2) cells
    student_pos: np.ndarray = field(repr=False)   # (D,)
    student_negs: np.ndarray = field(repr=False)  # (n, D)
    teacher_pos: np.ndarray = field(repr=False)
    teacher_negs: np.ndarray = field(repr=False)


@dataclass(frozen=True)
class SampleSet:
    """All per-ray sample entries for one scene, ordered by ray index."""

    entries: tuple[SampleEntry, ...]
    m: int
    n_ray: int

    def __len__(self) -> int:
        return len(self.entries)


def pool_window(cell: tuple[int, int], m: int, h: int, w: int
                ) -> tuple[int, int, int, int]:
    """In-bounds (h0, h1, w0, w1) extent of the m x m window around ``cell``."""
    r = m // 2
    ch, cw = cell
    return (max(ch - r, 0), min(ch + r + 1, h), max(cw - r, 0), min(cw + r + 1, w))


def region_pool(f: FeatureMap, cell: tuple[int, int], m: int) -> np.ndarray:
    """Per-channel mean over the clipped m x m window centered at ``cell``."""
    if m < 1 or m % 2 == 0:
        raise ValueError(f"m must be odd and >= 1, got {m}")
    h0, h1, w0, w1 = pool_window(cell, m, f.h, f.w)
    return f.data[:, h0:h1, w0:w1].mean(axis=(1, 2))


def negative_probs(ray_cells: np.ndarray, positive: tuple[int, int],
                   fg: ForegroundMask, sigma: float
                   ) -> tuple[np.ndarray, np.ndarray]:
    """Gaussian sampling distribution over a ray's non-foreground cells.

    Returns ``(candidates, probs)`` where ``candidates`` is the (k, 2) array
    of eligible cells and ``probs`` their normalized selection probabilities,
    ``probs[k] ∝ exp(-d(positive, k)^2 / (2*sigma^2))`` with ``d`` the
    Euclidean distance between cell centers.  An empty candidate set (all
    ray cells foreground) comes back as two empty arrays; callers skip the
    ray.
    """
    if not sigma > 0:
        raise ValueError(f"sigma must be > 0, got {sigma}")
    cells = np.asarray(ray_cells, dtype=np.int64).reshape(-1, 2)
    keep = ~fg.mask[cells[:, 0], cells[:, 1]]
    candidates = cells[keep]
    if len(candidates) == 0:
        return candidates, np.zeros(0)
    delta = candidates.astype(np.float64) - np.asarray(positive, dtype=np.float64)
    d2 = np.einsum("ij,ij->i", delta, delta)
    # subtract the min exponent for stability; cancels in the ratio
    z = -d2 / (2.0 * sigma * sigma)
    e = np.exp(z - z.max())
    return candidates, e / e.sum()


def draw_negatives(candidates: np.ndarray, probs: np.ndarray, n_neg: int,
                   rng: np.random.Generator) -> np.ndarray:
    """Draw ``n_neg`` distinct cells, renormalizing after each draw.

    If fewer candidates exist than requested, all of them are returned.
    """
    k = len(candidates)
    n = min(n_neg, k)
    p = np.array(probs, dtype=np.float64)
    picked: list[int] = []
    for _ in range(n):
        idx = int(rng.choice(k, p=p / p.sum()))
        picked.append(idx)
        p[idx] = 0.0
    return candidates[picked]


def _object_centroids(fg: ForegroundMask) -> dict[int, np.ndarray]:
    out: dict[int, np.ndarray] = {}
    for oid in np.unique(fg.owner[fg.owner >= 0]):
        cells = np.argwhere(fg.owner == oid)
        out[int(oid)] = cells.mean(axis=0)
    return out


def build_sample_set(student: FeatureMap, teacher: FeatureMap,
                     p: RayPartition, fg: ForegroundMask,
                     cfg: SamplerConfig) -> SampleSet:
    """Select one positive and up to ``n_neg`` negatives on every object ray.

    Rays with no foreground cell, or with no non-foreground candidates left,
    are omitted.  Sampling is deterministic: ray ``i`` draws from its own
    substream keyed by ``(cfg.seed, i)``, so results do not depend on ray
    evaluation order.
    """
    if student.shape != teacher.shape:
        raise ValueError(f"student shape {student.shape} != teacher {teacher.shape}")
    if (fg.h, fg.w) != (student.h, student.w) or (p.h, p.w) != (student.h, student.w):
        raise ValueError("partition/mask grid does not match feature maps")
    centroids = _object_centroids(fg)
    entries: list[SampleEntry] = []
    for i in range(p.n_ray):
        cells = p.ray_cells[i]
        if len(cells) == 0:
            continue
        on_fg = fg.mask[cells[:, 0], cells[:, 1]]
        fg_idx = np.flatnonzero(on_fg)
        if len(fg_idx) == 0:
            continue
        owner_id = int(fg.owner[cells[fg_idx[0], 0], cells[fg_idx[0], 1]])
        owned = cells[fg_idx][fg.owner[cells[fg_idx, 0], cells[fg_idx, 1]] == owner_id]
        center = centroids[owner_id]
        delta = owned.astype(np.float64) - center
        d2 = np.einsum("ij,ij->i", delta, delta)
        best = np.lexsort((owned[:, 1], owned[:, 0], d2))[0]
        positive = (int(owned[best, 0]), int(owned[best, 1]))

        candidates, probs = negative_probs(cells, positive, fg, cfg.sigma)
        if len(candidates) == 0:
            continue
        negatives = draw_negatives(candidates, probs, cfg.n_neg, substream(cfg.seed, i))

        entries.append(SampleEntry(
            ray=i,
            positive=positive,
            negatives=negatives,
            student_pos=region_pool(student, positive, cfg.m),
            student_negs=np.stack([region_pool(student, tuple(c), cfg.m)
                                   for c in negatives]),
            teacher_pos=region_pool(teacher, positive, cfg.m),
            teacher_negs=np.stack([region_pool(teacher, tuple(c), cfg.m)
                                   for c in negatives]),
        ))
    return SampleSet(entries=tuple(entries), m=cfg.m, n_ray=p.n_ray)


def sample_set_to_json(s: SampleSet) -> list[dict]:
    """Debug dump of a SampleSet as plain JSON-serializable records."""
    return [{
        "ray": e.ray,
        "positive": list(e.positive),
        "negatives": e.negatives.tolist(),
        "student_pos": e.student_pos.tolist(),
        "student_negs": e.student_negs.tolist(),
        "teacher_pos": e.teacher_pos.tolist(),
        "teacher_negs": e.teacher_negs.tolist(),
    } for e in s.entries]
