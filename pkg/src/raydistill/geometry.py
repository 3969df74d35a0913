"""Ray partition of the BEV grid, object rasterization, per-ray depth truth.

The grid is indexed ``(h, w)`` with cell centers at integer coordinates, so
cell ``(i, j)`` occupies the unit square centered on ``(i, j)``.  A ray is
an equal-angle sector of the full circle around a configurable origin; every
cell belongs to exactly one ray except a cell whose center coincides with
the origin, whose angle is undefined and which is excluded from all losses.

Angles are measured as ``atan2(dh, dw)`` wrapped to ``[0, 2*pi)``; sector
``i`` covers the half-open interval ``[i*width, (i+1)*width)``.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np

TWO_PI = 2.0 * math.pi


def bottom_center_origin(h: int, w: int) -> tuple[float, float]:
    """Default camera origin: the middle of the grid's bottom edge."""
    return (h - 0.5, (w - 1) / 2.0)


@dataclass(frozen=True)
class RayPartition:
    """Assignment of every BEV cell to one angular ray.

    assignment[h, w] is the ray index, or -1 for excluded cells (the
    origin-coincident cell and, under a restricted field of view, cells
    outside it).  ray_cells[i] lists the (h, w) cells of ray i sorted by
    increasing distance from the origin (ties by h then w); ray_radii[i]
    carries the matching distances.
    """

    n_ray: int
    origin: tuple[float, float]
    h: int
    w: int
    assignment: np.ndarray
    ray_cells: tuple[np.ndarray, ...] = field(repr=False)
    ray_radii: tuple[np.ndarray, ...] = field(repr=False)


def partition_rays(h: int, w: int, origin: tuple[float, float], n_ray: int,
                   fov: tuple[float, float] | None = None) -> RayPartition:
    """Split the ``h x w`` grid into ``n_ray`` equal-angle sectors.

    Args:
        origin: (row, col) real coordinates; must lie within the grid's
            physical bounds ``[-0.5, h-0.5] x [-0.5, w-0.5]``.
        fov: optional ``(start_angle, span)`` restriction in radians;
            defaults to the full circle.  Cells outside the span get
            assignment -1.
    """
    if n_ray < 1:
        raise ValueError(f"n_ray must be >= 1, got {n_ray}")
    if h < 1 or w < 1:
        raise ValueError(f"grid must be non-empty, got {h}x{w}")
    orow, ocol = float(origin[0]), float(origin[1])
    if not (-0.5 <= orow <= h - 0.5 and -0.5 <= ocol <= w - 0.5):
        raise ValueError(f"origin {origin} lies outside the {h}x{w} grid")
    start, span = (0.0, TWO_PI) if fov is None else (float(fov[0]), float(fov[1]))
    if not (0.0 < span <= TWO_PI):
        raise ValueError(f"fov span must be in (0, 2*pi], got {span}")

    rows, cols = np.meshgrid(np.arange(h, dtype=np.float64),
                             np.arange(w, dtype=np.float64), indexing="ij")
    dh = rows - orow
    dw = cols - ocol
    dist = np.hypot(dh, dw)
    theta = np.mod(np.arctan2(dh, dw), TWO_PI)
    rel = np.mod(theta - start, TWO_PI)

    width = span / n_ray
    assignment = np.minimum(np.floor(rel / width), n_ray - 1).astype(np.int64)
    assignment[rel >= span] = -1
    assignment[dist == 0.0] = -1  # undefined angle at the origin cell

    ray_cells: list[np.ndarray] = []
    ray_radii: list[np.ndarray] = []
    flat_assign = assignment.ravel()
    flat_dist = dist.ravel()
    cell_h, cell_w = np.divmod(np.arange(h * w), w)
    for i in range(n_ray):
        sel = np.flatnonzero(flat_assign == i)
        order = np.lexsort((cell_w[sel], cell_h[sel], flat_dist[sel]))
        sel = sel[order]
        cells = np.stack([cell_h[sel], cell_w[sel]], axis=1)
        cells.flags.writeable = False
        radii = flat_dist[sel]
        radii.flags.writeable = False
        ray_cells.append(cells)
        ray_radii.append(radii)

    assignment.flags.writeable = False
    return RayPartition(n_ray=n_ray, origin=(orow, ocol), h=h, w=w,
                        assignment=assignment, ray_cells=tuple(ray_cells),
                        ray_radii=tuple(ray_radii))


@dataclass(frozen=True)
class ObjectBox:
    """Axis-aligned box annotation in grid units."""

    center: tuple[float, float]
    half_extents: tuple[float, float]
    id: int

    def __post_init__(self) -> None:
        dr, dc = self.half_extents
        if not (dr >= 0.5 and dc >= 0.5):
            raise ValueError(f"half_extents must be >= 0.5 cell, got {self.half_extents}")


@dataclass(frozen=True)
class ForegroundMask:
    """Boolean foreground grid plus per-cell object ownership.

    owner[h, w] is the id of the owning box, or -1 outside the mask.  When
    boxes overlap, the first box in scene order keeps the cell.
    """

    mask: np.ndarray
    owner: np.ndarray

    @property
    def h(self) -> int:
        return self.mask.shape[0]

    @property
    def w(self) -> int:
        return self.mask.shape[1]


def rasterize_objects(boxes: list[ObjectBox], h: int, w: int) -> ForegroundMask:
    """Mark cells whose centers fall inside any box's extent."""
    if h < 1 or w < 1:
        raise ValueError(f"grid must be non-empty, got {h}x{w}")
    mask = np.zeros((h, w), dtype=bool)
    owner = np.full((h, w), -1, dtype=np.int64)
    rows = np.arange(h, dtype=np.float64)[:, None]
    cols = np.arange(w, dtype=np.float64)[None, :]
    for box in boxes:
        (cr, cc), (dr, dc) = box.center, box.half_extents
        inside = (np.abs(rows - cr) <= dr) & (np.abs(cols - cc) <= dc)
        fresh = inside & ~mask
        mask |= inside
        owner[fresh] = box.id
    mask.flags.writeable = False
    owner.flags.writeable = False
    return ForegroundMask(mask=mask, owner=owner)


def ray_depth_truth(p: RayPartition, m: ForegroundMask) -> np.ndarray:
    """Radial distance to the nearest foreground cell per ray (NaN if none)."""
    if (m.h, m.w) != (p.h, p.w):
        raise ValueError(f"mask shape {(m.h, m.w)} != partition grid {(p.h, p.w)}")
    out = np.full(p.n_ray, np.nan)
    for i in range(p.n_ray):
        cells = p.ray_cells[i]
        if len(cells) == 0:
            continue
        fg = m.mask[cells[:, 0], cells[:, 1]]
        hits = np.flatnonzero(fg)
        if len(hits) > 0:
            out[i] = p.ray_radii[i][hits[0]]
    return out
