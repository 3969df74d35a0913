"""Synthetic paired LiDAR-like / camera-like BEV scenes plus corruptions.

A scene is a set of boxes on the grid seen from one origin.  The teacher
map has, on every object-bearing ray, a narrow channel-0 activation bump at
the object's true radial depth; the object's remaining channels carry a
per-object signature vector on its foreground cells, and background sits at
a small floor.

The camera map keeps the signatures in place (appearance is not the failure
mode) but degrades the depth channel three ways: the bump is displaced
radially by ``depth_bias``, widened by ``smear_sigma`` (mass preserved per
ray), and optionally accompanied by spurious near-amplitude bumps at wrong
radii on the same ray, mimicking a camera that activates in several places
along a ray because its depth is uncertain.

Corruption operators are BEV-level analogues of image corruption families:
``gain`` (brightness / low light), ``additive_noise`` (snow / quantization),
``radial_blur`` (motion blur / fog), ``ray_dropout`` (camera crash / frame
lost).  All are deterministic per seed and are the identity at severity 0.
"""

from __future__ import annotations

import json
import math
from dataclasses import dataclass, field

import numpy as np

from .fileio import atomic_write_text
from .geometry import (ForegroundMask, ObjectBox, RayPartition,
                       bottom_center_origin, partition_rays,
                       rasterize_objects, ray_depth_truth)
from .rng import substream
from .tensor import FeatureMap

BACKGROUND_FLOOR = 1e-3
BUMP_AMPLITUDE = 6.0
BUMP_WIDTH = 0.5          # radial sigma of the teacher's depth bump, cells
SIGNATURE_RANGE = (0.3, 0.7)
GHOST_MIN_GAP = 6.0       # min radial distance between a ghost and the truth
GHOST_BUMP_GAP = 5.5      # min radial distance between a ghost and the displaced bump

_SIG_STREAM = 101
_SCENE_STREAM = 202
_NOISE_STREAM = 303
_DROPOUT_STREAM = 404

CORRUPTION_KINDS = ("gain", "additive_noise", "radial_blur", "ray_dropout")


@dataclass(frozen=True)
class CorruptionSpec:
    kind: str
    severity: float
    seed: int

    def __post_init__(self) -> None:
        if self.kind not in CORRUPTION_KINDS:
            raise ValueError(f"unknown corruption kind {self.kind!r}")
        if not (0.0 <= self.severity <= 1.0):
            raise ValueError(f"severity must be in [0, 1], got {self.severity}")


@dataclass(frozen=True)
class SceneSpec:
    """Ground-truth description of one synthetic scene."""

    h: int
    w: int
    d: int
    origin: tuple[float, float]
    n_ray: int
    objects: tuple[ObjectBox, ...] = ()
    corruptions: tuple[CorruptionSpec, ...] = ()

    def to_json(self) -> dict:
        return {
            "h": self.h, "w": self.w, "d": self.d,
            "origin": [self.origin[0], self.origin[1]],
            "n_ray": self.n_ray,
            "objects": [{"center": list(b.center),
                         "half_extents": list(b.half_extents),
                         "id": b.id} for b in self.objects],
            "corruptions": [{"kind": c.kind, "severity": c.severity,
                             "seed": c.seed} for c in self.corruptions],
        }

    @classmethod
    def from_json(cls, obj: dict) -> "SceneSpec":
        return cls(
            h=int(obj["h"]), w=int(obj["w"]), d=int(obj["d"]),
            origin=(float(obj["origin"][0]), float(obj["origin"][1])),
            n_ray=int(obj["n_ray"]),
            objects=tuple(ObjectBox(center=tuple(o["center"]),
                                    half_extents=tuple(o["half_extents"]),
                                    id=int(o["id"]))
                          for o in obj.get("objects", [])),
            corruptions=tuple(CorruptionSpec(kind=c["kind"],
                                             severity=float(c["severity"]),
                                             seed=int(c["seed"]))
                              for c in obj.get("corruptions", [])),
        )


def save_scene(spec: SceneSpec, path: str) -> None:
    atomic_write_text(path, json.dumps(spec.to_json(), indent=2))


def load_scene(path: str) -> SceneSpec:
    with open(path, "r", encoding="utf-8") as fh:
        return SceneSpec.from_json(json.load(fh))


@dataclass(frozen=True)
class CameraConfig:
    """Camera degradation model for scene rendering."""

    depth_bias: float = 3.0
    smear_sigma: float = 2.5
    ghosts_per_ray: int = 1
    ghost_amp: float = 0.8   # spurious bump amplitude, fraction of the true bump
    seed: int = 0

    def __post_init__(self) -> None:
        if not self.smear_sigma > 0:
            raise ValueError(f"smear_sigma must be > 0, got {self.smear_sigma}")
        if self.ghosts_per_ray < 0:
            raise ValueError("ghosts_per_ray must be >= 0")
        if not (0.0 <= self.ghost_amp <= 1.0):
            raise ValueError(f"ghost_amp must be in [0, 1], got {self.ghost_amp}")


@dataclass(frozen=True)
class SceneRender:
    """Everything a training/evaluation step needs for one scene."""

    spec: SceneSpec
    partition: RayPartition = field(repr=False)
    fg: ForegroundMask = field(repr=False)
    truth: np.ndarray = field(repr=False)
    teacher: FeatureMap = field(repr=False)
    camera_clean: FeatureMap = field(repr=False)
    camera_corrupt: FeatureMap = field(repr=False)


def object_signature(object_id: int, d: int) -> np.ndarray:
    """Per-object feature signature on channels 1..D-1, fixed by the id."""
    lo, hi = SIGNATURE_RANGE
    return substream(_SIG_STREAM, object_id).uniform(lo, hi, size=max(d - 1, 0))


def _scene_parts(spec: SceneSpec) -> tuple[RayPartition, ForegroundMask, np.ndarray]:
    p = partition_rays(spec.h, spec.w, spec.origin, spec.n_ray)
    fg = rasterize_objects(list(spec.objects), spec.h, spec.w)
    return p, fg, ray_depth_truth(p, fg)


def _base_map(spec: SceneSpec, fg: ForegroundMask) -> np.ndarray:
    data = np.full((spec.d, spec.h, spec.w), BACKGROUND_FLOOR)
    for box in spec.objects:
        cells = np.argwhere(fg.owner == box.id)
        if len(cells) == 0:
            continue
        sig = object_signature(box.id, spec.d)
        data[1:, cells[:, 0], cells[:, 1]] += sig[:, None]
    return data


def _bump(radii: np.ndarray, center: float, sigma: float) -> np.ndarray:
    return BUMP_AMPLITUDE * np.exp(-((radii - center) ** 2) / (2.0 * sigma * sigma))


def render_teacher(spec: SceneSpec) -> FeatureMap:
    """Clean-geometry teacher: sharp depth bumps, anchored signatures."""
    p, fg, truth = _scene_parts(spec)
    data = _base_map(spec, fg)
    for i in range(spec.n_ray):
        if np.isnan(truth[i]):
            continue
        cells = p.ray_cells[i]
        data[0, cells[:, 0], cells[:, 1]] += _bump(p.ray_radii[i], truth[i], BUMP_WIDTH)
    return FeatureMap(data)


def render_camera(spec: SceneSpec, depth_bias: float, smear_sigma: float,
                  rng: np.random.Generator | None = None,
                  ghosts_per_ray: int = 0, ghost_amp: float = 0.9) -> FeatureMap:
    """Camera-like map: displaced and smeared depth bumps, optional ghosts.

    The channel-0 bump on each object ray moves radially by ``depth_bias``
    and widens to ``sqrt(BUMP_WIDTH^2 + smear_sigma^2)``; its per-ray mass is
    rescaled to match the teacher bump's.  With ``ghosts_per_ray > 0``, each
    object ray also receives that many spurious bumps (amplitude fraction
    ``ghost_amp``) at rng-chosen non-foreground radii away from both the
    true depth and the displaced bump -- depth hypotheses the camera cannot
    rule out.  Signatures stay at the true object cells.
    """
    if not smear_sigma > 0:
        raise ValueError(f"smear_sigma must be > 0, got {smear_sigma}")
    if ghosts_per_ray > 0 and rng is None:
        raise ValueError("ghosts_per_ray > 0 requires an rng")
    p, fg, truth = _scene_parts(spec)
    data = _base_map(spec, fg)
    sigma = math.sqrt(BUMP_WIDTH * BUMP_WIDTH + smear_sigma * smear_sigma)
    for i in range(spec.n_ray):
        if np.isnan(truth[i]):
            continue
        cells = p.ray_cells[i]
        radii = p.ray_radii[i]
        on_fg = fg.mask[cells[:, 0], cells[:, 1]]
        target_mass = _bump(radii, truth[i], BUMP_WIDTH).sum()
        profile = _bump(radii, truth[i] + depth_bias, sigma)
        mass = profile.sum()
        if mass > 0 and target_mass > 0:
            profile *= target_mass / mass
        for _ in range(ghosts_per_ray):
            eligible = np.flatnonzero(
                (np.abs(radii - truth[i]) >= GHOST_MIN_GAP)
                & (np.abs(radii - (truth[i] + depth_bias)) >= GHOST_BUMP_GAP)
                & ~on_fg & (radii >= 3.0))
            if len(eligible) == 0:
                continue
            at = radii[eligible[int(rng.integers(len(eligible)))]]
            ghost = _bump(radii, at, sigma)
            gmass = ghost.sum()
            if gmass > 0 and target_mass > 0:
                ghost *= ghost_amp * target_mass / gmass
            profile = profile + ghost
        data[0, cells[:, 0], cells[:, 1]] += profile
    return FeatureMap(data)


def _blur_sequence(values: np.ndarray, sigma: float) -> np.ndarray:
    """1-D Gaussian blur with edge renormalization (DC preserved)."""
    radius = int(math.ceil(3.0 * sigma))
    if radius < 1:
        return values
    offsets = np.arange(-radius, radius + 1, dtype=np.float64)
    kernel = np.exp(-offsets * offsets / (2.0 * sigma * sigma))
    num = np.convolve(values, kernel, mode="same")
    den = np.convolve(np.ones_like(values), kernel, mode="same")
    return num / den


def corrupt(f: FeatureMap, c: CorruptionSpec, p: RayPartition) -> FeatureMap:
    """Apply one corruption operator; deterministic per (f, c).

    The partition supplies the ray structure the radial kinds act along.
    ``gain`` brightens for even seeds and darkens for odd ones, covering
    both directions of the brightness/low-light analogue.
    """
    if (p.h, p.w) != (f.h, f.w):
        raise ValueError(f"partition grid {(p.h, p.w)} != map {(f.h, f.w)}")
    if c.severity == 0.0:
        return f
    if c.kind == "gain":
        factor = 1.0 + c.severity if c.seed % 2 == 0 else 1.0 - c.severity
        return FeatureMap(f.data * factor)
    if c.kind == "additive_noise":
        std = c.severity * float(f.data.std())
        noise = substream(c.seed, _NOISE_STREAM).normal(0.0, 1.0, f.shape)
        return FeatureMap(f.data + std * noise)
    if c.kind == "radial_blur":
        sigma = 3.0 * c.severity
        data = f.data.copy()
        for i in range(p.n_ray):
            cells = p.ray_cells[i]
            if len(cells) < 2:
                continue
            for d in range(f.d):
                seq = data[d, cells[:, 0], cells[:, 1]]
                data[d, cells[:, 0], cells[:, 1]] = _blur_sequence(seq, sigma)
        return FeatureMap(data)
    if c.kind == "ray_dropout":
        n_drop = int(round(c.severity * p.n_ray))
        rays = substream(c.seed, _DROPOUT_STREAM).choice(p.n_ray, size=n_drop,
                                                         replace=False)
        data = f.data.copy()
        for i in rays:
            cells = p.ray_cells[int(i)]
            data[:, cells[:, 0], cells[:, 1]] = 0.0
        return FeatureMap(data)
    raise ValueError(f"unknown corruption kind {c.kind!r}")


def render_scene(spec: SceneSpec, cam: CameraConfig = CameraConfig()) -> SceneRender:
    """Render teacher, clean camera, and corrupted camera for one scene."""
    p, fg, truth = _scene_parts(spec)
    teacher = render_teacher(spec)
    camera_clean = render_camera(spec, cam.depth_bias, cam.smear_sigma,
                                 rng=substream(cam.seed, _SCENE_STREAM),
                                 ghosts_per_ray=cam.ghosts_per_ray,
                                 ghost_amp=cam.ghost_amp)
    camera_corrupt = camera_clean
    for c in spec.corruptions:
        camera_corrupt = corrupt(camera_corrupt, c, p)
    return SceneRender(spec=spec, partition=p, fg=fg, truth=truth,
                       teacher=teacher, camera_clean=camera_clean,
                       camera_corrupt=camera_corrupt)


def generate_scene(h: int, w: int, d: int, n_ray: int, n_objects: int,
                   seed: int, origin: tuple[float, float] | None = None,
                   corruptions: tuple[CorruptionSpec, ...] = ()) -> SceneSpec:
    """Draw a random scene: boxes at mid radii with some mutual separation."""
    if origin is None:
        origin = bottom_center_origin(h, w)
    rng = substream(seed, _SCENE_STREAM)
    max_r = max(math.hypot(corner[0] - origin[0], corner[1] - origin[1])
                for corner in ((0, 0), (0, w - 1), (h - 1, 0), (h - 1, w - 1)))
    boxes: list[ObjectBox] = []
    ids: set[int] = set()
    for _ in range(n_objects):
        center = None
        for _attempt in range(200):
            cand = (float(rng.uniform(1.5, h - 2.5)), float(rng.uniform(1.5, w - 2.5)))
            r = math.hypot(cand[0] - origin[0], cand[1] - origin[1])
            if not (0.20 * max_r <= r <= 0.55 * max_r):
                continue
            if any(math.hypot(cand[0] - b.center[0], cand[1] - b.center[1]) < 5.0
                   for b in boxes):
                continue
            center = cand
            break
        if center is None:
            continue
        he = (float(rng.uniform(1.0, 2.0)), float(rng.uniform(1.0, 2.0)))
        oid = int(rng.integers(1, 2 ** 31))
        while oid in ids:
            oid = int(rng.integers(1, 2 ** 31))
        ids.add(oid)
        boxes.append(ObjectBox(center=center, half_extents=he, id=oid))
    return SceneSpec(h=h, w=w, d=d, origin=origin, n_ray=n_ray,
                     objects=tuple(boxes), corruptions=corruptions)
