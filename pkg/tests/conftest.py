"""Shared fixtures and small construction helpers."""

import numpy as np
import pytest

from raydistill.sampling import SampleEntry, SampleSet, region_pool
from raydistill.tensor import FeatureMap


def entry_from_maps(student: FeatureMap, teacher: FeatureMap,
                    positive: tuple[int, int], negatives, ray: int = 0,
                    m: int = 1) -> SampleEntry:
    """Build a SampleEntry with pooled snapshots taken from the maps."""
    negs = np.asarray(negatives, dtype=np.int64).reshape(-1, 2)
    return SampleEntry(
        ray=ray,
        positive=positive,
        negatives=negs,
        student_pos=region_pool(student, positive, m),
        student_negs=np.stack([region_pool(student, tuple(c), m) for c in negs]),
        teacher_pos=region_pool(teacher, positive, m),
        teacher_negs=np.stack([region_pool(teacher, tuple(c), m) for c in negs]),
    )


def sample_set_from_maps(student, teacher, rays, m: int = 1,
                         n_ray: int | None = None) -> SampleSet:
    """rays: list of (ray_index, positive, negatives)."""
    entries = tuple(entry_from_maps(student, teacher, pos, negs, ray=r, m=m)
                    for r, pos, negs in rays)
    return SampleSet(entries=entries, m=m,
                     n_ray=n_ray if n_ray is not None else len(entries))


@pytest.fixture
def rng():
    return np.random.default_rng(42)
