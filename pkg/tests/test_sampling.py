"""Gaussian negative sampling, pooling, and sample-set assembly."""

import math

import numpy as np
import pytest

from raydistill.geometry import (ForegroundMask, ObjectBox, partition_rays,
                                 rasterize_objects)
from raydistill.rng import substream
from raydistill.sampling import (SamplerConfig, build_sample_set,
                                 draw_negatives, negative_probs, region_pool)
from raydistill.simulator import generate_scene, render_scene
from raydistill.tensor import FeatureMap


def line_fixture(n_cells=13, fg_cols=(0,)):
    """A single-row 'ray': cells (0, j), foreground at the given columns."""
    cells = np.array([[0, j] for j in range(n_cells)])
    mask = np.zeros((1, n_cells), dtype=bool)
    owner = np.full((1, n_cells), -1, dtype=np.int64)
    for c in fg_cols:
        mask[0, c] = True
        owner[0, c] = 0
    return cells, ForegroundMask(mask=mask, owner=owner)


class TestNegativeProbs:
    def test_equidistant_pair(self):
        cells, fg = line_fixture(3, fg_cols=(1,))
        cand, probs = negative_probs(cells, (0, 1), fg, sigma=2.0)
        assert len(cand) == 2
        np.testing.assert_allclose(probs, [0.5, 0.5], atol=1e-15)

    def test_distances_one_and_two(self):
        cells, fg = line_fixture(3, fg_cols=(0,))
        cand, probs = negative_probs(cells, (0, 0), fg, sigma=1.0)
        expected = np.array([math.exp(-0.5), math.exp(-2.0)])
        expected /= expected.sum()
        np.testing.assert_allclose(probs, expected, atol=1e-12)
        np.testing.assert_allclose(probs, [0.8176, 0.1824], atol=1e-4)

    def test_flat_gaussian_limit(self):
        cells, fg = line_fixture(5, fg_cols=(0,))
        _, probs = negative_probs(cells, (0, 0), fg, sigma=1e6)
        np.testing.assert_allclose(probs, 0.25, atol=1e-6)

    def test_sums_to_one(self, rng):
        for _ in range(30):
            n = int(rng.integers(2, 20))
            cells, fg = line_fixture(n, fg_cols=(0,))
            _, probs = negative_probs(cells, (0, 0), fg,
                                      sigma=float(rng.uniform(0.3, 10)))
            assert abs(probs.sum() - 1.0) <= 1e-12

    def test_monotone_in_distance_and_sigma(self):
        cells, fg = line_fixture(10, fg_cols=(0,))
        _, p_small = negative_probs(cells, (0, 0), fg, sigma=1.0)
        _, p_large = negative_probs(cells, (0, 0), fg, sigma=4.0)
        assert np.all(np.diff(p_small) < 0)
        assert np.all(np.diff(p_large) < 0)
        # smaller sigma concentrates more mass on the nearest candidate
        assert p_small[0] > p_large[0]

    def test_empty_candidates(self):
        cells, fg = line_fixture(3, fg_cols=(0, 1, 2))
        cand, probs = negative_probs(cells, (0, 0), fg, sigma=1.0)
        assert len(cand) == 0 and len(probs) == 0

    def test_sigma_validation(self):
        cells, fg = line_fixture(3, fg_cols=(0,))
        with pytest.raises(ValueError):
            negative_probs(cells, (0, 0), fg, sigma=0.0)


class TestDrawNegatives:
    def test_exhaustion_returns_all(self):
        cells, fg = line_fixture(4, fg_cols=(0,))
        cand, probs = negative_probs(cells, (0, 0), fg, sigma=1.0)
        out = draw_negatives(cand, probs, 10, substream(0, 1))
        assert sorted(map(tuple, out)) == sorted(map(tuple, cand))

    def test_deterministic_given_seed(self):
        cells, fg = line_fixture(12, fg_cols=(0,))
        cand, probs = negative_probs(cells, (0, 0), fg, sigma=2.0)
        a = draw_negatives(cand, probs, 5, substream(7, 3))
        b = draw_negatives(cand, probs, 5, substream(7, 3))
        np.testing.assert_array_equal(a, b)

    def test_no_duplicates(self, rng):
        cells, fg = line_fixture(12, fg_cols=(0,))
        cand, probs = negative_probs(cells, (0, 0), fg, sigma=2.0)
        for seed in range(50):
            out = draw_negatives(cand, probs, 6, substream(seed, 0))
            assert len({tuple(c) for c in out}) == len(out) == 6

    def test_single_draw_frequencies(self):
        cells, fg = line_fixture(3, fg_cols=(0,))
        cand, probs = negative_probs(cells, (0, 0), fg, sigma=1.0)
        gen = substream(123, 0)
        counts = np.zeros(2)
        n = 20000
        for _ in range(n):
            cell = draw_negatives(cand, probs, 1, gen)[0]
            counts[cell[1] - 1] += 1
        np.testing.assert_allclose(counts / n, probs, atol=0.02)


class TestRegionPool:
    def test_m1_is_cell_value(self, rng):
        f = FeatureMap(rng.normal(0, 1, (3, 6, 6)))
        np.testing.assert_array_equal(region_pool(f, (2, 4), 1), f.data[:, 2, 4])

    def test_constant_field(self):
        f = FeatureMap(np.full((2, 8, 8), 3.25))
        for m in (1, 3, 5):
            np.testing.assert_allclose(region_pool(f, (0, 0), m), 3.25)

    def test_corner_clipping_matches_loop(self, rng):
        f = FeatureMap(rng.normal(0, 1, (4, 8, 8)))
        got = region_pool(f, (0, 0), 3)
        acc = np.zeros(4)
        count = 0
        for i in (0, 1):
            for j in (0, 1):
                acc += f.data[:, i, j]
                count += 1
        np.testing.assert_allclose(got, acc / count, rtol=1e-14)

    def test_channel_permutation_commutes(self, rng):
        f = rng.normal(0, 1, (5, 7, 7))
        perm = rng.permutation(5)
        a = region_pool(FeatureMap(f), (3, 3), 3)[perm]
        b = region_pool(FeatureMap(f[perm]), (3, 3), 3)
        np.testing.assert_array_equal(a, b)

    def test_even_m_rejected(self):
        f = FeatureMap(np.zeros((1, 4, 4)))
        with pytest.raises(ValueError):
            region_pool(f, (1, 1), 2)


class TestBuildSampleSet:
    def scene(self, seed=3, h=24, n_ray=16, n_objects=3):
        spec = generate_scene(h, h, 4, n_ray, n_objects, seed=seed)
        return render_scene(spec)

    def test_one_entry_per_object_ray(self):
        s = self.scene()
        cfg = SamplerConfig(seed=5)
        out = build_sample_set(s.camera_clean, s.teacher, s.partition, s.fg, cfg)
        expected = 0
        for i in range(s.partition.n_ray):
            cells = s.partition.ray_cells[i]
            on = s.fg.mask[cells[:, 0], cells[:, 1]]
            if on.any() and not on.all():
                expected += 1
        assert len(out.entries) == expected
        assert [e.ray for e in out.entries] == sorted(e.ray for e in out.entries)

    def test_all_foreground_yields_empty(self):
        h = 6
        p = partition_rays(h, h, (3.0, 3.0), 4)
        fg = rasterize_objects([ObjectBox(center=(2.5, 2.5),
                                          half_extents=(50.0, 50.0), id=1)], h, h)
        f = FeatureMap(np.ones((2, h, h)))
        out = build_sample_set(f, f, p, fg, SamplerConfig(seed=1))
        assert len(out.entries) == 0

    def test_selection_rules_against_reimplementation(self):
        s = self.scene(seed=11)
        cfg = SamplerConfig(sigma=2.0, n_neg=4, m=3, seed=9)
        out = build_sample_set(s.camera_clean, s.teacher, s.partition, s.fg, cfg)
        for e in out.entries:
            cells = s.partition.ray_cells[e.ray]
            on = s.fg.mask[cells[:, 0], cells[:, 1]]
            fg_cells = cells[on]
            owner = s.fg.owner[fg_cells[0][0], fg_cells[0][1]]  # nearest object
            owned = fg_cells[[s.fg.owner[c[0], c[1]] == owner for c in fg_cells]]
            centroid = np.argwhere(s.fg.owner == owner).mean(axis=0)
            d2 = ((owned - centroid) ** 2).sum(axis=1)
            best = np.lexsort((owned[:, 1], owned[:, 0], d2))[0]
            assert tuple(owned[best]) == e.positive
            for c in e.negatives:
                assert not s.fg.mask[c[0], c[1]]
                assert s.partition.assignment[c[0], c[1]] == e.ray
            assert len({tuple(c) for c in e.negatives}) == len(e.negatives)

    def test_negatives_clean_over_many_scenes(self):
        for seed in range(150):
            s = self.scene(seed=seed, h=12, n_ray=8, n_objects=2)
            out = build_sample_set(s.camera_clean, s.teacher, s.partition,
                                   s.fg, SamplerConfig(seed=seed, n_neg=3))
            for e in out.entries:
                assert s.fg.mask[e.positive[0], e.positive[1]]
                for c in e.negatives:
                    assert not s.fg.mask[c[0], c[1]]
                    assert tuple(c) != e.positive
                assert len({tuple(c) for c in e.negatives}) == len(e.negatives)

    def test_determinism_and_per_ray_substreams(self):
        s = self.scene(seed=2)
        cfg = SamplerConfig(seed=33)
        a = build_sample_set(s.camera_clean, s.teacher, s.partition, s.fg, cfg)
        b = build_sample_set(s.camera_clean, s.teacher, s.partition, s.fg, cfg)
        assert len(a.entries) == len(b.entries)
        for ea, eb in zip(a.entries, b.entries):
            assert ea.positive == eb.positive
            np.testing.assert_array_equal(ea.negatives, eb.negatives)

    def test_pooled_snapshots_match_region_pool(self):
        s = self.scene(seed=4)
        cfg = SamplerConfig(seed=1, m=3)
        out = build_sample_set(s.camera_clean, s.teacher, s.partition, s.fg, cfg)
        e = out.entries[0]
        np.testing.assert_array_equal(
            e.student_pos, region_pool(s.camera_clean, e.positive, 3))
        np.testing.assert_array_equal(
            e.teacher_negs[0], region_pool(s.teacher, tuple(e.negatives[0]), 3))
