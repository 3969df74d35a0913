"""Contrastive distillation loss: closed forms, high-precision oracle, gradients."""

import math

import mpmath
import numpy as np
import pytest

from conftest import entry_from_maps, sample_set_from_maps
from raydistill.gradcheck import check_rcd, compare_gradients
from raydistill.losses_rcd import (RcdConfig, rcd_loss, rcd_student_term,
                                   rcd_teacher_term)
from raydistill.sampling import SampleSet
from raydistill.tensor import FeatureMap


def unit_vector_maps(d=8, n_neg=5):
    """Maps whose cells hold unit basis vectors: positive at (0,0) is e0 for
    both networks, negatives at (0,1..n) are e1..en for both."""
    h, w = 2, n_neg + 2
    student = np.zeros((d, h, w))
    teacher = np.zeros((d, h, w))
    student[0, 0, 0] = teacher[0, 0, 0] = 1.0
    for k in range(n_neg):
        student[k + 1, 0, k + 1] = 1.0
        teacher[k + 1, 0, k + 1] = 1.0
    negs = [(0, k + 1) for k in range(n_neg)]
    return FeatureMap(student), FeatureMap(teacher), (0, 0), negs


class TestClosedForms:
    def test_orthogonal_negatives_student_term(self):
        student, teacher, pos, negs = unit_vector_maps()
        sset = sample_set_from_maps(student, teacher, [(0, pos, negs)])
        cfg = RcdConfig(tau=1.0, xi=0.0, normalize=True)
        expected = math.e / (math.e + 5.0)
        assert abs(rcd_student_term(sset, cfg) - expected) <= 1e-12
        assert abs(rcd_teacher_term(sset, cfg) - expected) <= 1e-12

    def test_indistinguishable_samples(self, rng):
        v = rng.normal(0, 1, 4)
        d, n_neg = 4, 5
        h, w = 1, n_neg + 1
        student = np.tile(v[:, None, None], (1, h, w))
        teacher = FeatureMap(rng.normal(0, 1, (d, h, w)))
        sset = sample_set_from_maps(FeatureMap(student), teacher,
                                    [(0, (0, 0), [(0, k + 1) for k in range(n_neg)])])
        cfg = RcdConfig(tau=0.3, xi=0.0, normalize=False)
        assert abs(rcd_student_term(sset, cfg) - 1.0 / (n_neg + 1)) <= 1e-12

    def test_symmetric_maps_equal_terms(self, rng):
        x = FeatureMap(rng.normal(0, 1, (4, 3, 8)))
        sset = sample_set_from_maps(x, x, [(0, (0, 0), [(0, 2), (1, 4), (2, 7)])])
        cfg = RcdConfig()
        assert abs(rcd_student_term(sset, cfg)
                   - rcd_teacher_term(sset, cfg)) <= 1e-14

    def test_loss_value_from_terms(self):
        student, teacher, pos, negs = unit_vector_maps()
        sset = sample_set_from_maps(student, teacher, [(0, pos, negs)])
        cfg = RcdConfig(tau=1.0, xi=0.0, normalize=True)
        out = rcd_loss(student, teacher, sset, cfg)
        total = rcd_student_term(sset, cfg) + rcd_teacher_term(sset, cfg)
        assert abs(out.value - (-math.log(total / 1))) <= 1e-12
        # both ratios are e/(e+5); one active ray
        assert abs(out.value - (-math.log(2 * math.e / (math.e + 5)))) <= 1e-12


def mp_transcription(sset: SampleSet, student, teacher, tau, xi, n_avg,
                     normalize=False, dps=60):
    """Extended-precision transcription of the two ratio sums and the final
    -log((sum_s + sum_t) / n) form, summing ratios ray by ray."""
    with mpmath.workdps(dps):
        tau = mpmath.mpf(tau)
        xi = mpmath.mpf(xi)

        def vec(f, cell):
            return [mpmath.mpf(float(f.data[c, cell[0], cell[1]]))
                    for c in range(f.d)]

        def norm(v):
            n = mpmath.sqrt(mpmath.fsum(x * x for x in v))
            return [x / n for x in v] if n > 0 else v

        def dot(a, b):
            return mpmath.fsum(x * y for x, y in zip(a, b))

        total_s = mpmath.mpf(0)
        total_t = mpmath.mpf(0)
        for e in sset.entries:
            u = vec(student, e.positive)
            t = vec(teacher, e.positive)
            vs = [vec(student, tuple(c)) for c in e.negatives]
            ws = [vec(teacher, tuple(c)) for c in e.negatives]
            if normalize:
                u, t = norm(u), norm(t)
                vs, ws = [norm(v) for v in vs], [norm(w) for w in ws]
            num = mpmath.exp(dot(t, u) / tau)
            den_s = num + mpmath.fsum(mpmath.exp(dot(t, v) / tau) for v in vs) + xi
            den_t = num + mpmath.fsum(mpmath.exp(dot(u, w) / tau) for w in ws) + xi
            total_s += num / den_s
            total_t += num / den_t
        value = -mpmath.log((total_s + total_t) / n_avg)
        return float(total_s), float(total_t), float(value)


class TestVerbatimOracle:
    def tiny_instance(self, seed=0, normalize=False):
        r = np.random.default_rng(seed)
        student = FeatureMap(r.normal(0, 1, (2, 3, 3)))
        teacher = FeatureMap(r.normal(0, 1, (2, 3, 3)))
        rays = [(0, (0, 1), [(0, 0), (0, 2)]),
                (1, (2, 1), [(2, 0), (2, 2)])]
        sset = sample_set_from_maps(student, teacher, rays, m=1, n_ray=2)
        return student, teacher, sset

    @pytest.mark.parametrize("normalize", [False, True])
    @pytest.mark.parametrize("seed", [0, 1, 2])
    def test_matches_extended_precision(self, seed, normalize):
        student, teacher, sset = self.tiny_instance(seed, normalize)
        cfg = RcdConfig(tau=0.5, xi=1e-6, normalize=normalize)
        out = rcd_loss(student, teacher, sset, cfg)
        es, et, ev = mp_transcription(sset, student, teacher, 0.5, 1e-6, 2,
                                      normalize=normalize)
        assert abs(rcd_student_term(sset, cfg) - es) <= 1e-12 * abs(es)
        assert abs(rcd_teacher_term(sset, cfg) - et) <= 1e-12 * abs(et)
        assert abs(out.value - ev) <= 1e-12 * max(abs(ev), 1.0)


class TestGradient:
    def test_matches_finite_differences(self):
        rel, ab = check_rcd(0)
        assert rel <= 1e-5 and ab <= 1e-10

    def test_unnormalized_gradient(self):
        rel, ab = check_rcd(1, RcdConfig(tau=1.0, normalize=False))
        assert rel <= 1e-5 and ab <= 1e-10

    def test_sum_log_variant_gradient(self):
        rel, ab = check_rcd(2, RcdConfig(sum_log_variant=True))
        assert rel <= 1e-5 and ab <= 1e-10


class TestContracts:
    def test_empty_sample_set(self, rng):
        student = FeatureMap(rng.normal(0, 1, (2, 4, 4)))
        teacher = FeatureMap(rng.normal(0, 1, (2, 4, 4)))
        out = rcd_loss(student, teacher, SampleSet(entries=(), m=1, n_ray=4),
                       RcdConfig())
        assert out.value == 0.0
        assert out.status == "no-positive"
        assert not out.grad.any()

    def test_negative_permutation_bit_identical(self, rng):
        student = FeatureMap(rng.normal(0, 1, (3, 5, 9)))
        teacher = FeatureMap(rng.normal(0, 1, (3, 5, 9)))
        negs = [(0, 2), (1, 5), (2, 8), (4, 1)]
        a = rcd_loss(student, teacher,
                     sample_set_from_maps(student, teacher,
                                          [(0, (0, 0), negs)], m=3), RcdConfig())
        b = rcd_loss(student, teacher,
                     sample_set_from_maps(student, teacher,
                                          [(0, (0, 0), negs[::-1])], m=3),
                     RcdConfig())
        assert a.value == b.value
        np.testing.assert_array_equal(a.grad, b.grad)

    def test_alignment_monotonicity(self):
        d, n_neg = 6, 4
        h, w = 2, n_neg + 2
        teacher = np.zeros((d, h, w))
        teacher[0, 0, 0] = 1.0
        for k in range(n_neg):
            teacher[k + 1, 0, k + 1] = 1.0
        negs = [(0, k + 1) for k in range(n_neg)]
        values = []
        for alpha in (2.0, 1.0, 0.5, 0.2, 0.0):  # decreasing misalignment
            student = teacher.copy()
            student[5, 0, 0] = alpha  # perpendicular component on the positive
            sm = FeatureMap(student)
            tm = FeatureMap(teacher)
            sset = sample_set_from_maps(sm, tm, [(0, (0, 0), negs)])
            values.append(rcd_loss(sm, tm, sset,
                                   RcdConfig(tau=0.5, normalize=True)).value)
        assert all(values[i + 1] <= values[i] + 1e-12 for i in range(len(values) - 1))

    def test_summands_in_unit_interval(self, rng):
        for seed in range(20):
            r = np.random.default_rng(seed)
            student = FeatureMap(r.normal(0, 1, (3, 2, 6)))
            teacher = FeatureMap(r.normal(0, 1, (3, 2, 6)))
            sset = sample_set_from_maps(student, teacher,
                                        [(0, (0, 1), [(0, 3), (1, 5)])])
            cfg = RcdConfig(tau=0.7, xi=0.0, normalize=True)
            for term in (rcd_student_term(sset, cfg), rcd_teacher_term(sset, cfg)):
                assert 0.0 < term <= 1.0

    def test_count_all_rays_divides_by_nominal(self, rng):
        student = FeatureMap(rng.normal(0, 1, (2, 3, 6)))
        teacher = FeatureMap(rng.normal(0, 1, (2, 3, 6)))
        sset = sample_set_from_maps(student, teacher,
                                    [(0, (0, 1), [(0, 3), (0, 5)])], n_ray=8)
        active = rcd_loss(student, teacher, sset, RcdConfig())
        nominal = rcd_loss(student, teacher, sset,
                           RcdConfig(count_all_rays=True))
        assert abs((nominal.value - active.value) - math.log(8 / 1)) <= 1e-12
        np.testing.assert_array_equal(active.grad, nominal.grad)

    def test_sum_log_variant_value(self, rng):
        student = FeatureMap(rng.normal(0, 1, (2, 3, 6)))
        teacher = FeatureMap(rng.normal(0, 1, (2, 3, 6)))
        rays = [(0, (0, 1), [(0, 3), (0, 5)]), (1, (1, 2), [(1, 0), (1, 4)])]
        sset = sample_set_from_maps(student, teacher, rays, n_ray=2)
        cfg = RcdConfig(tau=0.5, xi=0.0, normalize=True, sum_log_variant=True)
        out = rcd_loss(student, teacher, sset, cfg)
        expected = 0.0
        for r, pos, negs in rays:
            single = sample_set_from_maps(student, teacher, [(r, pos, negs)])
            base = RcdConfig(tau=0.5, xi=0.0, normalize=True)
            expected += (-math.log(rcd_student_term(single, base))
                         - math.log(rcd_teacher_term(single, base)))
        assert abs(out.value - expected / 4.0) <= 1e-12

    def test_shape_mismatch_rejected(self, rng):
        a = FeatureMap(rng.normal(0, 1, (2, 3, 3)))
        b = FeatureMap(rng.normal(0, 1, (2, 4, 4)))
        with pytest.raises(ValueError):
            rcd_loss(a, b, SampleSet(entries=(), m=1, n_ray=1), RcdConfig())
