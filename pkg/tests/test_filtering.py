import math

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from uavfed.filtering import FilterConfig, dtbf, dynamic_bound, pairwise_distances, threshold

SPEC_GRADS = [1.0, 1.1, 0.9, 100.0, -50.0]
# the ten pairwise distances of SPEC_GRADS, written out by hand
SPEC_DISTANCES = [0.1, 0.1, 99.0, 51.0, 0.2, 98.9, 51.1, 99.1, 50.9, 150.0]


def vecs(values):
    return [np.array([float(v)]) for v in values]


class TestDistances:
    def test_examples(self):
        assert pairwise_distances(vecs([2, 2])).tolist() == [0.0]
        assert sorted(pairwise_distances(vecs([0, 0, 10]))) == [0.0, 10.0, 10.0]
        np.testing.assert_allclose(sorted(pairwise_distances(vecs(SPEC_GRADS))),
                                   sorted(SPEC_DISTANCES), atol=1e-12)

    def test_translation_invariant(self, rng):
        g = [rng.normal(size=7) for _ in range(4)]
        shift = rng.normal(size=7)
        np.testing.assert_allclose(pairwise_distances(g), pairwise_distances([x + shift for x in g]))

    def test_errors(self):
        with pytest.raises(ValueError):
            pairwise_distances([np.zeros(3), np.zeros(4)])
        with pytest.raises(ValueError):
            pairwise_distances([np.zeros(3)])


class TestBound:
    def test_examples(self):
        eps = dynamic_bound(vecs([0, 0, 10]), 1.0)
        assert eps == pytest.approx(20 / 3 + math.sqrt(200 / 9), rel=1e-12)
        assert round(eps, 3) == 11.381
        assert dynamic_bound(vecs([3, 3, 3]), 1.0) == 0.0
        assert dynamic_bound(vecs([0, 0, 10]), 0.0) == pytest.approx(20 / 3)

    def test_threshold(self):
        assert threshold(1.0, 100, 5, 0.5) == pytest.approx(2 * math.sqrt(2 * math.log(20) / 100))
        assert round(threshold(1.0, 100, 5, 0.5), 4) == 0.4895
        assert threshold(0.0, 100, 5, 0.5) == 0.0
        assert threshold(1.0, 400, 5, 0.5) == pytest.approx(threshold(1.0, 100, 5, 0.5) / 2)
        with pytest.raises(ValueError):
            threshold(1.0, 0, 5, 0.5)

    def test_config(self):
        with pytest.raises(ValueError):
            FilterConfig(delta=1.0)
        with pytest.raises(ValueError):
            FilterConfig(byz_fraction_bound=0.5)


class TestDtbf:
    def test_spec_instance_mean_bound(self):
        r = dtbf(vecs(SPEC_GRADS), 100, FilterConfig(0.5, 0.0, 0.4))
        assert r.good_set == (0, 1, 2)
        assert r.stage == 1 and r.median_index == 0
        assert r.epsilon == pytest.approx(np.mean(SPEC_DISTANCES))

    def test_spec_instance_with_std_term(self):
        # with omega = 1 the std term lifts the strict threshold to ~53.2, within
        # reach of the -50 outlier (distance <= 51.1 to every honest value)
        r = dtbf(vecs(SPEC_GRADS), 100, FilterConfig(0.5, 1.0, 0.4))
        eps = np.mean(SPEC_DISTANCES) + np.std(SPEC_DISTANCES)
        assert r.epsilon == pytest.approx(eps, rel=1e-12)
        assert r.threshold_used == pytest.approx(threshold(eps, 100, 5, 0.5))
        assert r.candidate_set == (0, 1, 2, 4)
        assert r.median_index == 2
        assert r.good_set == (0, 1, 2, 4)

    def test_identical(self, rng):
        g = rng.normal(size=5)
        r = dtbf([g.copy() for _ in range(5)], 16, FilterConfig())
        assert r.good_set == (0, 1, 2, 3, 4) and r.stage == 1

    def test_two_far_outliers(self, rng):
        hits = 0
        for _ in range(100):
            base = rng.normal(size=50)
            honest = [base + 0.1 * rng.normal(size=50) for _ in range(3)]
            byz = [base + 10 * rng.normal(size=50) for _ in range(2)]
            hits += dtbf(honest + byz, 128, FilterConfig()).good_set == (0, 1, 2)
        assert hits == 100

    def test_lenient_stage(self):
        # honest spread exceeds the strict threshold but fits inside 2*eps
        g = vecs([0.0, 1.0, 2.0, 3.0, 4.0])
        r = dtbf(g, 10 ** 4, FilterConfig(0.5, 0.0, 0.0))
        assert r.stage == 2
        assert r.threshold_used == pytest.approx(2 * r.epsilon)
        assert r.good_set == (0, 1, 2, 3, 4)

    def test_empty_candidates(self):
        r = dtbf(vecs([0.0, 10.0, 20.0, 30.0]), 10 ** 6, FilterConfig(0.5, 0.0, 0.4),
                 epsilon=1.0)
        assert r.good_set == () and r.stage == 2 and r.median_index is None

    @settings(max_examples=40, deadline=None)
    @given(st.integers(0, 10 ** 6), st.permutations(range(5)))
    def test_permutation_equivariant(self, seed, perm):
        rng = np.random.default_rng(seed)
        g = [rng.normal(size=4) * s for s in (1, 1, 1, 30, 30)]
        r = dtbf(g, 64, FilterConfig())
        rp = dtbf([g[i] for i in perm], 64, FilterConfig())
        assert sorted(perm[i] for i in rp.good_set) == sorted(r.good_set)

    def test_members_within_threshold(self, rng):
        for _ in range(50):
            g = [rng.normal(size=3) * rng.uniform(0.1, 10) for _ in range(6)]
            r = dtbf(g, 32, FilterConfig())
            for i in r.good_set:
                assert np.linalg.norm(g[i] - g[r.median_index]) <= r.threshold_used

    def test_deterministic(self, rng):
        g = [rng.normal(size=10) for _ in range(5)]
        assert dtbf(g, 20, FilterConfig()) == dtbf(g, 20, FilterConfig())
