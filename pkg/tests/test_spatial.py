import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from regimescan import Coordinates, ConfigError, InputError, KernelSpec, adaptive_radii, adaptive_radius, kernel_weight, pairwise_distances
from regimescan.spatial import EARTH_RADIUS_KM, KERNEL_FAMILIES

families = st.sampled_from(KERNEL_FAMILIES)


def test_pythagorean_pair():
    d = pairwise_distances(Coordinates([[0, 0], [3, 4]]))
    assert d[0, 1] == 5.0 and d[1, 0] == 5.0


def test_zero_diagonal_and_symmetry():
    pts = np.random.default_rng(1).uniform(size=(12, 2))
    d = pairwise_distances(Coordinates(pts))
    assert np.all(np.diag(d) == 0.0)
    assert np.array_equal(d, d.T)


def test_matches_double_loop():
    pts = np.random.default_rng(2).normal(size=(5, 2))
    d = pairwise_distances(Coordinates(pts))
    for i in range(5):
        for j in range(5):
            ref = math.hypot(pts[i, 0] - pts[j, 0], pts[i, 1] - pts[j, 1])
            assert abs(d[i, j] - ref) < 1e-12


def test_great_circle_quarter_meridian():
    d = pairwise_distances(Coordinates([[0, 0], [0, 90]], "greatcircle"))
    assert d[0, 1] == pytest.approx(EARTH_RADIUS_KM * math.pi / 2, rel=1e-12)


def test_great_circle_alias():
    assert Coordinates([[0, 0], [1, 1]], "great-circle").metric == "greatcircle"


def test_non_finite_rejected():
    with pytest.raises(InputError):
        Coordinates([[0, 0], [np.nan, 1]])


def test_bad_metric():
    with pytest.raises(ConfigError):
        Coordinates([[0, 0], [1, 1]], "manhattan")


def test_radius_on_line():
    d = pairwise_distances(Coordinates([[0, 0], [1, 0], [2, 0], [3, 0]]))
    assert adaptive_radius(d, 0, 2) == 2.0
    assert adaptive_radius(d, 0, 3) == d[0].max()


def test_radius_full_window():
    pts = np.random.default_rng(3).uniform(size=(9, 2))
    d = pairwise_distances(Coordinates(pts))
    for i in range(9):
        assert adaptive_radius(d, i, 8) == d[i].max()


def test_radius_sort_oracle():
    pts = np.random.default_rng(4).uniform(size=(20, 2))
    d = pairwise_distances(Coordinates(pts))
    for k in (1, 5, 19):
        ref = [sorted(d[i, j] for j in range(20) if j != i)[k - 1] for i in range(20)]
        assert np.array_equal(adaptive_radii(d, k), ref)
        assert all(adaptive_radius(d, i, k) == ref[i] for i in range(20))


@pytest.mark.parametrize("k", [0, 4])
def test_radius_range(k):
    d = pairwise_distances(Coordinates([[0, 0], [1, 0], [2, 0], [3, 0]]))
    with pytest.raises(ConfigError):
        adaptive_radius(d, 0, k)
    with pytest.raises(ConfigError):
        adaptive_radii(d, k)


@pytest.mark.parametrize("family", KERNEL_FAMILIES)
def test_kernel_at_origin(family):
    assert kernel_weight(0.0, 2.0, family) == 1.0


def test_kernel_boundaries():
    assert kernel_weight(1.0, 1.0, "bisquare") == 0.0
    assert kernel_weight(1.0, 1.0, "tricube") == 0.0
    assert kernel_weight(0.5, 1.0, "gaussian") == pytest.approx(math.exp(-0.125), abs=1e-15)
    assert kernel_weight(0.5, 1.0, "gaussian") == pytest.approx(0.8825, abs=5e-5)


def test_kernel_formulas():
    u = 0.3
    assert kernel_weight(u, 1.0, "exponential") == pytest.approx(math.exp(-u))
    assert kernel_weight(u, 1.0, "bisquare") == pytest.approx((1 - u * u) ** 2)
    assert kernel_weight(u, 1.0, "tricube") == pytest.approx((1 - u**3) ** 3)


def test_negative_distance():
    with pytest.raises(InputError):
        kernel_weight(-0.1, 1.0)


def test_untruncated_tails():
    assert kernel_weight(2.0, 1.0, "gaussian", truncate=False) == pytest.approx(math.exp(-2.0))
    assert kernel_weight(2.0, 1.0, "bisquare", truncate=False) == 0.0


def test_kernel_spec_bounds():
    KernelSpec("gaussian", 4).check(n=10, k=3)
    with pytest.raises(ConfigError):
        KernelSpec("gaussian", 3).check(n=10, k=3)
    with pytest.raises(ConfigError):
        KernelSpec("gaussian", 10).check(n=10, k=3)
    with pytest.raises(ConfigError):
        KernelSpec("triangle", 5)


pos = st.floats(0.01, 100, allow_nan=False)


@given(families, pos, pos, pos)
def test_monotone_in_distance(family, a, b, r):
    lo, hi = sorted((a, b))
    assert kernel_weight(lo, r, family) >= kernel_weight(hi, r, family)


@given(families, pos, pos)
def test_truncation(family, d, r):
    if d > r:
        assert kernel_weight(d, r, family) == 0.0
    assert 0.0 <= kernel_weight(d, r, family) <= 1.0


@given(families, pos, pos, st.floats(0.01, 100))
def test_scale_invariance(family, d, r, c):
    assert kernel_weight(c * d, c * r, family) == pytest.approx(kernel_weight(d, r, family), rel=1e-9, abs=1e-12)


@settings(max_examples=30)
@given(st.integers(0, 10_000))
def test_radius_monotone_in_k(seed):
    pts = np.random.default_rng(seed).uniform(size=(15, 2))
    radii = np.stack([adaptive_radii(pairwise_distances(Coordinates(pts)), k) for k in range(1, 15)])
    assert np.all(np.diff(radii, axis=0) >= 0)
