import numpy as np
import pytest
from hypothesis import given, strategies as st
from scipy import integrate, stats

from ecmabund.bvn import bvn_cdf, bvn_rect, bvnu, pair_interval_tables

finite = st.floats(-6, 6, allow_nan=False)
corr = st.floats(-1, 1, allow_nan=False)


def quad_rect(a1, b1, a2, b2, rho):
    s = np.sqrt(1 - rho**2)

    def inner(x):
        return stats.norm.cdf((b2 - rho * x) / s) - stats.norm.cdf((a2 - rho * x) / s)

    val, _ = integrate.quad(lambda x: stats.norm.pdf(x) * inner(x), a1, b1, epsabs=1e-14, epsrel=1e-14)
    return val


def test_independence_is_product():
    p = bvn_rect(-0.3, 1.2, -2.0, 0.4, 0.0)
    ref = (stats.norm.cdf(1.2) - stats.norm.cdf(-0.3)) * (stats.norm.cdf(0.4) - stats.norm.cdf(-2.0))
    assert abs(p - ref) < 1e-14


def test_perfect_correlation_same_interval():
    p = bvn_rect(-0.7, 1.1, -0.7, 1.1, 1.0)
    assert abs(p - (stats.norm.cdf(1.1) - stats.norm.cdf(-0.7))) < 1e-14


def test_half_correlation_square_vs_quadrature():
    assert abs(bvn_rect(-1, 1, -1, 1, 0.5) - quad_rect(-1, 1, -1, 1, 0.5)) < 1e-12


def test_matches_scipy_cdf(rng):
    h, k = rng.uniform(-4, 4, (2, 300))
    r = rng.uniform(-0.99, 0.99, 300)
    for hi, ki, ri in zip(h, k, r):
        ref = stats.multivariate_normal([0, 0], [[1, ri], [ri, 1]]).cdf([hi, ki])
        assert abs(bvn_cdf(hi, ki, ri) - ref) < 1e-7  # scipy's own accuracy is the limit here


@pytest.mark.parametrize("rho", [-0.95, -0.4, 0.3, 0.8, 0.99])
def test_rect_vs_quadrature(rho):
    for a1, b1, a2, b2 in [(-2, 0.5, -1, 3), (0.1, 0.2, -0.5, 1.5), (-np.inf, 1, 0, np.inf)]:
        assert abs(bvn_rect(a1, b1, a2, b2, rho) - quad_rect(a1, b1, a2, b2, rho)) < 1e-10


def test_invalid_inputs():
    with pytest.raises(ValueError):
        bvn_rect(0, 1, 0, 1, 1.5)
    with pytest.raises(ValueError):
        bvn_rect(1, 0, 0, 1, 0.2)


@given(finite, finite, corr)
def test_upper_orthant_symmetry(h, k, r):
    assert abs(bvnu(h, k, r) - bvnu(k, h, r)) < 1e-13


@given(finite, finite, finite, finite, corr)
def test_rect_is_probability(a, b, c, d, r):
    lo1, hi1 = sorted((a, b))
    lo2, hi2 = sorted((c, d))
    p = bvn_rect(lo1, hi1, lo2, hi2, r)
    assert -1e-15 <= p <= 1 + 1e-15
    m1 = stats.norm.cdf(hi1) - stats.norm.cdf(lo1)
    m2 = stats.norm.cdf(hi2) - stats.norm.cdf(lo2)
    assert p <= min(m1, m2) + 1e-12


@given(st.floats(-3, 3), st.floats(0, 2), st.floats(-0.99, 0.99))
def test_additive_in_first_axis(a, w, r):
    mid, b = a + w, a + 2 * w
    whole = bvn_rect(a, b, -1, 0.5, r)
    parts = bvn_rect(a, mid, -1, 0.5, r) + bvn_rect(mid, b, -1, 0.5, r)
    assert abs(whole - parts) < 1e-12


def test_pair_tables_match_rect():
    edges = np.array([-np.inf, -1.0, 0.0, 2.0, np.inf])
    lo = np.array([0, 1, 2])
    hi = np.array([1, 2, 3])
    mu_a, sd_a, mu_b, sd_b, rho = np.array([0.2]), np.array([1.3]), np.array([-0.4]), np.array([2.0]), np.array([0.6])
    T = pair_interval_tables(mu_a, sd_a, mu_b, sd_b, rho, edges, edges, lo, hi, lo, hi)
    for i in range(3):
        for j in range(3):
            ref = bvn_rect((edges[lo[i]] - 0.2) / 1.3, (edges[hi[i]] - 0.2) / 1.3,
                           (edges[lo[j]] + 0.4) / 2.0, (edges[hi[j]] + 0.4) / 2.0, 0.6)
            assert abs(T[0, i, j] - ref) < 1e-14
