import numpy as np
import pytest
from hypothesis import given, strategies as st
from scipy import stats

from ecmabund.mvnrect import mvn_rect_logprob, normal_interval_prob


def corr5(seed=0):
    rng = np.random.default_rng(seed)
    A = rng.normal(size=(5, 5))
    cov = A @ A.T + 0.5 * np.eye(5)
    return cov


def plain_mc(mean, cov, lo, hi, n, seed, chunk=10**6):
    rng = np.random.default_rng(seed)
    L = np.linalg.cholesky(cov)
    hits = 0
    for start in range(0, n, chunk):
        m = min(chunk, n - start)
        x = mean + rng.standard_normal((m, len(mean))) @ L.T
        hits += int(np.all((x > lo) & (x < hi), axis=1).sum())
    p = hits / n
    return p, np.sqrt(p * (1 - p) / n)


def test_one_dimensional_exact():
    res = mvn_rect_logprob([1.0], [[4.0]], [0.5], [2.5])
    ref = stats.norm.cdf(0.75) - stats.norm.cdf(-0.25)
    assert res.prob == pytest.approx(ref, rel=1e-14)


def test_diagonal_is_product():
    var = np.array([1.0, 2.0, 0.5, 3.0])
    mean = np.array([0.0, 1.0, -1.0, 2.0])
    lo, hi = mean - 0.7, mean + np.array([0.2, 1.0, 3.0, 0.1])
    res = mvn_rect_logprob(mean, np.diag(var), lo, hi)
    ref = np.prod(stats.norm.cdf((hi - mean) / np.sqrt(var)) - stats.norm.cdf((lo - mean) / np.sqrt(var)))
    assert abs(res.prob - ref) < 1e-8 and res.converged


def test_correlated_vs_scipy():
    cov = corr5()
    lo = np.array([-1.0, -2.0, -np.inf, -0.5, -3.0])
    hi = np.array([2.0, 1.0, 1.5, np.inf, 2.0])
    res = mvn_rect_logprob(np.zeros(5), cov, lo, hi, rel_tol=1e-4)
    ref = stats.multivariate_normal(np.zeros(5), cov).cdf(hi, lower_limit=lo)
    assert res.prob == pytest.approx(ref, rel=2e-3)


def test_correlated_vs_plain_monte_carlo():
    cov = corr5(1)
    mean = np.array([0.3, -0.2, 0.1, 0.0, 0.5])
    lo, hi = mean - 1.5, mean + 1.0
    res = mvn_rect_logprob(mean, cov, lo, hi, rng_seed=3)
    p, se = plain_mc(mean, cov, lo, hi, 10**7, 4)
    assert abs(res.prob - p) <= 3 * np.hypot(se, res.rel_se * res.prob)


def test_tiny_high_dimensional_box():
    n = 60
    cov = 0.5 * np.eye(n) + 0.5
    res = mvn_rect_logprob(np.zeros(n), cov, np.full(n, 3.0), np.full(n, 4.0))
    assert np.isfinite(res.log_prob) and res.log_prob < -20


def test_seed_determinism_and_errors():
    cov = corr5()
    a = mvn_rect_logprob(np.zeros(5), cov, -np.ones(5), np.ones(5), rng_seed=7)
    b = mvn_rect_logprob(np.zeros(5), cov, -np.ones(5), np.ones(5), rng_seed=7)
    assert a == b
    with pytest.raises(ValueError):
        mvn_rect_logprob(np.zeros(2), np.eye(2), [1, 0], [0, 1])
    with pytest.raises(ValueError):
        mvn_rect_logprob(np.zeros(2), np.eye(3), [0, 0], [1, 1])


@given(st.floats(-5, 5), st.floats(0.01, 3), st.floats(0.1, 0.95), st.integers(0, 50))
def test_log_prob_nonpositive(x, w, rho, seed):
    cov = np.array([[1.0, rho], [rho, 1.0]])
    res = mvn_rect_logprob([0.0, 0.0], cov, [x, x], [x + w, x + w], rng_seed=seed)
    assert res.log_prob <= 1e-12


@given(st.floats(-30, 30), st.floats(0, 5))
def test_interval_prob_tail_stable(lo, w):
    p = normal_interval_prob(lo, lo + w)
    assert 0.0 <= p <= 1.0
    assert abs(p - (stats.norm.sf(lo) - stats.norm.sf(lo + w))) <= 1e-15 + 1e-12 * p
