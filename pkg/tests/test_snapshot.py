import numpy as np
import pytest
from hypothesis import given, strategies as st
from scipy import stats

from ecmabund.ecm import moments, one_time_marginal, sample_arrangements
from ecmabund.snapshot import (SnapshotDesign, detection_recursion, phi_moments, simulate_snapshot,
                               simulate_snapshot_counts, snapshot_moments, snapshot_path_probs,
                               trajectory_path_probs)
from ecmabund.trajectory import BrownianAdvection, CellSet, Rect

FLY = BrownianAdvection(sigma=2.0, v=(-1.0, 1.0))
TWO_CELLS = CellSet([Rect((-2, -1), (0, 2)), Rect((0, -1), (2, 2))])


def design(p=0.3, N=50, times=(0.5, 1.5), cells=TWO_CELLS):
    return SnapshotDesign(times, cells, p=p, N=N)


def stat_check(draws, mean, cov, n_se=3.0):
    R = len(draws)
    ok_mean = np.abs(draws.mean(0) - mean) <= n_se * np.sqrt(np.diag(cov) / R) + 1e-12
    c = draws - draws.mean(0)
    se_cov = (c[:, :, None] * c[:, None, :]).std(0) / np.sqrt(R)
    ok_cov = np.abs(np.cov(draws.T) - cov) <= n_se * se_cov + 1e-9
    return ok_mean.all() and ok_cov.all()


def test_design_validation():
    with pytest.raises(ValueError):
        SnapshotDesign((0.5,), TWO_CELLS, p=1.2, N=1)
    with pytest.raises(ValueError):
        SnapshotDesign((0.5,), TWO_CELLS, p=0.5, N=-1)
    with pytest.raises(ValueError):
        SnapshotDesign((0.5,), [Rect((0, 0), (2, 2)), Rect((1, 1), (3, 3))], p=0.5, N=1)


def test_phi_moment_examples():
    full = design(N=40, cells=CellSet([Rect.full(2)]))
    mean, cov = phi_moments(FLY, full)
    assert np.allclose(mean, 40) and np.allclose(cov, 0, atol=1e-12)
    one = design(N=40, times=(1.0,))
    mean, cov = phi_moments(FLY, one)
    mu = mean / 40
    assert np.allclose(np.diag(cov), 40 * mu * (1 - mu))


def test_snapshot_moment_limits():
    m1, c1 = snapshot_moments(FLY, design(p=1.0))
    mp, cp = phi_moments(FLY, design(p=1.0))
    assert np.allclose(m1, mp) and np.allclose(c1, cp)
    m0, c0 = snapshot_moments(FLY, design(p=0.0))
    assert np.all(m0 == 0) and np.all(c0 == 0)


def test_phi_and_snapshot_moments_monte_carlo():
    des = design(p=1.0, N=20)
    draws = simulate_snapshot_counts(FLY, des, 10**5, 3)
    assert stat_check(draws, *phi_moments(FLY, des))
    des = design(p=0.1, N=200)
    draws = simulate_snapshot_counts(FLY, des, 10**5, 4)
    assert stat_check(draws, *snapshot_moments(FLY, des))


def test_simulate_examples():
    arr = simulate_snapshot(FLY, design(p=0.0, N=30), 1)
    assert np.all(arr.observed() == 0) and all(c[-1] == 30 for c in arr.counts)
    quads = CellSet([Rect((-np.inf, -np.inf), (0, 0)), Rect((0, -np.inf), (np.inf, 0)),
                     Rect((-np.inf, 0), (0, np.inf)), Rect((0, 0), (np.inf, np.inf))])
    arr = simulate_snapshot(FLY, design(p=1.0, N=30, cells=quads), 2)
    assert all(c[:-1].sum() == 30 for c in arr.counts)
    a = simulate_snapshot(FLY, design(), 9).flat()
    b = simulate_snapshot(FLY, design(), 9).flat()
    assert np.array_equal(a, b)


@given(st.floats(0, 1), st.integers(0, 200), st.integers(0, 10**6))
def test_counts_bounded(p, N, seed):
    arr = simulate_snapshot(FLY, design(p=p, N=N), seed)
    obs = arr.observed()
    assert np.all(obs >= 0) and np.all(obs <= N)


def test_dual_derivation_matches():
    for p in (0.1, 0.45, 1.0):
        des = design(p=p, N=1000)
        m_a, c_a = moments(snapshot_path_probs(FLY, des), des.N)
        keep = [0, 1, 3, 4]  # drop complement categories
        m_b, c_b = snapshot_moments(FLY, des)
        assert np.max(np.abs(m_a[keep] - m_b)) < 1e-8
        assert np.max(np.abs(c_a[np.ix_(keep, keep)] - c_b)) < 1e-8


def test_path_prob_examples():
    des = design(p=1.0)
    pi0 = trajectory_path_probs(FLY, des)
    assert np.allclose(snapshot_path_probs(FLY, des).probs, pi0)
    t0 = snapshot_path_probs(FLY, design(p=0.0)).probs
    assert t0[-1, -1] == pytest.approx(1.0) and t0.sum() == pytest.approx(1.0)
    A = Rect((-1, -1), (1, 1))
    one = snapshot_path_probs(FLY, design(p=0.5, times=(0.5,), cells=CellSet([A]))).probs
    mu = FLY.rect_prob(0.5, A)
    assert np.allclose(one, [0.5 * mu, 1 - 0.5 * mu], atol=1e-14)
    marg = one_time_marginal(snapshot_path_probs(FLY, design(p=0.3)), 1)
    assert np.allclose(marg[:2], 0.3 * FLY.cell_probs(1.5, TWO_CELLS), atol=1e-14)


def test_three_time_table_consistent():
    des3 = design(p=0.4, times=(0.5, 1.0, 1.5))
    des2 = design(p=0.4, times=(0.5, 1.5))
    t3 = snapshot_path_probs(FLY, des3, rng_seed=1).marginal([0, 2])
    t2 = snapshot_path_probs(FLY, des2).probs
    assert np.max(np.abs(t3 - t2)) < 1e-6


def test_detection_recursion_conserves_mass(rng):
    pi0 = rng.uniform(size=(3, 4))
    pi0 /= pi0.sum()
    assert detection_recursion(pi0, 0.37).sum() == pytest.approx(1.0)


def test_table_sampler_matches_simulator():
    des = SnapshotDesign((0.5, 1.5), CellSet([Rect((-2, -1), (1, 2))]), p=0.6, N=3)
    R = 10**5
    sim = simulate_snapshot_counts(FLY, des, R, 21)
    tab = sample_arrangements(snapshot_path_probs(FLY, des), des.N, R, 22)[:, [0, 2]]
    code_sim = sim[:, 0] * 4 + sim[:, 1]
    code_tab = tab[:, 0] * 4 + tab[:, 1]
    cont = np.array([np.bincount(code_sim, minlength=16), np.bincount(code_tab, minlength=16)])
    cont = cont[:, cont.sum(0) > 0]
    _, pval, _, _ = stats.chi2_contingency(cont)
    assert pval > 1e-3
