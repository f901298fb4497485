import numpy as np
import pytest
from hypothesis import given, strategies as st

from ecmabund.trajectory import (BrownianAdvection, BrownianAdvectionParams, CellSet, Rect, SpaceTimeDesign,
                                 pair_rect_prob, rect_prob, sample_paths)

FLY = BrownianAdvectionParams(2.0, (-1.0, 1.0))
coord = st.floats(-8, 8, allow_nan=False)


@st.composite
def rects(draw, d=2):
    lo, hi = [], []
    for _ in range(d):
        a, b = sorted((draw(coord), draw(coord)))
        lo.append(a)
        hi.append(b)
    return Rect(tuple(lo), tuple(hi))


def test_params_validation():
    with pytest.raises(ValueError):
        BrownianAdvectionParams(0.0)
    with pytest.raises(ValueError):
        BrownianAdvectionParams(1.0, v=(0, 0, 0))
    with pytest.raises(ValueError):
        Rect((1.0,), (0.0,))


def test_full_space_and_half_line():
    assert rect_prob(BrownianAdvectionParams(1.0), 1.0, Rect.full(2)) == pytest.approx(1.0, abs=1e-15)
    assert rect_prob(BrownianAdvectionParams(1.0, v=(0.0,)), 1.0, Rect((0.0,), (np.inf,))) == pytest.approx(0.5)


def test_point_mass_at_release():
    p = BrownianAdvectionParams(2.0, (-1, 1), t0=1.0, origin=(3.0, 4.0))
    assert rect_prob(p, 1.0, Rect((2, 3), (4, 5))) == 1.0
    assert rect_prob(p, 1.0, Rect((4, 3), (5, 5))) == 0.0
    # half-open convention: the lower edge holds the point, the upper edge does not
    assert rect_prob(p, 1.0, Rect((3, 4), (5, 5))) == 1.0
    assert rect_prob(p, 1.0, Rect((2, 3), (3, 4))) == 0.0


def test_rect_prob_monte_carlo():
    A = Rect((-2.5, -2.5), (2.5, 2.5))
    x = sample_paths(FLY, [0.5], 10**7, 11)[:, 0]
    hit = np.all((x >= -2.5) & (x < 2.5), axis=1)
    se = hit.std() / np.sqrt(hit.size)
    assert abs(rect_prob(FLY, 0.5, A) - hit.mean()) <= 3 * se


def test_pair_rect_prob_monte_carlo():
    A = Rect((0, 0), (5, 5))
    B = Rect((-5, 0), (0, 5))
    x = sample_paths(FLY, [0.5, 1.5], 10**7, 12)
    hit = (np.all((x[:, 0] >= 0) & (x[:, 0] < 5), axis=1)
           & (x[:, 1, 0] >= -5) & (x[:, 1, 0] < 0) & (x[:, 1, 1] >= 0) & (x[:, 1, 1] < 5))
    se = hit.std() / np.sqrt(hit.size)
    assert abs(pair_rect_prob(FLY, 0.5, 1.5, A, B) - hit.mean()) <= 3 * se


def test_pair_full_and_same_time():
    A = Rect((-1, 0), (2, 3))
    B = Rect((0, -1), (1, 1))
    assert pair_rect_prob(FLY, 0.5, 1.5, Rect.full(2), Rect.full(2)) == pytest.approx(1.0, abs=1e-14)
    assert pair_rect_prob(FLY, 0.7, 0.7, A, B) == pytest.approx(rect_prob(FLY, 0.7, A.intersect(B)), abs=1e-12)
    assert pair_rect_prob(FLY, 0.7, 0.7, A, Rect((5, 5), (6, 6))) == pytest.approx(0.0, abs=1e-14)


@given(rects(), rects(), st.floats(0.01, 3), st.floats(0.01, 3))
def test_pair_consistency_and_symmetry(A, B, t, s):
    assert abs(pair_rect_prob(FLY, t, s, A, Rect.full(2)) - rect_prob(FLY, t, A)) < 1e-10
    assert abs(pair_rect_prob(FLY, t, s, A, B) - pair_rect_prob(FLY, s, t, B, A)) < 1e-12


@given(rects(), st.floats(0, 4), st.floats(0.01, 3))
def test_additivity_split(A, frac, t):
    lo, hi = A.lower, A.upper
    cut = lo[0] + (hi[0] - lo[0]) * frac / 4
    left = Rect(lo, (cut, hi[1]))
    right = Rect((cut, lo[1]), hi)
    assert abs(rect_prob(FLY, t, left) + rect_prob(FLY, t, right) - rect_prob(FLY, t, A)) < 1e-12


@given(rects(), st.floats(0, 3), st.floats(0.01, 3))
def test_monotone_in_rect(A, grow, t):
    big = Rect(tuple(np.subtract(A.lower, grow)), tuple(np.add(A.upper, grow)))
    assert rect_prob(FLY, t, big) >= rect_prob(FLY, t, A) - 1e-15


def test_sample_paths_moments_and_seed():
    x = sample_paths(FLY, [0.0, 1.5], 10**5, 5)
    assert np.all(x[:, 0] == 0.0)
    pts = x[:, 1]
    se = 2.0 * np.sqrt(1.5) / np.sqrt(len(pts))
    assert np.all(np.abs(pts.mean(0) - np.array([-1.5, 1.5])) <= 3 * se)
    cov = np.cov(pts.T)
    var = 4.0 * 1.5
    assert np.all(np.abs(np.diag(cov) - var) <= 3 * var * np.sqrt(2 / len(pts)))
    assert abs(cov[0, 1]) <= 3 * var / np.sqrt(len(pts))
    assert np.array_equal(sample_paths(FLY, [0.5, 1.5], 100, 7), sample_paths(FLY, [0.5, 1.5], 100, 7))
    with pytest.raises(ValueError):
        sample_paths(FLY, [1.0, 0.5], 10, 0)


def test_cellset_tables_match_rect_queries(rng):
    cells = [Rect((x, y), (x + 5, y + 5)) for x in (-10, -5, 0) for y in (-5, 0)]
    cs = CellSet(cells)
    model = BrownianAdvection(FLY)
    probs = model.cell_probs(1.5, cs)
    assert np.allclose(probs, [rect_prob(FLY, 1.5, c) for c in cells], atol=1e-15)
    pairs = model.cell_pair_probs(0.5, 1.5, cs, cs)
    for i, a in enumerate(cells):
        for j, b in enumerate(cells):
            assert abs(pairs[i, j] - pair_rect_prob(FLY, 0.5, 1.5, a, b)) < 1e-14
    pts = rng.uniform(-12, 7, (500, 2))
    idx = cs.locate(pts)
    for p, k in zip(pts, idx):
        inside = [i for i, c in enumerate(cells) if np.all(p >= c.lower) and np.all(p < c.upper)]
        assert (inside[0] if inside else -1) == k


def test_cellset_rejects_overlap():
    with pytest.raises(ValueError):
        CellSet([Rect((0, 0), (2, 2)), Rect((1, 1), (3, 3))])
    CellSet([Rect((0, 0), (1, 1)), Rect((1, 0), (2, 1))])


def test_design_shapes():
    cs = CellSet([Rect((0,), (1,)), Rect((1,), (2,))])
    des = SpaceTimeDesign((0.5, 1.5), cs)
    assert des.n_obs == 4 and des.sizes == (2, 2) and des.d == 1
    assert SpaceTimeDesign((), cs).n_obs == 0
