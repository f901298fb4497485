"""Trajectory laws, rectangles and space-time designs.

Cells are axis-aligned rectangles. All shipped laws have independent
coordinates, so every rectangle probability factorizes over coordinates and
cell-by-cell tables are products of small per-coordinate interval tables.
"""

from __future__ import annotations

from abc import ABC, abstractmethod
from dataclasses import dataclass, field
from typing import Sequence

import numpy as np
from scipy.special import ndtr

from .bvn import bvn_rect, pair_interval_tables


@dataclass(frozen=True)
class Rect:
    """Axis-aligned rectangle ``[lower, upper]`` in R^d; bounds may be infinite."""

    lower: tuple
    upper: tuple

    def __post_init__(self):
        lo = tuple(float(x) for x in np.atleast_1d(self.lower))
        hi = tuple(float(x) for x in np.atleast_1d(self.upper))
        if len(lo) != len(hi) or len(lo) == 0:
            raise ValueError("lower and upper must have the same positive length")
        if any(np.isnan(lo)) or any(np.isnan(hi)):
            raise ValueError("rectangle bounds must not be NaN")
        if any(a > b for a, b in zip(lo, hi)):
            raise ValueError(f"invalid rectangle: lower {lo} exceeds upper {hi}")
        object.__setattr__(self, "lower", lo)
        object.__setattr__(self, "upper", hi)

    @classmethod
    def full(cls, d: int) -> "Rect":
        return cls((-np.inf,) * d, (np.inf,) * d)

    @classmethod
    def square(cls, center: Sequence[float], side: float) -> "Rect":
        c = np.asarray(center, dtype=float)
        return cls(tuple(c - side / 2), tuple(c + side / 2))

    @property
    def d(self) -> int:
        return len(self.lower)

    @property
    def area(self) -> float:
        return float(np.prod(np.subtract(self.upper, self.lower)))

    @property
    def center(self) -> np.ndarray:
        return (np.asarray(self.lower) + np.asarray(self.upper)) / 2

    def contains(self, x) -> bool:
        x = np.asarray(x, dtype=float)
        return bool(np.all(x >= self.lower) and np.all(x <= self.upper))

    def intersect(self, other: "Rect") -> "Rect | None":
        """Intersection rectangle, or None when the overlap has no volume."""
        lo = np.maximum(self.lower, other.lower)
        hi = np.minimum(self.upper, other.upper)
        if np.any(lo >= hi):
            return None
        return Rect(tuple(lo), tuple(hi))

    def overlaps(self, other: "Rect") -> bool:
        return self.intersect(other) is not None


def _unique_intervals(lo: np.ndarray, hi: np.ndarray):
    pairs = np.stack([lo, hi], axis=1)
    uniq, inverse = np.unique(pairs, axis=0, return_inverse=True)
    return uniq[:, 0].copy(), uniq[:, 1].copy(), inverse.ravel()


class CellSet:
    """A family of pairwise disjoint rectangles sharing one dimension.

    Besides the cells themselves it keeps, per coordinate, the list of
    distinct intervals and each cell's interval index. ``incidence`` counts
    cells per combination of coordinate intervals; contracting per-coordinate
    tables against it yields probabilities of the union of the cells.
    """

    def __init__(self, cells: Sequence[Rect], check_disjoint: bool = True):
        cells = [c if isinstance(c, Rect) else Rect(*c) for c in cells]
        if not cells:
            raise ValueError("a cell set needs at least one cell")
        d = cells[0].d
        if any(c.d != d for c in cells):
            raise ValueError("all cells must share one dimension")
        self.cells = tuple(cells)
        self.d = d
        self.lower = np.array([c.lower for c in cells])
        self.upper = np.array([c.upper for c in cells])
        if check_disjoint:
            self._check_disjoint()
        self.intervals = []
        index = np.empty((len(cells), d), dtype=np.int64)
        for c in range(d):
            lo, hi, inv = _unique_intervals(self.lower[:, c], self.upper[:, c])
            self.intervals.append((lo, hi))
            index[:, c] = inv
        self.index = index
        shape = tuple(len(iv[0]) for iv in self.intervals)
        self.incidence = np.zeros(shape)
        np.add.at(self.incidence, tuple(index.T), 1.0)
        self.union_rect = self._union_as_rect()
        self._lookup = self._build_lookup()

    def __len__(self) -> int:
        return len(self.cells)

    def __iter__(self):
        return iter(self.cells)

    def __getitem__(self, i):
        return self.cells[i]

    def _check_disjoint(self):
        lo, hi = self.lower, self.upper
        n = len(lo)
        for i in range(n - 1):
            olo = np.maximum(lo[i], lo[i + 1:])
            ohi = np.minimum(hi[i], hi[i + 1:])
            clash = np.all(ohi > olo, axis=1)
            if np.any(clash):
                j = i + 1 + int(np.argmax(clash))
                raise ValueError(f"cells {i} and {j} overlap")

    def _union_as_rect(self) -> Rect | None:
        lo = self.lower.min(axis=0)
        hi = self.upper.max(axis=0)
        box = Rect(tuple(lo), tuple(hi))
        if not np.isfinite(box.area):
            return box if len(self.cells) == 1 else None
        areas = np.prod(self.upper - self.lower, axis=1).sum()
        if np.isclose(areas, box.area, rtol=1e-12, atol=0.0):
            return box
        return None

    def _build_lookup(self):
        # Fast point location when each coordinate's intervals are disjoint.
        for lo, hi in self.intervals:
            order = np.argsort(lo)
            if np.any(lo[order][1:] < hi[order][:-1]):
                return None
        table = -np.ones(self.incidence.shape, dtype=np.int64)
        table[tuple(self.index.T)] = np.arange(len(self.cells))
        return table

    def locate(self, points: np.ndarray) -> np.ndarray:
        """Index of the cell containing each point, ``-1`` outside all cells.

        Cells are treated as half-open ``[lower, upper)`` so that points on a
        shared edge land in exactly one cell.
        """
        pts = np.asarray(points, dtype=float).reshape(-1, self.d)
        out = np.full(len(pts), -1, dtype=np.int64)
        if self._lookup is not None:
            idx = []
            ok = np.ones(len(pts), dtype=bool)
            for c, (lo, hi) in enumerate(self.intervals):
                order = np.argsort(lo)
                pos = np.searchsorted(lo[order], pts[:, c], side="right") - 1
                pos_c = np.clip(pos, 0, None)
                k = order[pos_c]
                ok &= (pos >= 0) & (pts[:, c] < hi[k])
                idx.append(k)
            cell = self._lookup[tuple(idx)]
            out[ok] = cell[ok]
            return out
        for start in range(0, len(pts), 20000):
            chunk = pts[start:start + 20000]
            inside = np.all((chunk[:, None, :] >= self.lower) & (chunk[:, None, :] < self.upper), axis=2)
            hit = inside.any(axis=1)
            out[start:start + len(chunk)][hit] = inside[hit].argmax(axis=1)
        return out


def as_cellset(cells) -> CellSet:
    return cells if isinstance(cells, CellSet) else CellSet(cells)


@dataclass
class SpaceTimeDesign:
    """Observation times with a disjoint family of cells at each time.

    ``cells`` may be a single cell family reused at every time or a sequence
    with one family per time.
    """

    times: tuple
    cells: tuple = field(repr=False)

    def __post_init__(self):
        self.times = tuple(float(t) for t in self.times)
        if len(self.times) == 0:
            self.cells = ()
            return
        if np.any(np.diff(self.times) <= 0):
            raise ValueError("observation times must be strictly increasing")
        cells = self.cells
        if isinstance(cells, CellSet) or (len(cells) > 0 and isinstance(cells[0], Rect)):
            shared = as_cellset(cells)
            self.cells = tuple(shared for _ in self.times)
        else:
            if len(cells) != len(self.times):
                raise ValueError("need one cell family per observation time")
            self.cells = tuple(as_cellset(c) for c in cells)
        d = {c.d for c in self.cells}
        if len(d) != 1:
            raise ValueError("cell families must share one dimension")

    @property
    def d(self) -> int:
        return self.cells[0].d if self.cells else 0

    @property
    def n_times(self) -> int:
        return len(self.times)

    @property
    def sizes(self) -> tuple:
        return tuple(len(c) for c in self.cells)

    @property
    def n_obs(self) -> int:
        return int(sum(self.sizes))


@dataclass(frozen=True)
class BrownianAdvectionParams:
    """Brownian motion with drift: ``X(t) = origin + v (t - t0) + sigma B(t - t0)``."""

    sigma: float
    v: tuple = (0.0, 0.0)
    t0: float = 0.0
    origin: tuple | None = None

    def __post_init__(self):
        v = tuple(float(x) for x in np.atleast_1d(self.v))
        if len(v) not in (1, 2):
            raise ValueError("dimension must be 1 or 2")
        if not (self.sigma > 0 and np.isfinite(self.sigma)):
            raise ValueError("sigma must be positive")
        origin = (0.0,) * len(v) if self.origin is None else tuple(float(x) for x in np.atleast_1d(self.origin))
        if len(origin) != len(v):
            raise ValueError("origin and velocity dimensions differ")
        object.__setattr__(self, "v", v)
        object.__setattr__(self, "origin", origin)
        object.__setattr__(self, "sigma", float(self.sigma))
        object.__setattr__(self, "t0", float(self.t0))

    @property
    def d(self) -> int:
        return len(self.v)

    @property
    def vx(self) -> float:
        return self.v[0]

    @property
    def vy(self) -> float:
        return self.v[1] if self.d > 1 else 0.0


def _interval_probs(zlo, zhi):
    # Difference of normal CDFs taken in whichever tail keeps precision.
    upper = zlo > 0
    return np.where(upper, ndtr(-zlo) - ndtr(-zhi), ndtr(zhi) - ndtr(zlo))


def _edge_index(lo, hi):
    edges = np.unique(np.concatenate([lo, hi]))
    return edges, np.searchsorted(edges, lo), np.searchsorted(edges, hi)


class TrajectoryModel(ABC):
    """Law of a free trajectory with independent coordinates.

    Subclasses supply one- and two-time interval probabilities per
    coordinate and a path sampler; rectangle and cell-table probabilities
    are assembled here as products over coordinates.
    """

    t0: float
    d: int

    @abstractmethod
    def interval_probs(self, t, coord: int, lo, hi) -> np.ndarray:
        """``P(X_coord(t) in [lo, hi])``; ``t`` broadcasts against the intervals."""

    @abstractmethod
    def pair_interval_tables(self, t, s, coord: int, lo_a, hi_a, lo_b, hi_b) -> np.ndarray:
        """Joint interval probabilities of ``(X_coord(t), X_coord(s))``.

        ``t`` and ``s`` are arrays of equal length P; the result has shape
        ``(P, len(lo_a), len(lo_b))``.
        """

    @abstractmethod
    def sample_paths(self, times, n_paths: int, rng_seed=None) -> np.ndarray:
        """Positions of independent paths, shape ``(n_paths, len(times), d)``."""

    def _check_time(self, t):
        if np.any(np.asarray(t) < self.t0 - 1e-12):
            raise ValueError("time precedes the release time")

    def rect_prob(self, t: float, A: Rect) -> float:
        self._check_time(t)
        out = 1.0
        for c in range(self.d):
            out *= float(self.interval_probs(t, c, np.array([A.lower[c]]), np.array([A.upper[c]]))[0])
        return out

    def pair_rect_prob(self, t: float, s: float, A: Rect, B: Rect) -> float:
        self._check_time([t, s])
        out = 1.0
        for c in range(self.d):
            tab = self.pair_interval_tables(
                np.array([t], float), np.array([s], float), c,
                np.array([A.lower[c]]), np.array([A.upper[c]]),
                np.array([B.lower[c]]), np.array([B.upper[c]]))
            out *= float(tab[0, 0, 0])
        return out

    def coordinate_probs(self, t, cells: CellSet) -> list:
        """Per-coordinate interval probabilities at times ``t`` (array of length T)."""
        t = np.atleast_1d(np.asarray(t, dtype=float))
        return [self.interval_probs(t[:, None], c, lo[None, :], hi[None, :])
                for c, (lo, hi) in enumerate(cells.intervals)]

    def cell_probs(self, t, cells) -> np.ndarray:
        """``mu_{X(t)}(A)`` for every cell; shape ``(len(t), n_cells)`` or ``(n_cells,)``."""
        cells = as_cellset(cells)
        scalar = np.ndim(t) == 0
        self._check_time(t)
        tabs = self.coordinate_probs(t, cells)
        out = np.ones((tabs[0].shape[0], len(cells)))
        for c, tab in enumerate(tabs):
            out *= tab[:, cells.index[:, c]]
        return out[0] if scalar else out

    def coordinate_pair_tables(self, t, s, cells_a: CellSet, cells_b: CellSet) -> list:
        t = np.atleast_1d(np.asarray(t, dtype=float))
        s = np.atleast_1d(np.asarray(s, dtype=float))
        return [self.pair_interval_tables(t, s, c, *cells_a.intervals[c], *cells_b.intervals[c])
                for c in range(self.d)]

    def cell_pair_probs(self, t: float, s: float, cells_a, cells_b) -> np.ndarray:
        """``mu_{X(t),X(s)}(A x B)`` for all cell pairs, shape ``(n_a, n_b)``."""
        cells_a, cells_b = as_cellset(cells_a), as_cellset(cells_b)
        self._check_time([t, s])
        tabs = self.coordinate_pair_tables([t], [s], cells_a, cells_b)
        out = np.ones((len(cells_a), len(cells_b)))
        for c, tab in enumerate(tabs):
            out *= tab[0][np.ix_(cells_a.index[:, c], cells_b.index[:, c])]
        return out


class BrownianAdvection(TrajectoryModel):
    """Brownian motion with constant advection started at ``origin`` at ``t0``."""

    def __init__(self, params: BrownianAdvectionParams | None = None, **kwargs):
        self.params = params if params is not None else BrownianAdvectionParams(**kwargs)
        self.t0 = self.params.t0
        self.d = self.params.d
        self._v = np.asarray(self.params.v)
        self._origin = np.asarray(self.params.origin)

    def __repr__(self):
        return f"BrownianAdvection({self.params!r})"

    def mean(self, t, coord: int):
        return self._origin[coord] + self._v[coord] * (np.asarray(t, dtype=float) - self.t0)

    def sd(self, t):
        return self.params.sigma * np.sqrt(np.maximum(np.asarray(t, dtype=float) - self.t0, 0.0))

    def interval_probs(self, t, coord, lo, hi):
        t = np.asarray(t, dtype=float)
        lo = np.asarray(lo, dtype=float)
        hi = np.asarray(hi, dtype=float)
        m = self.mean(t, coord)
        s = self.sd(t)
        with np.errstate(divide="ignore", invalid="ignore"):
            zlo = np.where(s > 0, (lo - m) / np.where(s > 0, s, 1.0), np.where(lo <= m, -np.inf, np.inf))
            zhi = np.where(s > 0, (hi - m) / np.where(s > 0, s, 1.0), np.where(hi > m, np.inf, -np.inf))
        return np.clip(_interval_probs(zlo, zhi), 0.0, 1.0)

    def pair_interval_tables(self, t, s, coord, lo_a, hi_a, lo_b, hi_b):
        t = np.ascontiguousarray(np.atleast_1d(t), dtype=float)
        s = np.ascontiguousarray(np.atleast_1d(s), dtype=float)
        sd_a, sd_b = self.sd(t), self.sd(s)
        et = t - self.t0
        es = s - self.t0
        with np.errstate(divide="ignore", invalid="ignore"):
            rho = np.where((et > 0) & (es > 0), np.sqrt(np.minimum(et, es) / np.maximum(et, es)), 0.0)
        ea, la, ha = _edge_index(np.asarray(lo_a, float), np.asarray(hi_a, float))
        eb, lb, hb = _edge_index(np.asarray(lo_b, float), np.asarray(hi_b, float))
        return pair_interval_tables(self.mean(t, coord), sd_a, self.mean(s, coord), sd_b, rho,
                                    ea, eb, la, ha, lb, hb)

    def transition_interval_probs(self, lag, coord: int, z, lo, hi):
        """``P(X_coord(s) in [lo, hi] | X_coord(s - lag) = z)``, broadcasting."""
        lag = np.asarray(lag, dtype=float)
        m = np.asarray(z, dtype=float) + self._v[coord] * lag
        s = self.params.sigma * np.sqrt(lag)
        lo = np.asarray(lo, dtype=float)
        hi = np.asarray(hi, dtype=float)
        with np.errstate(divide="ignore", invalid="ignore"):
            zlo = np.where(s > 0, (lo - m) / np.where(s > 0, s, 1.0), np.where(lo <= m, -np.inf, np.inf))
            zhi = np.where(s > 0, (hi - m) / np.where(s > 0, s, 1.0), np.where(hi > m, np.inf, -np.inf))
        return np.clip(_interval_probs(zlo, zhi), 0.0, 1.0)

    def sample_paths(self, times, n_paths, rng_seed=None):
        times = np.asarray(times, dtype=float)
        if times.ndim != 1 or len(times) == 0:
            raise ValueError("times must be a non-empty 1-D sequence")
        if np.any(np.diff(times) < 0):
            raise ValueError("times must be nondecreasing")
        self._check_time(times[0])
        rng = rng_seed if isinstance(rng_seed, np.random.Generator) else np.random.default_rng(rng_seed)
        steps = np.diff(np.concatenate([[self.t0], times]))
        z = rng.standard_normal((n_paths, len(times), self.d))
        incr = self._v * steps[None, :, None] + self.params.sigma * np.sqrt(steps)[None, :, None] * z
        return self._origin + np.cumsum(incr, axis=1)


def _model(params) -> TrajectoryModel:
    if isinstance(params, TrajectoryModel):
        return params
    return BrownianAdvection(params)


def rect_prob(params, t: float, A: Rect) -> float:
    """One-time probability ``mu_{X(t)}(A)``."""
    return _model(params).rect_prob(t, A)


def pair_rect_prob(params, t: float, s: float, A: Rect, B: Rect) -> float:
    """Two-time probability ``mu_{X(t),X(s)}(A x B)``."""
    return _model(params).pair_rect_prob(t, s, A, B)


def sample_paths(params, times, n_paths: int, rng_seed=None) -> np.ndarray:
    return _model(params).sample_paths(times, n_paths, rng_seed)


__all__ = [
    "Rect", "CellSet", "SpaceTimeDesign", "BrownianAdvectionParams", "TrajectoryModel",
    "BrownianAdvection", "rect_prob", "pair_rect_prob", "bvn_rect", "sample_paths", "as_cellset",
]
