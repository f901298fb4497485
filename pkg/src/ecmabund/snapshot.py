"""Snapshot model: free-moving individuals counted with binomial detection.

At each observation time every individual inside a cell is detected
independently with probability ``p``. Counts are ordered time-major; within
a time the order is that of the design's cells.
"""

from __future__ import annotations

from dataclasses import dataclass
from itertools import product

import numpy as np

from .ecm import MAX_TABLE_SIZE, CountsArrangement, PathProbabilityTable
from .mvnrect import mvn_rect_logprob
from .trajectory import BrownianAdvection, SpaceTimeDesign, TrajectoryModel


@dataclass
class SnapshotDesign(SpaceTimeDesign):
    """Observation design plus detection probability ``p`` and population size ``N``."""

    p: float = 1.0
    N: int = 0

    def __post_init__(self):
        super().__post_init__()
        if not 0.0 <= self.p <= 1.0:
            raise ValueError("detection probability must lie in [0, 1]")
        if self.N < 0 or int(self.N) != self.N:
            raise ValueError("N must be a nonnegative integer")
        self.N = int(self.N)


def _blocks(design: SpaceTimeDesign):
    off = np.concatenate([[0], np.cumsum(design.sizes)])
    return [slice(off[k], off[k + 1]) for k in range(design.n_times)]


def phi_moments(traj: TrajectoryModel, design: SnapshotDesign):
    """Mean and covariance of the abundance counts ``Phi_t(A)`` over the design cells."""
    N = design.N
    mus = [traj.cell_probs(t, cells) for t, cells in zip(design.times, design.cells)]
    mean = N * np.concatenate(mus)
    blocks = _blocks(design)
    cov = np.empty((design.n_obs, design.n_obs))
    for k, (t, ck) in enumerate(zip(design.times, design.cells)):
        mu = mus[k]
        cov[blocks[k], blocks[k]] = N * (np.diag(mu) - np.outer(mu, mu))
        for k2 in range(k + 1, design.n_times):
            joint = traj.cell_pair_probs(t, design.times[k2], ck, design.cells[k2])
            block = N * (joint - np.outer(mu, mus[k2]))
            cov[blocks[k], blocks[k2]] = block
            cov[blocks[k2], blocks[k]] = block.T
    return mean, cov


def snapshot_moments(traj: TrajectoryModel, design: SnapshotDesign):
    """Mean and covariance of the detected counts."""
    p = design.p
    m_phi, c_phi = phi_moments(traj, design)
    cov = p * p * c_phi
    cov[np.diag_indices_from(cov)] += p * (1.0 - p) * m_phi
    return p * m_phi, cov


def _rng(seed):
    return seed if isinstance(seed, np.random.Generator) else np.random.default_rng(seed)


def simulate_snapshot(traj: TrajectoryModel, design: SnapshotDesign, rng_seed=None) -> CountsArrangement:
    """Simulate paths, count per cell, then thin each count binomially.

    The last category at each time holds the undetected individuals
    (outside every cell, or inside but missed).
    """
    rng = _rng(rng_seed)
    paths = traj.sample_paths(design.times, design.N, rng)
    counts = []
    for k, cells in enumerate(design.cells):
        where = cells.locate(paths[:, k, :])
        present = np.bincount(where[where >= 0], minlength=len(cells))
        detected = rng.binomial(present, design.p)
        counts.append(np.append(detected, design.N - detected.sum()))
    return CountsArrangement(counts, design.N)


def simulate_snapshot_counts(traj: TrajectoryModel, design: SnapshotDesign, n_rep: int,
                             rng_seed=None, chunk_paths: int = 2_000_000) -> np.ndarray:
    """Detected counts of many independent replications, shape ``(n_rep, n_obs)``.

    Replications share one generator stream, drawn in chunks for speed.
    """
    rng = _rng(rng_seed)
    N = design.N
    out = np.empty((n_rep, design.n_obs), dtype=np.int64)
    per = max(1, chunk_paths // max(N, 1))
    blocks = _blocks(design)
    for start in range(0, n_rep, per):
        reps = min(per, n_rep - start)
        paths = traj.sample_paths(design.times, N * reps, rng)
        for k, cells in enumerate(design.cells):
            m = len(cells)
            where = cells.locate(paths[:, k, :]).reshape(reps, N)
            flat = (np.arange(reps)[:, None] * (m + 1) + np.where(where >= 0, where, m)).ravel()
            present = np.bincount(flat, minlength=reps * (m + 1)).reshape(reps, m + 1)[:, :m]
            out[start:start + reps, blocks[k]] = rng.binomial(present, design.p)
    return out


def _coordinate_joint(traj: TrajectoryModel, times, intervals, coord: int, rng_seed) -> np.ndarray:
    """Joint probabilities of one coordinate over interval choices at each time.

    ``intervals[k]`` lists ``(lo, hi)`` arrays whose final entry is the whole
    line. Two or fewer times use the exact trajectory primitives; longer
    schemes need a Gaussian law and use the lattice QMC estimator.
    """
    n = len(times)
    if n == 1:
        lo, hi = intervals[0]
        return traj.interval_probs(times[0], coord, lo, hi)
    if n == 2:
        return traj.pair_interval_tables([times[0]], [times[1]], coord, *intervals[0], *intervals[1])[0]
    if not isinstance(traj, BrownianAdvection):
        raise NotImplementedError("joint laws beyond two times need a Gaussian trajectory")
    t = np.asarray(times, dtype=float)
    el = t - traj.t0
    cov = traj.params.sigma**2 * np.minimum.outer(el, el)
    mean = traj.mean(t, coord)
    sizes = [len(iv[0]) for iv in intervals]
    out = np.empty(sizes)
    for combo in product(*[range(s) for s in sizes]):
        lo = np.array([intervals[k][0][i] for k, i in enumerate(combo)])
        hi = np.array([intervals[k][1][i] for k, i in enumerate(combo)])
        keep = ~(np.isneginf(lo) & np.isposinf(hi))
        if not keep.any():
            out[combo] = 1.0
            continue
        idx = np.flatnonzero(keep)
        sub = cov[np.ix_(idx, idx)]
        if np.any(np.diag(sub) == 0):
            raise ValueError("joint law at the release time is degenerate")
        res = mvn_rect_logprob(mean[idx], sub, lo[idx], hi[idx], rng_seed=rng_seed, rel_tol=1e-6)
        out[combo] = np.exp(res.log_prob)
    return out


def trajectory_path_probs(traj: TrajectoryModel, design: SpaceTimeDesign, rng_seed=0) -> np.ndarray:
    """Probabilities of full cell paths, the complement appended at each time."""
    n = design.n_times
    shape = tuple(m + 1 for m in design.sizes)
    if int(np.prod(shape)) > MAX_TABLE_SIZE:
        raise ValueError(f"scheme with {int(np.prod(shape))} paths is too large for a dense table")
    table = np.ones(shape)
    for c in range(design.d):
        ivs, idx = [], []
        for cells in design.cells:
            lo, hi = cells.intervals[c]
            ivs.append((np.append(lo, -np.inf), np.append(hi, np.inf)))
            idx.append(np.append(cells.index[:, c], len(lo)))
        joint = _coordinate_joint(traj, design.times, ivs, c, rng_seed)
        table = table * joint[np.ix_(*idx)]
    # The last index currently means "anywhere"; subtracting the cells turns
    # it into "outside every cell".
    for k in range(n):
        t = np.moveaxis(table, k, 0)
        t[-1] = t[-1] - t[:-1].sum(axis=0)
    return np.clip(table, 0.0, None)


def detection_recursion(pi0: np.ndarray, p: float) -> np.ndarray:
    """Apply binomial detection time by time to a path table with complements.

    A detected cell keeps mass ``p``; the complement category absorbs the
    undetected mass ``(1 - p)`` from every cell of its time.
    """
    pi = np.array(pi0, dtype=float)
    for k in range(pi.ndim):
        t = np.moveaxis(pi, k, 0)
        missed = t[:-1].sum(axis=0)
        t[:-1] *= p
        t[-1] += (1.0 - p) * missed
    return pi


def snapshot_path_probs(traj: TrajectoryModel, design: SnapshotDesign, rng_seed=0) -> PathProbabilityTable:
    """Full-path table of the detected-count ECM law, complement last at each time."""
    pi0 = trajectory_path_probs(traj, design, rng_seed)
    pi = detection_recursion(pi0, design.p)
    return PathProbabilityTable(pi / pi.sum())
