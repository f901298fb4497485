"""Capture model: retention at first capture, one release, Volterra solver.

Time is discretized on a regular grid ``t_k = t0 + k dt``. The capture-time
density solves a Volterra equation of the second kind by a right-endpoint
Riemann rule; moments and the simulator reuse the same grid and rule, so
the simulator's expectations coincide with the moment formulas up to
floating point.

Grid index conventions: ``k = 0`` is the release time ``t0``; capture
times live on ``1..n``; the release of captured individuals happens at
index ``kL``.
"""

from __future__ import annotations

import logging
import warnings
from abc import ABC, abstractmethod
from dataclasses import dataclass, field
from typing import Callable

import numpy as np
from scipy import stats

from .ecm import CountsArrangement
from .trajectory import BrownianAdvection, CellSet, TrajectoryModel, as_cellset

log = logging.getLogger(__name__)


def _grid_steps(span: float, dt: float, what: str) -> int:
    k = int(round(span / dt))
    if k < 0 or abs(k * dt - span) > 1e-9 * max(1.0, abs(span)):
        raise ValueError(f"{what} is not on the dt-grid")
    return k


def check_alpha_validity(config=None, *, alpha: float | None = None, t0: float | None = None,
                         tH: float | None = None):
    """Whether ``alpha * (tH - t0) < 1``, which keeps the capture density positive.

    Returns:
        ``(valid, margin)`` with ``margin = 1 - alpha * (tH - t0)``.
    """
    if config is not None:
        alpha, t0, tH = config.alpha, config.t0, config.tH
    margin = 1.0 - alpha * (tH - t0)
    return bool(margin > 0), float(margin)


@dataclass
class CaptureConfig:
    """Capture experiment: capture rate, release/horizon times and capture cells.

    The capture domain is the union of ``cells``. ``obs_times`` are the
    check times at which cumulative counts are recorded (default: release
    time and horizon).
    """

    alpha: float
    t0: float
    tL: float
    tH: float
    cells: CellSet = field(repr=False)
    dt: float = 1.0 / 60.0
    N: int = 0
    obs_times: tuple | None = None

    def __post_init__(self):
        self.cells = as_cellset(self.cells)
        if not self.alpha > 0:
            raise ValueError("alpha must be positive")
        if not self.t0 < self.tL < self.tH:
            raise ValueError("need t0 < tL < tH")
        if not self.dt > 0:
            raise ValueError("dt must be positive")
        if self.N < 0:
            raise ValueError("N must be nonnegative")
        self.N = int(self.N)
        self.n_steps = _grid_steps(self.tH - self.t0, self.dt, "tH")
        self.k_release = _grid_steps(self.tL - self.t0, self.dt, "tL")
        if self.obs_times is None:
            self.obs_times = (self.tL, self.tH)
        self.obs_times = tuple(float(t) for t in self.obs_times)
        idx = tuple(_grid_steps(t - self.t0, self.dt, f"observation time {t}") for t in self.obs_times)
        if any(k < 1 or k > self.n_steps for k in idx) or np.any(np.diff(idx) <= 0):
            raise ValueError("observation times must be increasing within (t0, tH]")
        self.obs_index = idx
        ok, margin = check_alpha_validity(self)
        if not ok:
            warnings.warn(f"alpha*(tH-t0) = {1 - margin:.3g} >= 1: the capture density may turn negative",
                          stacklevel=2)

    @property
    def grid(self) -> np.ndarray:
        return self.t0 + self.dt * np.arange(self.n_steps + 1)

    def with_alpha(self, alpha: float) -> "CaptureConfig":
        return CaptureConfig(alpha, self.t0, self.tL, self.tH, self.cells, self.dt, self.N, self.obs_times)


class CaptureKernel(ABC):
    """``g1(t)``: free-trajectory probability of the capture domain at ``t``;
    ``g2(t, u)``: joint probability of being in the domain at ``t`` and ``u``."""

    @abstractmethod
    def g1(self, t) -> np.ndarray: ...

    @abstractmethod
    def g2(self, t, u) -> np.ndarray: ...


@dataclass(frozen=True)
class FunctionKernel(CaptureKernel):
    """Kernel given by vectorized callables."""

    g1_fn: Callable
    g2_fn: Callable

    def g1(self, t):
        return np.asarray(self.g1_fn(np.asarray(t, dtype=float)), dtype=float)

    def g2(self, t, u):
        return np.asarray(self.g2_fn(np.asarray(t, dtype=float), np.asarray(u, dtype=float)), dtype=float)


def full_space_kernel() -> FunctionKernel:
    """Capture domain equal to the whole space; capture time is exponential."""
    return FunctionKernel(lambda t: np.ones_like(t), lambda t, u: np.ones(np.broadcast(t, u).shape))


def escaping_kernel(d: int = 2, t0: float = 0.0) -> FunctionKernel:
    """Straight-line escape from the origin at a standard Gaussian velocity.

    The domain is the unit ball, so ``g1(t) = F_chi2_d((t - t0)^-2)`` and,
    since the distance to the origin only grows, ``g2(t, u) = g1(max(t, u))``.
    """

    def g1(t):
        with np.errstate(divide="ignore"):
            return stats.chi2.cdf((np.asarray(t, dtype=float) - t0) ** -2.0, d)

    return FunctionKernel(g1, lambda t, u: g1(np.maximum(t, u)))


@dataclass
class VolterraSolution:
    """Grid values of the capture-time density ``f`` and ``phi = f / g1``."""

    t: np.ndarray
    f: np.ndarray
    phi: np.ndarray
    g1: np.ndarray
    dt: float
    alpha: float

    @property
    def t0(self) -> float:
        return float(self.t[0])

    @property
    def mass(self) -> float:
        """Riemann mass of captures within the horizon."""
        return float(self.f[1:].sum() * self.dt)

    @property
    def cdf(self) -> np.ndarray:
        return np.concatenate([[0.0], np.cumsum(self.f[1:]) * self.dt])

    def index(self, t) -> np.ndarray:
        return np.rint((np.asarray(t, dtype=float) - self.t[0]) / self.dt).astype(np.int64)


def solve_volterra(kernel: CaptureKernel, alpha: float, t0: float, tH: float, dt: float) -> VolterraSolution:
    """Solve ``f_k = alpha g1_k - alpha dt sum_{j<=k} g2(t_k, t_j) / g1_j f_j``.

    Forward substitution on the lower-triangular system (right-endpoint
    Riemann rule, ``j`` running over ``1..k``).
    """
    if not dt > 0:
        raise ValueError("dt must be positive")
    n = _grid_steps(tH - t0, dt, "horizon")
    t = t0 + dt * np.arange(n + 1)
    g1 = kernel.g1(t)
    if not np.all(np.isfinite(g1)):
        raise ValueError("kernel g1 is not finite on the grid")
    if np.any(g1[1:] <= 0):
        raise ValueError("kernel g1 must be positive on (t0, tH]")
    tk, tj = np.meshgrid(t[1:], t[1:], indexing="ij")
    g2 = kernel.g2(tk, tj)
    if not np.all(np.isfinite(np.tril(g2))):
        raise ValueError("kernel g2 is not finite on the grid")
    K = alpha * dt * np.tril(g2) / g1[1:][None, :]
    f = np.zeros(n + 1)
    f[0] = alpha * g1[0]
    fs = f[1:]
    for k in range(n):
        fs[k] = (alpha * g1[k + 1] - K[k, :k] @ fs[:k]) / (1.0 + K[k, k])
    with np.errstate(divide="ignore", invalid="ignore"):
        phi = np.where(g1 > 0, f / g1, np.nan)
    return VolterraSolution(t, f, phi, g1, float(dt), float(alpha))


def volterra_residual(sol: VolterraSolution, kernel: CaptureKernel) -> np.ndarray:
    """Right-hand side of the discretized equation minus ``f`` on ``1..n``."""
    t = sol.t[1:]
    tk, tj = np.meshgrid(t, t, indexing="ij")
    K = np.tril(kernel.g2(tk, tj)) / sol.g1[1:][None, :]
    rhs = sol.alpha * sol.g1[1:] - sol.alpha * sol.dt * K @ sol.f[1:]
    return rhs - sol.f[1:]


def second_capture_density(sol: VolterraSolution, kernel: CaptureKernel, alpha: float, u: float) -> np.ndarray:
    """Density of the hypothetical second capture time given first capture at ``u``.

    ``f(v | u) = alpha g2(v, u) / g1(u) * phi(v) / phi(u)`` for grid times
    ``v > u`` and zero elsewhere; returned on the full grid.
    """
    iu = int(sol.index(u))
    if iu < 0 or iu >= len(sol.t) or abs(sol.t[iu] - u) > 1e-9 * max(1.0, abs(u)):
        raise ValueError("u must be a grid time")
    if not sol.phi[iu] > 0:
        raise ValueError("first capture at u has probability zero")
    out = np.zeros(len(sol.t))
    v = sol.t[iu + 1:]
    out[iu + 1:] = alpha * kernel.g2(v, np.full_like(v, sol.t[iu])) / sol.g1[iu] * sol.phi[iu + 1:] / sol.phi[iu]
    return out


class TrajectoryKernel(CaptureKernel):
    """Capture kernel and cell-level tables derived from a trajectory law on a grid.

    Besides ``g1``/``g2`` (looked up on the grid) it holds one-time cell
    probabilities ``m1[k, A]`` and per-coordinate two-time interval tables
    for every pair ``(u, v)`` with ``1 <= u <= kL`` and
    ``u < v <= u + n - kL``, the window in which a released individual can
    be recaptured. Cell-level quantities are contracted from those tables.

    Args:
        markov: Replace each two-time cell probability by the one-time
            probability of the first cell times the transition probability
            from that cell's center (coordinatewise). Only the cell tables
            change; ``g1`` and ``g2`` stay exact.
    """

    def __init__(self, traj: TrajectoryModel, cells, t0: float, dt: float, n_steps: int, k_release: int,
                 markov: bool = False):
        self.traj = traj
        self.cells = cells = as_cellset(cells)
        self.t0, self.dt = float(t0), float(dt)
        self.n, self.kL = int(n_steps), int(k_release)
        self.markov = bool(markov)
        if markov and not isinstance(traj, BrownianAdvection):
            raise ValueError("the center-point shortcut needs Brownian transition laws")
        if traj.d not in (1, 2) or cells.d != traj.d:
            raise ValueError("trajectory and cell dimensions differ")
        self.t = t0 + dt * np.arange(self.n + 1)
        self.m1 = traj.cell_probs(self.t, cells)
        self._g1 = self.m1.sum(axis=1)
        self._g2 = self._domain_pairs()
        self.n_cells = len(cells)
        iu, lag = np.meshgrid(np.arange(1, self.kL + 1), np.arange(1, self.n - self.kL + 1), indexing="ij")
        self.iu, self.lag = iu.ravel(), lag.ravel()
        self.iv = self.iu + self.lag
        self._tabs = None

    @classmethod
    def from_config(cls, traj: TrajectoryModel, config: CaptureConfig, markov: bool = False):
        return cls(traj, config.cells, config.t0, config.dt, config.n_steps, config.k_release, markov)

    # Coordinate structure. A 1-D design gets a trivial second coordinate.
    def _coords(self):
        cells = self.cells
        ix = cells.index
        inc = cells.incidence
        if cells.d == 1:
            ix = np.column_stack([ix[:, 0], np.zeros(len(ix), dtype=np.int64)])
            inc = inc.reshape(-1, 1)
        return ix, inc

    def _domain_pairs(self) -> np.ndarray:
        n = self.n
        k, j = np.tril_indices(n + 1)
        out = np.ones(len(k))
        box = self.cells.union_rect
        if box is not None:
            for c in range(self.cells.d):
                tab = self.traj.pair_interval_tables(self.t[k], self.t[j], c,
                                                     np.array([box.lower[c]]), np.array([box.upper[c]]),
                                                     np.array([box.lower[c]]), np.array([box.upper[c]]))
                out *= tab[:, 0, 0]
        else:
            _, inc = self._coords()
            for start in range(0, len(k), 512):
                sl = slice(start, start + 512)
                tabs = self.traj.coordinate_pair_tables(self.t[k[sl]], self.t[j[sl]], self.cells, self.cells)
                if len(tabs) == 1:
                    out[sl] = np.einsum("pab,a,b->p", tabs[0], inc[:, 0], inc[:, 0])
                else:
                    inner = np.einsum("ac,pce,be->pab", inc, tabs[1], inc)
                    out[sl] = np.einsum("pab,pab->p", tabs[0], inner)
        g2 = np.zeros((n + 1, n + 1))
        g2[k, j] = out
        g2[j, k] = out
        return g2

    def _pair_tables(self):
        if self._tabs is not None:
            return self._tabs
        tu, tv = self.t[self.iu], self.t[self.iv]
        tabs = []
        for c in range(self.cells.d):
            lo, hi = self.cells.intervals[c]
            if self.markov:
                first = self.traj.interval_probs(tu[:, None], c, lo[None, :], hi[None, :])
                z = (lo + hi) / 2
                exact = ~np.isfinite(z)
                lagt = (tv - tu)[:, None, None]
                trans = self.traj.transition_interval_probs(lagt, c, z[None, :, None], lo[None, None, :],
                                                            hi[None, None, :])
                tab = first[:, :, None] * trans
                if np.any(exact):
                    full = self.traj.pair_interval_tables(tu, tv, c, lo, hi, lo, hi)
                    tab[:, exact, :] = full[:, exact, :]
            else:
                tab = self.traj.pair_interval_tables(tu, tv, c, lo, hi, lo, hi)
            tabs.append(tab)
        if len(tabs) == 1:
            tabs.append(np.ones((len(tu), 1, 1)))
        self._tabs = tabs
        return tabs

    @property
    def n_pairs(self) -> int:
        return len(self.iu)

    def pair_index(self, i: int, lag: int) -> int:
        return (i - 1) * (self.n - self.kL) + (lag - 1)

    def g1(self, t):
        k = np.rint((np.asarray(t, dtype=float) - self.t0) / self.dt).astype(np.int64)
        return self._g1[k]

    def g2(self, t, u):
        k = np.rint((np.asarray(t, dtype=float) - self.t0) / self.dt).astype(np.int64)
        j = np.rint((np.asarray(u, dtype=float) - self.t0) / self.dt).astype(np.int64)
        return self._g2[k, j]

    @property
    def g1_grid(self) -> np.ndarray:
        return self._g1

    @property
    def g2_grid(self) -> np.ndarray:
        return self._g2

    def domain_then_cell(self) -> np.ndarray:
        """``mu_{u,v}(D_c x B)`` per pair, shape ``(n_pairs, n_cells)``."""
        tx, ty = self._pair_tables()
        ix, inc = self._coords()
        full = np.swapaxes(tx, 1, 2) @ (inc @ ty)
        return full[:, ix[:, 0], ix[:, 1]]

    def cell_then_domain(self) -> np.ndarray:
        """``mu_{u,v}(A x D_c)`` per pair, shape ``(n_pairs, n_cells)``."""
        tx, ty = self._pair_tables()
        ix, inc = self._coords()
        full = tx @ (inc @ np.swapaxes(ty, 1, 2))
        return full[:, ix[:, 0], ix[:, 1]]

    def pair_matrix(self, p: int) -> np.ndarray:
        """``mu_{u,v}(A x B)`` for pair ``p``, rows earlier cell, columns later cell."""
        tx, ty = self._pair_tables()
        ix, _ = self._coords()
        return tx[p][np.ix_(ix[:, 0], ix[:, 0])] * ty[p][np.ix_(ix[:, 1], ix[:, 1])]

    def weighted_pair_sum(self, w: np.ndarray) -> np.ndarray:
        """``sum_p w[p] mu_{u_p,v_p}(A x B)`` over cell pairs."""
        tx, ty = self._pair_tables()
        ix, _ = self._coords()
        P, nx, _ = tx.shape
        ny = ty.shape[1]
        keep = np.flatnonzero(w)
        M = (w[keep, None] * tx[keep].reshape(len(keep), -1)).T @ ty[keep].reshape(len(keep), -1)
        rows = ix[:, 0][:, None] * nx + ix[:, 0][None, :]
        cols = ix[:, 1][:, None] * ny + ix[:, 1][None, :]
        return M[rows, cols]


def capture_moments(kernel_ext: TrajectoryKernel, sol: VolterraSolution, config: CaptureConfig):
    """Mean and covariance of cumulative retained counts, time-major over ``obs_times``.

    Single integrals use the right-endpoint rule on the grid; double
    integrals over first-capture time ``u <= tL`` and hypothetical second
    capture ``v`` use it in both variables.
    """
    N, a, dt = config.N, config.alpha, config.dt
    kL = config.k_release
    phi = sol.phi
    m1 = kernel_ext.m1
    C = kernel_ext.n_cells
    iu, iv, lag = kernel_ext.iu, kernel_ext.iv, kernel_ext.lag
    dcb = kernel_ext.domain_then_cell()
    wv = phi[iv]

    def single(k_lo, k_hi):
        # sum over grid u in (k_lo, k_hi] of m1[u] phi[u] dt
        if k_hi <= k_lo:
            return np.zeros(C)
        return dt * (phi[k_lo + 1:k_hi + 1] @ m1[k_lo + 1:k_hi + 1])

    def recapture(max_lag):
        sel = lag <= max_lag
        return a * dt * dt * (wv[sel] @ dcb[sel])

    obs = config.obs_index
    means = []
    for k in obs:
        if k <= kL:
            means.append(single(0, k))
        else:
            means.append(single(kL, k) + recapture(k - kL))
    nobs = len(obs)
    cov = np.zeros((nobs * C, nobs * C))
    for x, k in enumerate(obs):
        for y in range(x, nobs):
            k2 = obs[y]
            lo, hi = min(k, k2), max(k, k2)
            if hi <= kL:
                second = np.diag(single(0, lo))
            elif lo <= kL:
                w = np.where((iu <= lo) & (lag <= hi - kL), wv, 0.0)
                second = a * dt * dt * kernel_ext.weighted_pair_sum(w)
                if k > k2:
                    second = second.T
            else:
                second = np.diag(recapture(lo - kL) + single(kL, lo))
            block = N * (second - np.outer(means[x], means[y]))
            cov[x * C:(x + 1) * C, y * C:(y + 1) * C] = block
            cov[y * C:(y + 1) * C, x * C:(x + 1) * C] = block.T
    return N * np.concatenate(means), cov


@dataclass(frozen=True)
class CaptureRecord:
    """Capture history of one individual (grid indices; None when absent)."""

    first_time: int | None
    first_cell: int | None
    second_time: int | None = None
    second_cell: int | None = None


def _normalize(p: np.ndarray, what: str, tol: float = 1e-6):
    """Clamp negatives, renormalize, and return the clamp size and mass defect."""
    neg = float(-p.min()) if p.min() < 0 else 0.0
    q = np.clip(p, 0.0, None)
    s = q.sum()
    if s <= 0:
        raise ValueError(f"{what}: probability vector has no mass")
    defect = abs(s - 1.0)
    if defect > tol:
        log.info("%s: renormalized vector with mass %.3g", what, s)
    return q / s, neg, defect


class CaptureSimulator:
    """Discrete-time simulator sharing one grid and kernel with the moments.

    Steps: first capture time from the Volterra density (with a no-capture
    atom), a hypothetical second capture for individuals caught by the
    release time, then capture cells from the conditional position laws, and
    finally cumulative counts per cell restarting after the release.
    """

    def __init__(self, traj: TrajectoryModel, config: CaptureConfig, markov: bool = False,
                 kernel: TrajectoryKernel | None = None, sol: VolterraSolution | None = None):
        self.config = config
        self.kernel = kernel if kernel is not None else TrajectoryKernel.from_config(traj, config, markov)
        k = self.kernel
        self.sol = sol if sol is not None else solve_volterra(k, config.alpha, config.t0, config.tH, config.dt)
        a, dt, n, kL = config.alpha, config.dt, config.n_steps, config.k_release
        self.n, self.kL, self.n_lag = n, kL, n - kL
        f, phi, g1, g2 = self.sol.f, self.sol.phi, k.g1_grid, k.g2_grid
        self.max_clamp = 0.0
        self.max_defect = 0.0

        first = np.concatenate([[1.0 - f[1:].sum() * dt], f[1:] * dt])
        self.p_first = self._norm(first, "first capture")

        # Second (hypothetical) capture lag given first capture index i <= kL.
        self.p_second = np.zeros((kL + 1, self.n_lag + 1))
        for i in range(1, kL + 1):
            v = i + np.arange(1, self.n_lag + 1)
            dens = a * g2[v, i] / g1[i] * phi[v] / phi[i] * dt if phi[i] > 0 else np.zeros(self.n_lag)
            self.p_second[i] = self._norm(np.concatenate([[1.0 - dens.sum()], dens]), "second capture")

        # Capture cell given a single capture at index i.
        C = k.n_cells
        cd = k.cell_then_domain()
        self.p_once = np.zeros((n + 1, C))
        for i in range(1, n + 1):
            if i > kL:
                num = k.m1[i] / g1[i]
            else:
                sel = slice(k.pair_index(i, 1), k.pair_index(i, self.n_lag) + 1)
                v = i + np.arange(1, self.n_lag + 1)
                corr = a / phi[i] * (phi[v] * dt) @ cd[sel] if phi[i] > 0 else 0.0
                num = (k.m1[i] - corr) / (g1[i] * self.p_second[i, 0]) if self.p_second[i, 0] > 0 else k.m1[i]
            self.p_once[i] = self._norm(num, f"single-capture cell at step {i}", tol=np.inf)

    def _norm(self, p, what, tol=1e-6):
        q, neg, defect = _normalize(p, what, tol)
        self.max_clamp = max(self.max_clamp, neg)
        self.max_defect = max(self.max_defect, defect)
        if neg > 0:
            log.info("%s: clamped negative probability of size %.3g", what, neg)
        return q

    def twice_cells(self, i: int, lag: int) -> np.ndarray:
        m = self.kernel.pair_matrix(self.kernel.pair_index(i, lag))
        return self._norm(m.ravel(), f"double-capture cells at ({i}, {lag})", tol=np.inf)

    def expected_counts(self) -> np.ndarray:
        """Exact expectation of the simulated counts per individual (time-major)."""
        cfg, kL = self.config, self.kL
        C = self.kernel.n_cells
        out = []
        first_cell = self.p_once.copy()
        for i in range(1, kL + 1):
            first_cell[i] = self.p_second[i, 0] * self.p_once[i]
            for lag in range(1, self.n_lag + 1):
                first_cell[i] += self.p_second[i, lag] * self.twice_cells(i, lag).reshape(C, C).sum(axis=1)
        for k in cfg.obs_index:
            if k <= kL:
                e = self.p_first[1:k + 1] @ first_cell[1:k + 1]
            else:
                e = self.p_first[kL + 1:k + 1] @ self.p_once[kL + 1:k + 1]
                for i in range(1, kL + 1):
                    for lag in range(1, k - kL + 1):
                        w = self.p_first[i] * self.p_second[i, lag]
                        if w > 0:
                            e = e + w * self.twice_cells(i, lag).reshape(C, C).sum(axis=0)
            out.append(e)
        return np.concatenate(out)

    def sample(self, n_individuals: int, rng) -> dict:
        """Capture histories of independent individuals as index arrays (-1 = none)."""
        C, kL = self.kernel.n_cells, self.kL
        first = rng.choice(self.n + 1, size=n_individuals, p=self.p_first)
        lag = np.zeros(n_individuals, dtype=np.int64)
        early = np.flatnonzero((first >= 1) & (first <= kL))
        for i, idx in _groups(first[early], early):
            lag[idx] = rng.choice(self.n_lag + 1, size=len(idx), p=self.p_second[i])
        cell1 = np.full(n_individuals, -1, dtype=np.int64)
        cell2 = np.full(n_individuals, -1, dtype=np.int64)
        once = np.flatnonzero((first >= 1) & (lag == 0))
        for i, idx in _groups(first[once], once):
            cell1[idx] = rng.choice(C, size=len(idx), p=self.p_once[i])
        twice = np.flatnonzero(lag > 0)
        key = first[twice] * (self.n_lag + 1) + lag[twice]
        for kk, idx in _groups(key, twice):
            i, lg = divmod(int(kk), self.n_lag + 1)
            pick = rng.choice(C * C, size=len(idx), p=self.twice_cells(i, lg))
            cell1[idx], cell2[idx] = np.divmod(pick, C)
        second = np.where(lag > 0, kL + lag, -1)
        first = np.where(first >= 1, first, -1)
        return {"first": first, "cell1": cell1, "second": second, "cell2": cell2}

    def counts(self, hist: dict, n_rep: int, N: int) -> np.ndarray:
        """Cumulative counts per replication, shape ``(n_rep, n_obs_times, n_cells)``."""
        C, kL = self.kernel.n_cells, self.kL
        rep = np.repeat(np.arange(n_rep), N)
        first, second = hist["first"], hist["second"]
        out = np.zeros((n_rep, len(self.config.obs_index), C), dtype=np.int64)
        for x, k in enumerate(self.config.obs_index):
            if k <= kL:
                sel1 = (first >= 1) & (first <= k)
                sel2 = np.zeros_like(sel1)
            else:
                sel1 = (first > kL) & (first <= k)
                sel2 = (second >= 1) & (second <= k)
            flat = np.concatenate([rep[sel1] * C + hist["cell1"][sel1], rep[sel2] * C + hist["cell2"][sel2]])
            out[:, x, :] = np.bincount(flat, minlength=n_rep * C).reshape(n_rep, C)
        return out


def _groups(keys: np.ndarray, idx: np.ndarray):
    if len(keys) == 0:
        return
    order = np.argsort(keys, kind="stable")
    ks = keys[order]
    bounds = np.flatnonzero(np.diff(ks)) + 1
    for chunk in np.split(order, bounds):
        yield int(keys[chunk[0]]), idx[chunk]


def _rng(seed):
    return seed if isinstance(seed, np.random.Generator) else np.random.default_rng(seed)


def simulate_capture(traj: TrajectoryModel, config: CaptureConfig, rng_seed=None, markov: bool = False,
                     simulator: CaptureSimulator | None = None):
    """One capture experiment with ``config.N`` individuals.

    Returns:
        ``(arrangement, records)``: counts at each observation time with the
        not-retained complement last, and one ``CaptureRecord`` per individual.
    """
    sim = simulator if simulator is not None else CaptureSimulator(traj, config, markov)
    rng = _rng(rng_seed)
    hist = sim.sample(config.N, rng)
    counts = sim.counts(hist, 1, config.N)[0]
    arrangement = CountsArrangement([np.append(c, config.N - c.sum()) for c in counts], config.N)
    records = [
        CaptureRecord(*(None if v < 0 else int(v) for v in row))
        for row in zip(hist["first"], hist["cell1"], hist["second"], hist["cell2"])
    ]
    return arrangement, records


def simulate_capture_counts(traj: TrajectoryModel, config: CaptureConfig, n_rep: int, rng_seed=None,
                            markov: bool = False, simulator: CaptureSimulator | None = None,
                            chunk_individuals: int = 2_000_000) -> np.ndarray:
    """Counts of many replications, shape ``(n_rep, n_obs_times * n_cells)``.

    Replications share one generator stream and are drawn in chunks.
    """
    sim = simulator if simulator is not None else CaptureSimulator(traj, config, markov)
    rng = _rng(rng_seed)
    N = config.N
    per = max(1, chunk_individuals // max(N, 1))
    parts = []
    for start in range(0, n_rep, per):
        reps = min(per, n_rep - start)
        hist = sim.sample(N * reps, rng)
        parts.append(sim.counts(hist, reps, N).reshape(reps, -1))
    return np.concatenate(parts, axis=0)
