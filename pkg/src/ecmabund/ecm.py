"""Evolving-categories multinomial (ECM) distributions.

N individuals move independently through categories that change over
``n`` observation times. The law of the count arrangement is fixed by the
table of full-path probabilities: the chance that one individual occupies
category ``l_1`` at time 1, ``l_2`` at time 2, and so on. Times and
categories are 0-based here.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

MAX_TABLE_SIZE = 10**6


@dataclass(frozen=True)
class CategoryScheme:
    """Number of categories ``m[k]`` at each of ``n`` times."""

    m: tuple

    def __post_init__(self):
        m = tuple(int(x) for x in self.m)
        if len(m) == 0 or any(x < 1 for x in m):
            raise ValueError("need at least one time and one category per time")
        object.__setattr__(self, "m", m)

    @property
    def n(self) -> int:
        return len(self.m)

    @property
    def total(self) -> int:
        return int(sum(self.m))

    @property
    def offsets(self) -> np.ndarray:
        return np.concatenate([[0], np.cumsum(self.m)])

    @property
    def size(self) -> int:
        return int(np.prod(self.m))


@dataclass
class PathProbabilityTable:
    """Dense table of full-path probabilities over ``m[0] x ... x m[n-1]``."""

    probs: np.ndarray

    def __post_init__(self):
        probs = np.asarray(self.probs, dtype=float)
        if probs.ndim == 0:
            raise ValueError("table needs at least one axis")
        if probs.size > MAX_TABLE_SIZE:
            raise ValueError(f"table with {probs.size} paths exceeds the dense limit {MAX_TABLE_SIZE}")
        if np.any(probs < -1e-12) or not np.all(np.isfinite(probs)):
            raise ValueError("path probabilities must be finite and nonnegative")
        if abs(probs.sum() - 1.0) > 1e-10:
            raise ValueError(f"path probabilities sum to {probs.sum()!r}, not 1")
        self.probs = np.clip(probs, 0.0, None)

    @property
    def scheme(self) -> CategoryScheme:
        return CategoryScheme(self.probs.shape)

    def marginal(self, times) -> np.ndarray:
        """Path probabilities over a subset of times (kept in the given order)."""
        times = list(times)
        drop = tuple(k for k in range(self.probs.ndim) if k not in times)
        sub = self.probs.sum(axis=drop)
        kept = sorted(times)
        return np.transpose(sub, [kept.index(k) for k in times])


@dataclass
class CountsArrangement:
    """Counts ``Q[k][l]`` per time and category.

    When ``has_complement`` is true the last category at each time is the
    complement ("elsewhere / undetected") and each time sums to ``N``.
    Models without a closed population (EcoDiff) set it to false.
    """

    counts: list
    N: int
    has_complement: bool = True

    def __post_init__(self):
        self.counts = [np.asarray(c, dtype=np.int64) for c in self.counts]
        if any(np.any(c < 0) for c in self.counts):
            raise ValueError("counts must be nonnegative")
        if self.has_complement:
            sums = [int(c.sum()) for c in self.counts]
            if any(s != self.N for s in sums):
                raise ValueError(f"counts per time must sum to N={self.N}, got {sums}")

    @property
    def scheme(self) -> CategoryScheme:
        return CategoryScheme(tuple(len(c) for c in self.counts))

    def flat(self) -> np.ndarray:
        return np.concatenate(self.counts)

    def observed(self) -> np.ndarray:
        """Counts of observed cells only, time-major, complement dropped."""
        if not self.has_complement:
            return self.flat()
        return np.concatenate([c[:-1] for c in self.counts])


def _table(table) -> PathProbabilityTable:
    return table if isinstance(table, PathProbabilityTable) else PathProbabilityTable(table)


def char_fn(table, N: int, xi) -> complex:
    """Characteristic function of the count arrangement at ``xi``.

    ``xi`` is flat with ``sum(m)`` entries ordered time-major. The value is
    ``(sum over paths of p * exp(i * sum_k xi[k, l_k]))**N``.
    """
    table = _table(table)
    scheme = table.scheme
    xi = np.asarray(xi, dtype=float).ravel()
    if xi.size != scheme.total:
        raise ValueError(f"xi has {xi.size} entries, scheme needs {scheme.total}")
    off = scheme.offsets
    phase = np.zeros(scheme.m)
    for k in range(scheme.n):
        shape = [1] * scheme.n
        shape[k] = scheme.m[k]
        phase = phase + xi[off[k]:off[k + 1]].reshape(shape)
    base = complex(np.sum(table.probs * np.exp(1j * phase)))
    return base**N


def one_time_marginal(table, k: int) -> np.ndarray:
    """Category probabilities at time ``k``."""
    return _table(table).marginal([k])


def two_time_conditional(table, k: int, k_prime: int):
    """Conditional law of the time-``k_prime`` category given the time-``k`` one.

    Returns:
        ``(cond, undefined)`` where ``cond[l, l'] = P(l' at k' | l at k)`` and
        ``undefined`` flags rows whose conditioning category has probability
        zero. Those rows are NaN rather than invented.
    """
    if k == k_prime:
        raise ValueError("the two times must differ")
    joint = _table(table).marginal([k, k_prime])
    row = joint.sum(axis=1)
    undefined = row <= 0
    with np.errstate(invalid="ignore", divide="ignore"):
        cond = joint / row[:, None]
    cond[undefined] = np.nan
    return cond, undefined


def moments(table, N: int):
    """Mean vector and covariance matrix of the flat arrangement."""
    table = _table(table)
    scheme = table.scheme
    off = scheme.offsets
    marg = [table.marginal([k]) for k in range(scheme.n)]
    mean = N * np.concatenate(marg)
    cov = np.empty((scheme.total, scheme.total))
    for k in range(scheme.n):
        sk = slice(off[k], off[k + 1])
        cov[sk, sk] = N * (np.diag(marg[k]) - np.outer(marg[k], marg[k]))
        for k2 in range(k + 1, scheme.n):
            s2 = slice(off[k2], off[k2 + 1])
            block = N * (table.marginal([k, k2]) - np.outer(marg[k], marg[k2]))
            cov[sk, s2] = block
            cov[s2, sk] = block.T
    return mean, cov


def _aggregate(path_counts: np.ndarray, m: tuple) -> list:
    return [path_counts.sum(axis=tuple(a for a in range(len(m)) if a != k)) for k in range(len(m))]


def sample_path_counts(table, N: int, rng_seed=None) -> np.ndarray:
    """Numbers of individuals following each full path, shaped like the table."""
    table = _table(table)
    rng = rng_seed if isinstance(rng_seed, np.random.Generator) else np.random.default_rng(rng_seed)
    p = table.probs.ravel()
    return rng.multinomial(N, p / p.sum()).reshape(table.probs.shape)


def sample_arrangement(table, N: int, rng_seed=None) -> CountsArrangement:
    """Draw one arrangement by allocating individuals to full paths."""
    table = _table(table)
    paths = sample_path_counts(table, N, rng_seed)
    return CountsArrangement(_aggregate(paths, table.probs.shape), N)


def sample_arrangements(table, N: int, n_rep: int, rng_seed=None) -> np.ndarray:
    """Many arrangements at once; rows are flat time-major arrangements."""
    table = _table(table)
    rng = rng_seed if isinstance(rng_seed, np.random.Generator) else np.random.default_rng(rng_seed)
    p = table.probs.ravel()
    paths = rng.multinomial(N, p / p.sum(), size=n_rep).reshape((n_rep,) + table.probs.shape)
    m = table.probs.shape
    parts = [paths.sum(axis=tuple(1 + a for a in range(len(m)) if a != k)) for k in range(len(m))]
    return np.concatenate(parts, axis=1)
