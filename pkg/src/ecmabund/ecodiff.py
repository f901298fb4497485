"""EcoDiff baseline: independent Poisson counts from an advection-diffusion density.

The population density solves ``du/dt = sigma^2/2 Lap(u) - v . grad(u)``
from a point release, i.e. a Gaussian with mean ``v (t - t0)`` and
covariance ``sigma^2 (t - t0) I``. Counts per (time, cell) are independent
Poisson with mean ``N p`` times the cell's mass.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np
from scipy.special import gammaln

from .ecm import CountsArrangement
from .trajectory import BrownianAdvection, BrownianAdvectionParams, Rect, SpaceTimeDesign

EPS_RATE = 1e-24


@dataclass(frozen=True)
class EcoDiffParams:
    sigma: float
    v: tuple = (0.0, 0.0)
    p: float = 1.0
    N: int = 0
    t0: float = 0.0
    origin: tuple | None = None

    def __post_init__(self):
        if not 0.0 <= self.p <= 1.0:
            raise ValueError("p must lie in [0, 1]")
        if self.N < 0:
            raise ValueError("N must be nonnegative")

    @property
    def density(self) -> BrownianAdvection:
        """The Gaussian kernel solving the PDE, as a trajectory law."""
        return BrownianAdvection(BrownianAdvectionParams(self.sigma, self.v, self.t0, self.origin))


def ecodiff_intensity(params: EcoDiffParams, t: float, A: Rect) -> float:
    """Expected count ``N p int_A u(x, t) dx`` in one cell."""
    if not t > params.t0:
        raise ValueError("intensity is defined after the release time")
    return params.N * params.p * params.density.rect_prob(t, A)


def ecodiff_rates(params: EcoDiffParams, design: SpaceTimeDesign) -> np.ndarray:
    """Poisson rates over the design, time-major."""
    dens = params.density
    return params.N * params.p * np.concatenate(
        [dens.cell_probs(t, cells) for t, cells in zip(design.times, design.cells)])


def simulate_ecodiff(params: EcoDiffParams, design: SpaceTimeDesign, rng_seed=None) -> CountsArrangement:
    """Independent Poisson draws per (time, cell); there is no complement category."""
    rng = rng_seed if isinstance(rng_seed, np.random.Generator) else np.random.default_rng(rng_seed)
    draws = rng.poisson(ecodiff_rates(params, design))
    off = np.concatenate([[0], np.cumsum(design.sizes)])
    counts = [draws[off[k]:off[k + 1]] for k in range(design.n_times)]
    return CountsArrangement(counts, params.N, has_complement=False)


def poisson_loglik(rates, data) -> float:
    """Sum of Poisson log-pmfs with every rate shifted by ``1e-24``."""
    lam = np.asarray(rates, dtype=float) + EPS_RATE
    x = np.asarray(data, dtype=float)
    if x.shape != lam.shape:
        raise ValueError("data and rates differ in shape")
    return float(np.sum(x * np.log(lam) - lam - gammaln(x + 1.0)))


def ecodiff_loglik(params: EcoDiffParams, design: SpaceTimeDesign, data) -> float:
    """Exact Poisson log-likelihood of the data (flat, time-major, or an arrangement)."""
    if isinstance(data, CountsArrangement):
        data = data.observed()
    data = np.asarray(data)
    if design.n_obs == 0:
        return 0.0
    if data.size != design.n_obs:
        raise ValueError(f"data has {data.size} entries, design has {design.n_obs} cells")
    return poisson_loglik(ecodiff_rates(params, design), data.ravel())
