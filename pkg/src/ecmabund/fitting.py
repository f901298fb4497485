"""Parameter estimation: Gaussian pseudo-likelihood (MGLE) and exact EcoDiff MLE.

The MGLE treats the count vector as multivariate Gaussian with the model's
exact mean and covariance. Parameters are ``(sigma, vx, vy, p)`` for the
snapshot and EcoDiff models and ``(sigma, vx, vy, alpha)`` for the capture
model (``vy`` is absent in one dimension).
"""

from __future__ import annotations

import logging
import warnings
from collections import OrderedDict
from dataclasses import dataclass, field

import numpy as np
from scipy import linalg, optimize, stats

from .capture import CaptureConfig, TrajectoryKernel, capture_moments, solve_volterra
from .ecm import CountsArrangement
from .ecodiff import EcoDiffParams, ecodiff_rates, poisson_loglik
from .mvnrect import MVNResult, mvn_rect_logprob
from .snapshot import SnapshotDesign, phi_moments
from .trajectory import BrownianAdvection, BrownianAdvectionParams, SpaceTimeDesign

log = logging.getLogger(__name__)

MODELS = ("snapshot", "capture", "ecodiff")
VAR_EPS = 1e-6


def param_names(model: str, d: int = 2) -> tuple:
    last = "alpha" if model == "capture" else "p"
    return ("sigma", "vx", "vy", last) if d == 2 else ("sigma", "v", last)


@dataclass
class FitProblem:
    """Data and model specification for one fit.

    Args:
        model: ``"snapshot"``, ``"capture"`` or ``"ecodiff"``.
        design: A ``SpaceTimeDesign`` (snapshot, ecodiff) or ``CaptureConfig``.
        data: Observed counts, flat time-major without complement
            categories, or a ``CountsArrangement``.
        N: Number of released individuals.
        bounds: ``(lower, upper)`` per parameter; defaults keep ``sigma > 0``,
            ``p`` in ``[0, 1]`` and ``alpha (tH - t0) < 1``.
        init: Starting values; None means method-of-moments heuristics.
        sparse_threshold: Above this many cells, covariance entries are kept
            only for cells with non-negligible mean or a nonzero count.
    """

    model: str
    design: SpaceTimeDesign | CaptureConfig
    data: np.ndarray
    N: int
    t0: float = 0.0
    origin: tuple | None = None
    bounds: list | None = None
    init: np.ndarray | None = None
    markov: bool = False
    sparse_threshold: int = 500
    _cache: OrderedDict = field(default_factory=OrderedDict, repr=False)

    def __post_init__(self):
        if self.model not in MODELS:
            raise ValueError(f"unknown model {self.model!r}")
        if self.model == "capture" and not isinstance(self.design, CaptureConfig):
            raise ValueError("the capture model needs a CaptureConfig design")
        if self.model != "capture" and not isinstance(self.design, SpaceTimeDesign):
            raise ValueError(f"the {self.model} model needs a SpaceTimeDesign")
        if isinstance(self.data, CountsArrangement):
            self.data = self.data.observed()
        self.data = np.asarray(self.data, dtype=float).ravel()
        if np.any(self.data < 0):
            raise ValueError("counts must be nonnegative")
        if self.data.size != self.n_obs:
            raise ValueError(f"data has {self.data.size} entries, design expects {self.n_obs}")
        if self.model == "capture":
            self.t0 = self.design.t0
            self.design = CaptureConfig(self.design.alpha, self.design.t0, self.design.tL, self.design.tH,
                                        self.design.cells, self.design.dt, self.N, self.design.obs_times)
        if self.bounds is None:
            self.bounds = self.default_bounds()
        self.bounds = [(float(lo), float(hi)) for lo, hi in self.bounds]
        if len(self.bounds) != len(self.names):
            raise ValueError("one bound pair per parameter is required")

    @property
    def d(self) -> int:
        return self.design.cells.d if self.model == "capture" else self.design.d

    @property
    def names(self) -> tuple:
        return param_names(self.model, self.d)

    @property
    def n_obs(self) -> int:
        if self.model == "capture":
            return len(self.design.obs_times) * len(self.design.cells)
        return self.design.n_obs

    def default_bounds(self) -> list:
        b = [(1e-2, 1e3)] + [(-1e3, 1e3)] * self.d
        if self.model == "capture":
            b.append((1e-8, (1.0 - 1e-9) / (self.design.tH - self.design.t0)))
        else:
            b.append((1e-8, 1.0))
        return b

    def _traj(self, theta) -> BrownianAdvection:
        d = self.d
        return BrownianAdvection(BrownianAdvectionParams(float(theta[0]), tuple(theta[1:1 + d]), self.t0,
                                                         self.origin))

    def _cached(self, key, make):
        if key in self._cache:
            self._cache.move_to_end(key)
            return self._cache[key]
        val = make()
        self._cache[key] = val
        if len(self._cache) > 6:
            self._cache.popitem(last=False)
        return val

    def moments(self, theta):
        """Model mean and covariance of the data vector at ``theta``."""
        theta = np.asarray(theta, dtype=float)
        d = self.d
        key = tuple(theta[:1 + d])
        last = float(theta[1 + d])
        if self.model == "ecodiff":
            params = EcoDiffParams(float(theta[0]), tuple(theta[1:1 + d]), 1.0, self.N, self.t0, self.origin)
            mean = last * self._cached(key, lambda: ecodiff_rates(params, self.design))
            return mean, np.diag(mean)
        traj = self._traj(theta)
        if self.model == "snapshot":
            sd = SnapshotDesign(self.design.times, self.design.cells, p=1.0, N=self.N)
            m_phi, c_phi = self._cached(key, lambda: phi_moments(traj, sd))
            cov = last * last * c_phi
            cov[np.diag_indices_from(cov)] += last * (1.0 - last) * m_phi
            return last * m_phi, cov
        cfg = self.design
        kernel = self._cached(key, lambda: TrajectoryKernel.from_config(traj, cfg, self.markov))
        with warnings.catch_warnings():
            warnings.simplefilter("ignore")
            cfg_a = cfg.with_alpha(last)
        sol = solve_volterra(kernel, last, cfg.t0, cfg.tH, cfg.dt)
        return capture_moments(kernel, sol, cfg_a)

    def active_set(self, mean) -> np.ndarray | None:
        if self.n_obs <= self.sparse_threshold:
            return None
        return (mean > 1e-12) | (self.data != 0)


def gaussian_logpdf(x, mean, cov, eps: float = VAR_EPS, active=None) -> float:
    """Gaussian log-density with ``eps`` added to every variance.

    With ``active`` given, only those coordinates keep their covariances; the
    rest enter through independent (regularized) variances.
    """
    x = np.asarray(x, dtype=float)
    r = x - mean
    var = np.diag(cov) + eps
    if active is not None:
        rest = ~active
        out = -0.5 * np.sum(np.log(2 * np.pi * var[rest]) + r[rest] ** 2 / var[rest])
        idx = np.flatnonzero(active)
        if len(idx) == 0:
            return float(out)
        return float(out + gaussian_logpdf(x[idx], mean[idx], cov[np.ix_(idx, idx)], eps))
    c = cov + eps * np.eye(len(x))
    try:
        factor = linalg.cho_factor(c, lower=True, check_finite=True)
    except (linalg.LinAlgError, ValueError):
        return -np.inf
    logdet = 2.0 * np.sum(np.log(np.diag(factor[0])))
    quad = float(r @ linalg.cho_solve(factor, r))
    return float(-0.5 * (len(x) * np.log(2 * np.pi) + logdet + quad))


def _in_bounds(problem: FitProblem, theta) -> bool:
    return all(lo - 1e-12 <= t <= hi + 1e-12 for t, (lo, hi) in zip(theta, problem.bounds))


def gaussian_pseudo_loglik(problem: FitProblem, theta) -> float:
    """Gaussian pseudo-log-likelihood of the counts; ``-inf`` when undefined."""
    theta = np.asarray(theta, dtype=float)
    if not np.all(np.isfinite(theta)) or theta[0] <= 0:
        return -np.inf
    try:
        mean, cov = problem.moments(theta)
    except (ValueError, FloatingPointError) as exc:
        log.debug("moments failed at %s: %s", theta, exc)
        return -np.inf
    if not (np.all(np.isfinite(mean)) and np.all(np.isfinite(cov))):
        return -np.inf
    return gaussian_logpdf(problem.data, mean, cov, active=problem.active_set(mean))


def ecodiff_mle_loglik(problem: FitProblem, theta) -> float:
    if problem.model != "ecodiff":
        raise ValueError("exact likelihood is available for the ecodiff model only")
    theta = np.asarray(theta, dtype=float)
    if not np.all(np.isfinite(theta)) or theta[0] <= 0 or theta[-1] < 0:
        return -np.inf
    mean, _ = problem.moments(theta)
    return poisson_loglik(mean, problem.data)


def continuity_corrected_loglik(problem: FitProblem, theta, rng_seed=0, details: bool = False):
    """Log Gaussian probability of the unit box around the integer counts.

    Returns the log-probability, or ``(log_prob, MVNResult)`` with
    ``details=True``; ``MVNResult.converged`` is False when the QMC budget ran
    out before the relative standard error reached 1e-3.
    """
    theta = np.asarray(theta, dtype=float)
    mean, cov = problem.moments(theta)
    x = problem.data
    c = cov + VAR_EPS * np.eye(len(x))
    active = problem.active_set(mean)
    if active is None:
        active = np.ones(len(x), dtype=bool)
    # Coordinates without covariance structure factor out exactly.
    rest = np.flatnonzero(~active)
    fixed = 0.0
    if len(rest):
        sd = np.sqrt(np.diag(c)[rest])
        for i, s in zip(rest, sd):
            fixed += mvn_rect_logprob([mean[i]], [[s * s]], [x[i] - 0.5], [x[i] + 0.5]).log_prob
    idx = np.flatnonzero(active)
    res = mvn_rect_logprob(mean[idx], c[np.ix_(idx, idx)], x[idx] - 0.5, x[idx] + 0.5, rng_seed=rng_seed)
    res = MVNResult(res.log_prob + fixed, res.rel_se, res.n_points, res.converged)
    if not res.converged:
        log.warning("continuity correction did not reach the target error (rel. SE %.2g)", res.rel_se)
    return (res.log_prob, res) if details else res.log_prob


@dataclass
class FitResult:
    """Estimates with likelihood values and Hessian-based uncertainty.

    ``hessian`` is that of the negative objective at the optimum; intervals
    are ``estimate -/+ 1.96 sqrt(diag(inv(hessian)))``.
    """

    model: str
    method: str
    names: tuple
    estimates: np.ndarray
    loglik: float
    hessian: np.ndarray
    cov: np.ndarray
    intervals: np.ndarray
    converged: bool
    message: str
    n_evals: int
    cc_loglik: float | None = None
    cc_rel_se: float | None = None
    cc_converged: bool | None = None
    flags: list = field(default_factory=list)

    @property
    def ok(self) -> bool:
        return self.converged and np.all(np.isfinite(self.estimates)) and np.isfinite(self.loglik)

    def as_dict(self) -> dict:
        def clean(a):
            a = np.asarray(a, dtype=float)
            return np.where(np.isfinite(a), a, np.nan).tolist()

        out = {
            "model": self.model,
            "method": self.method,
            "names": list(self.names),
            "estimates": dict(zip(self.names, clean(self.estimates))),
            "loglik": float(self.loglik),
            "cc_loglik": None if self.cc_loglik is None else float(self.cc_loglik),
            "cc_rel_se": None if self.cc_rel_se is None else float(self.cc_rel_se),
            "cc_converged": self.cc_converged,
            "intervals": {n: clean(iv) for n, iv in zip(self.names, self.intervals)},
            "hessian": clean(self.hessian),
            "converged": bool(self.converged),
            "message": self.message,
            "n_evals": int(self.n_evals),
            "flags": list(self.flags),
        }
        return _nan_to_none(out)


def _nan_to_none(obj):
    if isinstance(obj, dict):
        return {k: _nan_to_none(v) for k, v in obj.items()}
    if isinstance(obj, list):
        return [_nan_to_none(v) for v in obj]
    if isinstance(obj, float) and not np.isfinite(obj):
        return None
    return obj


def numerical_hessian(fun, x, rel_step: float = 1e-4) -> np.ndarray:
    """Central-difference Hessian with steps ``rel_step * max(|x_i|, 1e-2)``."""
    x = np.asarray(x, dtype=float)
    n = len(x)
    h = rel_step * np.maximum(np.abs(x), 1e-2)
    f0 = fun(x)
    H = np.empty((n, n))
    e = np.eye(n)
    for i in range(n):
        fp = fun(x + h[i] * e[i])
        fm = fun(x - h[i] * e[i])
        H[i, i] = (fp - 2 * f0 + fm) / h[i] ** 2
        for j in range(i):
            fpp = fun(x + h[i] * e[i] + h[j] * e[j])
            fpm = fun(x + h[i] * e[i] - h[j] * e[j])
            fmp = fun(x - h[i] * e[i] + h[j] * e[j])
            fmm = fun(x - h[i] * e[i] - h[j] * e[j])
            H[i, j] = H[j, i] = (fpp - fpm - fmp + fmm) / (4 * h[i] * h[j])
    return H


def moment_init(problem: FitProblem) -> np.ndarray:
    """Rough starting values from the counts.

    Spread and drift come from count-weighted moments of cell centers at
    each time; ``p`` from the detected total over the expected coverage,
    ``alpha`` from the fraction captured by the first check.
    """
    d = problem.d
    if problem.model == "capture":
        cfg = problem.design
        times, cellsets = cfg.obs_times, [cfg.cells] * len(cfg.obs_times)
    else:
        times, cellsets = problem.design.times, problem.design.cells
    x = problem.data
    off = np.concatenate([[0], np.cumsum([len(c) for c in cellsets])])
    num, den, s2, totals = np.zeros(d), 0.0, [], []
    for k, (t, cells) in enumerate(zip(times, cellsets)):
        q = x[off[k]:off[k + 1]]
        el = t - problem.t0
        totals.append(q.sum())
        if q.sum() <= 0 or el <= 0:
            continue
        centers = (cells.lower + cells.upper) / 2
        widths = cells.upper - cells.lower
        c = q @ centers / q.sum()
        var = q @ ((centers - c) ** 2 + widths**2 / 12) / q.sum() - widths.mean(axis=0) ** 2 / 12
        num += el * c
        den += el * el
        s2.append(np.mean(np.maximum(var, 1e-6)) / el)
    v = num / den if den > 0 else np.zeros(d)
    sigma = float(np.sqrt(np.mean(s2))) if s2 else 1.0
    lo, hi = problem.bounds[0]
    sigma = float(np.clip(sigma, lo, hi))
    theta = np.concatenate([[sigma], v])
    if problem.model == "capture":
        cfg = problem.design
        frac = min(totals[0] / max(problem.N, 1), 0.999)
        alpha = -np.log1p(-frac) / (cfg.obs_times[0] - cfg.t0) if frac > 0 else 1e-3
        last = float(np.clip(alpha, problem.bounds[-1][0], problem.bounds[-1][1] * 0.99))
    else:
        traj = problem._traj(np.append(theta, 1.0))
        cover = sum(traj.cell_probs(t, cells).sum() for t, cells in zip(times, cellsets))
        last = float(np.clip(sum(totals) / max(problem.N * cover, 1e-12), 1e-3, 1.0))
    return np.append(theta, last)


def fit(problem: FitProblem, method: str = "mgle", init=None, continuity_correction: bool = False,
        qmc_seed: int = 0, maxiter: int = 300) -> FitResult:
    """Maximize the MGLE or (EcoDiff only) exact likelihood objective.

    Bounded L-BFGS-B with finite-difference gradients on a rescaled
    parameter vector; Nelder-Mead takes over after a line-search failure.
    """
    if method not in ("mgle", "mle"):
        raise ValueError(f"unknown method {method!r}")
    if method == "mle" and problem.model != "ecodiff":
        raise ValueError("exact MLE is implemented for the ecodiff model only")
    objective = gaussian_pseudo_loglik if method == "mgle" else ecodiff_mle_loglik
    x0 = init if init is not None else problem.init
    x0 = moment_init(problem) if x0 is None else np.asarray(x0, dtype=float)
    lo = np.array([b[0] for b in problem.bounds])
    hi = np.array([b[1] for b in problem.bounds])
    x0 = np.clip(x0, lo, hi)
    scale = np.where(np.abs(x0) > 1e-3, np.abs(x0), 1.0)
    n_evals = 0

    def neg(z):
        nonlocal n_evals
        n_evals += 1
        val = objective(problem, z * scale)
        return -val if np.isfinite(val) else 1e300

    zb = list(zip(lo / scale, hi / scale))
    with np.errstate(all="ignore"):
        res = optimize.minimize(neg, x0 / scale, method="L-BFGS-B", bounds=zb,
                                options={"maxiter": maxiter, "maxfun": 20 * maxiter})
    flags = []
    best_z, best_f, converged, message = res.x, res.fun, bool(res.success), str(res.message)
    if not res.success:
        flags.append("lbfgsb:" + message)
        with np.errstate(all="ignore"):
            nm = optimize.minimize(neg, res.x, method="Nelder-Mead", bounds=zb,
                                   options={"maxiter": 200 * len(x0), "xatol": 1e-7, "fatol": 1e-9})
        if nm.fun <= best_f:
            best_z, best_f = nm.x, nm.fun
        converged, message = bool(nm.success), "nelder-mead: " + str(nm.message)
    theta = best_z * scale
    loglik = -best_f if best_f < 1e300 else -np.inf
    if not np.isfinite(loglik):
        converged = False
        flags.append("objective undefined at optimum")

    def negf(x):
        v = objective(problem, x)
        return -v if np.isfinite(v) else np.nan

    H = numerical_hessian(negf, theta)
    k = len(theta)
    cov = np.full((k, k), np.nan)
    intervals = np.full((k, 2), np.nan)
    if np.all(np.isfinite(H)):
        eig = np.linalg.eigvalsh((H + H.T) / 2)
        if np.all(eig > 0):
            cov = np.linalg.inv(H)
            half = 1.96 * np.sqrt(np.diag(cov))
            intervals = np.column_stack([theta - half, theta + half])
        else:
            flags.append("hessian not positive definite")
            warnings.warn("Hessian of the negative log-likelihood is not positive definite at the optimum",
                          stacklevel=2)
    else:
        flags.append("hessian not finite")
    result = FitResult(problem.model, method, problem.names, theta, float(loglik), H, cov, intervals,
                       converged, message, n_evals, flags=flags)
    if continuity_correction and method == "mgle" and np.isfinite(loglik):
        val, det = continuity_corrected_loglik(problem, theta, rng_seed=qmc_seed, details=True)
        result.cc_loglik, result.cc_rel_se, result.cc_converged = float(val), det.rel_se, det.converged
        if not det.converged:
            result.flags.append("continuity correction above error target")
    elif continuity_correction and method == "mle":
        result.cc_loglik = float(loglik)
    return result


def coverage_tally(results, truth, level: float = 0.95) -> dict:
    """Coverage of per-parameter intervals and of the Hessian confidence ellipsoid.

    Results flagged as failed are skipped. An ellipsoid needs a positive
    definite Hessian; results without one count as ``ellipsoid_undefined``.
    """
    truth = np.asarray(truth, dtype=float)
    results = list(results)
    if not results:
        raise ValueError("need at least one result")
    good = [r for r in results if r.ok]
    k = len(truth)
    hits = np.zeros(k)
    n_int = np.zeros(k)
    ell_hits, ell_n, undefined = 0, 0, 0
    crit = stats.chi2.ppf(level, k)
    for r in good:
        iv = np.asarray(r.intervals, dtype=float)
        fin = np.all(np.isfinite(iv), axis=1)
        n_int += fin
        hits += fin & (iv[:, 0] <= truth) & (truth <= iv[:, 1])
        H = np.asarray(r.hessian, dtype=float)
        Hs = (H + H.T) / 2
        if not np.all(np.isfinite(Hs)) or np.any(np.linalg.eigvalsh(Hs) <= 0):
            undefined += 1
            continue
        dev = truth - np.asarray(r.estimates, dtype=float)
        ell_n += 1
        ell_hits += float(dev @ Hs @ dev) <= crit
    with np.errstate(invalid="ignore", divide="ignore"):
        per = np.where(n_int > 0, hits / n_int, np.nan)
    return {
        "per_parameter": per,
        "ellipsoid": ell_hits / ell_n if ell_n else float("nan"),
        "ellipsoid_undefined": undefined,
        "n_used": len(good),
        "n_failed": len(results) - len(good),
    }
