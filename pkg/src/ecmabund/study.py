"""Simulation-study harness: fly-like designs, replicated fits, bias/coverage tables."""

from __future__ import annotations

import csv
import json
import logging
import os
import warnings
from dataclasses import asdict, dataclass, field

import numpy as np

from .capture import CaptureConfig, CaptureSimulator
from .ecodiff import EcoDiffParams, simulate_ecodiff
from .fitting import FitProblem, coverage_tally, fit, param_names
from .snapshot import SnapshotDesign, simulate_snapshot
from .trajectory import BrownianAdvection, BrownianAdvectionParams, CellSet, Rect, SpaceTimeDesign

log = logging.getLogger(__name__)

MODEL_CODES = {"snapshot": 0, "capture": 1, "ecodiff": 2}
DEFAULT_NS = (100, 1000, 5644, 10_000, 100_000)
DEFAULT_SIGMAS = (2.0, 5.0, 10.0)


@dataclass(frozen=True)
class DesignSpec:
    """Regular grid of square cells centered at the release point.

    Defaults give 15 x 15 cells of side 5 tiling ``[-37.5, 37.5]^2`` with
    checks at 0.5 h and 1.5 h; the first check is the release time of the
    capture model and the last one its horizon.
    """

    cell_side: float = 5.0
    nx: int = 15
    ny: int = 15
    check_times: tuple = (0.5, 1.5)
    t0: float = 0.0
    dt: float = 1.0 / 60.0
    origin: tuple = (0.0, 0.0)

    def __post_init__(self):
        if self.cell_side <= 0 or self.nx < 1 or self.ny < 1:
            raise ValueError("grid needs a positive side and at least one cell per axis")
        if len(self.check_times) < 2 or np.any(np.diff(self.check_times) <= 0):
            raise ValueError("need at least two increasing check times")
        if self.check_times[0] <= self.t0:
            raise ValueError("checks must follow the release")
        object.__setattr__(self, "check_times", tuple(float(t) for t in self.check_times))
        object.__setattr__(self, "origin", tuple(float(x) for x in self.origin))

    @property
    def tL(self) -> float:
        return self.check_times[0]

    @property
    def tH(self) -> float:
        return self.check_times[-1]

    def cells(self) -> CellSet:
        ox, oy = self.origin
        s = self.cell_side
        xs = ox + s * (np.arange(self.nx) - (self.nx - 1) / 2)
        ys = oy + s * (np.arange(self.ny) - (self.ny - 1) / 2)
        cells = CellSet([Rect.square((x, y), s) for x in xs for y in ys])
        if cells.locate(np.array([self.origin]))[0] < 0:
            raise ValueError("release point is outside the grid")
        return cells


def build_design(spec: DesignSpec, alpha: float = 0.1, N: int = 0):
    """Design shared by the snapshot/EcoDiff models and the capture configuration."""
    cells = spec.cells()
    design = SpaceTimeDesign(spec.check_times, cells)
    with warnings.catch_warnings():
        warnings.simplefilter("ignore")
        config = CaptureConfig(alpha, spec.t0, spec.tL, spec.tH, cells, spec.dt, N, spec.check_times)
    return design, config


@dataclass
class StudyConfig:
    """Grid of (model, method) x N x sigma configurations to replicate.

    ``fits`` lists ``[model, method]`` pairs. ``init`` is ``"truth"`` or
    ``"moments"``.
    """

    fits: list = field(default_factory=lambda: [["snapshot", "mgle"], ["capture", "mgle"],
                                                 ["ecodiff", "mgle"], ["ecodiff", "mle"]])
    Ns: list = field(default_factory=lambda: list(DEFAULT_NS))
    sigmas: list = field(default_factory=lambda: list(DEFAULT_SIGMAS))
    v: tuple = (-1.0, 1.0)
    p: float = 0.1
    alpha: float = 0.1
    replications: int = 50
    master_seed: int = 0
    design: DesignSpec = field(default_factory=DesignSpec)
    init: str = "truth"
    markov: bool = False

    def __post_init__(self):
        if isinstance(self.design, dict):
            self.design = DesignSpec(**self.design)
        self.fits = [list(f) for f in self.fits]
        for model, method in self.fits:
            if model not in MODEL_CODES or method not in ("mgle", "mle"):
                raise ValueError(f"unsupported fit {model}/{method}")
            if method == "mle" and model != "ecodiff":
                raise ValueError("exact MLE is available for ecodiff only")
        if self.replications < 1:
            raise ValueError("replications must be at least 1")
        if any(s <= 0 for s in self.sigmas) or any(int(n) != n or n < 1 for n in self.Ns):
            raise ValueError("sigmas must be positive and N positive integers")
        if not 0 < self.p <= 1 or self.alpha <= 0:
            raise ValueError("p must lie in (0, 1] and alpha be positive")
        if self.alpha * (self.design.tH - self.design.t0) >= 1:
            raise ValueError("alpha*(tH - t0) must stay below 1")
        if self.init not in ("truth", "moments"):
            raise ValueError("init must be 'truth' or 'moments'")
        self.v = tuple(float(x) for x in self.v)

    @classmethod
    def from_dict(cls, d: dict) -> "StudyConfig":
        d = dict(d)
        if "design" in d:
            d["design"] = DesignSpec(**d["design"])
        return cls(**d)

    def as_dict(self) -> dict:
        out = asdict(self)
        out["design"] = asdict(self.design)
        return out


def replication_seed(master: int, model: str, N: int, sigma: float, rep: int) -> np.random.SeedSequence:
    """Seed for one replication; depends only on its coordinates in the study grid."""
    return np.random.SeedSequence([int(master), MODEL_CODES[model], int(N), int(round(sigma * 1000)), int(rep)])


def simulate_counts(model: str, truth: np.ndarray, N: int, config: StudyConfig, seed,
                    simulator: CaptureSimulator | None = None) -> np.ndarray:
    """Simulate one dataset; returns observed counts (flat, time-major)."""
    spec = config.design
    design, cap = build_design(spec, truth[-1] if model == "capture" else config.alpha, N)
    rng = np.random.default_rng(seed)
    sigma, v = float(truth[0]), tuple(truth[1:3])
    if model == "ecodiff":
        return simulate_ecodiff(EcoDiffParams(sigma, v, truth[-1], N, spec.t0, spec.origin), design, rng).observed()
    traj = BrownianAdvection(BrownianAdvectionParams(sigma, v, spec.t0, spec.origin))
    if model == "snapshot":
        sd = SnapshotDesign(design.times, design.cells, p=float(truth[-1]), N=N)
        return simulate_snapshot(traj, sd, rng).observed()
    sim = simulator if simulator is not None else CaptureSimulator(traj, cap, config.markov)
    hist = sim.sample(N, rng)
    return sim.counts(hist, 1, N).reshape(-1)


def truth_vector(model: str, sigma: float, config: StudyConfig) -> np.ndarray:
    last = config.alpha if model == "capture" else config.p
    return np.array([sigma, *config.v, last], dtype=float)


def make_problem(model: str, data, N: int, config: StudyConfig, init=None) -> FitProblem:
    design, cap = build_design(config.design, config.alpha, N)
    return FitProblem(model, cap if model == "capture" else design, data, N, t0=config.design.t0,
                      origin=config.design.origin, init=init, markov=config.markov)


def run_replication(config: StudyConfig, model: str, method: str, N: int, sigma: float, rep: int,
                    simulator: CaptureSimulator | None = None) -> dict:
    """Simulate and fit one replication; failures are recorded, not raised."""
    truth = truth_vector(model, sigma, config)
    seed = replication_seed(config.master_seed, model, N, sigma, rep)
    data = simulate_counts(model, truth, N, config, seed, simulator)
    problem = make_problem(model, data, N, config, truth if config.init == "truth" else None)
    record = {"model": model, "method": method, "N": int(N), "sigma": float(sigma), "rep": int(rep),
              "total_count": int(data.sum())}
    try:
        with warnings.catch_warnings():
            warnings.simplefilter("ignore")
            res = fit(problem, method)
        record.update(res.as_dict())
        record["ok"] = bool(res.ok)
        record["_result"] = res
    except Exception as exc:  # a failed replication must not abort the study
        log.warning("replication %s/%s N=%s sigma=%s rep=%s failed: %s", model, method, N, sigma, rep, exc)
        record.update({"ok": False, "error": repr(exc)})
    return record


@dataclass
class StudyResult:
    rows: list
    details: list


def _tasks(config: StudyConfig):
    for model, method in config.fits:
        for N in config.Ns:
            for sigma in config.sigmas:
                yield model, method, int(N), float(sigma)


def _run_cell(config: StudyConfig, model: str, method: str, N: int, sigma: float) -> list:
    sim = None
    if model == "capture":
        truth_vector(model, sigma, config)
        _, cap = build_design(config.design, config.alpha, N)
        traj = BrownianAdvection(BrownianAdvectionParams(sigma, config.v, config.design.t0, config.design.origin))
        sim = CaptureSimulator(traj, cap, config.markov)
    return [run_replication(config, model, method, N, sigma, r, sim) for r in range(config.replications)]


def summarize(config: StudyConfig, model: str, method: str, N: int, sigma: float, records: list) -> dict:
    names = param_names(model, 2)
    truth = truth_vector(model, sigma, config)
    results = [r["_result"] for r in records if "_result" in r]
    good = [r for r in results if r.ok]
    row = {"model": model, "method": method, "N": N, "sigma": sigma}
    est = np.array([r.estimates for r in good]) if good else np.full((0, len(names)), np.nan)
    for i, n in enumerate(names):
        row[f"{n}_mean"] = float(est[:, i].mean()) if len(good) else float("nan")
        row[f"{n}_sd"] = float(est[:, i].std(ddof=1)) if len(good) > 1 else float("nan")
    if results:
        cov = coverage_tally(results, truth)
        for i, n in enumerate(names):
            row[f"{n}_coverage"] = float(cov["per_parameter"][i])
        row["ellipsoid_coverage"] = float(cov["ellipsoid"])
    else:
        for n in names:
            row[f"{n}_coverage"] = float("nan")
        row["ellipsoid_coverage"] = float("nan")
    row["loglik_mean"] = float(np.mean([r.loglik for r in good])) if good else float("nan")
    row["successes"] = len(good)
    row["failures"] = len(records) - len(good)
    return row


def run_study(config: StudyConfig, n_jobs: int = 1) -> StudyResult:
    """Run every configuration; rows come out in configuration order.

    Each (model, method, N, sigma) cell is one task, so results do not depend
    on the number of workers.
    """
    tasks = list(_tasks(config))
    if n_jobs > 1 and len(tasks) > 1:
        from joblib import Parallel, delayed

        chunks = Parallel(n_jobs=n_jobs)(delayed(_run_cell)(config, *t) for t in tasks)
    else:
        chunks = [_run_cell(config, *t) for t in tasks]
    rows, details = [], []
    for task, records in zip(tasks, chunks):
        rows.append(summarize(config, *task, records))
        for r in records:
            details.append({k: v for k, v in r.items() if not k.startswith("_")})
    return StudyResult(rows, details)


CSV_COLUMNS = [
    "model", "method", "N", "sigma",
    "sigma_mean", "vx_mean", "vy_mean", "p_mean", "alpha_mean",
    "sigma_sd", "vx_sd", "vy_sd", "p_sd", "alpha_sd",
    "sigma_coverage", "vx_coverage", "vy_coverage", "p_coverage", "alpha_coverage",
    "ellipsoid_coverage", "loglik_mean", "successes", "failures",
]


def _fmt(v) -> str:
    if v is None:
        return ""
    if isinstance(v, float):
        return "" if not np.isfinite(v) else repr(v)
    return str(v)


def write_study(result: StudyResult, out_dir: str, config: StudyConfig | None = None) -> dict:
    """Write ``study.csv`` (one row per configuration) and ``study.json``."""
    os.makedirs(out_dir, exist_ok=True)
    csv_path = os.path.join(out_dir, "study.csv")
    with open(csv_path, "w", newline="", encoding="utf-8") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(CSV_COLUMNS)
        for row in result.rows:
            w.writerow([_fmt(row.get(c)) for c in CSV_COLUMNS])
    json_path = os.path.join(out_dir, "study.json")
    payload = {"config": config.as_dict() if config else None, "rows": result.rows, "replications": result.details}
    with open(json_path, "w", encoding="utf-8") as fh:
        json.dump(_jsonable(payload), fh, indent=1, sort_keys=True)
    return {"csv": csv_path, "json": json_path}


def _jsonable(obj):
    if isinstance(obj, dict):
        return {k: _jsonable(v) for k, v in obj.items()}
    if isinstance(obj, (list, tuple)):
        return [_jsonable(v) for v in obj]
    if isinstance(obj, (np.floating, float)):
        return float(obj) if np.isfinite(obj) else None
    if isinstance(obj, np.integer):
        return int(obj)
    if isinstance(obj, np.bool_):
        return bool(obj)
    if isinstance(obj, np.ndarray):
        return _jsonable(obj.tolist())
    return obj
