"""Command-line interface: ``ecmabund {simulate,volterra,fit,study}``.

Every subcommand reads a JSON config (``--config``), writes its outputs to
``--out`` and records a ``manifest.json`` with the resolved config, seed,
package version and timing.

Common config blocks::

    "params": {"sigma": 2.0, "v": [-1, 1], "p": 0.1, "alpha": 0.1, "N": 5644}
    "design": {"cell_side": 5, "nx": 15, "ny": 15, "check_times": [0.5, 1.5],
               "t0": 0, "dt": 0.016666666666666666, "origin": [0, 0]}

A design may instead list explicit cells as ``"cells": [[lower, upper], ...]``
(each corner a coordinate list). The first check time is the capture
model's release time and the last one its horizon.
"""

from __future__ import annotations

import argparse
import csv
import json
import logging
import os
import sys
import time
import warnings

import numpy as np

from . import __version__
from .capture import (CaptureConfig, CaptureSimulator, TrajectoryKernel, check_alpha_validity, escaping_kernel,
                      full_space_kernel, solve_volterra)
from .ecodiff import EcoDiffParams, simulate_ecodiff
from .fitting import FitProblem, fit
from .snapshot import SnapshotDesign, simulate_snapshot
from .study import DesignSpec, StudyConfig, run_study, write_study
from .trajectory import BrownianAdvection, BrownianAdvectionParams, CellSet, Rect, SpaceTimeDesign

log = logging.getLogger("ecmabund")

COUNT_COLUMNS = ["time", "cell_x", "cell_y", "count"]


class ConfigError(ValueError):
    pass


def _load_json(path: str) -> dict:
    try:
        with open(path, encoding="utf-8") as fh:
            return json.load(fh)
    except json.JSONDecodeError as exc:
        raise ConfigError(f"{path}: line {exc.lineno}, column {exc.colno}: {exc.msg}") from exc
    except OSError as exc:
        raise ConfigError(f"cannot read config {path}: {exc}") from exc


def _get(cfg: dict, key: str, where: str, default=None, required: bool = False):
    if key not in cfg:
        if required:
            raise ConfigError(f"missing field '{where}{key}'")
        return default
    return cfg[key]


def _number(value, name: str, positive: bool = False) -> float:
    try:
        x = float(value)
    except (TypeError, ValueError):
        raise ConfigError(f"field '{name}' must be a number, got {value!r}") from None
    if not np.isfinite(x) or (positive and x <= 0):
        raise ConfigError(f"field '{name}' must be a {'positive ' if positive else ''}finite number")
    return x


def parse_design(cfg: dict, alpha: float = 0.1, N: int = 0):
    """Return ``(SpaceTimeDesign, CaptureConfig, t0, origin)`` from a design block."""
    d = _get(cfg, "design", "", default={})
    if not isinstance(d, dict):
        raise ConfigError("field 'design' must be an object")
    try:
        if "cells" in d:
            cells = CellSet([Rect(tuple(lo), tuple(hi)) for lo, hi in d["cells"]])
            checks = tuple(_number(t, "design.check_times") for t in _get(d, "check_times", "design.",
                                                                          required=True))
            t0 = _number(d.get("t0", 0.0), "design.t0")
            dt = _number(d.get("dt", 1 / 60), "design.dt", positive=True)
            origin = tuple(d.get("origin", (0.0,) * cells.d))
        else:
            known = {"cell_side", "nx", "ny", "check_times", "t0", "dt", "origin"}
            extra = set(d) - known
            if extra:
                raise ConfigError(f"unknown design field(s): {sorted(extra)}")
            spec = DesignSpec(**d)
            cells, checks, t0, dt, origin = spec.cells(), spec.check_times, spec.t0, spec.dt, spec.origin
        design = SpaceTimeDesign(checks, cells)
        if len(checks) < 2:
            raise ConfigError("field 'design.check_times' needs at least two times")
        with warnings.catch_warnings():
            warnings.simplefilter("ignore")
            cap = CaptureConfig(alpha, t0, checks[0], checks[-1], cells, dt, N, checks)
    except ConfigError:
        raise
    except (TypeError, ValueError) as exc:
        raise ConfigError(f"invalid design: {exc}") from exc
    return design, cap, t0, origin


def parse_params(cfg: dict, need: tuple) -> dict:
    p = _get(cfg, "params", "", required=True)
    if not isinstance(p, dict):
        raise ConfigError("field 'params' must be an object")
    out = {}
    for key in need:
        if key not in p:
            raise ConfigError(f"missing field 'params.{key}'")
    if "sigma" in p:
        out["sigma"] = _number(p["sigma"], "params.sigma", positive=True)
    if "v" in p:
        v = p["v"]
        if not isinstance(v, (list, tuple)) or len(v) not in (1, 2):
            raise ConfigError("field 'params.v' must be a list of 1 or 2 numbers")
        out["v"] = tuple(_number(x, "params.v") for x in v)
    if "p" in p:
        out["p"] = _number(p["p"], "params.p")
        if not 0 <= out["p"] <= 1:
            raise ConfigError("field 'params.p' must lie in [0, 1]")
    if "alpha" in p:
        out["alpha"] = _number(p["alpha"], "params.alpha", positive=True)
    if "N" in p:
        n = p["N"]
        if not isinstance(n, int) or n < 0:
            raise ConfigError("field 'params.N' must be a nonnegative integer")
        out["N"] = n
    return out


def _fmt(x: float) -> str:
    return repr(float(x))


def write_counts(path: str, times, cellsets, counts) -> None:
    """Write counts as CSV rows ``time, cell_x, cell_y, count`` (cell centers)."""
    with open(path, "w", newline="", encoding="utf-8") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(COUNT_COLUMNS)
        off = 0
        for t, cells in zip(times, cellsets):
            centers = (cells.lower + cells.upper) / 2
            for c in centers:
                cy = _fmt(c[1]) if len(c) > 1 else ""
                w.writerow([_fmt(t), _fmt(c[0]), cy, int(counts[off])])
                off += 1


def read_counts(path: str, times, cellsets) -> np.ndarray:
    """Map a counts CSV onto a design; cells absent from the file count zero."""
    index = {}
    off = 0
    for t, cells in zip(times, cellsets):
        centers = (cells.lower + cells.upper) / 2
        for c in centers:
            index[(round(t, 9),) + tuple(round(float(x), 9) for x in c)] = off
            off += 1
    out = np.zeros(off)
    try:
        fh = open(path, newline="", encoding="utf-8")
    except OSError as exc:
        raise ConfigError(f"cannot read data {path}: {exc}") from exc
    with fh:
        reader = csv.DictReader(fh)
        missing = set(COUNT_COLUMNS) - set(reader.fieldnames or [])
        if missing - {"cell_y"}:
            raise ConfigError(f"{path}: missing column(s) {sorted(missing)}")
        for line, row in enumerate(reader, start=2):
            try:
                key = [round(float(row["time"]), 9), round(float(row["cell_x"]), 9)]
                if row.get("cell_y") not in (None, ""):
                    key.append(round(float(row["cell_y"]), 9))
                count = float(row["count"])
            except (TypeError, ValueError) as exc:
                raise ConfigError(f"{path}: line {line}: {exc}") from None
            if tuple(key) not in index:
                raise ConfigError(f"{path}: line {line}: no design cell at time {key[0]}, center {key[1:]}")
            if count < 0 or count != int(count):
                raise ConfigError(f"{path}: line {line}: count must be a nonnegative integer")
            out[index[tuple(key)]] = count
    return out


def _manifest(args, cfg: dict, started: float, outputs: list, seed=None, failures=None, extra=None) -> dict:
    man = {
        "subcommand": args.command,
        "config_path": os.path.abspath(args.config),
        "config": cfg,
        "out_dir": os.path.abspath(args.out),
        "seed": seed,
        "markov_approx": bool(getattr(args, "markov_approx", False)),
        "version": __version__,
        "numpy": np.__version__,
        "python": sys.version.split()[0],
        "elapsed_seconds": round(time.time() - started, 3),
        "outputs": outputs,
        "failures": failures or [],
    }
    if extra:
        man.update(extra)
    with open(os.path.join(args.out, "manifest.json"), "w", encoding="utf-8") as fh:
        json.dump(man, fh, indent=1, sort_keys=True)
    return man


def _seed(args, cfg: dict, default: int = 0) -> int:
    seed = args.seed if args.seed is not None else cfg.get("seed", default)
    if not isinstance(seed, int) or seed < 0:
        raise ConfigError("seed must be a nonnegative integer")
    return seed


def cmd_simulate(args) -> int:
    started = time.time()
    cfg = _load_json(args.config)
    model = _get(cfg, "model", "", required=True)
    if model not in ("snapshot", "capture", "ecodiff"):
        raise ConfigError(f"field 'model' must be snapshot, capture or ecodiff, got {model!r}")
    last = "alpha" if model == "capture" else "p"
    prm = parse_params(cfg, ("sigma", "v", last, "N"))
    seed = _seed(args, cfg)
    markov = bool(args.markov_approx or cfg.get("markov_approx", False))
    design, cap, t0, origin = parse_design(cfg, prm.get("alpha", 0.1), prm["N"])
    rng = np.random.default_rng(seed)
    traj = BrownianAdvection(BrownianAdvectionParams(prm["sigma"], prm["v"], t0, origin))
    if model == "snapshot":
        sd = SnapshotDesign(design.times, design.cells, p=prm["p"], N=prm["N"])
        counts = simulate_snapshot(traj, sd, rng).observed()
    elif model == "ecodiff":
        counts = simulate_ecodiff(EcoDiffParams(prm["sigma"], prm["v"], prm["p"], prm["N"], t0, origin),
                                  design, rng).observed()
    else:
        ok, margin = check_alpha_validity(cap)
        if not ok:
            print(f"warning: alpha*(tH-t0) >= 1 (margin {margin:.3g}); proceeding", file=sys.stderr)
        sim = CaptureSimulator(traj, cap, markov)
        counts = sim.counts(sim.sample(prm["N"], rng), 1, prm["N"]).reshape(-1)
    os.makedirs(args.out, exist_ok=True)
    path = os.path.join(args.out, "counts.csv")
    write_counts(path, design.times, design.cells, counts)
    _manifest(args, cfg, started, [path], seed=seed)
    print(f"wrote {path} ({int(counts.sum())} counts)")
    return 0


def cmd_volterra(args) -> int:
    started = time.time()
    cfg = _load_json(args.config)
    kind = _get(cfg, "kernel", "", default="full_space")
    alpha = _number(_get(cfg, "alpha", "", required=True), "alpha", positive=True)
    t0 = _number(cfg.get("t0", 0.0), "t0")
    tH = _number(_get(cfg, "tH", "", required=True), "tH")
    dt = _number(cfg.get("dt", 1 / 60), "dt", positive=True)
    if tH <= t0:
        raise ConfigError("field 'tH' must exceed 't0'")
    ok, margin = check_alpha_validity(alpha=alpha, t0=t0, tH=tH)
    if not ok:
        print(f"warning: alpha*(tH-t0) = {1 - margin:.3g} >= 1; the density may not stay positive",
              file=sys.stderr)
    analytic = None
    if kind == "full_space":
        kernel = full_space_kernel()
        analytic = lambda t: alpha * np.exp(-alpha * (t - t0))  # noqa: E731
    elif kind == "escaping":
        d = int(cfg.get("d", 2))
        kernel = escaping_kernel(d, t0)
        analytic = lambda t: alpha * np.exp(-alpha * (t - t0)) * kernel.g1(t)  # noqa: E731
    elif kind == "trajectory":
        prm = parse_params(cfg, ("sigma", "v"))
        _, cap, _, origin = parse_design(cfg, alpha, 0)
        traj = BrownianAdvection(BrownianAdvectionParams(prm["sigma"], prm["v"], t0, origin))
        n = int(round((tH - t0) / dt))
        kernel = TrajectoryKernel(traj, cap.cells, t0, dt, n, min(cap.k_release, n))
    else:
        raise ConfigError(f"field 'kernel' must be full_space, escaping or trajectory, got {kind!r}")
    try:
        sol = solve_volterra(kernel, alpha, t0, tH, dt)
    except ValueError as exc:
        raise ConfigError(str(exc)) from exc
    os.makedirs(args.out, exist_ok=True)
    path = os.path.join(args.out, "volterra.csv")
    summary = {"kernel": kind, "alpha": alpha, "dt": dt, "captured_mass": sol.mass, "alpha_valid": ok}
    with open(path, "w", newline="", encoding="utf-8") as fh:
        w = csv.writer(fh, lineterminator="\n")
        cols = ["t", "f_Tc", "phi_Tc"] + (["f_analytic", "abs_error"] if analytic else [])
        w.writerow(cols)
        exact = analytic(sol.t) if analytic else None
        for i, t in enumerate(sol.t):
            row = [_fmt(t), _fmt(sol.f[i]), _fmt(sol.phi[i])]
            if analytic:
                row += [_fmt(exact[i]), _fmt(abs(sol.f[i] - exact[i]))]
            w.writerow(row)
    if analytic:
        err = float(np.max(np.abs(sol.f - exact)))
        summary.update({"max_abs_error": err, "error_bound": 2 * alpha * dt, "within_bound": err <= 2 * alpha * dt})
        print(f"max |f - analytic| = {err:.3e} (bound 2*alpha*dt = {2 * alpha * dt:.3e})")
    with open(os.path.join(args.out, "volterra_summary.json"), "w", encoding="utf-8") as fh:
        json.dump(summary, fh, indent=1, sort_keys=True)
    _manifest(args, cfg, started, [path, os.path.join(args.out, "volterra_summary.json")])
    print(f"wrote {path}; captured mass {sol.mass:.6f}")
    return 0


def _table(res) -> str:
    names = ["sigma", "vx", "vy", "p", "alpha"]
    est = dict(zip(res.names, res.estimates))
    head = f"{'Model':<10}" + "".join(f"{n:>10}" for n in names) + f"{'logL':>14}{'c.c. logL':>14}"
    vals = "".join(f"{est[n]:>10.4g}" if n in est else f"{'':>10}" for n in names)
    cc = f"{res.cc_loglik:>14.3f}" if res.cc_loglik is not None else f"{'':>14}"
    return head + "\n" + f"{res.model:<10}" + vals + f"{res.loglik:>14.3f}" + cc


def cmd_fit(args) -> int:
    started = time.time()
    cfg = _load_json(args.config)
    model = _get(cfg, "model", "", required=True)
    if model not in ("snapshot", "capture", "ecodiff"):
        raise ConfigError(f"field 'model' must be snapshot, capture or ecodiff, got {model!r}")
    method = cfg.get("method", "mgle")
    if method not in ("mgle", "mle") or (method == "mle" and model != "ecodiff"):
        raise ConfigError("field 'method' must be 'mgle', or 'mle' for the ecodiff model")
    prm = parse_params(cfg, ("N",))
    data_path = args.data or cfg.get("data")
    if not data_path:
        raise ConfigError("no data file: pass --data or set field 'data'")
    if not os.path.isabs(data_path) and not os.path.exists(data_path):
        data_path = os.path.join(os.path.dirname(os.path.abspath(args.config)), data_path)
    design, cap, t0, origin = parse_design(cfg, prm.get("alpha", 0.1), prm["N"])
    data = read_counts(data_path, design.times, design.cells)
    problem = FitProblem(model, cap if model == "capture" else design, data, prm["N"], t0=t0, origin=origin,
                         markov=bool(args.markov_approx or cfg.get("markov_approx", False)))
    init = cfg.get("init", "moments")
    if init == "params":
        last = "alpha" if model == "capture" else "p"
        prm_full = parse_params(cfg, ("sigma", "v", last))
        init = [prm_full["sigma"], *prm_full["v"], prm_full[last]]
    elif init == "moments":
        init = None
    elif not isinstance(init, list) or len(init) != len(problem.names):
        raise ConfigError(f"field 'init' must be 'moments', 'params' or a list of {len(problem.names)} numbers")
    seed = _seed(args, cfg)
    cc = bool(cfg.get("continuity_correction", method == "mgle"))
    with warnings.catch_warnings():
        warnings.simplefilter("ignore")
        res = fit(problem, method, init=init, continuity_correction=cc, qmc_seed=seed)
    os.makedirs(args.out, exist_ok=True)
    path = os.path.join(args.out, "fit.json")
    with open(path, "w", encoding="utf-8") as fh:
        json.dump(res.as_dict(), fh, indent=1, sort_keys=True)
    table = _table(res)
    with open(os.path.join(args.out, "fit_table.txt"), "w", encoding="utf-8") as fh:
        fh.write(table + "\n")
    print(table)
    failures = [] if res.ok else [{"reason": res.message, "flags": res.flags}]
    _manifest(args, cfg, started, [path], seed=seed, failures=failures, extra={"data_path": os.path.abspath(data_path)})
    return 0 if res.ok else 1


def _threads(args) -> int:
    env = os.environ.get("ECMABUND_THREADS")
    if env:
        try:
            return max(1, int(env))
        except ValueError:
            raise ConfigError(f"ECMABUND_THREADS must be an integer, got {env!r}") from None
    return max(1, args.threads or 1)


def cmd_study(args) -> int:
    started = time.time()
    cfg = _load_json(args.config)
    try:
        sc = StudyConfig.from_dict(cfg)
        if args.replications is not None:
            sc.replications = int(args.replications)
        if args.seed is not None:
            sc.master_seed = int(args.seed)
        if args.markov_approx:
            sc.markov = True
        sc.__post_init__()
    except (TypeError, ValueError) as exc:
        raise ConfigError(f"invalid study config: {exc}") from exc
    result = run_study(sc, n_jobs=_threads(args))
    paths = write_study(result, args.out, sc)
    failures = [{k: d[k] for k in ("model", "method", "N", "sigma", "rep", "error") if k in d}
                for d in result.details if "error" in d]
    not_ok = sum(1 for d in result.details if not d.get("ok"))
    _manifest(args, cfg, started, list(paths.values()), seed=sc.master_seed, failures=failures,
              extra={"resolved_config": sc.as_dict(), "unsuccessful_fits": not_ok})
    print(f"wrote {paths['csv']} ({len(result.rows)} configurations, {not_ok} unsuccessful fits)")
    return 0 if not failures else 1


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="ecmabund", description=__doc__.split("\n")[0])
    parser.add_argument("--version", action="version", version=f"%(prog)s {__version__}")
    sub = parser.add_subparsers(dest="command", required=True)

    def common(p):
        p.add_argument("--config", required=True, help="JSON configuration file")
        p.add_argument("--out", required=True, help="output directory")
        p.add_argument("--seed", type=int, default=None, help="random seed (overrides the config)")
        p.add_argument("--threads", type=int, default=1, help="worker processes (ECMABUND_THREADS overrides)")
        p.add_argument("--markov-approx", action="store_true", help="center-point shortcut for pair probabilities")
        p.add_argument("--replications", type=int, default=None, help="replications per study configuration")
        p.add_argument("-v", "--verbose", action="store_true")

    for name, fn, helptext in [
        ("simulate", cmd_simulate, "simulate one count dataset"),
        ("volterra", cmd_volterra, "solve the capture-time Volterra equation"),
        ("fit", cmd_fit, "fit a model to a counts CSV"),
        ("study", cmd_study, "run the replicated simulation study"),
    ]:
        p = sub.add_parser(name, help=helptext)
        common(p)
        if name == "fit":
            p.add_argument("--data", default=None, help="counts CSV (time, cell_x, cell_y, count)")
        p.set_defaults(func=fn)
    return parser


def main(argv=None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING, format="%(levelname)s %(message)s")
    try:
        return args.func(args)
    except ConfigError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 2


if __name__ == "__main__":
    sys.exit(main())
