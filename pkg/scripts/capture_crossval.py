"""Compare simulated capture counts with the moment formulas.

Aggregates the 15 x 15 fly-like grid into 3 x 3 super-cells and prints the
z-scores of the empirical means and variances.

Usage: python scripts/capture_crossval.py [--reps 100000] [--N 100] [--seed 5]
"""

import argparse
import time

import numpy as np

from ecmabund.capture import CaptureSimulator, capture_moments, simulate_capture_counts
from ecmabund.study import DesignSpec, build_design
from ecmabund.trajectory import BrownianAdvection


def main():
    ap = argparse.ArgumentParser(description=__doc__.split("\n")[0])
    ap.add_argument("--reps", type=int, default=10**5)
    ap.add_argument("--N", type=int, default=100)
    ap.add_argument("--seed", type=int, default=5)
    ap.add_argument("--sigma", type=float, default=2.0)
    ap.add_argument("--markov-approx", action="store_true")
    args = ap.parse_args()

    start = time.time()
    _, cfg = build_design(DesignSpec(), alpha=0.1, N=args.N)
    traj = BrownianAdvection(sigma=args.sigma, v=(-1.0, 1.0))
    sim = CaptureSimulator(traj, cfg, args.markov_approx)
    mean, cov = capture_moments(sim.kernel, sim.sol, cfg)
    draws = simulate_capture_counts(traj, cfg, args.reps, args.seed, simulator=sim).astype(float)

    spec = DesignSpec()
    centers = (cfg.cells.lower + cfg.cells.upper) / 2
    idx = np.floor((centers + spec.nx * spec.cell_side / 2) / (5 * spec.cell_side)).astype(int)
    label = idx[:, 0] * 3 + idx[:, 1]
    A1 = np.zeros((len(centers), 9))
    A1[np.arange(len(centers)), label] = 1
    A = np.kron(np.eye(len(cfg.obs_times)), A1)
    agg, m, c = draws @ A, mean @ A, A.T @ cov @ A
    se = np.sqrt(np.diag(c) / args.reps)
    print(f"{'time':>6}{'cell':>6}{'model mean':>14}{'sim mean':>14}{'z':>8}{'model var':>14}{'sim var':>14}")
    emp_var = agg.var(0, ddof=1)
    for j in range(agg.shape[1]):
        t = cfg.obs_times[j // 9]
        if m[j] < 1e-6:
            continue
        z = (agg[:, j].mean() - m[j]) / se[j]
        print(f"{t:>6.2f}{j % 9:>6d}{m[j]:>14.6g}{agg[:, j].mean():>14.6g}{z:>8.2f}{c[j, j]:>14.6g}{emp_var[j]:>14.6g}")
    print(f"clamp {sim.max_clamp:.2e}, defect {sim.max_defect:.2e}, {time.time() - start:.1f}s")


if __name__ == "__main__":
    main()
