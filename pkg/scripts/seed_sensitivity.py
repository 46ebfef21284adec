"""CMMA bias and coverage at one trial size across several master seeds.

Shows how much the 100-replication coverage figure moves with the seed alone.
"""

import argparse

import numpy as np

from cmma import estimators as est
from cmma.simulate import SimulationConfig, run_benchmark

if __name__ == "__main__":
    ap = argparse.ArgumentParser()
    ap.add_argument("--n-per", type=int, default=200)
    ap.add_argument("--replications", type=int, default=100)
    ap.add_argument("--seeds", type=int, nargs="+", default=[20200823, 1, 2, 3, 4, 5])
    args = ap.parse_args()
    cover = []
    for seed in args.seeds:
        cfg = SimulationConfig(n_per_trial=args.n_per, seed=seed)
        row = run_benchmark(cfg, (est.CMMA,), args.replications).row(est.CMMA)
        cover.append(row.coverage)
        print(f"seed {seed:>10}  bias {row.mean_bias:.3f}  coverage {100 * row.coverage:.0f}%")
    print(f"mean coverage {100 * np.mean(cover):.1f}%  (binomial sd at 70%: {100 * np.sqrt(0.21 / args.replications):.1f} pts)")
