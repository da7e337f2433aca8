"""Benchmark the cohort-stepping kernel: compiled vs portable path.

Run:  python3 benchmarks/bench_simulator.py [--replicates 2000]

The two paths sample the same distribution; this script reports wall time
per replicate batch for each and the speedup.  The portable path is what
you get with POLICY_SURROGATE_NUMBA=0.
"""

from __future__ import annotations

import argparse
import time

import numpy as np

from policy_surrogate import _kernels
from policy_surrogate.domain import TreatmentCondition
from policy_surrogate.simulator import (CountyOudParams, SimConfig,
                                        step_transition_matrix)

PARAMS = CountyOudParams(
    beta0=-2.9, beta1=0.01, beta2=-2.6, beta3=0.018, beta4=-4.4,
    beta5=0.0015, beta6=0.022, baseline_opioid_rate=70.0,
    baseline_bup_rate=30.0, baseline_nal_rate=15.0, fentanyl_rate=400.0)


def run_path(fn, trans, counts0, steps, replicates):
    deaths = 0
    start = time.perf_counter()
    for seed in range(replicates):
        traj = fn(trans, counts0, steps, seed)
        deaths += traj[-1, 5]
    elapsed = time.perf_counter() - start
    return elapsed, deaths / replicates


def main():
    parser = argparse.ArgumentParser(description=__doc__)
    parser.add_argument("--replicates", type=int, default=2000)
    parser.add_argument("--cohort", type=int, default=20_000)
    args = parser.parse_args()

    cfg = SimConfig(cohort_size=args.cohort)
    trans = np.ascontiguousarray(
        step_transition_matrix(PARAMS, TreatmentCondition(0, 0),
                               cfg.steps_per_year))
    counts0 = np.zeros(7, dtype=np.int64)
    counts0[0] = cfg.cohort_size
    steps = cfg.n_steps

    print(f"{args.replicates} replicates x {steps} steps, "
          f"cohort {cfg.cohort_size}")

    t_py, mean_py = run_path(_kernels._chain_trajectory_py, trans, counts0,
                             steps, args.replicates)
    print(f"portable numpy : {t_py:8.3f}s total  "
          f"{1e6 * t_py / args.replicates:8.1f} us/replicate  "
          f"mean deaths {mean_py:.2f}")

    if not _kernels.USE_NUMBA:
        print("compiled path disabled (POLICY_SURROGATE_NUMBA=0 or numba "
              "missing); nothing to compare")
        return

    _kernels._chain_trajectory_nb(trans, counts0, steps, 0)  # compile once
    t_nb, mean_nb = run_path(_kernels._chain_trajectory_nb, trans, counts0,
                             steps, args.replicates)
    print(f"compiled numba : {t_nb:8.3f}s total  "
          f"{1e6 * t_nb / args.replicates:8.1f} us/replicate  "
          f"mean deaths {mean_nb:.2f}")
    print(f"speedup        : {t_py / t_nb:8.1f}x")


if __name__ == "__main__":
    main()
