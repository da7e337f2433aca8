"""Hot inner loop of the cohort simulator: binomial-thinned Markov stepping.

The compiled (numba) and portable (numpy) paths implement the same
sequential-binomial factorization of the per-state multinomial transition,
so they sample the exact same distribution; their RNG streams differ.
Set ``POLICY_SURROGATE_NUMBA=0`` to force the portable path.
"""

from __future__ import annotations

import os

import numpy as np

N_STATES = 7
_TRANSIENT = 5  # states 0..4 can move; 5 and 6 are absorbing


def _numba_enabled() -> bool:
    flag = os.environ.get("POLICY_SURROGATE_NUMBA", "").strip().lower()
    if flag in ("0", "false", "off", "no"):
        return False
    try:
        import numba  # noqa: F401
    except ImportError:
        return False
    return True


USE_NUMBA = _numba_enabled()


def _chain_trajectory_py(trans, counts0, steps, seed):
    rng = np.random.default_rng(seed)
    traj = np.zeros((steps + 1, N_STATES), dtype=np.int64)
    traj[0] = counts0
    for t in range(steps):
        cur = traj[t]
        nxt = cur.copy()
        for i in range(_TRANSIENT):
            m = cur[i]
            if m == 0:
                continue
            rem = m
            mass = 1.0
            for j in range(N_STATES):
                if j == i:
                    continue
                p = trans[i, j]
                if p <= 0.0:
                    continue
                cond = min(p / mass, 1.0)
                k = rng.binomial(rem, cond)
                nxt[i] -= k
                nxt[j] += k
                rem -= k
                mass -= p
                if rem == 0:
                    break
        traj[t + 1] = nxt
    return traj


if USE_NUMBA:
    from numba import njit

    @njit(cache=True)
    def _chain_trajectory_nb(trans, counts0, steps, seed):  # pragma: no cover
        np.random.seed(seed)
        traj = np.zeros((steps + 1, N_STATES), dtype=np.int64)
        traj[0] = counts0
        for t in range(steps):
            for s in range(N_STATES):
                traj[t + 1, s] = traj[t, s]
            for i in range(_TRANSIENT):
                m = traj[t, i]
                if m == 0:
                    continue
                rem = m
                mass = 1.0
                for j in range(N_STATES):
                    if j == i:
                        continue
                    p = trans[i, j]
                    if p <= 0.0:
                        continue
                    cond = p / mass
                    if cond > 1.0:
                        cond = 1.0
                    k = np.random.binomial(rem, cond)
                    traj[t + 1, i] -= k
                    traj[t + 1, j] += k
                    rem -= k
                    mass -= p
                    if rem == 0:
                        break
        return traj


def chain_trajectory(trans: np.ndarray, counts0: np.ndarray, steps: int,
                     seed: int) -> np.ndarray:
    """Run the stochastic chain, returning the (steps+1, 7) count history.

    Deterministic given (trans, counts0, steps, seed) within one path.
    """
    trans = np.ascontiguousarray(trans, dtype=np.float64)
    counts0 = np.ascontiguousarray(counts0, dtype=np.int64)
    seed = int(seed) & 0x7FFFFFFF
    if USE_NUMBA:
        return _chain_trajectory_nb(trans, counts0, int(steps), seed)
    return _chain_trajectory_py(trans, counts0, int(steps), seed)
