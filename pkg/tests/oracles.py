"""Reference computations that share no code path with uniformization."""

from __future__ import annotations

import numpy as np
import scipy.linalg


def dense_generator(n, transitions, goal=()):
    """Dense generator with the goal states made absorbing."""
    Q = np.zeros((n, n))
    for i, j, r in transitions:
        if i not in goal:
            Q[i, j] += r
    Q -= np.diag(Q.sum(axis=1))
    return Q


def expm_reach(n, transitions, goal, start, horizon):
    """Reach probability from the matrix exponential of the absorbing generator."""
    P = scipy.linalg.expm(dense_generator(n, transitions, goal) * horizon)
    return float(P[start, sorted(goal)].sum())


def birth_death_transitions(n, lam, mu):
    out = [(i, i + 1, lam) for i in range(n - 1)]
    out += [(i, i - 1, mu) for i in range(1, n)]
    return out


def monte_carlo_reach(n, transitions, goal, start, horizon, runs, rng):
    """Fraction of simulated trajectories that hit ``goal`` by ``horizon``.

    All trajectories are advanced together, one jump per loop iteration.
    """
    R = np.zeros((n, n))
    for i, j, r in transitions:
        R[i, j] += r
    exit_rates = R.sum(axis=1)
    with np.errstate(invalid="ignore", divide="ignore"):
        cum = np.cumsum(R / exit_rates[:, None], axis=1)
    goal_mask = np.zeros(n, dtype=bool)
    goal_mask[list(goal)] = True

    state = np.full(runs, start)
    clock = np.zeros(runs)
    hit = goal_mask[state].copy()
    active = ~hit & (exit_rates[state] > 0)
    while active.any():
        idx = np.flatnonzero(active)
        s = state[idx]
        clock[idx] += rng.exponential(1.0 / exit_rates[s])
        in_time = clock[idx] <= horizon
        idx, s = idx[in_time], s[in_time]
        u = rng.random(idx.size)
        nxt = (cum[s] < u[:, None]).sum(axis=1)
        nxt = np.minimum(nxt, n - 1)
        state[idx] = nxt
        hit[idx] = goal_mask[nxt]
        active[:] = False
        active[idx] = ~hit[idx] & (exit_rates[nxt] > 0)
    return float(hit.mean())
