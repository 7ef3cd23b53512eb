"""Finite continuous-time Markov chains and time-bounded reachability.

Chains are stored as a compressed-row matrix of off-diagonal rates (units
1/minute) plus a set of named state labels. Reachability of a labelled state
set within a time bound is computed by uniformization: the goal states are
made absorbing, the chain is turned into a discrete jump matrix
``P = I + Q/q`` and the Poisson-weighted powers of ``P`` are accumulated with
truncated Poisson weights.
"""

from __future__ import annotations

import math
import operator
from dataclasses import dataclass
from typing import Iterable, Mapping, Sequence

import numpy as np
import scipy.sparse as sp

UNIFORMIZATION_SLACK = 1.02
"""Uniformization rate is this factor times the largest exit rate."""

TAIL_EPSILON = 1e-10
"""Poisson mass allowed to be dropped on each side of the truncation window."""

COMPARATORS = {
    ">=": operator.ge,
    ">": operator.gt,
    "<=": operator.le,
    "<": operator.lt,
    "=": operator.eq,
    "!=": operator.ne,
}


class CtmcError(ValueError):
    """Raised for malformed chains or queries."""


@dataclass(frozen=True, eq=False)
class Ctmc:
    """Immutable labelled CTMC.

    Attributes:
        n_states: Number of states.
        rates: ``n_states x n_states`` CSR matrix of off-diagonal rates.
        labels: Label name -> sorted array of state indices.
        initial_state: Index of the state the chain starts in.
    """

    n_states: int
    rates: sp.csr_matrix
    labels: Mapping[str, np.ndarray]
    initial_state: int = 0

    @property
    def n_transitions(self) -> int:
        return int(self.rates.nnz)

    @property
    def exit_rates(self) -> np.ndarray:
        return np.asarray(self.rates.sum(axis=1)).ravel()

    def label_mask(self, name: str) -> np.ndarray:
        if name not in self.labels:
            raise CtmcError(f"unknown label {name!r}")
        mask = np.zeros(self.n_states, dtype=bool)
        mask[self.labels[name]] = True
        return mask

    def with_initial_state(self, state: int) -> "Ctmc":
        if not 0 <= state < self.n_states:
            raise CtmcError(f"state index out of range: {state}")
        return Ctmc(self.n_states, self.rates, self.labels, int(state))

    def transitions(self) -> list[tuple[int, int, float]]:
        """(from, to, rate) triples sorted by (from, to)."""
        coo = self.rates.tocoo()
        order = np.lexsort((coo.col, coo.row))
        return [
            (int(coo.row[i]), int(coo.col[i]), float(coo.data[i])) for i in order
        ]


@dataclass(frozen=True)
class ReachabilityQuery:
    """``P=? [F<=T goal]`` when ``comparator`` is None, else ``P~p [F<=T goal]``."""

    goal_label: str
    time_bound: float
    comparator: str | None = None
    threshold: float | None = None

    def __post_init__(self) -> None:
        if not self.time_bound >= 0:
            raise CtmcError(f"time bound must be nonnegative, got {self.time_bound}")
        if self.comparator is not None:
            if self.comparator not in COMPARATORS:
                raise CtmcError(f"unknown comparator {self.comparator!r}")
            if self.threshold is None or not 0.0 <= self.threshold <= 1.0:
                raise CtmcError(f"threshold must lie in [0, 1], got {self.threshold}")

    @property
    def is_bounded(self) -> bool:
        return self.comparator is not None


def _labels_from(labels: Mapping[str, Iterable[int]], n_states: int) -> dict[str, np.ndarray]:
    out = {}
    for name, states in labels.items():
        idx = np.unique(np.fromiter(states, dtype=np.int64))
        if idx.size and (idx[0] < 0 or idx[-1] >= n_states):
            raise CtmcError(f"label {name!r} refers to unknown state")
        out[name] = idx
    return out


def ctmc_from_arrays(
    n_states: int,
    rows: np.ndarray,
    cols: np.ndarray,
    values: np.ndarray,
    labels: Mapping[str, Iterable[int]],
    initial_state: int = 0,
) -> Ctmc:
    """Vectorised constructor; duplicate (row, col) entries are summed."""
    if n_states < 1:
        raise CtmcError("chain must have at least one state")
    rows = np.asarray(rows, dtype=np.int64)
    cols = np.asarray(cols, dtype=np.int64)
    values = np.asarray(values, dtype=float)
    if rows.size:
        lo = min(rows.min(), cols.min())
        hi = max(rows.max(), cols.max())
        if lo < 0 or hi >= n_states:
            raise CtmcError("state index out of range")
        if not np.all(np.isfinite(values)) or np.any(values <= 0):
            raise CtmcError("transition rates must be positive and finite")
        if np.any(rows == cols):
            raise CtmcError("self-loop transitions are not allowed")
    if not 0 <= initial_state < n_states:
        raise CtmcError(f"state index out of range: initial state {initial_state}")
    rates = sp.csr_matrix((values, (rows, cols)), shape=(n_states, n_states))
    rates.sum_duplicates()
    rates.sort_indices()
    return Ctmc(int(n_states), rates, _labels_from(labels, n_states), int(initial_state))


def build_ctmc(
    n_states: int,
    transitions: Sequence[tuple[int, int, float]],
    labels: Mapping[str, Iterable[int]] | None = None,
    initial_state: int = 0,
) -> Ctmc:
    """Build a validated chain from ``(from, to, rate)`` triples."""
    if transitions:
        rows, cols, vals = (np.asarray(c) for c in zip(*transitions))
    else:
        rows = cols = np.zeros(0, dtype=np.int64)
        vals = np.zeros(0)
    return ctmc_from_arrays(n_states, rows, cols, vals, labels or {}, initial_state)


def uniformize(ctmc: Ctmc) -> tuple[float, sp.csr_matrix]:
    """Return ``(q, P)`` with ``P = I + Q/q`` row-stochastic.

    ``q`` is 1.02 times the largest exit rate; a chain without transitions gets
    ``q = 1`` and ``P = I``.
    """
    if ctmc.n_states < 1:
        raise CtmcError("empty chain")
    exit_rates = ctmc.exit_rates
    max_exit = float(exit_rates.max())
    q = UNIFORMIZATION_SLACK * max_exit if max_exit > 0 else 1.0
    jump = ctmc.rates / q + sp.diags(1.0 - exit_rates / q)
    return q, sp.csr_matrix(jump)


def poisson_weights(rate: float, epsilon: float = TAIL_EPSILON) -> tuple[int, np.ndarray]:
    """Truncated, normalised Poisson(``rate``) probabilities.

    Returns ``(left, w)`` where ``w[i]`` is the weight of ``left + i`` jumps.
    The probability mass left out below ``left`` and above ``left + len(w) - 1``
    is each below ``epsilon``. Weights are computed outward from the mode,
    starting from its log-space value, so large rates cannot underflow.
    """
    if rate < 0 or not math.isfinite(rate):
        raise CtmcError(f"Poisson rate must be finite and nonnegative, got {rate}")
    if rate == 0:
        return 0, np.ones(1)
    mode = int(math.floor(rate))
    w_mode = math.exp(-rate + mode * math.log(rate) - math.lgamma(mode + 1))

    below = []
    w, k = w_mode, mode
    while k > 0:
        w_prev = w * k / rate
        ratio = (k - 1) / rate
        # remaining lower tail is geometric-bounded by w_prev / (1 - ratio)
        if w_prev / (1.0 - ratio) < epsilon:
            break
        below.append(w_prev)
        w, k = w_prev, k - 1
    left = k

    above = []
    w, k = w_mode, mode
    while True:
        w_next = w * rate / (k + 1)
        ratio = rate / (k + 2)
        if ratio < 1.0 and w_next / (1.0 - ratio) < epsilon:
            break
        above.append(w_next)
        w, k = w_next, k + 1

    weights = np.array(below[::-1] + [w_mode] + above)
    return left, weights / weights.sum()


def reach_probabilities(ctmc: Ctmc, goal_label: str, time_bound: float) -> np.ndarray:
    """Probability of hitting ``goal_label`` within ``time_bound``, for every start state."""
    goal = ctmc.label_mask(goal_label)
    if not time_bound >= 0:
        raise CtmcError(f"time bound must be nonnegative, got {time_bound}")
    indicator = goal.astype(float)
    if time_bound == 0 or ctmc.n_transitions == 0:
        return indicator

    # goal states made absorbing by dropping their outgoing rates
    rates = ctmc.rates
    row_of = np.repeat(np.arange(ctmc.n_states), np.diff(rates.indptr))
    data = np.where(goal[row_of], 0.0, rates.data)
    exit_rates = np.bincount(row_of, weights=data, minlength=ctmc.n_states)
    max_exit = float(exit_rates.max())
    if max_exit == 0:
        return indicator
    q = UNIFORMIZATION_SLACK * max_exit
    scaled = sp.csr_matrix((data / q, rates.indices, rates.indptr), shape=rates.shape)
    stay = 1.0 - exit_rates / q
    left, weights = poisson_weights(q * time_bound)

    # backward iteration: v_k = P^k 1_goal with P = I + Q/q, result = sum_k w_k v_k
    v = indicator
    for _ in range(left):
        v = stay * v + scaled @ v
    result = weights[0] * v
    for w in weights[1:]:
        v = stay * v + scaled @ v
        result += w * v
    return np.clip(result, 0.0, 1.0)


def transient_reach_prob(ctmc: Ctmc, query: ReachabilityQuery) -> float:
    """Probability of reaching ``query.goal_label`` from the initial state within the bound."""
    if query.time_bound == 0:
        return 1.0 if ctmc.label_mask(query.goal_label)[ctmc.initial_state] else 0.0
    probs = reach_probabilities(ctmc, query.goal_label, query.time_bound)
    return float(probs[ctmc.initial_state])


def check_prob_bound(ctmc: Ctmc, query: ReachabilityQuery) -> bool:
    if not query.is_bounded:
        raise CtmcError("query has no probability bound")
    prob = transient_reach_prob(ctmc, query)
    return bool(COMPARATORS[query.comparator](prob, query.threshold))


def dump_ctmc(ctmc: Ctmc) -> str:
    """Textual dump: header, initial state, sorted transitions, sorted labels."""
    lines = [f"ctmc {ctmc.n_states}", f"init {ctmc.initial_state}"]
    lines += [f"{i} {j} {rate!r}" for i, j, rate in ctmc.transitions()]
    for name in sorted(ctmc.labels):
        idx = " ".join(str(int(s)) for s in ctmc.labels[name])
        lines.append(f"label {name} {idx}".rstrip())
    return "\n".join(lines) + "\n"


def load_ctmc(text: str) -> Ctmc:
    """Inverse of :func:`dump_ctmc`."""
    n_states = None
    initial = 0
    transitions: list[tuple[int, int, float]] = []
    labels: dict[str, list[int]] = {}
    for lineno, raw in enumerate(text.splitlines(), start=1):
        parts = raw.split()
        if not parts or parts[0].startswith("#"):
            continue
        try:
            if parts[0] == "ctmc":
                n_states = int(parts[1])
            elif parts[0] == "init":
                initial = int(parts[1])
            elif parts[0] == "label":
                labels[parts[1]] = [int(p) for p in parts[2:]]
            else:
                transitions.append((int(parts[0]), int(parts[1]), float(parts[2])))
        except (IndexError, ValueError) as exc:
            raise CtmcError(f"line {lineno}: cannot parse {raw!r}") from exc
    if n_states is None:
        raise CtmcError("missing 'ctmc <n_states>' header")
    return build_ctmc(n_states, transitions, labels, initial)
