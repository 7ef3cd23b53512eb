"""Discretisation of a KPI range and birth-death queue chains over it.

A KPI range ``[min_b, max_b]`` is cut into ``N`` intervals of equal width. The
queue has ``N + 1`` states; state ``i`` stands for the grid point
``min_b + i * width`` (so both range edges are representable and the balance
point of a symmetric range is state ``N / 2``).
"""

from __future__ import annotations

import enum
import math
from dataclasses import dataclass
from typing import Sequence

import numpy as np
import scipy.sparse as sp

from .ctmc import Ctmc, CtmcError, ctmc_from_arrays

ADMISSIBLE_LABEL = "admissible"
CRITICAL_LABEL = "criticalState"
VIOLATION_LABEL = "violState"

DEFAULT_STATE_CAP = 5_000_000


class ValueClass(enum.Enum):
    ADMISSIBLE = "Admissible"
    CRITICAL = "Critical"
    INADMISSIBLE = "Inadmissible"


_CLASS_LABEL = {
    ValueClass.ADMISSIBLE: ADMISSIBLE_LABEL,
    ValueClass.CRITICAL: CRITICAL_LABEL,
    ValueClass.INADMISSIBLE: VIOLATION_LABEL,
}


@dataclass(frozen=True)
class ValuePartition:
    """KPI range, the four signed thresholds and the number of intervals.

    The thresholds satisfy
    ``min_b <= lo_cri < lo_adm <= hi_adm < hi_cri <= max_b``.
    """

    min_b: float
    max_b: float
    lo_cri: float
    lo_adm: float
    hi_adm: float
    hi_cri: float
    n_intervals: int

    def __post_init__(self) -> None:
        vals = (self.min_b, self.max_b, self.lo_cri, self.lo_adm, self.hi_adm, self.hi_cri)
        if not all(math.isfinite(v) for v in vals):
            raise ValueError("partition bounds must be finite")
        if not (self.min_b <= self.lo_cri < self.lo_adm <= self.hi_adm
                < self.hi_cri <= self.max_b):
            raise ValueError(
                "thresholds must satisfy min_b <= lo_cri < lo_adm <= hi_adm < hi_cri <= max_b"
            )
        if int(self.n_intervals) != self.n_intervals or self.n_intervals < 1:
            raise ValueError(f"n_intervals must be a positive integer, got {self.n_intervals}")

    @property
    def width(self) -> float:
        return (self.max_b - self.min_b) / self.n_intervals

    @property
    def n_states(self) -> int:
        return self.n_intervals + 1

    def state_value(self, state: int) -> float:
        """Representative KPI value of a queue state."""
        return self.min_b + state * self.width

    def with_intervals(self, n_intervals: int) -> "ValuePartition":
        return ValuePartition(self.min_b, self.max_b, self.lo_cri, self.lo_adm,
                              self.hi_adm, self.hi_cri, n_intervals)


def classify_value(partition: ValuePartition, value: float) -> ValueClass:
    p = partition
    if p.lo_adm <= value <= p.hi_adm:
        return ValueClass.ADMISSIBLE
    if p.lo_cri <= value < p.lo_adm or p.hi_adm < value <= p.hi_cri:
        return ValueClass.CRITICAL
    return ValueClass.INADMISSIBLE


def value_to_state(partition: ValuePartition, value: float) -> int:
    """Queue state whose grid point is nearest to ``value`` (after clamping to the range).

    Ties round up, so the cell of state ``i`` is
    ``[grid_i - width/2, grid_i + width/2)``.
    """
    if not math.isfinite(value):
        raise ValueError(f"cannot map non-finite value {value}")
    clamped = min(max(value, partition.min_b), partition.max_b)
    state = math.floor((clamped - partition.min_b) / partition.width + 0.5)
    return min(max(state, 0), partition.n_intervals)


def state_labels(partition: ValuePartition) -> dict[str, list[int]]:
    """Label every state by the class of its representative value."""
    labels: dict[str, list[int]] = {name: [] for name in _CLASS_LABEL.values()}
    for state in range(partition.n_states):
        cls = classify_value(partition, partition.state_value(state))
        labels[_CLASS_LABEL[cls]].append(state)
    return labels


@dataclass(frozen=True)
class QueueSpec:
    """One KPI queue: its partition, current rates and current value.

    Attributes:
        name: KPI identifier.
        partition: Value discretisation.
        lambda_t: Increment rate, intervals per minute.
        mu_t: Decrement rate, intervals per minute.
        value: Current KPI value; sets the initial state.
    """

    name: str
    partition: ValuePartition
    lambda_t: float
    mu_t: float
    value: float = 0.0

    def __post_init__(self) -> None:
        for rate in (self.lambda_t, self.mu_t):
            if not (math.isfinite(rate) and rate >= 0):
                raise ValueError(f"rates must be finite and nonnegative, got {rate}")

    @property
    def initial_state(self) -> int:
        return value_to_state(self.partition, self.value)


def _birth_death_generator(n_intervals: int, lam: float, mu: float) -> sp.csr_matrix:
    up = np.full(n_intervals, lam) if lam > 0 else np.zeros(0)
    down = np.full(n_intervals, mu) if mu > 0 else np.zeros(0)
    n = n_intervals + 1
    rows = np.concatenate([np.arange(up.size), np.arange(1, down.size + 1)])
    cols = np.concatenate([np.arange(1, up.size + 1), np.arange(down.size)])
    vals = np.concatenate([up, down])
    return sp.csr_matrix((vals, (rows, cols)), shape=(n, n))


def birth_death_chain(spec: QueueSpec) -> Ctmc:
    """Birth-death chain for ``spec``; zero rates simply drop those transitions."""
    rates = _birth_death_generator(spec.partition.n_intervals, spec.lambda_t, spec.mu_t).tocoo()
    return ctmc_from_arrays(spec.partition.n_states, rates.row, rates.col, rates.data,
                            state_labels(spec.partition), spec.initial_state)


def build_birth_death(spec: QueueSpec) -> Ctmc:
    """Birth-death CTMC with ``N + 1`` states and class labels on every state.

    Raises:
        CtmcError: if both rates are zero.
    """
    if spec.lambda_t == 0 and spec.mu_t == 0:
        raise CtmcError(f"queue {spec.name!r}: both rates are zero, chain is degenerate")
    return birth_death_chain(spec)


def compose_network(
    specs: Sequence[QueueSpec],
    primary: int = 0,
    state_cap: int = DEFAULT_STATE_CAP,
) -> Ctmc:
    """Independent product of up to three queues.

    Exactly one queue moves per transition, at its own rate. Product states
    use mixed radix with the first spec most significant. Labels are those of
    the ``primary`` queue lifted to the product.
    """
    if not 1 <= len(specs) <= 3:
        raise ValueError(f"compose_network takes 1 to 3 queues, got {len(specs)}")
    if not 0 <= primary < len(specs):
        raise ValueError(f"primary queue index out of range: {primary}")
    sizes = [s.partition.n_states for s in specs]
    total = math.prod(sizes)
    if total > state_cap:
        raise CtmcError(f"product chain has {total} states, above the cap of {state_cap}")

    generator = None
    for k, spec in enumerate(specs):
        factor = _birth_death_generator(spec.partition.n_intervals, spec.lambda_t, spec.mu_t)
        left = sp.identity(math.prod(sizes[:k]), format="csr")
        right = sp.identity(math.prod(sizes[k + 1:]), format="csr")
        term = sp.kron(sp.kron(left, factor, format="csr"), right, format="csr")
        generator = term if generator is None else generator + term
    generator = generator.tocoo()

    strides = [math.prod(sizes[k + 1:]) for k in range(len(specs))]
    initial = sum(s.initial_state * stride for s, stride in zip(specs, strides))

    primary_of = (np.arange(total) // strides[primary]) % sizes[primary]
    labels = {}
    for name, states in state_labels(specs[primary].partition).items():
        labels[name] = np.flatnonzero(np.isin(primary_of, states))
    return ctmc_from_arrays(total, generator.row, generator.col, generator.data,
                            labels, initial)
