"""Online estimation of queue increment/decrement rates and queue resizing."""

from __future__ import annotations

import logging
import math
from dataclasses import dataclass, replace
from typing import Iterable

from .queue_model import ValuePartition, value_to_state

log = logging.getLogger(__name__)


def ewma_update(rho: float, y_prev: float, y_cur: float, alpha: float) -> float:
    """One EWMA step on the first difference ``y_cur - y_prev``."""
    if not 0.0 < alpha <= 1.0:
        raise ValueError(f"alpha must lie in (0, 1], got {alpha}")
    return alpha * (y_cur - y_prev) + (1.0 - alpha) * rho


@dataclass(frozen=True)
class RateParams:
    """Immutable snapshot of the estimator state.

    ``lambda_t`` and ``mu_t`` are in queue intervals per minute. ``rho_up`` and
    ``rho_down`` are the EWMA accumulators in intervals per sample.
    """

    lambda_t: float = 0.0
    mu_t: float = 0.0
    rho_up: float = 0.0
    rho_down: float = 0.0
    alpha: float = 0.3
    window_w: float = 60.0
    last_value: float | None = None
    last_timestamp: float | None = None
    last_gap: float | None = None


def _check_finite(*values: float) -> None:
    for v in values:
        if not math.isfinite(v):
            raise ValueError(f"non-finite input {v!r}")


def observe(rates: RateParams, timestamp: float, value: float, interval_width: float) -> RateParams:
    """Feed one KPI sample (timestamp in minutes) and return the updated snapshot.

    The difference to the previous sample, in interval units, feeds the
    increment accumulator when positive and the decrement accumulator (by
    magnitude) when negative; the other accumulator decays by ``1 - alpha``.
    Rates are the clamped accumulators divided by the inter-sample gap.
    """
    _check_finite(timestamp, value)
    if rates.last_timestamp is not None and timestamp < rates.last_timestamp:
        raise ValueError(
            f"non-monotone timestamp {timestamp} after {rates.last_timestamp}"
        )
    if rates.last_value is None:
        return replace(rates, last_value=value, last_timestamp=timestamp)

    diff = (value - rates.last_value) / interval_width
    up_step, down_step = (diff, 0.0) if diff >= 0 else (0.0, -diff)
    rho_up = ewma_update(rates.rho_up, 0.0, up_step, rates.alpha)
    rho_down = ewma_update(rates.rho_down, 0.0, down_step, rates.alpha)

    gap = timestamp - rates.last_timestamp
    if gap <= 0:
        gap = rates.last_gap
    if gap is None:
        lam, mu = rates.lambda_t, rates.mu_t
    else:
        lam, mu = max(rho_up, 0.0) / gap, max(rho_down, 0.0) / gap
    return replace(rates, lambda_t=lam, mu_t=mu, rho_up=rho_up, rho_down=rho_down,
                   last_value=value, last_timestamp=timestamp, last_gap=gap)


def rescale(rates: RateParams, factor: float) -> RateParams:
    """Convert rates and accumulators after the interval width shrinks by ``factor``."""
    return replace(rates, lambda_t=rates.lambda_t * factor, mu_t=rates.mu_t * factor,
                   rho_up=rates.rho_up * factor, rho_down=rates.rho_down * factor)


def windowed_rates(history: Iterable[tuple[float, float]], w: float) -> tuple[float, float]:
    """Sum of upward and downward interval jumps within the last ``w`` minutes, over ``w``.

    Args:
        history: ``(timestamp, state)`` pairs in time order.
        w: Window length in minutes.

    Returns:
        ``(lambda_t, mu_t)`` in intervals per minute.
    """
    if w <= 0:
        raise ValueError(f"window must be positive, got {w}")
    history = list(history)
    if len(history) < 2:
        return 0.0, 0.0
    t_end = history[-1][0]
    up = down = 0.0
    for (_, s0), (t1, s1) in zip(history, history[1:]):
        if t1 <= t_end - w:
            continue
        jump = s1 - s0
        if jump > 0:
            up += jump
        else:
            down -= jump
    return up / w, down / w


@dataclass(frozen=True)
class ResizePolicy:
    low_edge_fraction: float = 0.1
    high_edge_fraction: float = 0.9
    n_min: int = 10
    n_max: int = 640


def maybe_resize(
    partition: ValuePartition,
    current_state: int,
    policy: ResizePolicy = ResizePolicy(),
) -> tuple[ValuePartition, int]:
    """Double the number of intervals near the low edge, halve it near the high edge.

    Value thresholds are kept, so only the granularity changes. Returns the
    (possibly unchanged) partition and the current state re-mapped onto it.
    """
    n = partition.n_intervals
    if current_state <= policy.low_edge_fraction * n:
        new_n = 2 * n
        if new_n > policy.n_max:
            log.warning("queue length %d already at cap %d, not doubling", n, policy.n_max)
            return partition, current_state
    elif current_state >= policy.high_edge_fraction * n:
        new_n = n // 2
        if new_n < policy.n_min:
            log.warning("queue length %d at floor %d, not halving", n, policy.n_min)
            return partition, current_state
    else:
        return partition, current_state
    resized = partition.with_intervals(new_n)
    return resized, value_to_state(resized, partition.state_value(current_state))
