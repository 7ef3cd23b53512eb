"""Synthetic smart-meter streams for the balanced / overproduction / overload scenarios."""

from __future__ import annotations

from dataclasses import dataclass
from datetime import datetime, timedelta

import numpy as np

from .events import Event, EventKind

START = datetime(2014, 1, 1)
OVERPRODUCTION_FACTOR = 0.8


@dataclass(frozen=True)
class ScenarioConfig:
    """Parameters of one synthetic run.

    Attributes:
        scenario: ``"A"`` balanced, ``"B"`` overproduction, ``"C"`` overload.
        duration_min: Length of the run in minutes.
        sample_period_min: Time between paired EP/EC measurements.
        base_production_mw: Production at the start of the run.
        production_drift_mw_per_min: Linear growth of production. Consumption
            follows it (A), is a fixed fraction of it (B) or grows twice as
            fast (C).
        noise_std_mw: Standard deviation of the Gaussian noise on every sample.
        seed: RNG seed.
    """

    scenario: str = "A"
    duration_min: float = 1440.0
    sample_period_min: float = 15.0
    base_production_mw: float = 500.0
    production_drift_mw_per_min: float = 0.5
    noise_std_mw: float = 20.0
    seed: int = 0

    def __post_init__(self) -> None:
        if self.scenario not in ("A", "B", "C"):
            raise ValueError(f"unknown scenario {self.scenario!r}")
        if self.sample_period_min <= 0:
            raise ValueError("sample period must be positive")
        if self.duration_min < self.sample_period_min:
            raise ValueError("duration must be at least one sample period")
        if self.noise_std_mw < 0:
            raise ValueError("noise must be nonnegative")


def mean_profiles(config: ScenarioConfig, t: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
    """Noise-free production and consumption at times ``t`` (minutes)."""
    drift = config.production_drift_mw_per_min
    production = config.base_production_mw + drift * t
    if config.scenario == "A":
        consumption = production.copy()
    elif config.scenario == "B":
        consumption = OVERPRODUCTION_FACTOR * production
    else:
        consumption = config.base_production_mw + 2.0 * drift * t
    return production, consumption


def generate(config: ScenarioConfig) -> list[Event]:
    """Paired EP/EC measurement events, EP first at every sampling instant."""
    rng = np.random.default_rng(config.seed)
    n = int(config.duration_min // config.sample_period_min)
    t = np.arange(n) * config.sample_period_min
    production, consumption = mean_profiles(config, t)
    if config.noise_std_mw > 0:
        production = production + rng.normal(0.0, config.noise_std_mw, n)
        consumption = consumption + rng.normal(0.0, config.noise_std_mw, n)

    events = []
    for k in range(n):
        ts = START + timedelta(minutes=float(t[k]))
        events.append(Event(ts, "EP", EventKind.SMART_METER_MEASURE, float(production[k])))
        events.append(Event(ts, "EC", EventKind.SMART_METER_MEASURE, float(consumption[k])))
    return events
