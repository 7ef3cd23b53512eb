"""The adaptive prediction loop, the model-size benchmark and per-state probability sweeps."""

from __future__ import annotations

import configparser
import csv
import dataclasses
import io
import logging
import math
import time
from dataclasses import dataclass, field
from typing import Iterable, Iterator, Sequence

import numpy as np

from . import estimator
from .ctmc import COMPARATORS, Ctmc, reach_probabilities
from .estimator import RateParams, ResizePolicy, maybe_resize, observe, windowed_rates
from .events import (
    BalanceJoiner,
    Event,
    EventKind,
    UnderproductionDetector,
    classify_range,
    format_timestamp,
)
from .qc import CslFormula, QcAst, QcMonitor, QcVerdict, Status, format_number, parse_qc
from .queue_model import (
    VIOLATION_LABEL,
    QueueSpec,
    ValuePartition,
    birth_death_chain,
    compose_network,
    value_to_state,
)
from .scenarios import ScenarioConfig, generate

log = logging.getLogger(__name__)


class ConfigError(ValueError):
    pass


@dataclass(frozen=True)
class PipelineConfig:
    """All tunables of the loop; file keys match the field names."""

    min_b: float = -400.0
    max_b: float = 400.0
    lo_cri: float = -380.0
    lo_adm: float = -200.0
    hi_adm: float = 200.0
    hi_cri: float = 380.0
    n_intervals: int = 40
    alpha: float = 0.3
    estimator: str = "ewma"
    window_w: float = 60.0
    resize: bool = False
    low_edge_fraction: float = 0.1
    high_edge_fraction: float = 0.9
    n_min: int = 10
    n_max: int = 640
    horizon: float = 30.0
    alarm_threshold: float = 0.05
    violation_label: str = VIOLATION_LABEL
    kpi_name: str = "balance"
    sample_period: float = 15.0
    producer: str = "EP"
    consumer: str = "EC"
    out_of_order: str = "reject"
    underproduction_source: str = "EP"
    underproduction_threshold: float = math.nan
    underproduction_window: float = 15.0
    timings: bool = False
    seed: int = 0
    scenario_duration: float = 1440.0
    scenario_period: float = 15.0
    scenario_base: float = 500.0
    scenario_drift: float = 0.5
    scenario_noise: float = 20.0

    def __post_init__(self) -> None:
        if self.estimator not in ("ewma", "windowed"):
            raise ConfigError(f"estimator must be 'ewma' or 'windowed', got {self.estimator!r}")
        if not 0.0 < self.alpha <= 1.0:
            raise ConfigError(f"alpha must lie in (0, 1], got {self.alpha}")
        if self.out_of_order not in ("reject", "drop"):
            raise ConfigError("out_of_order must be 'reject' or 'drop'")
        for name in ("window_w", "horizon", "sample_period", "underproduction_window"):
            if not getattr(self, name) > 0:
                raise ConfigError(f"{name} must be positive")
        try:
            self.partition
        except ValueError as exc:
            raise ConfigError(str(exc)) from None

    @property
    def partition(self) -> ValuePartition:
        return ValuePartition(self.min_b, self.max_b, self.lo_cri, self.lo_adm,
                              self.hi_adm, self.hi_cri, self.n_intervals)

    @property
    def resize_policy(self) -> ResizePolicy:
        return ResizePolicy(self.low_edge_fraction, self.high_edge_fraction,
                            self.n_min, self.n_max)

    def scenario(self, name: str) -> ScenarioConfig:
        return ScenarioConfig(name, self.scenario_duration, self.scenario_period,
                              self.scenario_base, self.scenario_drift, self.scenario_noise,
                              self.seed)


def _coerce(name: str, raw: str, kind: type):
    try:
        if kind is bool:
            lowered = raw.strip().lower()
            if lowered not in ("true", "false", "yes", "no", "on", "off", "1", "0"):
                raise ValueError(raw)
            return lowered in ("true", "yes", "on", "1")
        return kind(raw.strip())
    except ValueError:
        raise ConfigError(f"bad value for {name}: {raw!r}") from None


def parse_config(text: str) -> PipelineConfig:
    """Parse flat ``key = value`` text (``#`` comments) into a config."""
    parser = configparser.ConfigParser(inline_comment_prefixes=("#",), interpolation=None)
    try:
        parser.read_string("[config]\n" + text)
    except configparser.Error as exc:
        raise ConfigError(str(exc)) from None
    types = {f.name: type(f.default) for f in dataclasses.fields(PipelineConfig)}
    values = {}
    for key, raw in parser["config"].items():
        if key not in types:
            raise ConfigError(f"unknown config key {key!r}")
        values[key] = _coerce(key, raw, types[key])
    try:
        return PipelineConfig(**values)
    except ConfigError:
        raise
    except (TypeError, ValueError) as exc:
        raise ConfigError(str(exc)) from None


def load_config(path: str | None) -> PipelineConfig:
    if path is None:
        return PipelineConfig()
    try:
        with open(path, encoding="utf-8") as fh:
            return parse_config(fh.read())
    except OSError as exc:
        raise ConfigError(f"cannot read config {path}: {exc}") from None


# --- the loop --------------------------------------------------------------


@dataclass(frozen=True)
class PredictionRecord:
    timestamp: str
    queue_state: int
    n_intervals: int
    value: float
    lambda_t: float
    mu_t: float
    violation_prob: float
    qc_verdicts: tuple[tuple[str, str], ...] = ()
    alerts: tuple[str, ...] = ()
    warning: str = ""
    build_time_ms: float = 0.0
    check_time_ms: float = 0.0


RECORD_COLUMNS = ["timestamp", "queue_state", "n_intervals", "value", "lambda_t", "mu_t",
                  "violation_prob", "qc_verdicts", "alerts", "warning"]
TIMING_COLUMNS = ["build_time_ms", "check_time_ms"]


def _fmt(x: float) -> str:
    return repr(float(x))


def record_row(rec: PredictionRecord, timings: bool = False) -> list[str]:
    row = [rec.timestamp, str(rec.queue_state), str(rec.n_intervals), _fmt(rec.value),
           _fmt(rec.lambda_t), _fmt(rec.mu_t), _fmt(rec.violation_prob),
           ";".join(f"{qc}={status}" for qc, status in rec.qc_verdicts),
           ";".join(rec.alerts), rec.warning]
    if timings:
        row += [f"{rec.build_time_ms:.3f}", f"{rec.check_time_ms:.3f}"]
    return row


def write_records(records: Iterable[PredictionRecord], fh, timings: bool = False) -> None:
    writer = csv.writer(fh, lineterminator="\n")
    writer.writerow(RECORD_COLUMNS + (TIMING_COLUMNS if timings else []))
    for rec in records:
        writer.writerow(record_row(rec, timings))


class SnapshotChecker:
    """Resolves ``eval`` terms for one start state against a cached model snapshot."""

    def __init__(self, model: "ModelSnapshot", state: int):
        self.model = model
        self.state = state

    def __call__(self, formula: CslFormula) -> float | bool:
        prob = float(self.model.reach(formula.goal_label, formula.time_bound)[self.state])
        if formula.comparator is None:
            return prob
        return bool(COMPARATORS[formula.comparator](prob, formula.threshold))


@dataclass
class ModelSnapshot:
    """A built chain plus reach-probability vectors computed on it so far."""

    ctmc: Ctmc
    lambda_t: float
    mu_t: float
    n_intervals: int
    vectors: dict[tuple[str, float], np.ndarray] = field(default_factory=dict)

    def reach(self, label: str, bound: float) -> np.ndarray:
        key = (label, bound)
        if key not in self.vectors:
            self.vectors[key] = reach_probabilities(self.ctmc, label, bound)
        return self.vectors[key]


class Predictor:
    """Stateful driver of the monitor-estimate-build-check-verify loop."""

    def __init__(self, config: PipelineConfig, qcs: Sequence[tuple[str, QcAst]] = ()):
        self.config = config
        self.partition = config.partition
        self.rates = RateParams(alpha=config.alpha, window_w=config.window_w)
        self.history: list[tuple[float, int]] = []
        self.monitors = [(qc_id, QcMonitor(ast, period=config.sample_period))
                         for qc_id, ast in qcs]
        self.model: ModelSnapshot | None = None
        self.joiner = BalanceJoiner(config.producer, config.consumer, config.sample_period)
        self.detector = None
        if not math.isnan(config.underproduction_threshold):
            self.detector = UnderproductionDetector(config.underproduction_source,
                                                    config.underproduction_window,
                                                    config.underproduction_threshold)
        self.derived: list[Event] = []

    def push(self, event: Event) -> PredictionRecord | None:
        """Route one event; returns a record when a sampling period completes."""
        if event.kind is EventKind.SMART_METER_MEASURE:
            if self.detector is not None:
                msg = self.detector.push(event)
                if msg is not None:
                    log.warning("critical value: %s below %s at %s", msg.source,
                                self.config.underproduction_threshold, msg.timestamp)
                    self.derived.append(msg)
            balance = self.joiner.push(event)
            return None if balance is None else self.step(balance)
        if event.kind is EventKind.BALANCE_INDICATOR:
            return self.step(event)
        return None

    def _estimate(self, t: float, value: float, state: int) -> None:
        if self.config.estimator == "ewma":
            self.rates = observe(self.rates, t, value, self.partition.width)
            return
        self.history.append((t, state))
        horizon = t - self.config.window_w
        while len(self.history) > 1 and self.history[1][0] <= horizon:
            self.history.pop(0)
        lam, mu = windowed_rates(self.history, self.config.window_w)
        self.rates = dataclasses.replace(self.rates, lambda_t=lam, mu_t=mu,
                                         last_value=value, last_timestamp=t)

    def _resize(self, state: int) -> int:
        resized, new_state = maybe_resize(self.partition, state, self.config.resize_policy)
        if resized is self.partition:
            return state
        factor = self.partition.width / resized.width
        log.info("queue length %d -> %d", self.partition.n_intervals, resized.n_intervals)
        self.rates = estimator.rescale(self.rates, factor)
        self.history = [(t, value_to_state(resized, self.partition.state_value(s)))
                        for t, s in self.history]
        self.partition = resized
        return new_state

    def _snapshot(self) -> tuple[ModelSnapshot, float]:
        lam, mu = self.rates.lambda_t, self.rates.mu_t
        m = self.model
        if (m is not None and m.n_intervals == self.partition.n_intervals
                and abs(m.lambda_t - lam) <= 1e-9 and abs(m.mu_t - mu) <= 1e-9):
            return m, 0.0
        start = time.perf_counter()
        spec = QueueSpec(self.config.kpi_name, self.partition, lam, mu)
        self.model = ModelSnapshot(birth_death_chain(spec), lam, mu, self.partition.n_intervals)
        return self.model, (time.perf_counter() - start) * 1000.0

    def step(self, balance: Event) -> PredictionRecord:
        cfg = self.config
        t, value = balance.minutes, balance.measure
        self.derived.append(balance)
        range_event = classify_range(balance, self.partition)
        state = value_to_state(self.partition, value)
        self._estimate(t, value, state)
        if cfg.resize:
            state = self._resize(state)
            range_event = classify_range(balance, self.partition)
        self.derived.append(range_event)

        warning = ""
        prob = math.nan
        build_ms = check_ms = 0.0
        verdicts: list[tuple[str, QcVerdict]] = []
        try:
            model, build_ms = self._snapshot()
            start = time.perf_counter()
            prob = float(model.reach(cfg.violation_label, cfg.horizon)[state])
            checker = SnapshotChecker(model, state)
            kpis = {cfg.kpi_name: value, "queue_state": float(state)}
            verdicts = [(qc_id, mon.step(t, kpis, checker)) for qc_id, mon in self.monitors]
            check_ms = (time.perf_counter() - start) * 1000.0
        except Exception as exc:  # a failing period must not stop the loop
            log.error("model checking failed at %s: %s", balance.timestamp, exc)
            warning = f"check-error: {exc}"

        if build_ms + check_ms > cfg.sample_period * 60_000.0:
            warning = warning or "check-time-exceeded"
            log.warning("period at %s took %.0f ms, longer than the sampling period",
                        balance.timestamp, build_ms + check_ms)
        alerts = tuple(qc_id for qc_id, v in verdicts if v.alert)
        for qc_id, v in verdicts:
            if v.alert:
                log.warning("ALERT %s violated at %s (evidence %s)", qc_id,
                            balance.timestamp, dict(v.evidence))
            elif v.status is Status.ERROR:
                log.error("%s could not be evaluated: %s", qc_id, v.diagnostic)

        return PredictionRecord(
            timestamp=format_timestamp(balance.timestamp),
            queue_state=state,
            n_intervals=self.partition.n_intervals,
            value=value,
            lambda_t=self.rates.lambda_t,
            mu_t=self.rates.mu_t,
            violation_prob=prob,
            qc_verdicts=tuple((qc_id, v.status.value) for qc_id, v in verdicts),
            alerts=alerts,
            warning=warning,
            build_time_ms=build_ms,
            check_time_ms=check_ms,
        )


def default_qcs(config: PipelineConfig) -> list[tuple[str, QcAst]]:
    """Alarm constraint used when no QC file is given: two consecutive periods above threshold."""
    text = (f'eval(P=? [ F<={format_number(config.horizon)} "{config.violation_label}" ]) '
            f"<= {format_number(config.alarm_threshold)} "
            f"within {format_number(2 * config.sample_period)}m")
    return [("alarm", parse_qc(text))]


def run_pipeline(config: PipelineConfig, events: Iterable[Event],
                 qcs: Sequence[tuple[str, QcAst]] = ()) -> Iterator[PredictionRecord]:
    """One record per completed sampling period."""
    predictor = Predictor(config, qcs)
    for event in events:
        record = predictor.push(event)
        if record is not None:
            yield record


# --- benchmark ---------------------------------------------------------------


@dataclass(frozen=True)
class BenchRow:
    queue_length: int
    states: int
    transitions: int
    build_time_s: float
    check_time_s: float
    violation_prob: float

    @property
    def total_time_s(self) -> float:
        return self.build_time_s + self.check_time_s


def bench(lengths: Sequence[int], rate: float = 0.1, horizon: float = 30.0,
          config: PipelineConfig | None = None) -> list[BenchRow]:
    """Build and check the three-queue product network for each queue length."""
    config = config or PipelineConfig()
    rows = []
    for length in lengths:
        if length < 1:
            raise ValueError(f"queue length must be at least 1, got {length}")
        partition = dataclasses.replace(config, n_intervals=length).partition
        specs = [QueueSpec(name, partition, rate, rate, 0.0) for name in ("ED", "EP", "EC")]
        start = time.perf_counter()
        ctmc = compose_network(specs)
        built = time.perf_counter()
        probs = reach_probabilities(ctmc, config.violation_label, horizon)
        checked = time.perf_counter()
        rows.append(BenchRow(length, ctmc.n_states, ctmc.n_transitions, built - start,
                             checked - built, float(probs[ctmc.initial_state])))
    return rows


def write_bench(rows: Iterable[BenchRow], fh) -> None:
    writer = csv.writer(fh, lineterminator="\n")
    writer.writerow(["queue_length", "states", "transitions", "build_time_s",
                     "check_time_s", "total_time_s", "violation_prob"])
    for r in rows:
        writer.writerow([r.queue_length, r.states, r.transitions, f"{r.build_time_s:.4f}",
                         f"{r.check_time_s:.4f}", f"{r.total_time_s:.4f}",
                         _fmt(r.violation_prob)])


# --- violation-probability sweeps --------------------------------------------


def scenario_snapshot(config: PipelineConfig, scenario: str) -> tuple[float, float]:
    """Whole-run average jump rates of a simulated scenario, intervals per minute.

    Balance values are taken in interval units without clamping to the queue
    range, as the EWMA estimator does, so drift beyond the range still counts.
    """
    scen = config.scenario(scenario)
    partition = config.partition
    joiner = BalanceJoiner(config.producer, config.consumer, scen.sample_period_min)
    history = []
    for event in generate(scen):
        balance = joiner.push(event)
        if balance is not None:
            history.append((balance.minutes, balance.measure / partition.width))
    if len(history) < 2:
        return 0.0, 0.0
    span = history[-1][0] - history[0][0]
    return windowed_rates(history, span)


def plot_data(partition: ValuePartition, snapshots: dict[str, tuple[float, float]],
              horizon: float = 30.0, label: str = VIOLATION_LABEL) -> list[tuple]:
    """``(scenario, state, value, lambda, mu, violation_prob)`` for every start state."""
    rows = []
    for name, (lam, mu) in snapshots.items():
        chain = birth_death_chain(QueueSpec(name, partition, lam, mu))
        probs = reach_probabilities(chain, label, horizon)
        for state, p in enumerate(probs):
            rows.append((name, state, partition.state_value(state), lam, mu, float(p)))
    return rows


def write_plot_data(rows: Iterable[tuple], fh) -> None:
    writer = csv.writer(fh, lineterminator="\n")
    writer.writerow(["scenario", "state", "value", "lambda_t", "mu_t", "violation_prob"])
    for name, state, value, lam, mu, p in rows:
        writer.writerow([name, state, _fmt(value), _fmt(lam), _fmt(mu), _fmt(p)])


def records_to_csv(records: Iterable[PredictionRecord], timings: bool = False) -> str:
    buf = io.StringIO()
    write_records(records, buf, timings)
    return buf.getvalue()
