import csv
import dataclasses
import io
import math
from datetime import datetime, timedelta

import pytest

from qospredict.events import Event, EventKind
from qospredict.pipeline import (
    ConfigError,
    PipelineConfig,
    Predictor,
    bench,
    default_qcs,
    parse_config,
    plot_data,
    records_to_csv,
    run_pipeline,
    scenario_snapshot,
)
from qospredict.qc import format_qc, parse_qc
from qospredict.scenarios import ScenarioConfig, generate

from oracles import birth_death_transitions, expm_reach

T0 = datetime(2014, 1, 1)


def balances(values, period=15.0):
    return [Event(T0 + timedelta(minutes=period * k), "ED", EventKind.BALANCE_INDICATOR, v)
            for k, v in enumerate(values)]


class TestConfig:
    def test_defaults(self):
        assert parse_config("") == PipelineConfig()

    def test_values_and_comments(self):
        cfg = parse_config("alpha = 0.5  # smoother\nresize = yes\nn_intervals=20\n")
        assert (cfg.alpha, cfg.resize, cfg.n_intervals) == (0.5, True, 20)

    @pytest.mark.parametrize("text", ["bogus = 1", "alpha = x", "alpha = 0",
                                      "lo_cri = 0", "resize = maybe", "estimator = mle",
                                      "horizon = -1", "no equals sign"])
    def test_errors(self, text):
        with pytest.raises(ConfigError):
            parse_config(text)

    def test_default_qc(self):
        (qc_id, ast), = default_qcs(PipelineConfig())
        assert qc_id == "alarm"
        assert format_qc(ast) == 'eval(P=? [ F<=30 "violState" ]) <= 0.05 within 30m'

    def test_shipped_configs_parse(self):
        from pathlib import Path
        root = Path(__file__).resolve().parents[1] / "configs"
        shipped = parse_config((root / "default.conf").read_text())
        assert repr(shipped) == repr(PipelineConfig())
        parse_config((root / "sweep.conf").read_text())


def scenario_records(name, seed, **overrides):
    cfg = dataclasses.replace(PipelineConfig(), **overrides)
    events = generate(ScenarioConfig(name, seed=seed))
    return list(run_pipeline(cfg, events, default_qcs(cfg)))


class TestLoop:
    def test_empty_stream(self):
        assert records_to_csv(run_pipeline(PipelineConfig(), [])).splitlines() == [
            "timestamp,queue_state,n_intervals,value,lambda_t,mu_t,violation_prob,"
            "qc_verdicts,alerts,warning"]

    def test_one_record_per_period(self):
        recs = scenario_records("A", 0)
        assert len(recs) == 96
        assert recs[0].timestamp == "2014-01-01T00:00"

    @pytest.mark.parametrize("seed", [0, 1, 2])
    def test_balanced_scenario_no_alert(self, seed):
        assert not any(r.alerts for r in scenario_records("A", seed))

    def test_overload_alerts_and_matches_oracle(self):
        recs = scenario_records("C", 3)
        assert any(r.alerts for r in recs)
        cfg = PipelineConfig()
        n = cfg.partition.n_states
        violating = {0, n - 1}
        for r in recs[1::7]:
            trans = [t for t in birth_death_transitions(n, r.lambda_t, r.mu_t) if t[2] > 0]
            expected = expm_reach(n, trans, violating, r.queue_state, cfg.horizon)
            assert r.violation_prob == pytest.approx(expected, abs=1e-6)

    def test_first_period_has_zero_rates(self):
        rec = scenario_records("C", 3)[0]
        assert (rec.lambda_t, rec.mu_t, rec.violation_prob) == (0.0, 0.0, 0.0)

    def test_check_error_does_not_stop_loop(self):
        cfg = PipelineConfig(violation_label="nope")
        recs = list(run_pipeline(cfg, balances([0, 20, 40, 20])))
        assert len(recs) == 4
        assert all(r.warning.startswith("check-error") for r in recs[1:])
        assert all(math.isnan(r.violation_prob) for r in recs[1:])

    def test_overrun_warning(self):
        cfg = PipelineConfig(sample_period=1e-9)
        recs = list(run_pipeline(cfg, balances([0, 20, 40], period=1.0)))
        assert recs[-1].warning == "check-time-exceeded"

    def test_qc_on_kpi(self):
        qcs = [("floor", parse_qc("balance >= -200 along 30m"))]
        recs = list(run_pipeline(PipelineConfig(), balances([0, -100, -250, -300]), qcs))
        assert [r.qc_verdicts[0][1] for r in recs] == ["Pending", "Satisfied", "Violated",
                                                      "Violated"]
        assert [bool(r.alerts) for r in recs] == [False, False, True, False]

    def test_resize_changes_queue_length(self):
        cfg = PipelineConfig(resize=True)
        recs = list(run_pipeline(cfg, balances([0, 350, 360])))
        assert recs[1].n_intervals == 20

    def test_windowed_estimator(self):
        cfg = PipelineConfig(estimator="windowed", window_w=60)
        recs = list(run_pipeline(cfg, balances([0, 40, 60])))
        assert recs[-1].lambda_t == pytest.approx(3 / 60)

    def test_model_reused_when_rates_unchanged(self):
        # alpha = 1 on a steady rise gives the same rates every period
        p = Predictor(PipelineConfig(alpha=1.0), [])
        recs = [p.step(e) for e in balances([0, 20, 40, 60, 80])]
        first = p.model
        assert recs[-1].build_time_ms == 0.0
        p.step(balances([0, 20, 40, 60, 80, 100])[-1])
        assert p.model is first

    def test_underproduction_logged(self, caplog):
        cfg = PipelineConfig(underproduction_threshold=100.0, underproduction_window=15)
        events = [Event(T0 + timedelta(minutes=m), "EP", EventKind.SMART_METER_MEASURE, 90.0)
                  for m in (0, 15, 30)]
        p = Predictor(cfg)
        for e in events:
            p.push(e)
        assert [e.extra for e in p.derived] == ["underproduction"]
        assert "critical value" in caplog.text

    def test_deterministic(self):
        cfg = PipelineConfig()
        events = generate(ScenarioConfig("C", seed=5))
        a = records_to_csv(run_pipeline(cfg, events, default_qcs(cfg)))
        b = records_to_csv(run_pipeline(cfg, events, default_qcs(cfg)))
        assert a == b


class TestBench:
    def test_small_lengths(self):
        rows = bench([1, 2])
        assert [(r.states, r.transitions) for r in rows] == [(8, 24), (27, 108)]
        for r in rows:
            assert 0.0 <= r.violation_prob <= 1.0

    def test_bad_length(self):
        with pytest.raises(ValueError):
            bench([0])


class TestPlotData:
    def test_rows(self):
        p = PipelineConfig(n_intervals=2).partition
        rows = plot_data(p, {"A": (0.1, 0.1)}, 30.0)
        assert [r[1] for r in rows] == [0, 1, 2]
        assert rows[0][5] == pytest.approx(1.0) and rows[2][5] == pytest.approx(1.0)
        assert 0 < rows[1][5] < 1

    def test_snapshot_orders_scenarios(self):
        cfg = PipelineConfig(scenario_period=1, scenario_drift=10, seed=1)
        snaps = {s: scenario_snapshot(cfg, s) for s in "ABC"}
        rows = plot_data(cfg.partition, snaps)
        low = {s: min(r[5] for r in rows if r[0] == s) for s in "ABC"}
        assert low["C"] > max(low["A"], low["B"])

    def test_csv_round_trip(self):
        from qospredict.pipeline import write_plot_data
        buf = io.StringIO()
        write_plot_data(plot_data(PipelineConfig(n_intervals=4).partition,
                                  {"B": (0.2, 0.3)}), buf)
        rows = list(csv.DictReader(io.StringIO(buf.getvalue())))
        assert len(rows) == 5 and rows[0]["scenario"] == "B"
