"""Metrics math, report emission, scenario validation and small runs."""

import json
import math
import random

import pytest

from cvedge.harness import (
    MetricsReport,
    Scenario,
    ScenarioError,
    emit_report,
    quartiles,
    render_csv,
    run_scenario,
    summarize,
    throughput_mbps,
)
from cvedge.harness.metrics import CSV_COLUMNS, LatencySample, MetricsError


def brute_force_quartile(values, p):
    """Order-statistics oracle: position (n-1)p with linear interpolation,
    computed directly from the definition."""
    s = sorted(values)
    pos = (len(s) - 1) * p
    lo = int(math.floor(pos))
    hi = min(lo + 1, len(s) - 1)
    return s[lo] + (pos - lo) * (s[hi] - s[lo])


class TestSummarize:
    def test_five_values(self):
        stats = summarize([1, 2, 3, 4, 5])
        assert (stats.p25_ms, stats.p50_ms, stats.p75_ms) == (2, 3, 4)
        assert (stats.min_ms, stats.avg_ms, stats.max_ms) == (1, 3, 5)

    def test_singleton(self):
        stats = summarize([7.5])
        assert (
            stats.min_ms
            == stats.avg_ms
            == stats.max_ms
            == stats.p25_ms
            == stats.p50_ms
            == stats.p75_ms
            == 7.5
        )

    def test_two_values(self):
        stats = summarize([5, 1])
        assert stats.min_ms == 1 and stats.max_ms == 5 and stats.avg_ms == 3

    def test_against_oracle_on_random_lists(self):
        rng = random.Random(33)
        for _ in range(50):
            values = [rng.uniform(0, 500) for _ in range(rng.randint(1, 40))]
            qs = quartiles(values)
            for name, p in (("p25", 0.25), ("p50", 0.5), ("p75", 0.75)):
                assert qs[name] == pytest.approx(brute_force_quartile(values, p))

    def test_ordering_invariant(self):
        rng = random.Random(4)
        for _ in range(20):
            values = [rng.uniform(0, 100) for _ in range(rng.randint(1, 30))]
            s = summarize(values)
            assert s.min_ms <= s.p25_ms <= s.p50_ms <= s.p75_ms <= s.max_ms

    def test_empty_rejected(self):
        with pytest.raises(MetricsError):
            summarize([])


class TestThroughput:
    def test_definition(self):
        assert throughput_mbps(125_000, 1.0) == 1.0  # 10^6 bits in one second

    def test_zero_messages(self):
        assert throughput_mbps(0, 10.0) == 0.0

    def test_4000_bsms_of_300_bytes_over_200s(self):
        # arithmetic oracle: 4000 * 300 * 8 / (200 * 1e6)
        assert throughput_mbps(4000 * 300, 200.0) == pytest.approx(0.048)

    def test_zero_duration_rejected(self):
        with pytest.raises(MetricsError):
            throughput_mbps(100, 0.0)


class TestLatencySample:
    def test_latency(self):
        assert LatencySample("m", "delivery", 100, 130).latency_ms == 30

    def test_clock_monotonic(self):
        with pytest.raises(MetricsError):
            LatencySample("m", "delivery", 100, 90)


class TestReports:
    def run_once(self, tmp_path, sub):
        s = Scenario(name="rep", duration_s=3, n_mobile=2, n_fixed=1, seed=21)
        return run_scenario(s, out_dir=tmp_path / sub)

    def test_rerun_byte_identical(self, tmp_path):
        self.run_once(tmp_path, "a")
        self.run_once(tmp_path, "b")
        for name in ("report.csv", "report.json"):
            assert (tmp_path / "a" / name).read_bytes() == (tmp_path / "b" / name).read_bytes()

    def test_json_round_trip(self, tmp_path):
        result = self.run_once(tmp_path, "a")
        loaded = MetricsReport.from_dict(
            json.loads((tmp_path / "a" / "report.json").read_text())
        )
        assert loaded.to_dict() == result.report.to_dict()

    def test_csv_header_and_columns(self, tmp_path):
        result = self.run_once(tmp_path, "a")
        lines = (tmp_path / "a" / "report.csv").read_text().splitlines()
        assert lines[0] == ",".join(CSV_COLUMNS)
        assert len(lines[1].split(",")) == len(CSV_COLUMNS)

    def test_multi_report_rows(self):
        reports = []
        for seed in range(8):
            s = Scenario(name=f"row{seed}", duration_s=1, n_mobile=1, n_fixed=1, seed=seed)
            reports.append(run_scenario(s).report)
        text = render_csv(reports)
        assert len(text.splitlines()) == 1 + 8  # header + one row per scenario

    def test_unknown_format(self, tmp_path):
        with pytest.raises(MetricsError):
            emit_report([], "xml", tmp_path / "r.xml")


class TestScenarioValidation:
    def test_zero_duration_empty_report(self):
        s = Scenario(name="zero", duration_s=0, n_mobile=2, n_fixed=1, seed=1)
        result = run_scenario(s)
        assert result.report.classes["delivery"].sample_count == 0
        assert result.report.throughput_mbps == 0.0

    def test_multiple_system_edges_rejected(self):
        s = Scenario(name="bad", duration_s=1, n_mobile=1, n_fixed=1, n_system=2)
        with pytest.raises(ScenarioError):
            s.validate()

    def test_mobiles_require_fixed(self):
        s = Scenario(name="bad", duration_s=1, n_mobile=1, n_fixed=0)
        with pytest.raises(ScenarioError):
            s.validate()

    def test_missing_trace_file(self):
        s = Scenario(
            name="bad", duration_s=1, n_mobile=1, n_fixed=1, trace={"kind": "file", "path": "/nope.csv"}
        )
        with pytest.raises(ScenarioError, match="trace file"):
            s.validate()

    def test_from_dict_round_trip(self):
        s = Scenario(name="cfg", duration_s=2, n_mobile=3, n_fixed=2, seed=5)
        again = Scenario.from_dict(s.to_dict())
        assert again.to_dict() == s.to_dict()

    def test_insufficient_trace_vehicles(self):
        from cvedge.trace import TRACE_HEADER

        text = TRACE_HEADER + "\n0.0,v1,0,0,1,0\n"
        s = Scenario(
            name="short",
            duration_s=1,
            n_mobile=3,
            n_fixed=1,
            trace={"kind": "csv_text", "text": text},
        )
        with pytest.raises(ScenarioError, match="vehicles"):
            run_scenario(s)

    def test_bad_clock(self):
        s = Scenario(name="bad", duration_s=1, n_mobile=1, n_fixed=1, clock="lunar")
        with pytest.raises(ScenarioError):
            s.validate()


class TestConsoleEvents:
    def test_quarantine_events_match_store_exactly(self):
        from cvedge.security import FlowPolicy

        # raw topics deliberately have no allow-rule: every BSM the sub-app
        # polls is denied, several per poll, and each must surface as an event
        s = Scenario(
            name="deny-all-raw",
            duration_s=3,
            n_mobile=2,
            n_fixed=1,
            seed=19,
            policies=[FlowPolicy("traffic.agg.*", "app.sub2.*")],
        )
        result = run_scenario(s)
        streamed = [e for e in result.console_events if e.get("type") == "quarantine_record"]
        assert len(streamed) == result.security.quarantine.count()
        assert len(streamed) > 10
        assert result.report.classes["delivery"].sample_count > 0  # agg records still flow

    def test_broker_retention_wired_through_scenario(self):
        # tiny retention with a slow poll drops the oldest entries; the drop
        # counter keeps conservation checks honest
        s = Scenario(
            name="retention",
            duration_s=3,
            n_mobile=2,
            n_fixed=1,
            seed=23,
            broker_retention=5,
            poll_interval_ms=2500,
        )
        result = run_scenario(s)
        assert result.engine.broker.dropped_by_retention() > 0
        delivered = result.report.classes["delivery"].sample_count
        assert delivered > 0

    def test_final_summary_matches_report(self):
        s = Scenario(name="final", duration_s=2, n_mobile=1, n_fixed=1, seed=3)
        result = run_scenario(s)
        final = [e for e in result.console_events if e.get("type") == "metrics"][-1]
        assert final["final"] is True
        assert final["warnings"] == result.report.warnings_emitted
        assert final["quarantined"] == result.report.quarantined
        assert final["throughput_mbps"] == pytest.approx(result.report.throughput_mbps)


class TestWallClock:
    def test_wall_mode_produces_same_counters(self):
        common = dict(name="wall", duration_s=1, n_mobile=1, n_fixed=1, seed=13)
        virtual = run_scenario(Scenario(clock="virtual", **common))
        wall = run_scenario(Scenario(clock="wall", wall_speedup=50.0, **common))
        assert (
            wall.report.classes["delivery"].sample_count
            == virtual.report.classes["delivery"].sample_count
        )

    def test_stop_event_interrupts(self):
        import threading

        stop = threading.Event()
        stop.set()
        s = Scenario(name="halt", duration_s=5, n_mobile=1, n_fixed=1, seed=1)
        result = run_scenario(s, stop_event=stop)
        assert result.stopped_early is True
