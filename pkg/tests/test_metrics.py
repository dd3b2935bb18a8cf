import json

import pytest
from hypothesis import given, settings, strategies as st

from fabflow.errors import (
    DivisionByZeroBaseline,
    DivisionByZeroReference,
    MalformedReport,
    MetricsError,
    MissingReports,
)
from fabflow.metrics import (
    FlowErrorRecord,
    RunMetrics,
    compute_delta,
    compute_ratio,
    parse_run_artifacts,
    read_metrics_json,
    write_metrics_json,
)
from tests.conftest import BENCHMARK_ROWS


def mk(name="d", area=1000.0, delay=5000.0, power=50.0, **kw):
    return RunMetrics(design_name=name, area_um2=area,
                      critical_path_delay_ps=delay, power_uw=power, **kw)


# ---------------------------------------------------------------------------
# parsing

def test_parse_canonical_metrics_json(tmp_path):
    doc = {"design_name": "alu8", "area_um2": 7229, "critical_path_delay_ps": 15284,
           "power_uw": 77, "drc_violation_count": 0, "lvs_error_count": 0}
    (tmp_path / "metrics.json").write_text(json.dumps(doc))
    metrics, errors = parse_run_artifacts(tmp_path)
    assert metrics.area_um2 == 7229
    assert metrics.critical_path_delay_ps == 15284
    assert metrics.power_uw == 77
    assert errors == []


def test_empty_directory_raises_missing_reports(tmp_path):
    with pytest.raises(MissingReports):
        parse_run_artifacts(tmp_path)


def test_drc_report_and_routing_log(tmp_path):
    (tmp_path / "drc.rpt").write_text(
        "VIOLATION: metal spacing at (1,2)\n"
        "VIOLATION: metal spacing at (3,4)\n"
        "VIOLATION: min width at (5,6)\n")
    (tmp_path / "routing.log").write_text(
        "info: starting detailed routing\n"
        "[ERROR] GRT-0116: routing congestion too high\n")
    metrics, errors = parse_run_artifacts(tmp_path)
    assert metrics.drc_violation_count == 3
    assert len(errors) == 1
    assert errors[0].stage == "routing"
    assert errors[0].code == "GRT-0116"


def test_drc_total_summary_wins(tmp_path):
    (tmp_path / "drc.rpt").write_text("Total violations: 7\nVIOLATION: x\n")
    metrics, _ = parse_run_artifacts(tmp_path)
    assert metrics.drc_violation_count == 7


def test_metrics_csv_adapter(tmp_path):
    (tmp_path / "metrics.csv").write_text(
        "design,CellArea_um^2,Power_uW,OpenDP_Util\n"
        "spm,4321.5,88.25,61.2\n")
    metrics, _ = parse_run_artifacts(tmp_path)
    assert metrics.design_name == "spm"
    assert metrics.area_um2 == pytest.approx(4321.5)
    assert metrics.power_uw == pytest.approx(88.25)
    assert metrics.placement_utilization_pct == pytest.approx(61.2)


def test_sta_report_setup_and_hold(tmp_path):
    (tmp_path / "sta.rpt").write_text(
        "Path Type: max\n"
        "  -210.00  slack (VIOLATED)\n"
        "Path Type: min\n"
        "  55.00  slack (MET)\n")
    metrics, _ = parse_run_artifacts(tmp_path)
    assert metrics.worst_setup_slack_ps == -210.0
    assert metrics.worst_hold_slack_ps == 55.0


def test_delay_derived_from_clock_and_slack(tmp_path):
    doc = {"design_name": "d", "clock_period_ps": 10000.0,
           "worst_setup_slack_ps": -210.0}
    (tmp_path / "metrics.json").write_text(json.dumps(doc))
    metrics, _ = parse_run_artifacts(tmp_path)
    assert metrics.critical_path_delay_ps == pytest.approx(10210.0)


def test_die_only_area_gets_die_provenance(tmp_path):
    doc = {"design_name": "d", "die_width_um": 100.0, "die_height_um": 50.0}
    (tmp_path / "metrics.json").write_text(json.dumps(doc))
    metrics, _ = parse_run_artifacts(tmp_path)
    assert metrics.area_um2 == pytest.approx(5000.0)
    assert metrics.area_source == "die"


def test_malformed_json_carries_path_and_offset(tmp_path):
    (tmp_path / "metrics.json").write_text('{"design_name": "x", ???}')
    with pytest.raises(MalformedReport) as exc:
        parse_run_artifacts(tmp_path)
    assert exc.value.path.endswith("metrics.json")
    assert exc.value.offset >= 0


def test_unrecognized_files_are_ignored(tmp_path):
    (tmp_path / "metrics.json").write_text(json.dumps({"design_name": "d"}))
    (tmp_path / "layout.gds").write_bytes(b"\x00\x01\x02")
    (tmp_path / "notes.txt").write_text("whatever")
    metrics, _ = parse_run_artifacts(tmp_path)
    assert metrics.design_name == "d"


@given(data=st.binary(min_size=0, max_size=200))
@settings(max_examples=60, deadline=None)
def test_fuzzed_metrics_file_never_crashes(data, tmp_path_factory):
    tmp = tmp_path_factory.mktemp("fuzz")
    (tmp / "metrics.json").write_bytes(data)
    try:
        metrics, errors = parse_run_artifacts(tmp)
        assert isinstance(metrics, RunMetrics)
    except MetricsError:
        pass  # MalformedReport / MissingReports are the only allowed failures


# ---------------------------------------------------------------------------
# round trip

metric_values = st.floats(min_value=0.001, max_value=1e9, allow_nan=False)


@given(area=metric_values, delay=metric_values, power=metric_values,
       drc=st.integers(0, 100), util=st.floats(0, 100))
@settings(max_examples=40, deadline=None)
def test_round_trip_canonical_json(tmp_path_factory, area, delay, power, drc, util):
    tmp = tmp_path_factory.mktemp("rt")
    metrics = RunMetrics(design_name="d", area_um2=area,
                         critical_path_delay_ps=delay, power_uw=power,
                         drc_violation_count=drc,
                         placement_utilization_pct=util)
    path = tmp / "metrics.json"
    write_metrics_json(metrics, path)
    assert read_metrics_json(path) == metrics


# ---------------------------------------------------------------------------
# invariants on construction

def test_rejects_nonpositive_area():
    with pytest.raises(ValueError):
        RunMetrics(design_name="d", area_um2=0.0)


def test_rejects_out_of_range_utilization():
    with pytest.raises(ValueError):
        RunMetrics(design_name="d", placement_utilization_pct=101.0)


def test_rejects_negative_counts():
    with pytest.raises(ValueError):
        RunMetrics(design_name="d", drc_violation_count=-1)


def test_flow_error_record_stage_enum():
    with pytest.raises(ValueError):
        FlowErrorRecord(stage="brewing", code="", message="", log_path="")


# ---------------------------------------------------------------------------
# deltas and ratios

def test_delta_example_area_reduction():
    delta = compute_delta(mk(area=7229), mk(area=4650))
    assert delta.area_delta_pct == pytest.approx(-35.68, abs=0.01)


def test_delta_large_multiplier_row():
    delta = compute_delta(mk(area=61317), mk(area=27771))
    assert delta.area_delta_pct == pytest.approx(-54.71, abs=0.01)


def test_delta_identity_is_zero():
    m = mk()
    delta = compute_delta(m, m)
    assert delta.area_delta_pct == 0
    assert delta.delay_delta_pct == 0
    assert delta.power_delta_pct == 0


def test_delta_zero_baseline_raises():
    bad = RunMetrics(design_name="d", area_um2=1.0,
                     critical_path_delay_ps=1.0, power_uw=0.0)
    with pytest.raises(DivisionByZeroBaseline):
        compute_delta(bad, mk())


def test_ratio_identity_is_one():
    m = mk()
    ratio = compute_ratio(m, m)
    assert ratio.area_ratio == 1
    assert ratio.delay_ratio == 1
    assert ratio.power_ratio == 1


def test_ratio_example_division():
    ratio = compute_ratio(mk(area=27771), mk(area=61317))
    assert ratio.area_ratio == pytest.approx(0.4529, abs=0.0001)


def test_ratio_zero_reference_raises():
    zero = RunMetrics(design_name="d", area_um2=1.0,
                      critical_path_delay_ps=1.0, power_uw=0.0)
    with pytest.raises(DivisionByZeroReference):
        compute_ratio(mk(), zero)


def test_ratio_with_absent_fields_passes_none_through():
    a = RunMetrics(design_name="a", area_um2=100.0)
    b = RunMetrics(design_name="b", area_um2=200.0)
    ratio = compute_ratio(a, b)
    assert ratio.area_ratio == pytest.approx(0.5)
    assert ratio.delay_ratio is None
    assert ratio.power_ratio is None


def test_die_area_ratio_quarter_reduction():
    small = RunMetrics(design_name="new", area_um2=167.34 * 165.96,
                       die_width_um=167.34, die_height_um=165.96,
                       area_source="die")
    big = RunMetrics(design_name="ref", area_um2=192.89 * 193.665,
                     die_width_um=192.89, die_height_um=193.665,
                     area_source="die")
    ratio = compute_ratio(small, big)
    assert (1 - ratio.area_ratio) * 100 == pytest.approx(25.7, abs=0.1)


@given(base=metric_values, opt=metric_values)
@settings(max_examples=100, deadline=None)
def test_delta_ratio_identity(base, opt):
    delta = compute_delta(mk(area=base), mk(area=opt)).area_delta_pct
    ratio = compute_ratio(mk(area=opt), mk(area=base)).area_ratio
    assert delta == pytest.approx((ratio - 1) * 100, abs=1e-9, rel=1e-9)


@pytest.mark.parametrize("name,baseline,optimized,printed", BENCHMARK_ROWS)
def test_benchmark_rows_match_printed_deltas(name, baseline, optimized, printed):
    delta = compute_delta(mk(name, *baseline), mk(name, *optimized))
    assert delta.area_delta_pct == pytest.approx(printed[0], abs=0.01)
    assert delta.delay_delta_pct == pytest.approx(printed[1], abs=0.01)
    assert delta.power_delta_pct == pytest.approx(printed[2], abs=0.01)
