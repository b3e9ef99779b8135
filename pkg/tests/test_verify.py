"""Property report: each invariant suite, plus the end-to-end report."""
import math

from cloudmpc.metrics import METRICS_HEADER
from cloudmpc.scenario import Scenario, TimelineEvent, parse_scenario
from cloudmpc.simulation import SimulationResult
from cloudmpc.verify import (
    COLLISION_TOLERANCE,
    PropertyResult,
    VerifyReport,
    codec_property,
    collision_property,
    fallback_property,
    gradient_property,
    metrics_schema_property,
    partition_property,
    resource_formula_property,
    verify_scenario,
)


def make_result(**overrides):
    base = dict(
        scenario_name="stub", metrics_text="", actions_text="", monitors=[],
        rows=[], columns=[], migration_events=[], violation_times=[],
        fallback_times=[], min_pair_distance=math.inf, solve_count=0,
        solve_wall_total=0.0,
    )
    base.update(overrides)
    return SimulationResult(**base)


def test_property_result_line():
    assert PropertyResult("x", True, "fine").line() == "property x PASS fine"
    assert PropertyResult("x", False, "broke").line() == "property x FAIL broke"


def test_partition_property_passes():
    res = partition_property()
    assert res.passed, res.detail
    assert "3 anchors" in res.detail


def test_resource_formula_property_passes():
    res = resource_formula_property()
    assert res.passed, res.detail


def test_codec_property_passes():
    res = codec_property(roundtrips=300, hostile=2000)
    assert res.passed, res.detail


def test_gradient_property_passes():
    res = gradient_property(instances=2)
    assert res.passed, res.detail


def test_metrics_schema_property():
    good = METRICS_HEADER + "\ntime,fallbacks\n0.0,0\n"
    assert metrics_schema_property(good).passed
    ragged = METRICS_HEADER + "\ntime,fallbacks\n0.0,0,9\n"
    res = metrics_schema_property(ragged)
    assert not res.passed
    assert "expected 2 columns" in res.detail
    empty = METRICS_HEADER + "\ntime,fallbacks\n"
    res = metrics_schema_property(empty)
    assert not res.passed
    assert res.detail == "no metric rows"
    assert not metrics_schema_property("garbage\n").passed


def test_collision_property_floor():
    sc = Scenario(safe_radius=0.5)
    assert collision_property(sc, make_result()).passed  # no pairs at all
    ok = make_result(min_pair_distance=COLLISION_TOLERANCE * 0.5)
    assert collision_property(sc, ok).passed  # boundary counts as clear
    bad = make_result(min_pair_distance=0.44)
    res = collision_property(sc, bad)
    assert not res.passed
    assert "0.4400" in res.detail


def test_fallback_property_justifications():
    quiet = Scenario(duration=10.0)
    assert fallback_property(quiet, make_result()).detail == "no fallbacks"

    # a fallback out of nowhere is a defect
    res = fallback_property(quiet, make_result(fallback_times=[(3.0, 0)]))
    assert not res.passed
    assert "no violation, loss, or directive" in res.detail

    # ... unless a deadline violation preceded it
    justified = make_result(
        fallback_times=[(3.0, 0)], violation_times=[(2.0, 0)],
    )
    assert fallback_property(quiet, justified).passed

    # total frame loss while flying must produce fallbacks
    lossy = Scenario(
        duration=10.0,
        timeline=[TimelineEvent(4.0, "set-delay", (("drop", 1.0),))],
    )
    flying_rows = [{"time": 3.0, "err_agent_0": 0.05}]
    silent = make_result(rows=flying_rows, columns=["time", "err_agent_0"])
    res = fallback_property(lossy, silent)
    assert not res.passed
    assert "triggered no fallback" in res.detail

    reacted = make_result(
        rows=flying_rows, columns=["time", "err_agent_0"],
        fallback_times=[(4.6, 0)],
    )
    res = fallback_property(lossy, reacted)
    assert res.passed
    assert "triggered as expected" in res.detail


def test_verify_report_render():
    report = VerifyReport(scenario_name="demo")
    report.results.append(PropertyResult("a", True, "fine"))
    report.results.append(PropertyResult("b", False, "broke"))
    assert not report.ok
    text = report.render()
    lines = text.splitlines()
    assert lines[0] == "# cloudmpc-verify v1 scenario demo"
    assert lines[1] == "property a PASS fine"
    assert lines[2] == "property b FAIL broke"
    assert lines[-1] == "# verdict failed"


def test_verify_scenario_end_to_end():
    sc = parse_scenario("""\
cloudmpc-scenario v1
name verify_unit
duration 6
seed 2
control_rate 10
at 0 join 0 1
at 0.2 takeoff
at 2 track
""")
    report = verify_scenario(sc)
    names = [r.name for r in report.results]
    assert names == [
        "partition-oracle", "resource-formula", "codec-fuzz",
        "gradient-spot-check", "request-conservation", "usage-within-limits",
        "healing-liveness", "collision-minima", "metrics-schema",
        "fallback-consistency",
    ]
    assert report.ok, report.render()
    assert report.render().splitlines()[-1] == "# verdict ok"
