"""Scenario file grammar: the happy path and every rejection class."""
from pathlib import Path

import pytest

from cloudmpc.scenario import (
    FORMAT_HEADER,
    Scenario,
    ScenarioError,
    TimelineEvent,
    load_scenario,
    parse_scenario,
)

SCENARIO_DIR = Path(__file__).resolve().parents[1] / "scenarios"


FULL_TEXT = """\
cloudmpc-scenario v1
# a comment line
name kitchen_sink
duration 42.5
seed 7
mode baseline
baseline_node worker-3
agent_max 4
tick_period 0.5
horizon 5
sampling_time 0.1
control_rate 20
load_factor 0.4
safe_radius 0.8
physics_dt 0.005
odom_rate 100
command_timeout 0.25
fallback_hover 2.0
takeoff_altitude 3.0
climb_rate 0.5
descent_rate 0.25
delay uplink 0.01 downlink 0.03 jitter_up 0.002 jitter_down 0.004 drop 0.1
load_model base 0.02 knee 0.6 cap 0.4
tau_max 0.2
rtt_window 10
strict_deadline on
estimator off
formation radius 5 period 30 altitude 4 spacing 1.5 row_gap 2.5
waypoint 1 10 3 0 2   # later knot first checks sorting
waypoint 1 2 -3 0 2
node big 64 131072
node tiny 1 512 unschedulable
at 0 join 0 1
at 0.5 takeoff
at 2 track
at 5 set-delay uplink 0.05 drop 0.2
at 6 kill-pod cnmpc-0-0
at 7 cordon big
at 8 safety-land
at 9 leave 1
"""


def test_parse_full_scenario():
    sc = parse_scenario(FULL_TEXT)
    assert sc.name == "kitchen_sink"
    assert sc.duration == 42.5
    assert sc.seed == 7
    assert sc.mode == "baseline"
    assert sc.baseline_node == "worker-3"
    assert sc.agent_max == 4
    assert sc.tick_period == 0.5
    assert sc.cnmpc_args.horizon_steps == 5
    assert sc.cnmpc_args.sampling_time == 0.1
    assert sc.cnmpc_args.control_rate == 20
    assert sc.cnmpc_args.load_factor == 0.4
    assert sc.safe_radius == 0.8
    assert sc.physics_dt == 0.005
    assert sc.fleet.odom_rate == 100
    assert sc.fleet.command_timeout == 0.25
    assert sc.fleet.fallback_hover == 2.0
    assert sc.fleet.takeoff_altitude == 3.0
    assert sc.fleet.climb_rate == 0.5
    assert sc.fleet.descent_rate == 0.25
    assert (sc.uplink, sc.downlink) == (0.01, 0.03)
    assert (sc.uplink_jitter, sc.downlink_jitter) == (0.002, 0.004)
    assert sc.drop_probability == 0.1
    assert sc.load_model.tau_p_base == 0.02
    assert sc.load_model.knee == 0.6
    assert sc.load_model.saturation_cap == 0.4
    assert sc.tau_max == 0.2
    assert sc.rtt_window == 10
    assert sc.strict_deadline is True
    assert sc.estimator is False
    assert sc.formation.radius == 5
    assert sc.formation.row_gap == 2.5
    # knots come back time-sorted no matter the file order
    assert sc.waypoints[1].points == ((2, -3, 0, 2), (10, 3, 0, 2))
    assert sc.nodes[0].cpu_capacity == 64
    assert sc.nodes[1].schedulable is False
    kinds = [e.kind for e in sc.timeline]
    assert kinds == [
        "join", "takeoff", "track", "set-delay", "kill-pod",
        "cordon", "safety-land", "leave",
    ]
    assert sc.timeline[0].args == (0, 1)
    # set-delay args are sorted key/value pairs
    assert sc.timeline[3].args == (("drop", 0.2), ("uplink", 0.05))
    assert sc.timeline[4].args == ("cnmpc-0-0",)
    assert sc.max_agent_id() == 1


def test_minimal_scenario_defaults():
    sc = parse_scenario(FORMAT_HEADER + "\nduration 5\n")
    assert sc.name == "unnamed"
    assert sc.mode == "scheduled"
    assert sc.agent_max == 8
    assert sc.estimator is True
    assert sc.timeline == []


def test_name_hint_used_when_absent():
    sc = parse_scenario(FORMAT_HEADER + "\nduration 5\n", name_hint="from_file")
    assert sc.name == "from_file"


@pytest.mark.parametrize("text, fragment", [
    ("", "line 1: header"),
    ("bogus header\n", "line 1: header"),
    (FORMAT_HEADER + "\nwobble 3\n", "line 2: wobble: unknown directive"),
    (FORMAT_HEADER + "\nduration\n", "line 2: duration: expected exactly one value"),
    (FORMAT_HEADER + "\nduration abc\n", "line 2: duration: expected a number"),
    (FORMAT_HEADER + "\nseed 1.5\n", "line 2: seed: expected an integer"),
    (FORMAT_HEADER + "\nstrict_deadline maybe\n", "line 2: strict_deadline: expected on or off"),
    (FORMAT_HEADER + "\ndelay uplink\n", "line 2: delay: expected key value pairs"),
    (FORMAT_HEADER + "\ndelay sideways 0.1\n", "unknown delay field 'sideways'"),
    (FORMAT_HEADER + "\nload_model slope 2\n", "unknown load_model field 'slope'"),
    (FORMAT_HEADER + "\nformation wobble 2\n", "unknown formation field 'wobble'"),
    (FORMAT_HEADER + "\nwaypoint 0 1 2 3\n", "expected: waypoint"),
    (FORMAT_HEADER + "\nnode solo 4\n", "expected: node"),
    (FORMAT_HEADER + "\nnode solo 4 512 tilted\n", "unexpected token 'tilted'"),
    (FORMAT_HEADER + "\nat 1\n", "expected: at <t> <event>"),
    (FORMAT_HEADER + "\nat 1 explode\n", "unknown event 'explode'"),
    (FORMAT_HEADER + "\nat 1 join\n", "needs at least one agent id"),
    (FORMAT_HEADER + "\nat 1 kill-pod\n", "needs exactly one name"),
    (FORMAT_HEADER + "\nat 1 takeoff now\n", "takes no arguments"),
    (FORMAT_HEADER + "\nat 1 set-delay warp 9\n", "unknown delay field 'warp'"),
    (FORMAT_HEADER + "\nat 1 set-delay drop 1.5\n", "drop must be within [0, 1]"),
    (FORMAT_HEADER + "\nduration 5\nmode turbo\n", "mode must be scheduled or baseline"),
    (FORMAT_HEADER + "\nduration 5\nat 2 takeoff\nat 1 takeoff\n", "sorted by time"),
    (FORMAT_HEADER + "\nduration 5\nat 5 takeoff\n", "must exceed last event time"),
    (FORMAT_HEADER + "\nduration -1\n", "duration must be positive"),
    (FORMAT_HEADER + "\nduration 5\nphysics_dt 0\n", "must be positive"),
])
def test_parse_errors(text, fragment):
    with pytest.raises(ScenarioError) as err:
        parse_scenario(text)
    assert fragment in str(err.value)


def test_validate_on_hand_built_scenario():
    sc = Scenario(duration=1.0, timeline=[TimelineEvent(at=2.0, kind="takeoff")])
    with pytest.raises(ScenarioError, match="must exceed last event"):
        sc.validate()


def test_load_scenario_missing_file(tmp_path):
    with pytest.raises(ScenarioError, match="cannot read scenario"):
        load_scenario(tmp_path / "absent.scn")


def test_load_scenario_uses_stem_as_name(tmp_path):
    path = tmp_path / "quick_test.scn"
    path.write_text(FORMAT_HEADER + "\nduration 3\n")
    assert load_scenario(path).name == "quick_test"


def test_bundled_scenarios_parse():
    paths = sorted(SCENARIO_DIR.glob("*.scn"))
    assert len(paths) >= 8
    for path in paths:
        sc = load_scenario(path)
        assert sc.duration > 0
        assert sc.name == path.stem
