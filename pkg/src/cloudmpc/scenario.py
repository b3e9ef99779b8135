"""Scenario files: plain-text experiment descriptions.

Format (one directive per line, `#` comments, blank lines ignored):

    cloudmpc-scenario v1
    name head_on
    duration 30
    seed 1
    mode scheduled
    delay uplink 0 downlink 0
    waypoint 0 6 -3 0 2
    waypoint 0 26 3 0 2
    at 0 join 0 1
    at 0.5 takeoff
    at 6 track

Unknown keys, malformed values, unsorted events, or a duration not past the
last event are parse errors reporting the offending line and field. A
Scenario can equally be built in code; the parser only fills the dataclass.
"""
from __future__ import annotations

from dataclasses import dataclass, field, replace
from pathlib import Path

from .cluster import LoadModel, NodeSpec
from .fleet import FleetConfig
from .scheduling import CnmpcArgs, FormationCircle, ResourceModel, WaypointReference

FORMAT_HEADER = "cloudmpc-scenario v1"


class ScenarioError(ValueError):
    """Parse failure with line/field context in the message."""


@dataclass(frozen=True)
class TimelineEvent:
    at: float
    kind: str
    args: tuple = ()


@dataclass
class Scenario:
    name: str = "unnamed"
    duration: float = 10.0
    seed: int = 0
    mode: str = "scheduled"
    baseline_node: str | None = "worker-2"
    agent_max: int = 8
    tick_period: float = 1.0
    cnmpc_args: CnmpcArgs = field(default_factory=CnmpcArgs)
    safe_radius: float = 0.5
    physics_dt: float = 0.01
    fleet: FleetConfig = field(default_factory=FleetConfig)
    uplink: float = 0.02
    downlink: float = 0.02
    uplink_jitter: float = 0.0
    downlink_jitter: float = 0.0
    drop_probability: float = 0.0
    load_model: LoadModel = field(default_factory=LoadModel)
    resource_model: ResourceModel = field(default_factory=ResourceModel)
    tau_max: float = 0.1
    rtt_window: int = 50
    strict_deadline: bool = False
    estimator: bool = True
    formation: FormationCircle = field(default_factory=FormationCircle)
    waypoints: dict[int, WaypointReference] = field(default_factory=dict)
    nodes: list[NodeSpec] = field(default_factory=list)
    timeline: list[TimelineEvent] = field(default_factory=list)

    def validate(self) -> None:
        if self.mode not in ("scheduled", "baseline"):
            raise ScenarioError(f"mode must be scheduled or baseline, got {self.mode!r}")
        if self.duration <= 0:
            raise ScenarioError("duration must be positive")
        times = [e.at for e in self.timeline]
        if times != sorted(times):
            raise ScenarioError("timeline events must be sorted by time")
        if times and self.duration <= times[-1]:
            raise ScenarioError(
                f"duration {self.duration} must exceed last event time {times[-1]}"
            )
        if self.physics_dt <= 0 or self.tick_period <= 0:
            raise ScenarioError("physics_dt and tick_period must be positive")

    def max_agent_id(self) -> int:
        top = -1
        for ev in self.timeline:
            if ev.kind == "join":
                top = max(top, *ev.args)
        return top


_EVENT_KINDS = {
    "join", "leave", "takeoff", "track", "safety-land",
    "kill-pod", "set-delay", "cordon",
}


def _fail(line_no: int, field_name: str, detail: str):
    raise ScenarioError(f"line {line_no}: {field_name}: {detail}")


def _to_float(line_no: int, field_name: str, token: str) -> float:
    try:
        return float(token)
    except ValueError:
        _fail(line_no, field_name, f"expected a number, got {token!r}")


def _to_int(line_no: int, field_name: str, token: str) -> int:
    try:
        return int(token)
    except ValueError:
        _fail(line_no, field_name, f"expected an integer, got {token!r}")


def _to_flag(line_no: int, field_name: str, token: str) -> bool:
    if token in ("on", "true", "1"):
        return True
    if token in ("off", "false", "0"):
        return False
    _fail(line_no, field_name, f"expected on or off, got {token!r}")


def _kv_pairs(line_no: int, key: str, tokens: list[str]) -> dict[str, str]:
    if len(tokens) % 2 != 0:
        _fail(line_no, key, "expected key value pairs")
    return dict(zip(tokens[0::2], tokens[1::2]))


def _one(line_no: int, key: str, rest: list[str]) -> str:
    if len(rest) != 1:
        _fail(line_no, key, "expected exactly one value")
    return rest[0]


def parse_scenario(text: str, name_hint: str = "unnamed") -> Scenario:
    lines = text.splitlines()
    if not lines or lines[0].strip() != FORMAT_HEADER:
        raise ScenarioError(f"line 1: header: expected {FORMAT_HEADER!r}")
    sc = Scenario(name=name_hint)
    waypoint_knots: dict[int, list[tuple[float, float, float, float]]] = {}
    cnmpc: dict[str, float] = {}
    fleet_over: dict[str, float] = {}
    formation_over: dict[str, float] = {}
    load_over: dict[str, float] = {}

    for idx, raw in enumerate(lines[1:], start=2):
        line = raw.split("#", 1)[0].strip()
        if not line:
            continue
        tokens = line.split()
        key, rest = tokens[0], tokens[1:]

        if key == "name":
            sc.name = _one(idx, key, rest)
        elif key == "duration":
            sc.duration = _to_float(idx, key, _one(idx, key, rest))
        elif key == "seed":
            sc.seed = _to_int(idx, key, _one(idx, key, rest))
        elif key == "mode":
            sc.mode = _one(idx, key, rest)
        elif key == "baseline_node":
            sc.baseline_node = _one(idx, key, rest)
        elif key == "agent_max":
            sc.agent_max = _to_int(idx, key, _one(idx, key, rest))
        elif key == "tick_period":
            sc.tick_period = _to_float(idx, key, _one(idx, key, rest))
        elif key == "horizon":
            cnmpc["horizon_steps"] = _to_int(idx, key, _one(idx, key, rest))
        elif key == "sampling_time":
            cnmpc["sampling_time"] = _to_float(idx, key, _one(idx, key, rest))
        elif key == "control_rate":
            cnmpc["control_rate"] = _to_float(idx, key, _one(idx, key, rest))
        elif key == "load_factor":
            cnmpc["load_factor"] = _to_float(idx, key, _one(idx, key, rest))
        elif key == "safe_radius":
            sc.safe_radius = _to_float(idx, key, _one(idx, key, rest))
        elif key == "physics_dt":
            sc.physics_dt = _to_float(idx, key, _one(idx, key, rest))
        elif key == "odom_rate":
            fleet_over["odom_rate"] = _to_float(idx, key, _one(idx, key, rest))
        elif key == "command_timeout":
            fleet_over["command_timeout"] = _to_float(idx, key, _one(idx, key, rest))
        elif key == "fallback_hover":
            fleet_over["fallback_hover"] = _to_float(idx, key, _one(idx, key, rest))
        elif key == "takeoff_altitude":
            fleet_over["takeoff_altitude"] = _to_float(idx, key, _one(idx, key, rest))
        elif key == "climb_rate":
            fleet_over["climb_rate"] = _to_float(idx, key, _one(idx, key, rest))
        elif key == "descent_rate":
            fleet_over["descent_rate"] = _to_float(idx, key, _one(idx, key, rest))
        elif key == "delay":
            pairs = _kv_pairs(idx, key, rest)
            for k, v in pairs.items():
                val = _to_float(idx, f"delay {k}", v)
                if k == "uplink":
                    sc.uplink = val
                elif k == "downlink":
                    sc.downlink = val
                elif k == "jitter_up":
                    sc.uplink_jitter = val
                elif k == "jitter_down":
                    sc.downlink_jitter = val
                elif k == "drop":
                    sc.drop_probability = val
                else:
                    _fail(idx, key, f"unknown delay field {k!r}")
        elif key == "load_model":
            pairs = _kv_pairs(idx, key, rest)
            for k, v in pairs.items():
                if k not in ("base", "knee", "cap"):
                    _fail(idx, key, f"unknown load_model field {k!r}")
                load_over[k] = _to_float(idx, f"load_model {k}", v)
        elif key == "tau_max":
            sc.tau_max = _to_float(idx, key, _one(idx, key, rest))
        elif key == "rtt_window":
            sc.rtt_window = _to_int(idx, key, _one(idx, key, rest))
        elif key == "strict_deadline":
            sc.strict_deadline = _to_flag(idx, key, _one(idx, key, rest))
        elif key == "estimator":
            sc.estimator = _to_flag(idx, key, _one(idx, key, rest))
        elif key == "formation":
            pairs = _kv_pairs(idx, key, rest)
            for k, v in pairs.items():
                if k not in ("radius", "period", "altitude", "spacing", "row_gap"):
                    _fail(idx, key, f"unknown formation field {k!r}")
                formation_over[k] = _to_float(idx, f"formation {k}", v)
        elif key == "waypoint":
            if len(rest) != 5:
                _fail(idx, key, "expected: waypoint <agent> <t> <x> <y> <z>")
            aid = _to_int(idx, key, rest[0])
            knot = tuple(_to_float(idx, key, v) for v in rest[1:])
            waypoint_knots.setdefault(aid, []).append(knot)
        elif key == "node":
            if len(rest) < 3:
                _fail(idx, key, "expected: node <name> <cpu> <mem> [unschedulable]")
            schedulable = True
            if len(rest) == 4:
                if rest[3] != "unschedulable":
                    _fail(idx, key, f"unexpected token {rest[3]!r}")
                schedulable = False
            sc.nodes.append(
                NodeSpec(rest[0], _to_float(idx, key, rest[1]),
                         _to_float(idx, key, rest[2]), schedulable)
            )
        elif key == "at":
            if len(rest) < 2:
                _fail(idx, key, "expected: at <t> <event> ...")
            at = _to_float(idx, key, rest[0])
            kind = rest[1]
            if kind not in _EVENT_KINDS:
                _fail(idx, key, f"unknown event {kind!r}")
            args: tuple = ()
            if kind in ("join", "leave"):
                if len(rest) < 3:
                    _fail(idx, kind, "needs at least one agent id")
                args = tuple(_to_int(idx, kind, v) for v in rest[2:])
            elif kind in ("kill-pod", "cordon"):
                if len(rest) != 3:
                    _fail(idx, kind, "needs exactly one name")
                args = (rest[2],)
            elif kind == "set-delay":
                pairs = _kv_pairs(idx, kind, rest[2:])
                for k, v in pairs.items():
                    if k not in ("uplink", "downlink", "drop"):
                        _fail(idx, kind, f"unknown delay field {k!r}")
                    if k == "drop" and not 0.0 <= _to_float(idx, kind, v) <= 1.0:
                        _fail(idx, kind, "drop must be within [0, 1]")
                args = tuple(
                    (k, _to_float(idx, kind, v)) for k, v in sorted(pairs.items())
                )
            elif len(rest) != 2:
                _fail(idx, kind, "takes no arguments")
            sc.timeline.append(TimelineEvent(at=at, kind=kind, args=args))
        else:
            _fail(idx, key, "unknown directive")

    if cnmpc:
        sc.cnmpc_args = replace(sc.cnmpc_args, **cnmpc)
    if fleet_over:
        sc.fleet = replace(sc.fleet, **fleet_over)
    if formation_over:
        sc.formation = replace(sc.formation, **formation_over)
    if load_over:
        sc.load_model = LoadModel(
            tau_p_base=load_over.get("base", sc.load_model.tau_p_base),
            knee=load_over.get("knee", sc.load_model.knee),
            saturation_cap=load_over.get("cap", sc.load_model.saturation_cap),
        )
    for aid, knots in waypoint_knots.items():
        knots.sort(key=lambda k: k[0])
        sc.waypoints[aid] = WaypointReference(points=tuple(knots))
    sc.validate()
    return sc


def load_scenario(path) -> Scenario:
    p = Path(path)
    try:
        text = p.read_text()
    except OSError as exc:
        raise ScenarioError(f"cannot read scenario {p}: {exc}") from exc
    return parse_scenario(text, name_hint=p.stem)
