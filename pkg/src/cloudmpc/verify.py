"""Property report: module invariant suites run against one scenario trace.

Each property prints one machine-readable line, `property <name> PASS|FAIL
<detail>`. The pure-math suites (partitioning, resource formula, codec,
gradients) are evaluated with fixed seeds; the trace suites (conservation,
healing, collisions, fallback causality, metrics schema) are evaluated on a
fresh run of the scenario.
"""
from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np

from .controller import CnmpcProblem, GradientData, cost_gradient, penalized_cost
from .dynamics import ModelParams
from .metrics import MetricsError, read_metrics
from .scenario import Scenario
from .scheduling import (
    CnmpcArgs,
    ResourceModel,
    partition_agents,
    required_cnmpcs,
    resource_formula,
)
from .simulation import SimulationResult, run_scenario
from .transport import Command, DecodeError, HighLevel, HighLevelCode, Odometry, decode, encode

COLLISION_TOLERANCE = 0.9


@dataclass(frozen=True)
class PropertyResult:
    name: str
    passed: bool
    detail: str

    def line(self) -> str:
        verdict = "PASS" if self.passed else "FAIL"
        return f"property {self.name} {verdict} {self.detail}"


@dataclass
class VerifyReport:
    scenario_name: str
    results: list[PropertyResult] = field(default_factory=list)

    @property
    def ok(self) -> bool:
        return all(r.passed for r in self.results)

    def render(self) -> str:
        lines = [f"# cloudmpc-verify v1 scenario {self.scenario_name}"]
        lines += [r.line() for r in self.results]
        lines.append(f"# verdict {'ok' if self.ok else 'failed'}")
        return "\n".join(lines) + "\n"


def partition_property(n_max: int = 200, agent_max_range: int = 16) -> PropertyResult:
    checked = 0
    for n in range(n_max + 1):
        for agent_max in range(1, agent_max_range + 1):
            count = required_cnmpcs(n, agent_max)
            expected = 0 if n == 0 else math.ceil(n / agent_max)
            if count != expected:
                return PropertyResult(
                    "partition-oracle", False,
                    f"count({n}, {agent_max}) = {count}, expected {expected}")
            sizes = partition_agents(n, count) if count else []
            if sum(sizes) != n or any(s <= 0 for s in sizes):
                return PropertyResult(
                    "partition-oracle", False, f"sizes {sizes} do not cover n={n}")
            if sizes and max(sizes) - min(sizes) > 1:
                return PropertyResult(
                    "partition-oracle", False, f"unbalanced sizes {sizes} at n={n}")
            checked += 1
    anchors = {10: [5, 5], 15: [8, 7], 21: [7, 7, 7]}
    for n, want in anchors.items():
        got = partition_agents(n, required_cnmpcs(n, 8))
        if got != want:
            return PropertyResult(
                "partition-oracle", False, f"anchor {n} gave {got}, expected {want}")
    return PropertyResult("partition-oracle", True, f"{checked} cases and 3 anchors")


def resource_formula_property(samples: int = 100, seed: int = 7) -> PropertyResult:
    rng = np.random.default_rng(seed)
    for _ in range(samples):
        x = int(rng.integers(1, 30))
        lf = float(rng.uniform(0.0, 0.95))
        model = ResourceModel(
            a=float(rng.uniform(0.1, 3.0)),
            b=float(rng.uniform(8.0, 256.0)),
            cpu_base_min=1.0, cpu_base_max=2.0,
            mem_base_min=256.0, mem_base_max=512.0,
        )
        got = resource_formula(x, lf, model)
        # independent transcription of the affine envelope
        grow_cpu = model.a * (x - 1) / (1.0 - lf)
        grow_mem = model.b * (x - 1) / (1.0 - lf)
        want = (grow_cpu + model.cpu_base_min, grow_cpu + model.cpu_base_max,
                grow_mem + model.mem_base_min, grow_mem + model.mem_base_max)
        if any(abs(g - w) > 1e-9 for g, w in zip(got, want)):
            return PropertyResult(
                "resource-formula", False, f"mismatch at x={x} lf={lf}: {got} vs {want}")
        if x >= 2:
            if not all(a < b for a, b in zip(got, resource_formula(x + 1, lf, model))):
                return PropertyResult(
                    "resource-formula", False, f"not increasing in x at x={x}")
            bump = resource_formula(x, min(0.99, lf + 0.01), model)
            if not all(a < b for a, b in zip(got, bump)):
                return PropertyResult(
                    "resource-formula", False, f"not increasing in load_factor at x={x}")
    base = resource_formula(1, 0.5, ResourceModel())
    m = ResourceModel()
    if base != (m.cpu_base_min, m.cpu_base_max, m.mem_base_min, m.mem_base_max):
        return PropertyResult("resource-formula", False, f"x=1 gave {base}, expected bases")
    return PropertyResult("resource-formula", True, f"{samples} samples within 1e-9")


def _random_message(rng):
    kind = rng.integers(0, 3)
    aid = int(rng.integers(0, 1 << 16))
    if kind == 0:
        return Odometry(
            agent_id=aid, seq=int(rng.integers(0, 1 << 32)),
            stamp_us=int(rng.integers(0, 1 << 48)),
            position=tuple(float(v) for v in rng.normal(0, 50, 3)),
            velocity=tuple(float(v) for v in rng.normal(0, 5, 3)),
            orientation=tuple(float(v) for v in rng.normal(0, 1, 3)),
        )
    if kind == 1:
        return Command(
            agent_id=aid, seq=int(rng.integers(0, 1 << 32)),
            stamp_us=int(rng.integers(0, 1 << 48)),
            roll_ref=float(rng.normal()), pitch_ref=float(rng.normal()),
            thrust=float(abs(rng.normal(9.81, 3.0))), yaw_ref=float(rng.normal()),
        )
    return HighLevel(agent_id=aid, code=HighLevelCode(int(rng.integers(1, 3))))


def codec_property(roundtrips: int = 2000, hostile: int = 20000,
                   seed: int = 11) -> PropertyResult:
    rng = np.random.default_rng(seed)
    for _ in range(roundtrips):
        msg = _random_message(rng)
        back = decode(encode(msg))
        if back != msg:
            return PropertyResult("codec-fuzz", False, f"roundtrip changed {msg}")
    valid = encode(_random_message(rng))
    for i in range(hostile):
        if i % 3 == 0:
            data = valid[: int(rng.integers(0, len(valid) + 1))]
        else:
            data = bytes(rng.integers(0, 256, int(rng.integers(0, 96))))
        try:
            decode(data)
        except DecodeError:
            pass
        except Exception as exc:  # noqa: BLE001 - the property is "no other fault"
            return PropertyResult(
                "codec-fuzz", False, f"decoder fault {type(exc).__name__} on {data[:16].hex()}")
    return PropertyResult(
        "codec-fuzz", True, f"{roundtrips} roundtrips, {hostile} hostile frames")


def gradient_property(instances: int = 3, seed: int = 13) -> PropertyResult:
    rng = np.random.default_rng(seed)
    for k in range(instances):
        na = int(rng.integers(1, 3))
        horizon = int(rng.integers(1, 4))
        problem = CnmpcProblem(
            horizon_steps=horizon, sampling_time=0.05, agent_count=na,
            safe_radius=0.5, model=ModelParams(),
        )
        initial = rng.normal(0, 1, (na, 9))
        initial[:, 6:8] *= 0.2
        refs = np.repeat(rng.normal(0, 1, (na, 1, 9)), horizon + 1, axis=1)
        prev = rng.normal(0, 0.1, (na, 3))
        prev[:, 2] += 9.81
        data = GradientData(problem, initial, refs, prev,
                            penalty_weight=10.0 if na > 1 else 0.0)
        z = rng.normal(0, 0.1, na * horizon * 3)
        z[2::3] += 9.81
        grad = cost_gradient(z, data)
        h = 1e-6
        for j in range(z.size):
            probe = z.copy()
            probe[j] += h
            up = penalized_cost(probe, data)
            probe[j] -= 2 * h
            down = penalized_cost(probe, data)
            fd = (up - down) / (2 * h)
            denom = max(1.0, abs(fd), abs(grad[j]))
            if abs(grad[j] - fd) / denom > 1e-4:
                return PropertyResult(
                    "gradient-spot-check", False,
                    f"instance {k} coord {j}: adjoint {grad[j]:.8f} vs fd {fd:.8f}")
    return PropertyResult("gradient-spot-check", True, f"{instances} instances vs fd")


def metrics_schema_property(metrics_text: str) -> PropertyResult:
    try:
        table = read_metrics(metrics_text)
    except MetricsError as exc:
        return PropertyResult("metrics-schema", False, str(exc))
    if not table.rows:
        return PropertyResult("metrics-schema", False, "no metric rows")
    return PropertyResult(
        "metrics-schema", True,
        f"{len(table.rows)} rows x {len(table.columns)} columns")


def _monitor_property(name: str, result: SimulationResult, needle: str) -> PropertyResult:
    hits = [m for m in result.monitors if needle in m]
    if hits:
        return PropertyResult(name, False, hits[0])
    return PropertyResult(name, True, "no monitor fired")


def collision_property(scenario: Scenario, result: SimulationResult) -> PropertyResult:
    floor = COLLISION_TOLERANCE * scenario.safe_radius
    if math.isinf(result.min_pair_distance):
        return PropertyResult("collision-minima", True, "no co-deployment pairs")
    ok = result.min_pair_distance >= floor
    detail = (f"min co-deployment distance {result.min_pair_distance:.4f} "
              f"vs floor {floor:.4f}")
    return PropertyResult("collision-minima", ok, detail)


def _drop_at(scenario: Scenario, t: float) -> float:
    drop = scenario.drop_probability
    for ev in scenario.timeline:
        if ev.kind == "set-delay" and ev.at <= t:
            for key, value in ev.args:
                if key == "drop":
                    drop = value
    return drop


def fallback_property(scenario: Scenario, result: SimulationResult) -> PropertyResult:
    first_violation: dict[int, float] = {}
    for t, aid in result.violation_times:
        first_violation.setdefault(aid, t)
    land_times = [ev.at for ev in scenario.timeline if ev.kind == "safety-land"]

    unjustified = []
    for t, aid in result.fallback_times:
        justified = (
            first_violation.get(aid, math.inf) <= t
            or _drop_at(scenario, t) >= 1.0
            or any(s <= t for s in land_times)
        )
        if not justified:
            unjustified.append((t, aid))
    if unjustified:
        t, aid = unjustified[0]
        return PropertyResult(
            "fallback-consistency", False,
            f"agent {aid} fell back at t={t:.3f} with no violation, loss, or directive")

    loss_at = 0.0 if scenario.drop_probability >= 1.0 else None
    for ev in scenario.timeline:
        if ev.kind == "set-delay" and dict(ev.args).get("drop", 0.0) >= 1.0:
            loss_at = ev.at if loss_at is None else min(loss_at, ev.at)
    slack = scenario.fleet.command_timeout + 2 * scenario.tick_period
    if loss_at is not None and loss_at + slack < scenario.duration:
        err_cols = [c for c in result.columns if c.startswith("err_agent_")]
        flying = any(
            r["time"] <= loss_at and any(r.get(c) is not None for c in err_cols)
            for r in result.rows
        )
        if flying and not result.fallback_times:
            return PropertyResult(
                "fallback-consistency", False,
                f"total frame loss at t={loss_at:.3f} triggered no fallback")
        if flying:
            return PropertyResult(
                "fallback-consistency", True,
                f"triggered as expected under total frame loss "
                f"({len(result.fallback_times)} fallbacks)")
    if result.fallback_times:
        return PropertyResult(
            "fallback-consistency", True,
            f"{len(result.fallback_times)} fallbacks, all justified")
    return PropertyResult("fallback-consistency", True, "no fallbacks")


def verify_scenario(scenario: Scenario) -> VerifyReport:
    result = run_scenario(scenario)
    report = VerifyReport(scenario_name=scenario.name)
    report.results.append(partition_property())
    report.results.append(resource_formula_property())
    report.results.append(codec_property())
    report.results.append(gradient_property())
    report.results.append(_monitor_property("request-conservation", result,
                                            "request conservation"))
    report.results.append(_monitor_property("usage-within-limits", result, "over limit"))
    report.results.append(_monitor_property("healing-liveness", result, "zero pods"))
    report.results.append(collision_property(scenario, result))
    report.results.append(metrics_schema_property(result.metrics_text))
    report.results.append(fallback_property(scenario, result))
    return report
