"""
Scenario documents: a line-oriented ``section.key = value`` format.

Grammar
-------
* One assignment per line: ``<section>.<key> = <value>``.
* Blank lines and lines starting with ``#`` are ignored.
* A value is read as JSON when it parses as JSON (numbers, ``[1, 2]``,
  ``"quoted"``, ``true``); anything else is taken as a bare string, so
  ``schedule.w = const:0.5`` needs no quotes.
* Each key may appear once. Unknown sections or keys are errors.

Every error carries the 1-based line of the offending assignment.
"""

import importlib
import json
import logging
import math
from dataclasses import dataclass, field, fields, replace

from sdforward.controller import ControllerSpec
from sdforward.design.builtin import (
    CHAIN3_P1,
    CHAIN3_P1_GAIN,
    CHAIN3_P2,
    CHAIN3_P2_GAIN,
    conservative_gains,
    example42_stage,
    fast_gains,
    stage1_dissipation_weight,
    stage2_dissipation_weight,
)
from sdforward.design.certify import StageNonlinearities, chain_stage_nonlinearities
from sdforward.design.constants import bounded_schedule, synthesize_schedule
from sdforward.design.stage import DesignStage, GainSchedule, NonlinearityBound, make_stage
from sdforward.errors import ForwardingError, ParseError, ValidationError
from sdforward.predictor import DelaySpec
from sdforward.simulator.integrate import DISTURBANCE_MODES, DisturbanceSpec
from sdforward.simulator.schedule import parse_perturbation
from sdforward.simulator.systems import BUILTIN_SYSTEMS, SystemModel, builtin_system

logger = logging.getLogger(__name__)

CONTROLLER_PRESETS = (
    "paper_4_5",
    "paper_4_6",
    "synthesized",
    "linear_outer",
    "saturated_outer",
    "example42",
)


def _kind(name: str):
    return {"kind": name}


@dataclass(frozen=True)
class SystemSection:
    name: str = field(default="example41", metadata=_kind("str"))
    k1: float = field(default=0.5, metadata=_kind("float"))
    k2: float = field(default=0.5, metadata=_kind("float"))
    gamma: float = field(default=0.05, metadata=_kind("float"))
    factory: str = field(default="", metadata=_kind("str"))


@dataclass(frozen=True)
class ControllerSection:
    preset: str = field(default="paper_4_6", metadata=_kind("str"))
    dimension: int | None = field(default=None, metadata=_kind("int"))
    K0: float = field(default=1.0, metadata=_kind("float"))
    omega0: float = field(default=1.0, metadata=_kind("float"))
    gain: tuple = field(default=(), metadata=_kind("floats"))
    envelope: float = field(default=1.0, metadata=_kind("float"))
    R_requested: tuple = field(default=(), metadata=_kind("floats"))
    omegas: tuple = field(default=(), metadata=_kind("floats"))
    bound: float | None = field(default=None, metadata=_kind("float"))
    R: float = field(default=2.0, metadata=_kind("float"))
    K: float = field(default=0.25, metadata=_kind("float"))
    omega: float = field(default=10.0, metadata=_kind("float"))
    M: float | None = field(default=None, metadata=_kind("float"))


@dataclass(frozen=True)
class ScheduleSection:
    r: float = field(default=0.2, metadata=_kind("float"))
    w: str = field(default="zero", metadata=_kind("str"))
    horizon: float = field(default=100.0, metadata=_kind("float"))


@dataclass(frozen=True)
class DelaysSection:
    tau: float = field(default=0.4, metadata=_kind("float"))
    T: float = field(default=0.2, metadata=_kind("float"))


@dataclass(frozen=True)
class InitialSection:
    x0: tuple = field(default=(), metadata=_kind("floats"))
    grid: tuple = field(default=(), metadata=_kind("grid"))
    u0: float = field(default=0.0, metadata=_kind("float"))

    def states(self) -> list[tuple]:
        return list(self.grid) if self.grid else [self.x0]


@dataclass(frozen=True)
class DisturbanceSection:
    mode: str = field(default="none", metadata=_kind("str"))
    seed: int = field(default=0, metadata=_kind("int"))
    value: tuple = field(default=(), metadata=_kind("floats"))
    bank: int = field(default=1, metadata=_kind("int"))


@dataclass(frozen=True)
class IntegrationSection:
    step: float = field(default=1e-3, metadata=_kind("float"))


@dataclass(frozen=True)
class OutputsSection:
    dir: str = field(default="", metadata=_kind("str"))


@dataclass(frozen=True)
class MaspSection:
    r_hi: float = field(default=0.2, metadata=_kind("float"))
    probe_divisor: float = field(default=1024.0, metadata=_kind("float"))
    w_bank: tuple = field(default=("zero",), metadata=_kind("strs"))


@dataclass(frozen=True)
class CertifySection:
    stage: int = field(default=1, metadata=_kind("int"))
    R: float | None = field(default=None, metadata=_kind("float"))
    K: float | None = field(default=None, metadata=_kind("float"))
    M: float | None = field(default=None, metadata=_kind("float"))
    omega: float = field(default=1.0, metadata=_kind("float"))
    delta: float | None = field(default=None, metadata=_kind("float"))


@dataclass(frozen=True)
class Scenario:
    system: SystemSection = field(default_factory=SystemSection)
    controller: ControllerSection = field(default_factory=ControllerSection)
    schedule: ScheduleSection = field(default_factory=ScheduleSection)
    initial: InitialSection = field(default_factory=InitialSection)
    disturbance: DisturbanceSection = field(default_factory=DisturbanceSection)
    integration: IntegrationSection = field(default_factory=IntegrationSection)
    outputs: OutputsSection = field(default_factory=OutputsSection)
    delays: DelaysSection | None = None
    masp: MaspSection | None = None
    certify: CertifySection | None = None

    @property
    def n(self) -> int:
        return build_system(self).n


SECTIONS = {
    "system": SystemSection,
    "controller": ControllerSection,
    "schedule": ScheduleSection,
    "initial": InitialSection,
    "disturbance": DisturbanceSection,
    "integration": IntegrationSection,
    "outputs": OutputsSection,
    "delays": DelaysSection,
    "masp": MaspSection,
    "certify": CertifySection,
}
OPTIONAL_SECTIONS = ("delays", "masp", "certify")


# ---------------------------------------------------------------------------
# Value coercion
# ---------------------------------------------------------------------------


def _is_number(value) -> bool:
    return isinstance(value, (int, float)) and not isinstance(value, bool)


def _coerce(kind: str, value, key: str, line: int):
    def fail(expected):
        return ValidationError(f"{key} must be {expected}, got {value!r}", line)

    if kind == "str":
        if not isinstance(value, str):
            raise fail("a string")
        return value
    if kind == "float":
        if not _is_number(value) or not math.isfinite(value):
            raise fail("a finite number")
        return float(value)
    if kind == "int":
        if not _is_number(value) or float(value) != int(value):
            raise fail("an integer")
        return int(value)
    if kind == "floats":
        if not isinstance(value, list) or not all(_is_number(v) for v in value):
            raise fail("a list of numbers")
        return tuple(float(v) for v in value)
    if kind == "grid":
        if not isinstance(value, list) or not all(
            isinstance(row, list) and all(_is_number(v) for v in row) for row in value
        ):
            raise fail("a list of number lists")
        return tuple(tuple(float(v) for v in row) for row in value)
    if kind == "strs":
        if isinstance(value, str):
            return (value,)
        if not isinstance(value, list) or not all(isinstance(v, str) for v in value):
            raise fail("a list of strings")
        return tuple(value)
    raise AssertionError(kind)


def _read_value(raw: str):
    try:
        return json.loads(raw)
    except ValueError:
        return raw


# ---------------------------------------------------------------------------
# Parse / validate / serialize
# ---------------------------------------------------------------------------


def parse_scenario(text: str) -> Scenario:
    assignments: dict[str, dict] = {}
    lines: dict[str, int] = {}
    for lineno, raw_line in enumerate(text.splitlines(), start=1):
        line = raw_line.strip()
        if not line or line.startswith("#"):
            continue
        key, sep, raw = line.partition("=")
        key, raw = key.strip(), raw.strip()
        if not sep or not key or not raw:
            raise ParseError(f"expected 'section.key = value', got {raw_line!r}", lineno)
        section, dot, name = key.partition(".")
        if not dot or not name:
            raise ParseError(f"key {key!r} has no section prefix", lineno)
        if section not in SECTIONS:
            raise ValidationError(f"unknown section {section!r}", lineno)
        known = {f.name: f for f in fields(SECTIONS[section])}
        if name not in known:
            raise ValidationError(f"unknown key {key!r}", lineno)
        if key in lines:
            raise ParseError(f"duplicate key {key!r} (first set on line {lines[key]})", lineno)
        value = _coerce(known[name].metadata["kind"], _read_value(raw), key, lineno)
        assignments.setdefault(section, {})[name] = value
        lines[key] = lineno

    sections = {}
    for section, cls in SECTIONS.items():
        if section in assignments:
            sections[section] = cls(**assignments[section])
        elif section not in OPTIONAL_SECTIONS:
            sections[section] = cls()
    scenario = Scenario(**sections)
    validate_scenario(scenario, lines)
    return scenario


def validate_scenario(scenario: Scenario, lines: dict | None = None) -> None:
    lines = lines or {}

    def fail(key: str, message: str):
        raise ValidationError(message, lines.get(key))

    system = scenario.system
    if not system.factory and system.name not in BUILTIN_SYSTEMS:
        fail("system.name", f"unknown builtin system {system.name!r}")
    try:
        n = build_system(scenario).n
    except ForwardingError as e:
        fail("system.factory" if system.factory else "system.name", str(e))

    ctrl = scenario.controller
    if ctrl.preset not in CONTROLLER_PRESETS:
        fail("controller.preset", f"unknown controller preset {ctrl.preset!r}")
    expected = {"paper_4_5": 3, "paper_4_6": 3, "synthesized": 3, "example42": 3}.get(ctrl.preset)
    if ctrl.preset == "linear_outer":
        if not ctrl.gain:
            fail("controller.preset", "linear_outer needs controller.gain")
        expected = len(ctrl.gain)
    if expected is not None and expected != n:
        fail("controller.preset", f"controller {ctrl.preset!r} expects {expected} states, system has {n}")
    if ctrl.dimension is not None and ctrl.dimension != n:
        fail("controller.dimension", f"controller dimension {ctrl.dimension} does not match {system.name} ({n} states)")
    if ctrl.preset in ("paper_4_5", "paper_4_6", "synthesized") and (system.factory or system.name != "example41"):
        fail("controller.preset", f"preset {ctrl.preset!r} is defined for example41 only")
    if ctrl.preset == "example42" and (system.factory or system.name != "example42"):
        fail("controller.preset", "preset 'example42' needs system example42")
    for key in ("K0", "omega0", "R", "K", "omega"):
        if not getattr(ctrl, key) > 0.0:
            fail(f"controller.{key}", f"controller.{key} must be positive")

    sched = scenario.schedule
    if not sched.r > 0.0:
        fail("schedule.r", f"sampling period must be positive, got {sched.r}")
    if not sched.horizon > 0.0:
        fail("schedule.horizon", f"horizon must be positive, got {sched.horizon}")
    try:
        parse_perturbation(sched.w)
    except ForwardingError as e:
        fail("schedule.w", str(e))

    init = scenario.initial
    for k, x0 in enumerate(init.states()):
        if x0 and len(x0) != n:
            key = "initial.grid" if init.grid else "initial.x0"
            fail(key, f"initial state {k} has {len(x0)} entries, {system.name} has {n} states")

    dist = scenario.disturbance
    if dist.mode not in DISTURBANCE_MODES or dist.mode == "function":
        fail("disturbance.mode", f"disturbance mode {dist.mode!r} not available in scenarios")
    if dist.bank < 1:
        fail("disturbance.bank", "disturbance bank must hold at least one seed")

    if not scenario.integration.step > 0.0:
        fail("integration.step", "integration step must be positive")

    if scenario.delays is not None:
        if system.factory or system.name != "example41":
            fail("delays.tau", "delay compensation is available for example41 only")
        try:
            DelaySpec(tau=scenario.delays.tau, T=scenario.delays.T, r=sched.r)
        except ValidationError as e:
            fail("delays.tau", str(e))

    if scenario.masp is not None:
        if not (scenario.masp.r_hi > 0.0 and scenario.masp.probe_divisor >= 1.0):
            fail("masp.r_hi", "masp needs r_hi > 0 and probe_divisor >= 1")
        for w in scenario.masp.w_bank:
            try:
                parse_perturbation(w)
            except ForwardingError as e:
                fail("masp.w_bank", str(e))

    if scenario.certify is not None and not 1 <= scenario.certify.stage < n:
        fail("certify.stage", f"stage {scenario.certify.stage} does not exist for a {n}-state system")


def _format(value) -> str:
    if isinstance(value, str):
        return value if isinstance(_read_value(value), str) else json.dumps(value)
    if isinstance(value, float):
        return repr(value)
    if isinstance(value, tuple):
        return json.dumps(_listify(value))
    return json.dumps(value)


def _listify(value):
    if isinstance(value, tuple):
        return [_listify(v) for v in value]
    return value


def serialize_scenario(scenario: Scenario) -> str:
    """Non-default assignments in section order; parse_scenario reads it back unchanged."""
    out = []
    for section, cls in SECTIONS.items():
        data = getattr(scenario, section)
        if data is None:
            continue
        defaults = cls()
        rows = [
            f"{section}.{f.name} = {_format(getattr(data, f.name))}"
            for f in fields(cls)
            if getattr(data, f.name) != getattr(defaults, f.name) and getattr(data, f.name) is not None
        ]
        if not rows and section in OPTIONAL_SECTIONS:
            rows = [f"{section}.{fields(cls)[0].name} = {_format(getattr(data, fields(cls)[0].name))}"]
        out.extend(rows)
    return "\n".join(out) + "\n"


def load_scenario(path: str) -> Scenario:
    with open(path) as f:
        return parse_scenario(f.read())


def with_overrides(scenario: Scenario, horizon=None, step=None, seed=None, out=None) -> Scenario:
    """Apply command-line overrides and re-validate."""
    if horizon is not None:
        scenario = replace(scenario, schedule=replace(scenario.schedule, horizon=float(horizon)))
    if step is not None:
        scenario = replace(scenario, integration=replace(scenario.integration, step=float(step)))
    if seed is not None:
        scenario = replace(scenario, disturbance=replace(scenario.disturbance, seed=int(seed)))
    if out is not None:
        scenario = replace(scenario, outputs=replace(scenario.outputs, dir=str(out)))
    validate_scenario(scenario)
    return scenario


# ---------------------------------------------------------------------------
# Builders
# ---------------------------------------------------------------------------


def _load_factory(path: str):
    module_name, sep, attr = path.partition(":")
    if not sep or not module_name or not attr:
        raise ValidationError(f"system factory must look like 'package.module:function', got {path!r}")
    try:
        return getattr(importlib.import_module(module_name), attr)
    except (ImportError, AttributeError) as e:
        raise ValidationError(f"cannot load system factory {path!r}: {e}") from e


def build_system(scenario: Scenario) -> SystemModel:
    section = scenario.system
    if section.factory:
        model = _load_factory(section.factory)()
        if not isinstance(model, SystemModel):
            raise ValidationError(f"system factory {section.factory!r} did not return a SystemModel")
        return model
    if section.name == "example42":
        return builtin_system("example42", k1=section.k1, k2=section.k2, gamma=section.gamma)
    return builtin_system(section.name)


def build_schedule(scenario: Scenario) -> GainSchedule:
    """Gain schedule behind the recursive presets."""
    ctrl = scenario.controller
    if ctrl.preset == "paper_4_5":
        return conservative_gains()
    if ctrl.preset == "paper_4_6":
        return fast_gains()
    if ctrl.preset != "synthesized":
        raise ValidationError(f"preset {ctrl.preset!r} has no gain schedule")
    envelope = NonlinearityBound.constant(ctrl.envelope)
    schedule = synthesize_schedule(
        3,
        [CHAIN3_P1, CHAIN3_P2],
        [CHAIN3_P1_GAIN, CHAIN3_P2_GAIN],
        envelope,
        K0=ctrl.K0,
        omega0=ctrl.omega0,
        omegas=ctrl.omegas or (1.0, 1.0),
        R_requested=ctrl.R_requested or (1.0, 1.0),
    )
    if ctrl.bound is not None:
        schedule = bounded_schedule(schedule, ctrl.bound, envelope)
    return schedule


def build_controller(scenario: Scenario) -> ControllerSpec:
    ctrl = scenario.controller
    if ctrl.preset in ("paper_4_5", "paper_4_6", "synthesized"):
        return ControllerSpec.recursive(build_schedule(scenario))
    if ctrl.preset == "linear_outer":
        return ControllerSpec(kind="linear_outer", gain=ctrl.gain)
    if ctrl.preset == "saturated_outer":
        return ControllerSpec(kind="saturated_outer", K0=ctrl.K0, omega0=ctrl.omega0)
    system = scenario.system
    stage = example42_stage(system.k1, system.k2, R=ctrl.R, K=ctrl.K, omega=ctrl.omega, M=ctrl.M)
    return ControllerSpec.single(stage)


def build_certify_stage(scenario: Scenario) -> tuple[DesignStage, StageNonlinearities]:
    """
    The stage named by the ``certify`` section and its drift terms.

    Unset R and K fall back to the conservative chain gains (example41) or
    the controller section (example42); an unset M falls back to the
    closed-form dissipation weight where one exists.
    """
    cert = scenario.certify or CertifySection()
    system = build_system(scenario)
    j = cert.stage
    if scenario.system.factory:
        raise ValidationError("certificates need a builtin chain system")
    if scenario.system.name == "example41":
        default = conservative_gains().stage(j)
        R = cert.R if cert.R is not None else default.R
        K = cert.K if cert.K is not None else default.K
        weight = stage1_dissipation_weight if j == 1 else stage2_dissipation_weight
        M = cert.M if cert.M is not None else weight(R, K)
        P, p = (CHAIN3_P1, CHAIN3_P1_GAIN) if j == 1 else (CHAIN3_P2, CHAIN3_P2_GAIN)
        stage = make_stage(j, P, p, K=K, R=R, omega=cert.omega, M=M, delta=cert.delta)
    elif scenario.system.name == "example42":
        if j != 2:
            raise ValidationError("example42 has a single design stage on (x1, x2): certify.stage = 2")
        ctrl = scenario.controller
        stage = example42_stage(
            scenario.system.k1,
            scenario.system.k2,
            R=cert.R if cert.R is not None else ctrl.R,
            K=cert.K if cert.K is not None else ctrl.K,
            omega=cert.omega,
            M=cert.M if cert.M is not None else ctrl.M,
            delta=cert.delta,
        )
    else:
        raise ValidationError(f"system {scenario.system.name!r} has no design stages")
    return stage, chain_stage_nonlinearities(system.rhs, system.n, j, system.D_box)


def build_disturbances(scenario: Scenario) -> list[DisturbanceSpec]:
    """One spec per bank entry; seeds count up from ``disturbance.seed``."""
    dist = scenario.disturbance
    return [DisturbanceSpec(mode=dist.mode, value=dist.value, seed=dist.seed + k) for k in range(dist.bank)]


def build_delays(scenario: Scenario) -> DelaySpec:
    if scenario.delays is None:
        raise ValidationError("scenario has no delays section")
    return DelaySpec(tau=scenario.delays.tau, T=scenario.delays.T, r=scenario.schedule.r)
