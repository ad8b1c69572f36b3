"""Case and event-schedule data types with referential validation."""

from __future__ import annotations

from dataclasses import dataclass, field

from .devices import (
    AvrParams,
    GeneratorParams,
    GovernorParams,
    LtcParams,
    OxlParams,
    RecoveryLoadParams,
    StaticLoadParams,
)
from .errors import CaseValidationError
from .network import BUS_KINDS, Branch, Bus


@dataclass(frozen=True)
class Bounds:
    """Study region used for short-term instability detection."""

    omega_max: float = 0.2
    v_min: float = 0.3
    v_max: float = 2.0


@dataclass
class Case:
    name: str
    buses: list[Bus]
    branches: list[Branch]
    generators: list[GeneratorParams] = field(default_factory=list)
    avrs: list[AvrParams] = field(default_factory=list)
    oxls: list[OxlParams] = field(default_factory=list)
    governors: list[GovernorParams] = field(default_factory=list)
    recovery_loads: list[RecoveryLoadParams] = field(default_factory=list)
    static_loads: list[StaticLoadParams] = field(default_factory=list)
    ltcs: list[LtcParams] = field(default_factory=list)
    base_mva: float = 100.0
    freq: float = 60.0
    bounds: Bounds = field(default_factory=Bounds)
    notes: dict = field(default_factory=dict)

    def bus(self, bus_id):
        for b in self.buses:
            if b.id == bus_id:
                return b
        raise KeyError(bus_id)

    def branch(self, branch_id):
        for br in self.branches:
            if br.id == branch_id:
                return br
        raise KeyError(branch_id)

    def validate(self):
        """Raise :class:`CaseValidationError` listing every problem found."""
        errors = []
        bus_ids = [b.id for b in self.buses]
        known_bus = set(bus_ids)
        if len(known_bus) != len(bus_ids):
            errors.append("duplicate bus ids")
        kinds = [b.kind for b in self.buses]
        for b in self.buses:
            if b.kind not in BUS_KINDS:
                errors.append(f"bus {b.id}: unknown kind {b.kind!r}")
        if kinds.count("slack") != 1:
            errors.append(f"exactly one slack bus required, found {kinds.count('slack')}")
        branch_ids = set()
        for br in self.branches:
            if br.id in branch_ids:
                errors.append(f"duplicate branch id {br.id}")
            branch_ids.add(br.id)
            for end in (br.from_bus, br.to_bus):
                if end not in known_bus:
                    errors.append(f"branch {br.id} references unknown bus {end}")
            if br.x == 0.0:
                errors.append(f"branch {br.id}: reactance must be non-zero")
            if br.tap <= 0.0:
                errors.append(f"branch {br.id}: tap must be positive")
        gen_ids = set()
        gen_buses = set()
        for g in self.generators:
            if g.id in gen_ids:
                errors.append(f"duplicate generator id {g.id}")
            gen_ids.add(g.id)
            if g.bus not in known_bus:
                errors.append(f"generator {g.id} references unknown bus {g.bus}")
            if g.bus in gen_buses:
                errors.append(f"more than one generator at bus {g.bus}")
            gen_buses.add(g.bus)
            errors += g.validate()
        for label, items in (("avr", self.avrs), ("oxl", self.oxls), ("governor", self.governors)):
            seen = set()
            for d in items:
                if d.gen not in gen_ids:
                    errors.append(f"{label} references unknown generator {d.gen}")
                if d.gen in seen:
                    errors.append(f"more than one {label} on generator {d.gen}")
                seen.add(d.gen)
                errors += d.validate()
        avr_gens = {a.gen for a in self.avrs}
        for o in self.oxls:
            if o.gen not in avr_gens:
                errors.append(f"oxl on generator {o.gen} needs an avr")
        load_ids = set()
        for ld in list(self.recovery_loads) + list(self.static_loads):
            if ld.id in load_ids:
                errors.append(f"duplicate load id {ld.id}")
            load_ids.add(ld.id)
            if ld.bus not in known_bus:
                errors.append(f"load {ld.id} references unknown bus {ld.bus}")
            errors += ld.validate()
        ltc_branches = set()
        for t in self.ltcs:
            if t.branch not in branch_ids:
                errors.append(f"ltc {t.id} references unknown branch {t.branch}")
            if t.branch in ltc_branches:
                errors.append(f"more than one ltc on branch {t.branch}")
            ltc_branches.add(t.branch)
            if t.controlled_bus not in known_bus:
                errors.append(f"ltc {t.id} controls unknown bus {t.controlled_bus}")
            errors += t.validate()
        if self.base_mva <= 0.0 or self.freq <= 0.0:
            errors.append("base_mva and freq must be positive")
        if errors:
            raise CaseValidationError(errors)
        return self


EVENT_KINDS = ("trip_branch", "load_step")


@dataclass(frozen=True)
class Event:
    """Exogenous event.

    ``trip_branch``: ``target`` is a branch id.  ``load_step``: ``target`` is
    a load id and ``scale`` multiplies its nominal power.
    """

    t: float
    kind: str
    target: object
    scale: float = 1.0


@dataclass
class EventSchedule:
    events: list[Event] = field(default_factory=list)

    def __post_init__(self):
        self.events = sorted(self.events, key=lambda e: e.t)

    def validate(self, case: Case | None = None):
        errors = []
        for e in self.events:
            if e.kind not in EVENT_KINDS:
                errors.append(f"unknown event kind {e.kind!r}")
            if e.t < 0.0:
                errors.append(f"event at negative time {e.t}")
            if case is not None:
                if e.kind == "trip_branch" and e.target not in {b.id for b in case.branches}:
                    errors.append(f"event trips unknown branch {e.target}")
                loads = {ld.id for ld in list(case.recovery_loads) + list(case.static_loads)}
                if e.kind == "load_step" and e.target not in loads:
                    errors.append(f"event steps unknown load {e.target}")
        if errors:
            raise CaseValidationError(errors)
        return self

    def between(self, t0, t1, eps=1e-9):
        """Events with ``t0 < t <= t1`` (``t0`` exclusive)."""
        return [e for e in self.events if t0 + eps < e.t <= t1 + eps]

    def at(self, t, eps=1e-9):
        return [e for e in self.events if abs(e.t - t) <= eps]
