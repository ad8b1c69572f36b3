"""Case and schedule JSON, trace CSV and verdict JSON.

Case documents are JSON objects with the keys ``name``, ``base_mva``,
``freq``, ``bounds``, ``notes`` and one list per component kind
(``buses``, ``branches``, ``generators``, ``avrs``, ``oxls``, ``governors``,
``recovery_loads``, ``static_loads``, ``ltcs``).  Each list entry holds the
fields of the matching parameter class; omitted fields take the class
defaults.  Schedules are ``{"events": [{"t", "kind", "target", "scale"}]}``.
"""

from __future__ import annotations

import csv
import io
import json
from dataclasses import asdict, fields
from importlib import resources
from pathlib import Path

import numpy as np

from .case import Bounds, Case, Event, EventSchedule
from .dae import Annotation, Trace
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
from .network import Branch, Bus

COMPONENTS = {
    "buses": Bus,
    "branches": Branch,
    "generators": GeneratorParams,
    "avrs": AvrParams,
    "oxls": OxlParams,
    "governors": GovernorParams,
    "recovery_loads": RecoveryLoadParams,
    "static_loads": StaticLoadParams,
    "ltcs": LtcParams,
}
_TOP = {"name", "base_mva", "freq", "bounds", "notes", "schema"}


def _build(cls, entry, where, errors):
    if not isinstance(entry, dict):
        errors.append(f"{where}: expected an object")
        return None
    known = {f.name for f in fields(cls)}
    unknown = sorted(set(entry) - known)
    if unknown:
        errors.append(f"{where}: unknown field(s) {', '.join(unknown)}")
        return None
    try:
        return cls(**entry)
    except TypeError as exc:
        errors.append(f"{where}: {exc}")
        return None


def parse_case(document):
    """Build a validated :class:`Case` from a JSON string, dict or path.

    Raises
    ------
    CaseValidationError
        With every problem found (unknown component kinds or fields,
        dangling references, invalid parameters).
    """
    doc = _load(document)
    errors = []
    if not isinstance(doc, dict):
        raise CaseValidationError(["case document must be a JSON object"])
    for key in doc:
        if key not in COMPONENTS and key not in _TOP:
            errors.append(f"unknown device type or key {key!r}")
    parts = {}
    for key, cls in COMPONENTS.items():
        items = doc.get(key, [])
        if not isinstance(items, list):
            errors.append(f"{key}: expected a list")
            items = []
        built = [_build(cls, e, f"{key}[{i}]", errors) for i, e in enumerate(items)]
        parts[key] = [b for b in built if b is not None]
    bounds = _build(Bounds, doc.get("bounds", {}), "bounds", errors) or Bounds()
    if errors:
        raise CaseValidationError(errors)
    case = Case(
        name=str(doc.get("name", "case")),
        base_mva=float(doc.get("base_mva", 100.0)),
        freq=float(doc.get("freq", 60.0)),
        bounds=bounds,
        notes=dict(doc.get("notes", {})),
        **parts,
    )
    return case.validate()


def case_to_dict(case):
    out = {"name": case.name, "base_mva": case.base_mva, "freq": case.freq,
           "bounds": asdict(case.bounds), "notes": case.notes}
    for key in COMPONENTS:
        out[key] = [asdict(item) for item in getattr(case, key)]
    return out


def serialize_case(case, indent=1):
    return json.dumps(case_to_dict(case), indent=indent)


def parse_schedule(document, case=None):
    doc = _load(document)
    errors = []
    if isinstance(doc, list):
        doc = {"events": doc}
    if not isinstance(doc, dict) or not isinstance(doc.get("events", []), list):
        raise CaseValidationError(["schedule must be an object with an 'events' list"])
    events = [_build(Event, e, f"events[{i}]", errors) for i, e in enumerate(doc.get("events", []))]
    if errors:
        raise CaseValidationError(errors)
    return EventSchedule([e for e in events if e is not None]).validate(case)


def serialize_schedule(schedule, indent=1):
    return json.dumps({"events": [asdict(e) for e in schedule.events]}, indent=indent)


def _load(document):
    if isinstance(document, (dict, list)):
        return document
    if isinstance(document, Path) or (isinstance(document, str) and not document.lstrip().startswith(("{", "["))):
        with open(document, encoding="utf-8") as fh:
            return json.load(fh)
    try:
        return json.loads(document)
    except json.JSONDecodeError as exc:
        raise CaseValidationError([f"malformed JSON: {exc}"]) from exc


# -- bundled data -------------------------------------------------------------

BUNDLED = {
    "ieee14": ("ieee14.json", None),
    "case1": ("case1.json", "case1_schedule.json"),
    "case2": ("case2.json", "case2_schedule.json"),
    "stable": ("stable.json", "stable_schedule.json"),
    "smib": ("smib.json", None),
}


def data_path(filename):
    return resources.files("qsshybrid") / "data" / filename


def load_bundled(name):
    """Return ``(case, schedule)`` for a bundled scenario."""
    case_file, sched_file = BUNDLED[name]
    case = parse_case(data_path(case_file).read_text(encoding="utf-8"))
    schedule = EventSchedule()
    if sched_file is not None:
        schedule = parse_schedule(data_path(sched_file).read_text(encoding="utf-8"), case)
    return case, schedule


# -- traces -------------------------------------------------------------------

def _fmt(v):
    return "%.17g" % v


def write_trace(trace, target):
    """Write a trace as CSV: header ``t,event,<names>``, one row per sample.

    The ``event`` column joins the sample's annotations as ``kind=detail``
    with ``|``.  ``target`` is a path or a text stream.
    """
    if len(trace) == 0:
        raise ValueError("cannot write an empty trace")
    labels = {}
    for a in trace.annotations:
        labels.setdefault(a.index, []).append(a.label())
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(["t", "event", *trace.names])
    for i, (t, row) in enumerate(zip(trace.t, trace.rows)):
        w.writerow([_fmt(t), "|".join(labels.get(i, [])), *map(_fmt, row)])
    text = buf.getvalue()
    if hasattr(target, "write"):
        target.write(text)
    else:
        with open(target, "w", encoding="utf-8", newline="") as fh:
            fh.write(text)
    return text


def read_trace(source):
    if hasattr(source, "read"):
        text = source.read()
    else:
        with open(source, encoding="utf-8", newline="") as fh:
            text = fh.read()
    rows = list(csv.reader(io.StringIO(text)))
    header = rows[0]
    if header[:2] != ["t", "event"]:
        raise ValueError("not a trace file")
    trace = Trace(tuple(header[2:]))
    for i, r in enumerate(rows[1:]):
        trace.t.append(float(r[0]))
        trace.rows.append(np.array([float(v) for v in r[2:]]))
        if r[1]:
            for lab in r[1].split("|"):
                kind, _, detail = lab.partition("=")
                trace.annotations.append(Annotation(i, kind, detail))
    return trace


# -- verdicts -----------------------------------------------------------------

def verdict_report(mode, outcome, trace, switch_backs=(), phases=None, extra=None):
    rep = {
        "mode": mode,
        "outcome": outcome,
        "status": trace.status,
        "message": trace.message,
        "t_final": trace.t[-1] if trace.t else None,
        "switch_backs": list(switch_backs),
        "wall_clock": dict(phases or {}),
    }
    if extra:
        rep.update(extra)
    return rep


def write_verdict(report, target):
    text = json.dumps(report, indent=1, sort_keys=True)
    with open(target, "w", encoding="utf-8") as fh:
        fh.write(text + "\n")
    return text
