"""Regenerate the bundled scenario files from the 14-bus base case.

Run from the repository root: ``python scripts/make_fixtures.py``.
"""

import copy
import json
from pathlib import Path

from qsshybrid.scenario import parse_case, parse_schedule, serialize_case, serialize_schedule

DATA = Path(__file__).resolve().parents[1] / "src" / "qsshybrid" / "data"

# system-base machine data derived from typical 14-bus dynamic data
MACHINES = {
    "G1": dict(ra=0.0, xd=0.146, xq=0.105, xd_p=0.0487, xq_p=0.09, Td0_p=7.4, Tq0_p=0.4, H=31.7, D=2.0),
    "G2": dict(ra=0.0, xd=1.75, xq=1.633, xd_p=0.308, xq_p=0.6, Td0_p=6.1, Tq0_p=0.3, H=3.92, D=2.0),
    "G3": dict(ra=0.0, xd=2.08, xq=2.03, xd_p=0.387, xq_p=1.19, Td0_p=4.75, Tq0_p=1.5, H=3.04, D=2.0),
    "G6": dict(ra=0.0, xd=5.0, xq=4.88, xd_p=0.928, xq_p=2.86, Td0_p=4.75, Tq0_p=1.5, H=1.27, D=2.0),
    "G8": dict(ra=0.0, xd=5.0, xq=4.88, xd_p=0.928, xq_p=2.86, Td0_p=4.75, Tq0_p=1.5, H=1.27, D=2.0),
}
AVR = dict(Ka=50.0, Ta=0.1, Te=0.5)
RECOVERY = {9: (0.59, 0.332), 10: (0.18, 0.116), 14: (0.298, 0.1)}


def _branch(d, f, t):
    return [b for b in d["branches"] if {b["from_bus"], b["to_bus"]} == {f, t}][0]


def fourteen_bus(name, p):
    """14-bus system behind an external infinite bus with slow devices attached."""
    d = copy.deepcopy(json.loads((DATA / "ieee14.json").read_text()))
    d["name"] = name
    d["notes"] = dict(p["notes"])
    for b in d["buses"]:
        if b["id"] == 1:
            b["kind"] = "pv"
    d["buses"].append(dict(id=15, kind="slack", V=1.06, theta=0.0, gs=0.0, bs=0.0))
    d["branches"].append(dict(id=21, from_bus=15, to_bus=1, r=0.0, x=0.05, b=0.0, tap=1.0))
    gens = d["generators"]
    for g in gens:
        g.update(MACHINES[g["id"]])
        g["P"] = p["P"].get(g["id"], g["P"])
    d["avrs"] = [dict(gen=g["id"], **AVR) for g in gens]
    d["oxls"] = [dict(gen=g["id"], i_lim=p["i_lim"][g["id"]], K=p["K"].get(g["id"], 1.0),
                      T_delay=p["T_delay"], T_reset=1.0, hysteresis=0.2) for g in gens]
    d["governors"] = [dict(gen=g) for g in ("G1", "G3")]
    d["static_loads"] = [dict(l, alpha=1.0, beta=2.0) for l in d["static_loads"]
                         if l["bus"] not in RECOVERY]
    d["recovery_loads"] = [dict(id=f"RL{b}", bus=b, P=P, Q=Q, **p["recovery"])
                           for b, (P, Q) in RECOVERY.items()]
    ltcs = []
    for f, t in p["ltcs"]:
        br = _branch(d, f, t)
        br["from_bus"], br["to_bus"] = f, t
        ltcs.append(dict(id=f"LTC{f}-{t}", branch=br["id"], controlled_bus=t, **p["ltc"]))
    d["ltcs"] = ltcs
    case = parse_case(d)
    events = [dict(t=1.0, kind="trip_branch", target=_branch(d, f, t)["id"]) for f, t in p["trips"]]
    return case, parse_schedule({"events": events}, case)


CASE1 = dict(
    notes={
        "purpose": "OXL of G2 picks up after the LTC reaches its limit; the full model "
                   "settles on a sustained OXL/AVR oscillation while the QSS model converges",
        "tuned": "G2 i_lim and K, OXL hysteresis, recovery-load exponents and time "
                 "constants, G1/G3 dispatch were tuned to reach this behaviour",
    },
    P={"G1": 1.8, "G3": 0.3},
    i_lim={"G1": 1.35, "G2": 2.33, "G3": 2.0, "G6": 3.4, "G8": 3.25},
    K={"G2": 0.3},
    T_delay=40.0,
    recovery=dict(Tp=10.0, Tq=10.0, alpha_s=0.5, beta_s=2.0),
    ltcs=[(4, 9)],
    ltc=dict(T_d0=20.0, dT=10.0, n_min=0.8, step=0.01),
    trips=[(11, 10), (7, 9), (6, 11)],
)

CASE2 = dict(
    notes={
        "purpose": "OXL of G2 picks up together with the first tap move; the full model "
                   "collapses while the QSS model reports a stable long-term equilibrium",
        "tuned": "G2/G6 i_lim and K, OXL delay and hysteresis, recovery-load transient "
                 "exponents, G6 dispatch and LTC delays were tuned to reach this behaviour",
    },
    P={"G1": 1.8, "G3": 0.3, "G6": 0.4},
    i_lim={"G1": 1.35, "G2": 2.0, "G3": 2.0, "G6": 3.0, "G8": 3.2},
    K={"G2": 3.0, "G6": 3.0},
    T_delay=30.0,
    recovery=dict(Tp=10.0, Tq=10.0, alpha_s=0.5, beta_s=2.0, alpha_t=1.0, beta_t=1.0),
    ltcs=[(4, 9), (12, 13), (2, 4)],
    ltc=dict(T_d0=30.0, dT=10.0, n_min=0.8, step=0.01),
    trips=[(6, 13), (7, 9), (6, 11)],
)

STABLE = dict(
    CASE1,
    notes={"purpose": "mild disturbance, no limiter activity; long-term stable"},
    trips=[(7, 9)],
)


def smib():
    """Generator feeding an LTC-supplied recovery load, tied to an infinite bus."""
    d = dict(
        name="smib",
        notes={"purpose": "small system for equilibrium and Jacobian checks"},
        buses=[
            dict(id=1, kind="slack", V=1.0, theta=0.0),
            dict(id=2, kind="pv", V=1.02),
            dict(id=3, kind="pq", V=1.0),
        ],
        branches=[
            dict(id=1, from_bus=1, to_bus=2, r=0.0, x=0.2),
            dict(id=2, from_bus=2, to_bus=3, r=0.0, x=0.1),
        ],
        generators=[dict(id="G", bus=2, P=0.6, V=1.02, **MACHINES["G2"])],
        avrs=[dict(gen="G", **AVR)],
        oxls=[dict(gen="G", i_lim=2.5, K=0.3, T_delay=20.0, hysteresis=0.2)],
        governors=[dict(gen="G")],
        recovery_loads=[dict(id="RL3", bus=3, P=0.8, Q=0.3, Tp=10.0, Tq=10.0,
                             alpha_s=0.5, beta_s=2.0)],
        ltcs=[dict(id="LTC2-3", branch=2, controlled_bus=3, T_d0=20.0, dT=10.0,
                   n_min=0.8, step=0.01)],
    )
    return parse_case(d)


def main():
    out = {
        "case1": fourteen_bus("case1", CASE1),
        "case2": fourteen_bus("case2", CASE2),
        "stable": fourteen_bus("stable", STABLE),
    }
    for name, (case, sched) in out.items():
        (DATA / f"{name}.json").write_text(serialize_case(case) + "\n")
        (DATA / f"{name}_schedule.json").write_text(serialize_schedule(sched) + "\n")
    (DATA / "smib.json").write_text(serialize_case(smib()) + "\n")


if __name__ == "__main__":
    main()
