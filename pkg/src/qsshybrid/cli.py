"""Command-line entry point: run one scenario in one model and write the results.

Exit status is 0 whenever the simulation ran (whatever the stability
verdict) and 2 on input errors.
"""

from __future__ import annotations

import argparse
import json
import sys
import time

from .dae import IntegratorConfig, simulate_full
from .errors import CaseValidationError
from .hybrid import HybridParams, run_hybrid
from .model import build_model
from .qss import QssConfig, simulate_qss
from .scenario import parse_case, parse_schedule, verdict_report, write_trace, write_verdict
from .stability import classify_outcome


def build_parser():
    p = argparse.ArgumentParser(prog="qsshybrid", description=__doc__.splitlines()[0])
    p.add_argument("--case", required=True, metavar="PATH", help="case JSON file")
    p.add_argument("--schedule", metavar="PATH", help="event schedule JSON file")
    p.add_argument("--mode", choices=("full", "qss", "hybrid"), default="hybrid")
    p.add_argument("--t-end", type=float, default=300.0, metavar="S")
    p.add_argument("--dt", type=float, default=0.01, metavar="S", help="full-model step")
    p.add_argument("--dt-qss", type=float, default=0.1, metavar="S", help="QSS step")
    p.add_argument("--eta", type=float, default=1e-3, metavar="F", help="OXL deviation threshold")
    p.add_argument("--tau1", type=float, default=20.0, metavar="S", help="full-model warm-up length")
    p.add_argument("--probe-steps", type=int, default=200, metavar="N")
    p.add_argument("--out", metavar="PATH", help="trace CSV output")
    p.add_argument("--verdict", metavar="PATH", help="verdict JSON output")
    p.add_argument("--seed", type=int, default=0, metavar="N",
                   help="recorded in the verdict; the engines are deterministic")
    return p


def _load_inputs(parser, args):
    try:
        with open(args.case, encoding="utf-8") as fh:
            case = parse_case(fh.read())
        schedule = None
        if args.schedule:
            with open(args.schedule, encoding="utf-8") as fh:
                schedule = parse_schedule(fh.read(), case)
    except OSError as exc:
        parser.error(f"cannot read input: {exc}")
    except CaseValidationError as exc:
        parser.error(str(exc))
    return case, schedule


def run(args, case, schedule):
    clock = time.perf_counter()
    if args.mode == "hybrid":
        params = HybridParams(tau1=args.tau1, eta=args.eta, probe_steps=args.probe_steps,
                              dt_full=args.dt, dt_qss=args.dt_qss, t_end=args.t_end)
        trace, v = run_hybrid(case, schedule, params)
        extra = {"final_model": v.final_model, "seed": args.seed}
        return trace, verdict_report("hybrid", v.outcome, trace,
                                     [sb.as_dict() for sb in v.switch_backs], v.phases, extra)
    model, state = build_model(case)
    if args.mode == "qss":
        cfg = QssConfig(dt=args.dt_qss, dt_full=args.dt, tau1=args.tau1, t_end=args.t_end)
        trace = simulate_qss((model, state), schedule, cfg)
    else:
        trace = simulate_full((model, state), schedule, IntegratorConfig(dt=args.dt, t_end=args.t_end))
    phases = {args.mode: time.perf_counter() - clock}
    return trace, verdict_report(args.mode, classify_outcome(trace, model), trace,
                                 phases=phases, extra={"seed": args.seed})


def main(argv=None):
    parser = build_parser()
    args = parser.parse_args(argv)
    for name in ("t_end", "dt", "dt_qss", "eta", "tau1"):
        if not getattr(args, name) > 0.0:
            parser.error(f"--{name.replace('_', '-')} must be positive")
    if args.probe_steps < 1:
        parser.error("--probe-steps must be positive")
    case, schedule = _load_inputs(parser, args)
    trace, report = run(args, case, schedule)
    if args.out:
        write_trace(trace, args.out)
    if args.verdict:
        write_verdict(report, args.verdict)
    json.dump({k: report[k] for k in ("mode", "outcome", "status", "t_final")}, sys.stdout)
    sys.stdout.write("\n")
    return 0


def cli_main(args):
    """Run the CLI with an argument list and return the exit status."""
    try:
        return main(list(args))
    except SystemExit as exc:
        return exc.code if isinstance(exc.code, int) else 2


if __name__ == "__main__":
    sys.exit(main())
