"""Command-line entry point.

Exit status: 0 when every requirement holds, 1 on a requirement
violation, 2 on a usage or input error.
"""
from __future__ import annotations

import argparse
import json
import os
import sys
from dataclasses import asdict, dataclass, field
from pathlib import Path

from . import _data
from .controller import default_controller, load_controller
from .discrete import (EventTrace, SequenceSpec, all_initial_statuses, conform, explore,
                       load_scenario, simulate_events)
from .errors import EpsError
from .hybrid import SimConfig, run_hybrid
from .reliability import (FailureModel, closure, format_probability, load_failure_model,
                          minimal_cut_sets, mission_failure_probability, must_handle_combinations,
                          second_order_bounds)
from .requirements import ReliabilitySpec, compile_no_paralleling, load_requirements
from .topology import load_topology

EXIT_PASS, EXIT_VIOLATION, EXIT_USAGE = 0, 1, 2
OUT_ENV = "EPSVP_OUT"


class UsageError(Exception):
    pass


@dataclass
class RunManifest:
    command: str
    topology: str
    requirements: str
    controller: str  # path, or "generate:naive" / "generate:refined"
    scenarios: list = field(default_factory=list)
    out: str = ""
    flags: dict = field(default_factory=dict)

    def write(self, directory: Path):
        (directory / "manifest.json").write_text(json.dumps(asdict(self), indent=2,
                                                            sort_keys=True) + "\n")


# -- loading ------------------------------------------------------------------------

def _source(path, bundled):
    if path is None:
        return _data.data_text(bundled), f"<bundled:{bundled}>"
    p = Path(path)
    if not p.is_file():
        raise UsageError(f"no such file: {path}")
    return p, str(p)


def _load_models(args):
    topo_src, topo_name = _source(args.topology, _data.CANONICAL_TOPOLOGY)
    req_src, req_name = _source(args.requirements, _data.CANONICAL_REQUIREMENTS)
    topology = load_topology(topo_src)
    req = load_requirements(req_src)
    req.validate(topology, strict=False)
    lists = [type(pl)(pl.bus, pl.effective(topology), pl.requirement)
             for pl in req.priority_lists]
    if args.controller:
        ctl_src, ctl_name = _source(args.controller, None)
        fsm = load_controller(ctl_src, topology)
    else:
        mode = args.generate_controller or "refined"
        fsm = default_controller(topology, lists, refined=(mode == "refined"), bands=req.bands)
        ctl_name = f"generate:{mode}"
    return topology, req, lists, fsm, (topo_name, req_name, ctl_name)


def _out_dir(args):
    out = Path(args.out or os.environ.get(OUT_ENV) or "epsvp-out")
    try:
        out.mkdir(parents=True, exist_ok=True)
    except OSError as exc:
        raise UsageError(f"cannot create output directory {out}: {exc.strerror}") from None
    if not os.access(out, os.W_OK):
        raise UsageError(f"output directory {out} is not writable")
    return out


def _dump(path: Path, doc):
    path.write_text(json.dumps(doc, indent=2, sort_keys=True) + "\n")


def _manifest(args, names, out, scenarios=(), **flags):
    m = RunManifest(args.command, *names, scenarios=list(scenarios), out=str(out),
                    flags={k: v for k, v in flags.items() if v is not None})
    m.write(out)
    return m


# -- commands --------------------------------------------------------------------------

def cmd_check(args):
    topology, req, lists, fsm, names = _load_models(args)
    out = _out_dir(args)
    prop = compile_no_paralleling(topology)
    res = explore(topology, fsm, prop, args.fault_budget,
                  initial_status=all_initial_statuses(topology), priority_lists=lists,
                  max_states=args.max_states, step_duration=args.step or 1e-3)
    checked = [prop.requirement] + [pl.requirement for pl in lists if pl.requirement]
    verdicts = {}
    for rid in checked:
        if res.passed:
            verdicts[rid] = "Pass"
        else:
            verdicts[rid] = "Fail" if rid == res.verdict.requirement else "Inconclusive"
    report = {"property": prop.as_ltl(), "forbidden": prop.to_list(), "verdicts": verdicts,
              "statesVisited": res.states_visited, "maxDepth": res.max_depth,
              "faultBudget": args.fault_budget}
    scenarios = []
    if not res.passed:
        report["detail"] = res.verdict.detail
        report["counterexample"] = "counterexample.jsonl"
        (out / "counterexample.jsonl").write_text(res.verdict.counterexample.dumps())
        _dump(out / "counterexample_scenario.json", res.verdict.scenario.to_dict())
    if args.scenario:
        sc_src, sc_name = _source(args.scenario, None)
        scenarios.append(sc_name)
        trace = simulate_events(topology, fsm, load_scenario(sc_src, topology))
        (out / "trace.jsonl").write_text(trace.dumps())
    _dump(out / "check_report.json", report)
    _manifest(args, names, out, scenarios, faultBudget=args.fault_budget,
              maxStates=args.max_states, step=args.step)
    for rid, v in verdicts.items():
        print(f"{rid}: {v}")
    print(f"{res.states_visited} states, depth {res.max_depth}, {res.elapsed:.3f} s")
    if not res.passed:
        print(f"counterexample ({res.verdict.detail}) written to {out / 'counterexample.jsonl'}")
    return EXIT_PASS if res.passed else EXIT_VIOLATION


def cmd_simulate(args):
    topology, req, lists, fsm, names = _load_models(args)
    out = _out_dir(args)
    sc_src, sc_name = _source(args.scenario, _data.HANDOVER_SCENARIO)
    scenario = load_scenario(sc_src, topology)
    duration = args.duration or scenario.duration or 2.0
    cfg = SimConfig(step_size=args.step or 1e-5, duration=duration,
                    controller_period=fsm.controller_period)
    res = run_hybrid(topology, fsm, scenario, cfg, bands=req.bands)
    res.waveforms.to_csv(out / "waveforms.csv")
    (out / "observer_report.json").write_text(res.report.dumps() + "\n")
    (out / "trace.jsonl").write_text(res.trace.dumps())
    _manifest(args, names, out, [sc_name], step=cfg.step_size, duration=cfg.duration)
    for note in res.report.notes:
        print(f"note: {note}")
    for v in res.report.violations:
        print(f"{v.requirement} violated on {v.signal} from {v.start:.6f} s to {v.end:.6f} s: "
              f"{v.detail}")
    if res.report.empty:
        print("observer report empty")
    return EXIT_PASS if res.report.empty else EXIT_VIOLATION


def cmd_reliability(args):
    topology, req, lists, fsm, names = _load_models(args)
    out = _out_dir(args)
    spec = req.reliability
    if args.threshold is not None:
        spec = ReliabilitySpec(args.threshold, spec.mission_duration)
    if args.rates:
        rates_src, _ = _source(args.rates, None)
        model = load_failure_model(rates_src, topology, spec.mission_duration)
    else:
        model = FailureModel.from_topology(topology, spec.mission_duration)
    targets = args.target or list(topology.essential_buses)
    ok = True
    per_target = {}
    for target in targets:
        cuts = minimal_cut_sets(topology, target)
        p, method = mission_failure_probability(cuts, model)
        entry = {"cutSets": [sorted(c.components) for c in cuts],
                 "probability": format_probability(p), "method": method,
                 "withinThreshold": p <= spec.threshold}
        if method != "exact":
            lo, hi = second_order_bounds(cuts, model)
            entry["secondOrder"] = format_probability(lo)
        per_target[target] = entry
        ok &= p <= spec.threshold
        print(f"{target}: P(loss) = {format_probability(p)} ({method}), "
              f"{'within' if p <= spec.threshold else 'ABOVE'} {spec.threshold:g}")
    combos = must_handle_combinations(model, spec, args.max_size)
    report = {"threshold": spec.threshold, "missionDuration": spec.mission_duration,
              "targets": per_target,
              "mustHandle": [{"failed": sorted(c.failed),
                              "probability": format_probability(c.joint_probability)}
                             for c in combos]}
    print(f"{len(combos)} must-handle combination(s)")
    if args.chain_check:
        results = closure(topology, fsm, combos, priority_lists=lists,
                          max_states=args.max_states)
        report["chainCheck"] = [{"failed": sorted(r.combination.failed),
                                 "verdict": "Pass" if r.passed else "Fail",
                                 **({} if r.passed else {"detail": r.result.verdict.detail})}
                                for r in results]
        for r in results:
            if not r.passed:
                ok = False
                print(f"uncovered combination {r.combination.label}: {r.result.verdict.detail}")
    _dump(out / "reliability_report.json", report)
    _manifest(args, names, out, chainCheck=args.chain_check, maxSize=args.max_size,
              threshold=args.threshold)
    return EXIT_PASS if ok else EXIT_VIOLATION


def cmd_paths(args):
    topo_src, _ = _source(args.topology, _data.CANONICAL_TOPOLOGY)
    topology = load_topology(topo_src)
    doc = {bus: [{"source": p.source, "contactors": sorted(p.contactors)}
                 for p in topology.enumerate_paths(bus)]
           for bus in topology.buses}
    text = json.dumps(doc, indent=2, sort_keys=True)
    print(text)
    if args.out:
        out = _out_dir(args)
        (out / "paths.json").write_text(text + "\n")
    return EXIT_PASS


def _trace_or_spec(path):
    """A sequence spec (one JSON object with ``patterns``) or a line-per-event trace."""
    p = Path(path)
    if not p.is_file():
        raise UsageError(f"no such file: {path}")
    text = p.read_text()
    try:
        doc = json.loads(text)
    except json.JSONDecodeError:
        doc = None
    if isinstance(doc, dict) and "patterns" in doc:
        return SequenceSpec.from_dict(doc)
    return EventTrace.loads(text)


def cmd_trace_diff(args):
    trace = _trace_or_spec(args.trace)
    if not isinstance(trace, EventTrace):
        raise UsageError(f"{args.trace} is not a trace file")
    expected = _trace_or_spec(args.expected)
    if isinstance(expected, EventTrace):
        expected = SequenceSpec.from_trace(expected, args.expected)
    verdict = conform(trace, expected)
    if verdict.passed:
        print(f"conforms: all {len(expected.patterns)} patterns matched in order")
        return EXIT_PASS
    print(f"does not conform: {verdict.detail}")
    return EXIT_VIOLATION


# -- argument parsing ---------------------------------------------------------------------

def build_parser():
    common = argparse.ArgumentParser(add_help=False)
    common.add_argument("--topology", help="topology file (default: bundled canonical model)")
    common.add_argument("--requirements", help="requirements file (default: bundled)")
    ctl = common.add_mutually_exclusive_group()
    ctl.add_argument("--controller", help="controller state-machine file")
    ctl.add_argument("--generate-controller", choices=("naive", "refined"),
                     help="generate the priority controller (default: refined)")
    common.add_argument("--out", help=f"output directory (default: ${OUT_ENV} or ./epsvp-out)")
    common.add_argument("--max-states", type=int, default=10_000_000)

    p = argparse.ArgumentParser(prog="epsvp", description=__doc__.splitlines()[0])
    sub = p.add_subparsers(dest="command", required=True)

    c = sub.add_parser("check", parents=[common], help="exhaustive bounded check")
    c.add_argument("--fault-budget", type=int, default=2)
    c.add_argument("--step", type=float, help="macro-step duration in seconds (default 1e-3)")
    c.add_argument("--scenario", help="also write the discrete trace of this scenario")
    c.set_defaults(func=cmd_check)

    s = sub.add_parser("simulate", parents=[common], help="hybrid simulation with observers")
    s.add_argument("--scenario", help="scenario file (default: bundled APU handover)")
    s.add_argument("--step", type=float, help="integration step in seconds (default 1e-5)")
    s.add_argument("--duration", type=float, help="run length in seconds")
    s.set_defaults(func=cmd_simulate)

    r = sub.add_parser("reliability", parents=[common], help="cut sets and must-handle faults")
    r.add_argument("--rates", help="failure-rate file overriding the topology's rates")
    r.add_argument("--target", action="append", help="bus or load (default: essential buses)")
    r.add_argument("--threshold", type=float, help="override the probability threshold")
    r.add_argument("--max-size", type=int, default=4)
    r.add_argument("--chain-check", action="store_true",
                   help="explore every must-handle combination with the controller")
    r.set_defaults(func=cmd_reliability)

    a = sub.add_parser("paths", help="list source paths per bus")
    a.add_argument("--topology")
    a.add_argument("--out")
    a.set_defaults(func=cmd_paths)

    t = sub.add_parser("trace-diff", help="check a trace against an expected sequence")
    t.add_argument("trace", help="trace file (one JSON event per line)")
    t.add_argument("expected", help="sequence spec or reference trace")
    t.set_defaults(func=cmd_trace_diff)
    return p


def main(argv=None):
    parser = build_parser()
    args = parser.parse_args(argv)
    try:
        return args.func(args)
    except UsageError as exc:
        parser.print_usage(sys.stderr)
        print(f"epsvp: error: {exc}", file=sys.stderr)
    except (EpsError, OSError) as exc:
        print(f"epsvp: error: {exc}", file=sys.stderr)
    return EXIT_USAGE


if __name__ == "__main__":
    sys.exit(main())
