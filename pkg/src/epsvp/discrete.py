"""Event-driven execution of the closed loop and explicit-state safety checking.

Time advances in macro-steps. In each macro-step at most one environment
event is applied, the controller receives one ``tick`` and then runs on
``none`` inputs until it stops moving, and contactor commands take effect
at the end of the step (or later, for contactors whose actuation delay
spans several steps). The controller therefore sees the effect of a
command one macro-step after issuing it.
"""
from __future__ import annotations

import json
import math
import time
from collections import deque
from dataclasses import dataclass, field, replace
from itertools import product
from typing import Iterable

from .controller import NO_EVENT, TICK, BpcuFsm, Observation
from .errors import LivelockError, ParseError, StateBoundExceeded, ValidationError
from .requirements import SafetyProperty, check_priority
from .topology import ContactorConfig, Status, Topology, read_document

BPCU = "BPCU"

# Status changes the environment may inject during exploration.
DEFAULT_ENV_MOVES = {
    Status.AVAILABLE: (Status.FAILED,),
    Status.OFF: (Status.AVAILABLE, Status.FAILED),
    Status.FAILED: (),
}


# -- traces ---------------------------------------------------------------------

@dataclass(frozen=True)
class TraceEvent:
    time: int
    actor: str
    event: str
    payload: str = ""

    def to_json(self):
        return json.dumps({"t": self.time, "actor": self.actor, "event": self.event,
                           "payload": self.payload})


class EventTrace:
    """Ordered, timestamped record of what happened in a run."""

    def __init__(self, events: Iterable[TraceEvent] = ()):
        self.events = tuple(events)
        for a, b in zip(self.events, self.events[1:]):
            if b.time < a.time:
                raise ValidationError(f"trace time decreases at {b}")

    def __iter__(self):
        return iter(self.events)

    def __len__(self):
        return len(self.events)

    def __getitem__(self, i):
        return self.events[i]

    def __eq__(self, other):
        return isinstance(other, EventTrace) and self.events == other.events

    def __repr__(self):
        return f"EventTrace({len(self.events)} events)"

    def dumps(self):
        return "".join(e.to_json() + "\n" for e in self.events)

    @classmethod
    def loads(cls, text):
        events = []
        for n, line in enumerate(text.splitlines(), 1):
            if not line.strip():
                continue
            try:
                rec = json.loads(line)
                events.append(TraceEvent(int(rec["t"]), rec["actor"], rec["event"],
                                         rec.get("payload", "")))
            except (json.JSONDecodeError, KeyError, TypeError, ValueError):
                raise ParseError(f"malformed trace record on line {n}") from None
        return cls(events)

    def pairs(self):
        return [(e.actor, e.event) for e in self.events]


def configs_from_trace(topology: Topology, trace: EventTrace):
    """Replay contactor changes; yield (time, ContactorConfig) after each change."""
    closed = set()
    domain = frozenset(topology.contactors)
    for e in trace:
        if e.actor in domain and e.event in ("closed", "opened"):
            (closed.add if e.event == "closed" else closed.discard)(e.actor)
            yield e.time, ContactorConfig(domain, frozenset(closed))


# -- scenarios --------------------------------------------------------------------

@dataclass(frozen=True, order=True)
class EnvEvent:
    time: float
    component: str
    status: Status

    def label(self):
        return f"{self.component}:{self.status.value}"


@dataclass(frozen=True)
class Scenario:
    name: str = ""
    initial_status: tuple = ()  # ((source, Status), ...)
    events: tuple[EnvEvent, ...] = ()
    step_duration: float = 1e-3
    duration: float | None = None

    def status_map(self, topology: Topology):
        status = {s: Status.AVAILABLE for s in topology.sources}
        status.update(dict(self.initial_status))
        return status

    def validate(self, topology: Topology):
        for src, _ in self.initial_status:
            if src not in topology.sources:
                raise ValidationError(f"scenario sets status of unknown source {src!r}", src)
        for ev in self.events:
            if ev.component in topology.sources:
                continue
            if ev.component in topology.contactors and ev.status is Status.FAILED:
                continue
            raise ValidationError(f"scenario event on unknown source/contactor {ev.component!r}",
                                  ev.component)
        return self

    def to_dict(self):
        doc = {"name": self.name,
               "initialStatus": {k: v.value for k, v in self.initial_status},
               "events": [{"time": e.time, "component": e.component, "status": e.status.value}
                          for e in self.events],
               "stepDuration": self.step_duration}
        if self.duration is not None:
            doc["duration"] = self.duration
        return doc

    @classmethod
    def from_dict(cls, doc):
        try:
            initial = tuple(sorted((k, Status(v)) for k, v in doc.get("initialStatus", {}).items()))
            events = tuple(sorted(
                EnvEvent(float(e["time"]), e.get("component") or e["source"], Status(e["status"]))
                for e in doc.get("events", ())))
            return cls(doc.get("name", ""), initial, events,
                       float(doc.get("stepDuration", 1e-3)), doc.get("duration"))
        except (KeyError, TypeError, ValueError) as exc:
            raise ParseError(f"malformed scenario: {exc}") from None


def load_scenario(source, topology: Topology | None = None) -> Scenario:
    doc = read_document(source)
    if not isinstance(doc, dict):
        raise ParseError("scenario document must be a JSON object")
    sc = Scenario.from_dict(doc)
    if topology is not None:
        sc.validate(topology)
    return sc


# -- closed-loop model ------------------------------------------------------------

@dataclass(frozen=True)
class GlobalState:
    controller: str
    closed: frozenset
    pending: tuple  # ((steps until applied, verb, contactor), ...) in issue order
    status: tuple  # ((source, Status), ...)
    budget: int
    shed: frozenset = frozenset()
    stuck: frozenset = frozenset()  # contactors failed open

    @property
    def available(self):
        return frozenset(s for s, st in self.status if st is Status.AVAILABLE)

    def status_of(self, source):
        return dict(self.status)[source]


class DiscreteModel:
    """Macro-step semantics shared by simulation and exploration."""

    def __init__(self, topology: Topology, fsm: BpcuFsm, step_duration=1e-3, quiesce_bound=64):
        fsm.validate(topology)
        self.topology = topology
        self.fsm = fsm
        self.step_duration = step_duration
        self.quiesce_bound = quiesce_bound
        self._contactors = tuple(topology.contactors)
        self._delay = {}
        for c in self._contactors:
            comp = topology[c]
            self._delay[("open", c)] = self._steps(comp.open_delay)
            self._delay[("close", c)] = self._steps(comp.close_delay)

    def _steps(self, seconds):
        return max(1, math.ceil(seconds / self.step_duration - 1e-9))

    def initial_state(self, status, budget=0) -> GlobalState:
        full = {s: Status.AVAILABLE for s in self.topology.sources}
        full.update({k: Status(v) for k, v in dict(status).items()})
        return GlobalState(self.fsm.initial, frozenset(), (),
                           tuple(sorted(full.items())), budget)

    def config(self, state: GlobalState) -> ContactorConfig:
        return ContactorConfig(frozenset(self._contactors), state.closed)

    def observe(self, state: GlobalState) -> Observation:
        return Observation(state.status, self._contactors, state.closed,
                           frozenset(self._contactors) - state.closed)

    def step(self, state: GlobalState, env: EnvEvent | None = None):
        """One macro-step. Returns (successor, [(actor, event, payload), ...])."""
        records = []
        status, budget, stuck = state.status, state.budget, state.stuck
        if env is not None:
            if env.component in self.topology.contactors:
                stuck = stuck | {env.component}
            else:
                status = tuple(sorted({**dict(status), env.component: env.status}.items()))
            budget = max(0, budget - 1)
            records.append((env.component, env.status.value, ""))

        obs = Observation(status, self._contactors, state.closed,
                          frozenset(self._contactors) - state.closed)
        loc = state.controller
        shed = set(state.shed)
        pending = list(state.pending)
        event = TICK
        for _ in range(self.quiesce_bound):
            nxt, actions = self.fsm.step(loc, event, obs)
            if nxt == loc and not actions and event != TICK:
                break
            if nxt != loc:
                records.append((BPCU, "transition", f"{loc}->{nxt}"))
            for a in actions:
                records.append((BPCU, str(a), ""))
                if a.verb in ("open", "close"):
                    pending.append((self._delay[(a.verb, a.target)], a.verb, a.target))
                elif a.verb == "shed" and a.target not in shed:
                    shed.add(a.target)
                    records.append((a.target, "shed", ""))
                elif a.verb == "restore" and a.target in shed:
                    shed.discard(a.target)
                    records.append((a.target, "restored", ""))
            loc = nxt
            event = NO_EVENT
        else:
            raise LivelockError(f"controller did not quiesce within {self.quiesce_bound} "
                                f"internal steps (state {loc!r})", records)

        closed = set(state.closed)
        remaining = []
        for due, verb, cid in pending:
            due -= 1
            if due > 0:
                remaining.append((due, verb, cid))
                continue
            if verb == "close" and cid not in closed and cid not in stuck:
                closed.add(cid)
                records.append((cid, "closed", ""))
            elif verb == "open" and cid in closed:
                closed.discard(cid)
                records.append((cid, "opened", ""))
        if stuck & closed:
            for cid in sorted(stuck & closed):
                closed.discard(cid)
                records.append((cid, "opened", "failed"))
        succ = GlobalState(loc, frozenset(closed), tuple(remaining), status, budget,
                           frozenset(shed), stuck)
        return succ, records

    def is_quiescent(self, state: GlobalState):
        succ, records = self.step(state)
        return succ == state and not records


def simulate_events(topology: Topology, fsm: BpcuFsm, scenario: Scenario,
                    max_steps=100_000, quiesce_bound=64) -> EventTrace:
    """Run a timed scenario to quiescence and return the trace."""
    scenario.validate(topology)
    model = DiscreteModel(topology, fsm, scenario.step_duration, quiesce_bound)
    state = model.initial_state(scenario.status_map(topology))
    queue = deque(sorted(scenario.events))
    events = [TraceEvent(0, s, st.value, "initial") for s, st in state.status]
    k = 0
    while k < max_steps:
        env = None
        if queue and _step_index(queue[0].time, scenario.step_duration) <= k:
            env = queue.popleft()
        try:
            succ, records = model.step(state, env)
        except LivelockError as exc:
            events.extend(TraceEvent(k, *r) for r in exc.trace)
            raise LivelockError(str(exc), EventTrace(events)) from None
        events.extend(TraceEvent(k, *r) for r in records)
        if not queue and succ == state and not records:
            break
        state = succ
        k += 1
    return EventTrace(events)


def _step_index(t, step_duration):
    return max(0, math.ceil(t / step_duration - 1e-9))


# -- exploration ----------------------------------------------------------------

@dataclass(frozen=True)
class Verdict:
    passed: bool
    requirement: str | None = None
    counterexample: EventTrace | None = None
    scenario: Scenario | None = None
    detail: str = ""
    failed_index: int | None = None  # 1-based, for conformance verdicts

    def __bool__(self):
        return self.passed


PASS = Verdict(True)


@dataclass(frozen=True)
class ExplorationResult:
    verdict: Verdict
    states_visited: int
    max_depth: int
    elapsed: float
    quiescent_states: int = 0

    @property
    def passed(self):
        return self.verdict.passed


def all_initial_statuses(topology: Topology, values=(Status.AVAILABLE, Status.OFF)):
    return [dict(zip(topology.sources, combo))
            for combo in product(values, repeat=len(topology.sources))]


def explore(topology: Topology, fsm: BpcuFsm, prop: SafetyProperty, fault_budget: int = 0, *,
            initial_status=None, fault_events=None, priority_lists=(), check_essential=False,
            max_states=10_000_000, step_duration=1e-3, quiesce_bound=64) -> ExplorationResult:
    """Breadth-first search over every interleaving of environment events.

    ``initial_status`` is one status mapping or a list of them (default: all
    sources available). ``fault_events`` restricts the injectable events to
    the given ``(component, Status)`` pairs, each usable once; by default any
    source may change status along :data:`DEFAULT_ENV_MOVES`.

    The safety property is checked on every reached contactor configuration.
    On quiescent states, each priority list with an available source must
    be satisfied and, with ``check_essential``, every essential bus must be
    fed by an available source.
    """
    if fault_budget < 0:
        raise ValidationError("fault budget must be >= 0")
    started = time.perf_counter()
    model = DiscreteModel(topology, fsm, step_duration, quiesce_bound)
    if initial_status is None:
        initial_status = [{}]
    elif isinstance(initial_status, dict):
        initial_status = [initial_status]
    injectable = None
    if fault_events is not None:
        injectable = tuple(sorted((c, Status(s)) for c, s in fault_events))

    parent: dict[GlobalState, tuple] = {}
    frontier = deque()
    for st in initial_status:
        s0 = model.initial_state(st, fault_budget)
        if injectable is not None:
            s0 = replace(s0, budget=min(fault_budget, len(injectable)))
        if s0 not in parent:
            parent[s0] = (None, None, 0)
            frontier.append(s0)
    max_depth = 0
    quiescent = 0

    def finish(verdict):
        return ExplorationResult(verdict, len(parent), max_depth,
                                 time.perf_counter() - started, quiescent)

    def fail(state, requirement, detail):
        path = []
        s = state
        while s is not None:
            prev, env, depth = parent[s]
            if prev is not None:
                path.append((depth - 1, env))
            s = prev
        path.reverse()
        origin = state
        while parent[origin][0] is not None:
            origin = parent[origin][0]
        scenario = Scenario(
            "counterexample", origin.status,
            tuple(EnvEvent(k * step_duration, e.component, e.status)
                  for k, e in path if e is not None),
            step_duration)
        trace = _replay(model, origin, path)
        return finish(Verdict(False, requirement, trace, scenario, detail))

    for s0 in list(frontier):
        bad = prop.evaluate(model.config(s0))
        if bad:
            return fail(s0, prop.requirement, f"forbidden set {sorted(bad)} closed")

    while frontier:
        state = frontier.popleft()
        depth = parent[state][2]
        max_depth = max(max_depth, depth)
        for env in _moves(state, injectable):
            succ, records = model.step(state, env)
            if env is None and succ == state and not records:
                quiescent += 1
                problem = _quiescent_problem(model, state, priority_lists, check_essential)
                if problem:
                    return fail(state, *problem)
                continue
            if succ in parent:
                continue
            parent[succ] = (state, env, depth + 1)
            bad = prop.evaluate(model.config(succ))
            if bad:
                return fail(succ, prop.requirement, f"forbidden set {sorted(bad)} closed")
            if len(parent) > max_states:
                raise StateBoundExceeded(f"state bound {max_states} exceeded", len(parent))
            frontier.append(succ)
    return finish(PASS)


def _moves(state: GlobalState, injectable):
    yield None
    if state.budget <= 0:
        return
    status = dict(state.status)
    if injectable is None:
        for src, st in state.status:
            for new in DEFAULT_ENV_MOVES[st]:
                yield EnvEvent(0.0, src, new)
        return
    for comp, new in injectable:
        if comp in status:
            if status[comp] != new:
                yield EnvEvent(0.0, comp, new)
        elif comp not in state.stuck:
            yield EnvEvent(0.0, comp, new)


def _quiescent_problem(model, state, lists, check_essential):
    topo = model.topology
    avail = state.available
    config = model.config(state)
    if lists:
        verdicts = check_priority(topo, lists, config, avail)
        for pl in lists:
            if not any(s in avail for s in pl.effective(topo)):
                continue
            v = verdicts[pl.bus]
            if not v.ok:
                return (pl.requirement or f"priority:{pl.bus}",
                        f"{pl.bus}: {v.status} (expected {v.expected}, "
                        f"got {sorted(v.actual)})")
    if check_essential:
        for bus in topo.essential_buses:
            if not topo.powered_sources(config, bus, avail):
                return "R5", f"essential bus {bus} unpowered"
    return None


def _replay(model, origin, path):
    events = [TraceEvent(0, s, st.value, "initial") for s, st in origin.status]
    state = origin
    for k, env in path:
        state, records = model.step(state, env)
        events.extend(TraceEvent(k, *r) for r in records)
    return EventTrace(events)


# -- sequence-diagram conformance -------------------------------------------------

@dataclass(frozen=True)
class SequenceSpec:
    patterns: tuple[tuple[str, str], ...]
    name: str = ""
    note: str = ""

    def __post_init__(self):
        object.__setattr__(self, "patterns", tuple(tuple(p) for p in self.patterns))
        if not self.patterns:
            raise ValidationError("sequence spec must not be empty")

    def validate(self, topology: Topology):
        known = set(topology.components) | {BPCU}
        for actor, _ in self.patterns:
            if actor not in known:
                raise ValidationError(f"sequence spec names unknown actor {actor!r}", actor)
        return self

    def to_dict(self):
        return {"name": self.name, "note": self.note,
                "patterns": [{"actor": a, "event": e} for a, e in self.patterns]}

    @classmethod
    def from_dict(cls, doc):
        try:
            return cls(tuple((p["actor"], p["event"]) for p in doc["patterns"]),
                       doc.get("name", ""), doc.get("note", ""))
        except (KeyError, TypeError) as exc:
            raise ParseError(f"malformed sequence spec: {exc}") from None

    @classmethod
    def from_trace(cls, trace: EventTrace, name=""):
        return cls(tuple(trace.pairs()), name)


def load_sequence_spec(source) -> SequenceSpec:
    return SequenceSpec.from_dict(read_document(source))


def conform(trace: EventTrace, spec: SequenceSpec) -> Verdict:
    """Is ``spec`` an ordered subsequence of the trace (matching actor and event)?"""
    pos = 0
    events = trace.events
    for i, (actor, event) in enumerate(spec.patterns, 1):
        while pos < len(events) and (events[pos].actor, events[pos].event) != (actor, event):
            pos += 1
        if pos == len(events):
            return Verdict(False, detail=f"pattern {i} ({actor}, {event}) not matched",
                           failed_index=i)
        pos += 1
    return PASS
