"""Bus Power Control Unit controllers as explicit finite-state machines.

A controller reads an *observation* at every step: the status of each
source (``L1 == Available``), the sensed state of each contactor
(``C2 == Open``) and, for every contactor, a ``safe_<id>`` flag that is
true once the contactor is open and its current has decayed below the
safety threshold. Each step also carries one input symbol: ``tick`` (the
controller clock) or ``none`` (an internal step with no event).

Guards are boolean expressions over those names using ``and``, ``or``,
``not``, ``==``, ``!=``, parentheses and the constants ``true``/``false``.
Actions are ``open(C)``, ``close(C)``, ``shed(L)`` and ``restore(L)``.
"""
from __future__ import annotations

import ast
import json
import math
from dataclasses import dataclass, field
from functools import lru_cache
from itertools import product

from sympy import And, Not, Or, Symbol
from sympy.logic import SOPform

from .errors import FsmError, ParseError, UnknownIdError, ValidationError
from .requirements import DEFAULT_BANDS, PriorityList, compile_no_paralleling
from .topology import ContactorConfig, Status, Switch, Topology, read_document

TICK = "tick"
NO_EVENT = "none"
DEFAULT_INPUTS = (TICK, NO_EVENT)
VERBS = ("open", "close", "shed", "restore")
INITIAL = "init"

_CONSTANTS = {s.value: s.value for s in Status}
_CONSTANTS.update({s.value: s.value for s in Switch})
_CONSTANTS.update(true=True, false=False)

_GLOBALS = {"__builtins__": {}, **_CONSTANTS}

_ALLOWED_NODES = (ast.Expression, ast.BoolOp, ast.And, ast.Or, ast.UnaryOp, ast.Not,
                  ast.Compare, ast.Eq, ast.NotEq, ast.Name, ast.Load)


@dataclass(frozen=True)
class Guard:
    text: str
    names: frozenset = field(compare=False)
    _code: object = field(compare=False, repr=False)

    def __call__(self, env) -> bool:
        try:
            return bool(eval(self._code, _GLOBALS, env))
        except NameError as exc:
            raise FsmError(f"guard {self.text!r}: {exc}") from None

    def __str__(self):
        return self.text


def parse_guard(text: str) -> Guard:
    try:
        tree = ast.parse(text.strip() or "true", mode="eval")
    except SyntaxError as exc:
        raise ParseError(f"malformed guard {text!r}: {exc.msg}") from None
    names = set()
    for node in ast.walk(tree):
        if not isinstance(node, _ALLOWED_NODES):
            raise ParseError(f"guard {text!r}: unsupported construct {type(node).__name__}")
        if isinstance(node, ast.Compare) and len(node.ops) != 1:
            raise ParseError(f"guard {text!r}: chained comparison")
        if isinstance(node, ast.Name) and node.id not in _CONSTANTS:
            names.add(node.id)
    return Guard(text, frozenset(names), compile(tree, "<guard>", "eval"))


TRUE = parse_guard("true")


@dataclass(frozen=True, order=True)
class Action:
    verb: str
    target: str

    def __post_init__(self):
        if self.verb not in VERBS:
            raise ParseError(f"unknown action verb {self.verb!r}")

    def __str__(self):
        return f"{self.verb}({self.target})"

    @classmethod
    def parse(cls, text: str) -> "Action":
        text = text.strip()
        if text.endswith(")") and "(" in text:
            verb, _, rest = text[:-1].partition("(")
        else:
            verb, _, rest = text.partition(" ")
        if not rest.strip():
            raise ParseError(f"malformed action {text!r}")
        return cls(verb.strip(), rest.strip())


@dataclass(frozen=True)
class Transition:
    source: str
    target: str
    guard: Guard = TRUE
    actions: tuple[Action, ...] = ()
    on: str | None = TICK

    def enabled(self, event, env):
        return (self.on is None or self.on == event) and self.guard(env)

    def verbs(self, verb):
        return frozenset(a.target for a in self.actions if a.verb == verb)


@dataclass(frozen=True)
class Observation:
    """What the controller sees at one step. Hashable so steps can be memoised."""

    status: tuple  # ((source id, Status), ...)
    contactors: tuple  # all contactor ids
    closed: frozenset
    safe: frozenset

    @classmethod
    def make(cls, status, contactors, closed, safe=None):
        closed = frozenset(closed)
        if safe is None:
            safe = frozenset(contactors) - closed
        return cls(tuple(sorted((k, Status(v)) for k, v in dict(status).items())),
                   tuple(sorted(contactors)), closed, frozenset(safe))

    def env(self):
        env = dict(_CONSTANTS)
        for src, st in self.status:
            env[src] = st.value
        for c in self.contactors:
            env[c] = Switch.CLOSED.value if c in self.closed else Switch.OPEN.value
            env[f"safe_{c}"] = c in self.safe
        return env

    @property
    def available(self):
        return frozenset(s for s, st in self.status if st is Status.AVAILABLE)


@dataclass(frozen=True)
class BreakBeforeMakeParams:
    current_threshold_fraction: float = 0.10
    confirm_samples: int = 3
    deterministic_delay: float = 1e-3

    def __post_init__(self):
        if not 0 < self.current_threshold_fraction < 1:
            raise ValidationError("currentThresholdFraction must lie in (0, 1)")
        if self.confirm_samples < 1:
            raise ValidationError("confirmSamples must be >= 1")
        if self.deterministic_delay < 0:
            raise ValidationError("deterministicDelay must be >= 0")


class BpcuFsm:
    """Deterministic controller state machine.

    Transitions leaving a state are tried in declaration order; the first
    enabled one fires. With none enabled the machine stays put and emits
    nothing.
    """

    def __init__(self, states, initial, transitions, inputs=DEFAULT_INPUTS, name="",
                 refinement=None, controller_period=1e-3):
        self.name = name
        self.states = tuple(states)
        self.initial = initial
        self.inputs = tuple(inputs)
        self.transitions = tuple(transitions)
        self.refinement: BreakBeforeMakeParams | None = refinement
        self.controller_period = controller_period
        if len(set(self.states)) != len(self.states):
            raise ValidationError("duplicate state names")
        known = set(self.states)
        if initial not in known:
            raise ValidationError(f"initial state {initial!r} is not declared", initial)
        self._out: dict[str, list[Transition]] = {s: [] for s in self.states}
        for tr in self.transitions:
            for s in (tr.source, tr.target):
                if s not in known:
                    raise ValidationError(f"transition uses undeclared state {s!r}", s)
            if tr.on is not None and tr.on not in self.inputs:
                raise ValidationError(f"transition on unknown input {tr.on!r}", tr.on)
            self._out[tr.source].append(tr)
        self._step_cache = lru_cache(maxsize=1 << 16)(self._step_obs)

    def __repr__(self):
        return f"BpcuFsm({self.name!r}, states={len(self.states)}, transitions={len(self.transitions)})"

    @property
    def size(self):
        return len(self.states), len(self.transitions)

    def outgoing(self, state):
        try:
            return self._out[state]
        except KeyError:
            raise FsmError(f"unknown state {state!r}") from None

    def step(self, state, event, env):
        """Apply one input. ``env`` is an :class:`Observation` or a plain dict."""
        if event not in self.inputs:
            raise FsmError(f"input {event!r} not in alphabet {self.inputs}")
        if isinstance(env, Observation):
            return self._step_cache(state, event, env)
        return self._fire(state, event, env)

    def _step_obs(self, state, event, obs):
        return self._fire(state, event, obs.env())

    def _fire(self, state, event, env):
        for tr in self.outgoing(state):
            if tr.enabled(event, env):
                return tr.target, tr.actions
        return state, ()

    def validate(self, topology: Topology):
        """Check every commanded id and guard variable against ``topology``."""
        contactors, loads, sources = set(topology.contactors), set(topology.loads), set(topology.sources)
        variables = sources | contactors | {f"safe_{c}" for c in contactors}
        for tr in self.transitions:
            for a in tr.actions:
                pool = contactors if a.verb in ("open", "close") else loads
                if a.target not in pool:
                    raise UnknownIdError(f"action {a} references unknown id {a.target!r}",
                                         a.target)
            for n in tr.guard.names:
                if n not in variables:
                    raise UnknownIdError(f"guard {tr.guard} references unknown {n!r}", n)
        return self

    def nondeterminism(self, topology: Topology):
        """Return the first (state, event, valuation) enabling two transitions, else None."""
        sources = set(topology.sources)
        for state in self.states:
            for event in self.inputs:
                trs = [t for t in self._out[state] if t.on is None or t.on == event]
                if len(trs) < 2:
                    continue
                names = sorted(set().union(*(t.guard.names for t in trs)))
                domains = []
                for n in names:
                    if n.startswith("safe_"):
                        domains.append((True, False))
                    elif n in sources:
                        domains.append(tuple(s.value for s in Status))
                    else:
                        domains.append((Switch.OPEN.value, Switch.CLOSED.value))
                for values in product(*domains):
                    env = dict(_CONSTANTS)
                    env.update(zip(names, values))
                    if sum(1 for t in trs if t.guard(env)) > 1:
                        return state, event, dict(zip(names, values))
        return None

    # -- serialisation -------------------------------------------------------
    def to_dict(self):
        doc = {
            "name": self.name,
            "states": list(self.states),
            "initial": self.initial,
            "inputs": list(self.inputs),
            "controllerPeriod": self.controller_period,
            "transitions": [
                {"from": t.source, "on": t.on, "guard": t.guard.text,
                 "actions": [str(a) for a in t.actions], "to": t.target}
                for t in self.transitions
            ],
        }
        if self.refinement is not None:
            r = self.refinement
            doc["refinement"] = {
                "currentThresholdFraction": r.current_threshold_fraction,
                "confirmSamples": r.confirm_samples,
                "deterministicDelay": r.deterministic_delay,
            }
        return doc

    @classmethod
    def from_dict(cls, doc):
        if not isinstance(doc, dict):
            raise ParseError("controller document must be a JSON object")
        try:
            transitions = [
                Transition(t["from"], t["to"], parse_guard(t.get("guard", "true")),
                           tuple(Action.parse(a) for a in t.get("actions", ())),
                           t.get("on", TICK))
                for t in doc["transitions"]
            ]
            refinement = None
            if doc.get("refinement"):
                r = doc["refinement"]
                refinement = BreakBeforeMakeParams(r["currentThresholdFraction"],
                                                   r["confirmSamples"], r["deterministicDelay"])
            return cls(doc["states"], doc["initial"], transitions,
                       tuple(doc.get("inputs", DEFAULT_INPUTS)), doc.get("name", ""),
                       refinement, doc.get("controllerPeriod", 1e-3))
        except (KeyError, TypeError) as exc:
            raise ParseError(f"malformed controller document: {exc}") from None

    def dumps(self):
        return json.dumps(self.to_dict(), indent=2)


def load_controller(source, topology: Topology | None = None) -> BpcuFsm:
    fsm = BpcuFsm.from_dict(read_document(source))
    if topology is not None:
        fsm.validate(topology)
    return fsm


def step_fsm(fsm: BpcuFsm, state, event, env):
    return fsm.step(state, event, env)


# -- priority-table controller generation -------------------------------------

@dataclass(frozen=True)
class Target:
    """Configuration the generated controller drives towards."""

    closed: frozenset
    shed: frozenset
    feeds: tuple  # ((bus, source), ...)

    @property
    def name(self):
        base = "+".join(sorted(self.closed)) or "all-open"
        if self.shed:
            base += "|shed:" + "+".join(sorted(self.shed))
        return base


def priority_target(topology: Topology, lists, available, bands=None) -> Target:
    """Per-bus first-available routing plus load shedding for one availability set.

    Buses are served in list order. Each takes the shortest path (ties in
    canonical order) from its first available source whose addition keeps
    the no-paralleling property; a bus with no admissible source stays
    unpowered.
    """
    bands = bands or DEFAULT_BANDS
    available = frozenset(available)
    prop = compile_no_paralleling(topology)
    closed: frozenset = frozenset()
    all_contactors = frozenset(topology.contactors)
    feeds = {}
    for pl in lists:
        for src in pl.effective(topology):
            if src not in available:
                continue
            paths = sorted((p for p in topology.enumerate_paths(pl.bus) if p.source == src),
                           key=lambda p: p._key)
            chosen = None
            for p in paths:
                trial = closed | p.contactors
                if _violates(prop, all_contactors, trial):
                    continue
                chosen = trial
                break
            if chosen is not None:
                closed = chosen
                feeds[pl.bus] = src
                break
    shed = _shedding(topology, closed, available, bands)
    return Target(closed, shed, tuple(sorted(feeds.items())))


def _violates(prop, contactors, closed):
    closed = frozenset(closed)
    return any(s <= closed for s in prop.forbidden)


def _shedding(topology, closed, available, bands):
    config = ContactorConfig(frozenset(topology.contactors), closed)
    shed = set()
    fed_by = {}
    for bus in topology.buses:
        srcs = topology.powered_sources(config, bus, available)
        if not srcs:
            shed.update(l for l in topology.loads_on(bus) if topology[l].sheddable)
        elif len(srcs) == 1:
            fed_by.setdefault(next(iter(srcs)), []).append(bus)
    for src, buses in sorted(fed_by.items()):
        gen = topology[src]

        def volts(bus):
            b = topology[bus]
            return gen.rated_voltage if b.bus_class == "AC" else bands[b.bus_class].nominal

        loads = [(l, volts(bus) ** 2 / topology[l].resistance)
                 for bus in buses for l in topology.loads_on(bus)]
        demand = sum(p for _, p in loads)
        candidates = sorted((l for l, _ in loads if topology[l].sheddable),
                            key=lambda l: (topology[l].shed_priority, l))
        power = dict(loads)
        for l in candidates:
            if demand <= gen.rated_power:
                break
            shed.add(l)
            demand -= power[l]
    return frozenset(shed)


def _guard_for(sources, vectors):
    """Minimal sum-of-products guard true exactly on the given availability vectors."""
    symbols = [Symbol(s) for s in sources]
    if len(vectors) == 2 ** len(sources):
        return "true"
    minterms = [[1 if s in v else 0 for s in sources] for v in vectors]
    expr = SOPform(symbols, minterms)

    def lit(e):
        if isinstance(e, Not):
            return f"{e.args[0]} != Available"
        return f"{e} == Available"

    def conj(e):
        if isinstance(e, And):
            return " and ".join(lit(a) for a in sorted(e.args, key=lambda a: sorted(map(str, a.free_symbols))))
        return lit(e)

    if isinstance(expr, Or):
        terms = sorted(conj(a) for a in expr.args)
        return " or ".join(f"({t})" if " and " in t else t for t in terms)
    return conj(expr)


def _transition(src_name, src: Target | None, dst: Target, guard):
    old_closed = src.closed if src else frozenset()
    old_shed = src.shed if src else frozenset()
    actions = ([Action("open", c) for c in sorted(old_closed - dst.closed)]
               + [Action("shed", l) for l in sorted(dst.shed - old_shed)]
               + [Action("close", c) for c in sorted(dst.closed - old_closed)]
               + [Action("restore", l) for l in sorted(old_shed - dst.shed)])
    return Transition(src_name, dst.name, guard, tuple(actions), TICK)


def generate_priority_controller(topology: Topology, lists, bands=None,
                                 name="priority-controller") -> BpcuFsm:
    """Naive controller that jumps straight to the target configuration.

    Open and close commands of a reconfiguration are issued in the same
    step; :func:`refine_break_before_make` fixes that.
    """
    lists = tuple(lists)
    for pl in lists:
        pl.validate(topology, strict=False)
        if not pl.effective(topology):
            raise ValidationError(f"bus {pl.bus!r} has no reachable source in its priority list",
                                  pl.bus)
    sources = topology.sources
    by_target: dict[Target, list[frozenset]] = {}
    for bits in product((False, True), repeat=len(sources)):
        avail = frozenset(s for s, b in zip(sources, bits) if b)
        by_target.setdefault(priority_target(topology, lists, avail, bands), []).append(avail)
    targets = sorted(by_target, key=lambda t: t.name)
    guards = {t: parse_guard(_guard_for(sources, by_target[t])) for t in targets}
    states = [INITIAL] + [t.name for t in targets]
    transitions = [_transition(INITIAL, None, t, guards[t]) for t in targets]
    for here in targets:
        for there in targets:
            if there is not here:
                transitions.append(_transition(here.name, here, there, guards[there]))
    return BpcuFsm(states, INITIAL, transitions, name=name)


def refine_break_before_make(fsm: BpcuFsm, params: BreakBeforeMakeParams | None = None,
                             controller_period=None) -> BpcuFsm:
    """Split every open-and-close transition into open / confirm / delay / close.

    The open half fires on the original guard. The machine then needs
    ``confirm_samples`` consecutive ticks on which every opened contactor
    reports ``safe_<id>``, waits ``ceil(delay / period)`` further ticks and
    only then issues the close commands.
    """
    params = params or BreakBeforeMakeParams()
    period = controller_period or fsm.controller_period
    delay_ticks = math.ceil(params.deterministic_delay / period - 1e-9)
    states = list(fsm.states)
    transitions = []
    for idx, tr in enumerate(fsm.transitions):
        opens, closes = tr.verbs("open"), tr.verbs("close")
        if not opens or not closes:
            transitions.append(tr)
            continue
        tag = f"{tr.source}>{tr.target}#{idx}"
        confirm = [f"{tag}:confirm{j}" for j in range(1, params.confirm_samples + 1)]
        wait = [f"{tag}:delay{j}" for j in range(1, delay_ticks + 1)]
        states.extend(confirm + wait)
        first = tuple(a for a in tr.actions if a.verb in ("open", "shed"))
        last = tuple(a for a in tr.actions if a.verb in ("close", "restore"))
        safe = parse_guard(" and ".join(f"safe_{c}" for c in sorted(opens)))
        unsafe = parse_guard(f"not ({safe.text})")
        transitions.append(Transition(tr.source, confirm[0], tr.guard, first, tr.on))
        chain = confirm[1:] + wait + [tr.target]
        for j, here in enumerate(confirm):
            nxt = chain[j]
            acts = last if nxt == tr.target else ()
            transitions.append(Transition(here, nxt, safe, acts, TICK))
            if j > 0:
                transitions.append(Transition(here, confirm[0], unsafe, (), TICK))
        for j, here in enumerate(wait):
            nxt = chain[len(confirm) + j]
            acts = last if nxt == tr.target else ()
            transitions.append(Transition(here, nxt, TRUE, acts, TICK))
    return BpcuFsm(states, fsm.initial, transitions, fsm.inputs,
                   name=f"{fsm.name}+bbm" if fsm.name else "bbm",
                   refinement=params, controller_period=period)


def default_controller(topology: Topology, lists, refined=True, params=None, bands=None):
    fsm = generate_priority_controller(topology, lists, bands)
    return refine_break_before_make(fsm, params) if refined else fsm


__all__ = [
    "Action", "BpcuFsm", "BreakBeforeMakeParams", "Guard", "NO_EVENT", "Observation",
    "PriorityList", "TICK", "Target", "Transition", "default_controller",
    "generate_priority_controller", "load_controller", "parse_guard", "priority_target",
    "refine_break_before_make", "step_fsm",
]
