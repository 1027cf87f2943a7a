"""Single-line-diagram model of an electric power system.

Generators and buses are graph nodes. Contactors are the only switchable
edges; transformers, rectifier units and TRUs are always-conducting edges
directed from their input node to their output node. Loads hang off buses
and are not part of the switching graph.

The JSON document accepted by :func:`load_topology` looks like::

    {"name": "...",
     "components": [{"id": "L1", "kind": "Generator", "parameters": {...}}, ...],
     "edges": [{"contactor": "C1", "a": "L1", "b": "B1"}, ...]}
"""
from __future__ import annotations

import json
import keyword
import os
from dataclasses import dataclass, field
from enum import Enum
from functools import cached_property
from pathlib import Path
from typing import Iterable, Mapping

from .errors import ParseError, UnknownIdError, ValidationError


class Status(str, Enum):
    """Health of a power source as seen by the supervisory controller."""

    OFF = "Off"
    AVAILABLE = "Available"
    FAILED = "Failed"

    def __str__(self):
        return self.value


class Switch(str, Enum):
    OPEN = "Open"
    CLOSED = "Closed"

    def __str__(self):
        return self.value


# Names that guard expressions treat as constants; ids may not shadow them.
RESERVED_NAMES = frozenset(
    {s.value for s in Status} | {s.value for s in Switch} | {"true", "false", "and", "or", "not"}
)


@dataclass(frozen=True)
class Generator:
    id: str
    gen_class: str = "HVAC"
    rated_voltage: float = 115.0
    rated_frequency: float = 400.0
    rated_power: float = 40e3
    internal_resistance: float = 0.05
    failure_rate: float = 0.0

    kind = "Generator"

    @property
    def is_ac(self):
        return self.gen_class != "Battery"


@dataclass(frozen=True)
class Contactor:
    id: str
    failure_rate: float = 0.0
    open_delay: float = 0.0
    close_delay: float = 0.0
    decay_time_constant: float = 2e-3

    kind = "Contactor"


@dataclass(frozen=True)
class Bus:
    id: str
    bus_class: str = "AC"
    essential: bool = False
    t_max: float | None = None

    kind = "Bus"


@dataclass(frozen=True)
class Converter:
    """Transformer, rectifier unit or TRU between two nodes."""

    id: str
    kind: str
    input: str
    output: str
    ratio: float | None = None
    output_voltage: float | None = None
    efficiency: float = 1.0
    failure_rate: float = 0.0

    def effective_ratio(self, input_nominal):
        if self.ratio is not None:
            return self.ratio
        return self.output_voltage / input_nominal


@dataclass(frozen=True)
class Load:
    id: str
    bus: str
    resistance: float
    sheddable: bool = False
    essential: bool = False
    shed_priority: int = 0

    kind = "Load"
    failure_rate = 0.0


CONVERTER_KINDS = ("Transformer", "RectifierUnit", "TRU")

# kind -> (class, {json parameter name: (attribute, python type)})
_SCHEMA = {
    "Generator": (Generator, {
        "class": ("gen_class", str),
        "ratedVoltage": ("rated_voltage", float),
        "ratedFrequency": ("rated_frequency", float),
        "ratedPower": ("rated_power", float),
        "internalResistance": ("internal_resistance", float),
        "failureRate": ("failure_rate", float),
    }),
    "Contactor": (Contactor, {
        "failureRate": ("failure_rate", float),
        "openDelay": ("open_delay", float),
        "closeDelay": ("close_delay", float),
        "decayTimeConstant": ("decay_time_constant", float),
    }),
    "Bus": (Bus, {
        "class": ("bus_class", str),
        "essential": ("essential", bool),
        "tMax": ("t_max", float),
    }),
    "Load": (Load, {
        "bus": ("bus", str),
        "resistance": ("resistance", float),
        "sheddable": ("sheddable", bool),
        "essential": ("essential", bool),
        "shedPriority": ("shed_priority", int),
    }),
}
_CONVERTER_PARAMS = {
    "input": ("input", str),
    "output": ("output", str),
    "ratio": ("ratio", float),
    "outputVoltage": ("output_voltage", float),
    "efficiency": ("efficiency", float),
    "failureRate": ("failure_rate", float),
}
for _kind in CONVERTER_KINDS:
    _SCHEMA[_kind] = (Converter, _CONVERTER_PARAMS)


@dataclass(frozen=True)
class Edge:
    contactor: str
    a: str
    b: str


@dataclass(frozen=True, order=True)
class SourcePath:
    """Minimal set of contactors whose closure connects a source to a bus."""

    source: str
    bus: str
    contactors: frozenset = field(compare=False)
    # sort key only
    _key: tuple = field(init=False, repr=False, compare=True)

    def __post_init__(self):
        object.__setattr__(self, "contactors", frozenset(self.contactors))
        object.__setattr__(
            self, "_key", (len(self.contactors), tuple(sorted(self.contactors)))
        )

    def as_dict(self):
        return {"source": self.source, "bus": self.bus,
                "contactors": sorted(self.contactors)}


def canonical_key(s):
    """Sort key for sets of ids: by size, then lexicographically."""
    return (len(s), tuple(sorted(s)))


def minimal_sets(sets: Iterable[frozenset]) -> list[frozenset]:
    """Drop every set that is a superset of another; canonical order."""
    result: list[frozenset] = []
    for s in sorted(set(sets), key=canonical_key):
        if not any(m <= s for m in result):
            result.append(s)
    return result


@dataclass(frozen=True)
class ContactorConfig:
    """Open/closed assignment to every contactor of a topology."""

    contactors: frozenset
    closed: frozenset = frozenset()

    def __post_init__(self):
        object.__setattr__(self, "contactors", frozenset(self.contactors))
        object.__setattr__(self, "closed", frozenset(self.closed))
        extra = self.closed - self.contactors
        if extra:
            raise UnknownIdError(f"unknown contactor {sorted(extra)[0]!r}",
                                 sorted(extra)[0])

    @classmethod
    def all_open(cls, topology):
        return cls(frozenset(topology.contactors))

    @classmethod
    def from_closed(cls, topology, closed=()):
        return cls(frozenset(topology.contactors), frozenset(closed))

    @classmethod
    def from_mapping(cls, topology, mapping: Mapping[str, str]):
        domain = frozenset(topology.contactors)
        keys = frozenset(mapping)
        if keys != domain:
            bad = sorted(keys ^ domain)[0]
            raise ValidationError(
                f"configuration domain differs from contactor set at {bad!r}", bad)
        closed = set()
        for cid, state in mapping.items():
            if Switch(state) is Switch.CLOSED:
                closed.add(cid)
        return cls(domain, frozenset(closed))

    @property
    def open(self):
        return self.contactors - self.closed

    def state(self, contactor):
        if contactor not in self.contactors:
            raise UnknownIdError(f"unknown contactor {contactor!r}", contactor)
        return Switch.CLOSED if contactor in self.closed else Switch.OPEN

    def is_closed(self, contactor):
        return self.state(contactor) is Switch.CLOSED

    def changed(self, close=(), open=()):
        return ContactorConfig(self.contactors,
                               (self.closed | frozenset(close)) - frozenset(open))

    def as_dict(self):
        return {c: str(self.state(c)) for c in sorted(self.contactors)}

    def __str__(self):
        return "{" + ",".join(sorted(self.closed)) + "}"


class Topology:
    """Validated, immutable EPS graph.

    Parameters
    ----------
    components : iterable of component records
    edges : iterable of :class:`Edge`
    name : str
    check_connected : bool
        Require the graph to be connected with every contactor closed.
        Derived topologies (e.g. with components removed for a
        what-if study) may skip this.
    """

    def __init__(self, components, edges, name="", *, check_connected=True):
        comps = {}
        for comp in components:
            if not isinstance(comp.id, str) or not comp.id:
                raise ValidationError("component id must be a non-empty string", comp.id)
            if comp.id in comps:
                raise ValidationError(f"duplicate component id {comp.id!r}", comp.id)
            comps[comp.id] = comp
        if not comps:
            raise ValidationError("topology has no components")
        self.name = name
        self.components: Mapping[str, object] = dict(sorted(comps.items()))
        self.edges: tuple[Edge, ...] = tuple(sorted(edges, key=lambda e: e.contactor))
        self._path_cache: dict = {}
        self._validate(check_connected)

    # -- views -----------------------------------------------------------
    def _ids(self, cls, kind=None):
        return tuple(i for i, c in self.components.items()
                     if isinstance(c, cls) and (kind is None or c.kind == kind))

    @cached_property
    def sources(self) -> tuple[str, ...]:
        return self._ids(Generator)

    @cached_property
    def contactors(self) -> tuple[str, ...]:
        return self._ids(Contactor)

    @cached_property
    def buses(self) -> tuple[str, ...]:
        return self._ids(Bus)

    @cached_property
    def loads(self) -> tuple[str, ...]:
        return self._ids(Load)

    @cached_property
    def converters(self) -> tuple[str, ...]:
        return self._ids(Converter)

    @cached_property
    def nodes(self) -> tuple[str, ...]:
        return tuple(sorted(self.sources + self.buses))

    @cached_property
    def ac_buses(self):
        return tuple(b for b in self.buses if self.components[b].bus_class == "AC")

    @cached_property
    def essential_buses(self):
        return tuple(b for b in self.buses if self.components[b].essential)

    @cached_property
    def _edge_by_contactor(self):
        return {e.contactor: e for e in self.edges}

    def edge(self, contactor) -> Edge:
        try:
            return self._edge_by_contactor[contactor]
        except KeyError:
            raise UnknownIdError(f"unknown contactor {contactor!r}", contactor) from None

    def loads_on(self, bus):
        return tuple(i for i in self.loads if self.components[i].bus == bus)

    def __getitem__(self, ident):
        try:
            return self.components[ident]
        except KeyError:
            raise UnknownIdError(f"unknown component {ident!r}", ident) from None

    def __repr__(self):
        return (f"Topology({self.name!r}, sources={list(self.sources)}, "
                f"buses={list(self.buses)}, contactors={list(self.contactors)})")

    # -- validation --------------------------------------------------------
    def _validate(self, check_connected):
        comps = self.components
        for comp in comps.values():
            _check_params(comp)
            if isinstance(comp, (Generator, Contactor)):
                if not comp.id.isidentifier() or keyword.iskeyword(comp.id) \
                        or comp.id in RESERVED_NAMES:
                    raise ValidationError(
                        f"{comp.kind} id {comp.id!r} must be a plain identifier", comp.id)
            if isinstance(comp, Load):
                if not isinstance(comps.get(comp.bus), Bus):
                    raise ValidationError(
                        f"load {comp.id!r} attaches to unknown bus {comp.bus!r}", comp.bus)
            if isinstance(comp, Converter):
                for end in (comp.input, comp.output):
                    if end not in comps or not isinstance(comps[end], (Bus, Generator)):
                        raise ValidationError(
                            f"converter {comp.id!r} references unknown node {end!r}", end)
                out = comps[comp.output]
                want = "AC" if comp.kind == "Transformer" else "DC"
                if isinstance(out, Bus) and out.bus_class != want:
                    raise ValidationError(
                        f"{comp.kind} {comp.id!r} must feed a {want} bus", comp.output)

        seen = set()
        for e in self.edges:
            if not isinstance(comps.get(e.contactor), Contactor):
                raise ValidationError(f"edge references unknown contactor {e.contactor!r}",
                                      e.contactor)
            if e.contactor in seen:
                raise ValidationError(f"contactor {e.contactor!r} has more than one edge",
                                      e.contactor)
            seen.add(e.contactor)
            for end in (e.a, e.b):
                if end not in comps or not isinstance(comps[end], (Bus, Generator)):
                    raise ValidationError(
                        f"contactor {e.contactor!r} references unknown node {end!r}", end)
            if e.a == e.b:
                raise ValidationError(f"contactor {e.contactor!r} is a self-loop", e.contactor)
        dangling = set(self.contactors) - seen
        if dangling:
            cid = sorted(dangling)[0]
            raise ValidationError(f"contactor {cid!r} has no edge", cid)

        if check_connected and len(self.nodes) > 1:
            reach = {self.nodes[0]}
            stack = [self.nodes[0]]
            undirected = self._undirected
            while stack:
                n = stack.pop()
                for m in undirected[n]:
                    if m not in reach:
                        reach.add(m)
                        stack.append(m)
            missing = sorted(set(self.nodes) - reach)
            if missing:
                raise ValidationError(
                    f"node {missing[0]!r} is disconnected even with all contactors closed",
                    missing[0])

    @cached_property
    def _undirected(self):
        adj = {n: set() for n in self.nodes}
        for a, b, _, _ in self._arcs:
            adj[a].add(b)
            adj[b].add(a)
        return adj

    @cached_property
    def _arcs(self):
        """Directed arcs (from, to, element id, is_contactor)."""
        arcs = []
        for e in self.edges:
            arcs.append((e.a, e.b, e.contactor, True))
            arcs.append((e.b, e.a, e.contactor, True))
        for cid in self.converters:
            c = self.components[cid]
            arcs.append((c.input, c.output, cid, False))
        return tuple(arcs)

    @cached_property
    def _adjacency(self):
        adj = {n: [] for n in self.nodes}
        for a, b, elem, is_contactor in self._arcs:
            adj[a].append((b, elem, is_contactor))
        for n in adj:
            adj[n].sort(key=lambda t: (t[1], t[0]))
        return adj

    # -- structural queries -----------------------------------------------
    def _element_paths(self, source, target):
        """Yield element-id tuples of every simple node path source -> target."""
        adj = self._adjacency
        visited = {source}
        trail: list[str] = []

        def dfs(node):
            if node == target:
                yield tuple(trail)
                return
            for nxt, elem, _ in adj[node]:
                if nxt in visited:
                    continue
                visited.add(nxt)
                trail.append(elem)
                yield from dfs(nxt)
                trail.pop()
                visited.discard(nxt)

        yield from dfs(source)

    def _require_node(self, node, what="bus"):
        if node not in self.components:
            raise UnknownIdError(f"unknown {what} {node!r}", node)
        if not isinstance(self.components[node], (Bus, Generator)):
            raise ValidationError(f"{node!r} is not a node of the switching graph", node)

    def enumerate_paths(self, bus) -> tuple[SourcePath, ...]:
        """All minimal source paths to ``bus`` in canonical order."""
        self._require_node(bus)
        if bus in self._path_cache:
            return self._path_cache[bus]
        result = []
        contactor_ids = set(self.contactors)
        for src in self.sources:
            if src == bus:
                continue
            sets = {frozenset(x for x in p if x in contactor_ids)
                    for p in self._element_paths(src, bus)}
            result.extend(SourcePath(src, bus, s) for s in minimal_sets(sets))
        result.sort(key=lambda p: (p.source, p._key))
        out = tuple(result)
        self._path_cache[bus] = out
        return out

    def element_path_sets(self, node) -> list[frozenset]:
        """Minimal sets {source, contactors..., converters...} feeding ``node``.

        Every element of a set must be healthy for that route to exist.
        """
        self._require_node(node, "target")
        sets = set()
        for src in self.sources:
            if src == node:
                sets.add(frozenset({src}))
                continue
            for p in self._element_paths(src, node):
                sets.add(frozenset(p) | {src})
        return minimal_sets(sets)

    def powered_sources(self, config: ContactorConfig, bus, available=None) -> frozenset:
        """Sources with a fully closed path to ``bus``.

        ``available``, when given, further restricts the result to those
        sources (a failed generator connected to a bus powers nothing).
        """
        self._check_config(config)
        found = frozenset(p.source for p in self.enumerate_paths(bus)
                          if p.contactors <= config.closed)
        if available is not None:
            found &= frozenset(available)
        return found

    def _check_config(self, config):
        if config.contactors != frozenset(self.contactors):
            bad = sorted(config.contactors ^ frozenset(self.contactors))[0]
            raise ValidationError(
                f"configuration domain differs from topology at {bad!r}", bad)

    def without(self, *ids) -> "Topology":
        """Copy with the given components (and anything hanging off them) removed."""
        drop = set(ids)
        for i in ids:
            self[i]
        comps = []
        for c in self.components.values():
            if c.id in drop:
                continue
            if isinstance(c, Load) and c.bus in drop:
                continue
            if isinstance(c, Converter) and (c.input in drop or c.output in drop):
                continue
            comps.append(c)
        edges = [e for e in self.edges
                 if e.contactor not in drop and e.a not in drop and e.b not in drop]
        keep = {e.contactor for e in edges}
        comps = [c for c in comps if not isinstance(c, Contactor) or c.id in keep]
        return Topology(comps, edges, name=f"{self.name}-without-{'-'.join(sorted(drop))}",
                        check_connected=False)


def _check_params(comp):
    def bad(msg):
        raise ValidationError(f"{comp.kind} {comp.id!r}: {msg}", comp.id)

    if getattr(comp, "failure_rate", 0.0) < 0:
        bad("failureRate must be >= 0")
    if isinstance(comp, Generator):
        if comp.rated_voltage <= 0:
            bad("ratedVoltage must be > 0")
        if comp.internal_resistance < 0:
            bad("internalResistance must be >= 0")
        if comp.gen_class not in ("HVAC", "LVAC", "APU", "Battery"):
            bad(f"unknown generator class {comp.gen_class!r}")
    elif isinstance(comp, Contactor):
        if comp.open_delay < 0 or comp.close_delay < 0:
            bad("delays must be >= 0")
        if comp.decay_time_constant <= 0:
            bad("decayTimeConstant must be > 0")
    elif isinstance(comp, Bus):
        if comp.bus_class not in ("AC", "DC"):
            bad(f"unknown bus class {comp.bus_class!r}")
        if comp.essential and comp.t_max is None:
            bad("essential bus requires tMax")
        if comp.t_max is not None and comp.t_max <= 0:
            bad("tMax must be > 0")
    elif isinstance(comp, Converter):
        if not 0 < comp.efficiency <= 1:
            bad("efficiency must lie in (0, 1]")
        if (comp.ratio is None) == (comp.output_voltage is None):
            bad("exactly one of ratio and outputVoltage is required")
        if (comp.ratio or 1.0) <= 0 or (comp.output_voltage or 1.0) <= 0:
            bad("ratio/outputVoltage must be > 0")
    elif isinstance(comp, Load):
        if comp.resistance <= 0:
            bad("resistance must be > 0")


# -- (de)serialisation ------------------------------------------------------

def _component_from_dict(rec):
    if not isinstance(rec, dict):
        raise ParseError(f"component record must be an object, got {rec!r}")
    try:
        ident, kind = rec["id"], rec["kind"]
    except KeyError as exc:
        raise ParseError(f"component record lacks {exc.args[0]!r}") from None
    params = rec.get("parameters", {})
    if not isinstance(params, dict):
        raise ParseError(f"parameters of {ident!r} must be an object")
    if kind not in _SCHEMA:
        raise ValidationError(f"component {ident!r} has unknown kind {kind!r}", ident)
    cls, schema = _SCHEMA[kind]
    kwargs = {"id": ident}
    if cls is Converter:
        kwargs["kind"] = kind
    for key, value in params.items():
        if key not in schema:
            raise ValidationError(f"component {ident!r}: unknown parameter {key!r}", ident)
        attr, typ = schema[key]
        if value is None:
            kwargs[attr] = None
            continue
        if typ is bool and not isinstance(value, bool):
            raise ValidationError(f"component {ident!r}: {key} must be boolean", ident)
        if typ in (float, int) and (isinstance(value, bool)
                                    or not isinstance(value, (int, float))):
            raise ValidationError(f"component {ident!r}: {key} must be numeric", ident)
        if typ is str and not isinstance(value, str):
            raise ValidationError(f"component {ident!r}: {key} must be a string", ident)
        kwargs[attr] = typ(value)
    try:
        return cls(**kwargs)
    except TypeError as exc:
        raise ValidationError(f"component {ident!r}: {exc}", ident) from None


def topology_from_dict(doc) -> Topology:
    if not isinstance(doc, dict):
        raise ParseError("topology document must be a JSON object")
    comps = doc.get("components")
    edges = doc.get("edges", [])
    if not isinstance(comps, list) or not isinstance(edges, list):
        raise ParseError("'components' and 'edges' must be arrays")
    components = [_component_from_dict(rec) for rec in comps]
    edge_objs = []
    for rec in edges:
        try:
            edge_objs.append(Edge(rec["contactor"], rec["a"], rec["b"]))
        except (KeyError, TypeError):
            raise ParseError(f"malformed edge record {rec!r}") from None
    return Topology(components, edge_objs, name=doc.get("name", ""))


def topology_to_dict(topology: Topology) -> dict:
    comps = []
    for comp in topology.components.values():
        _, schema = _SCHEMA[comp.kind]
        params = {}
        for key, (attr, _) in schema.items():
            value = getattr(comp, attr)
            if value is not None:
                params[key] = value
        comps.append({"id": comp.id, "kind": comp.kind, "parameters": params})
    return {
        "name": topology.name,
        "components": comps,
        "edges": [{"contactor": e.contactor, "a": e.a, "b": e.b} for e in topology.edges],
    }


def read_document(source):
    """Parse a JSON document given as a dict, a path, or literal JSON text."""
    if isinstance(source, dict):
        return source
    if isinstance(source, os.PathLike) or (
            isinstance(source, str) and not source.lstrip().startswith(("{", "["))):
        try:
            text = Path(source).read_text()
        except OSError as exc:
            raise ParseError(f"cannot read {source}: {exc.strerror}") from None
    else:
        text = source
    try:
        return json.loads(text)
    except json.JSONDecodeError as exc:
        raise ParseError(f"malformed JSON: {exc}") from None


def load_topology(source) -> Topology:
    """Load and validate a topology from a path, JSON text or dict."""
    return topology_from_dict(read_document(source))


def enumerate_paths(topology: Topology, bus) -> tuple[SourcePath, ...]:
    return topology.enumerate_paths(bus)


def powered_sources(topology: Topology, config: ContactorConfig, bus, available=None):
    return topology.powered_sources(config, bus, available)


