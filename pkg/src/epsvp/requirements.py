"""Requirement records and the propositional safety/priority checks built on them."""
from __future__ import annotations

from dataclasses import dataclass, field
from itertools import combinations

from .errors import ParseError, UnknownIdError, ValidationError
from .topology import ContactorConfig, Topology, canonical_key, minimal_sets, read_document

KINDS = ("Safety", "Performance", "Reliability")

# Actors that own requirements without being topology components.
CONTROLLER_ACTORS = ("BPCU", "GCU")


@dataclass(frozen=True)
class RequirementRecord:
    id: str
    kind: str
    text: str
    responsible: tuple[str, ...] = ()
    affected: tuple[str, ...] = ()

    def __post_init__(self):
        if self.kind not in KINDS:
            raise ValidationError(f"requirement {self.id!r}: unknown kind {self.kind!r}",
                                  self.id)


@dataclass(frozen=True)
class SafetyProperty:
    """Sets of contactors that must never be closed simultaneously.

    The temporal "always" is supplied by whoever evaluates the property on
    every reachable state; the property itself is a plain proposition.
    """

    forbidden: tuple[frozenset, ...]
    requirement: str = "R1"

    def __post_init__(self):
        object.__setattr__(self, "forbidden",
                           tuple(sorted({frozenset(s) for s in self.forbidden},
                                        key=canonical_key)))
        for a, b in combinations(self.forbidden, 2):
            if a <= b or b <= a:
                raise ValidationError("forbidden sets must not subsume each other")

    @property
    def contactors(self) -> frozenset:
        return frozenset().union(*self.forbidden)

    def evaluate(self, config: ContactorConfig):
        """First forbidden set entirely closed under ``config``, else None."""
        missing = self.contactors - config.contactors
        if missing:
            cid = sorted(missing)[0]
            raise UnknownIdError(f"contactor {cid!r} missing from configuration", cid)
        closed = config.closed
        for s in self.forbidden:
            if s <= closed:
                return s
        return None

    def as_ltl(self):
        if not self.forbidden:
            return "G true"
        terms = " | ".join("(" + " & ".join(sorted(s)) + ")" for s in self.forbidden)
        return f"G !({terms})"

    def to_list(self):
        return [sorted(s) for s in self.forbidden]


@dataclass(frozen=True)
class PriorityList:
    bus: str
    sources: tuple[str, ...]
    requirement: str | None = None

    def __post_init__(self):
        object.__setattr__(self, "sources", tuple(self.sources))
        if len(set(self.sources)) != len(self.sources):
            raise ValidationError(f"priority list for {self.bus!r} has duplicates", self.bus)

    def validate(self, topology: Topology, strict=True):
        if self.bus not in topology.buses:
            raise UnknownIdError(f"priority list for unknown bus {self.bus!r}", self.bus)
        reachable = {p.source for p in topology.enumerate_paths(self.bus)}
        for s in self.sources:
            if s not in topology.sources:
                raise UnknownIdError(f"priority list names unknown source {s!r}", s)
            if strict and s not in reachable:
                raise ValidationError(f"source {s!r} has no path to {self.bus!r}", s)

    def effective(self, topology: Topology):
        """Listed sources that actually have a path to the bus."""
        reachable = {p.source for p in topology.enumerate_paths(self.bus)}
        return tuple(s for s in self.sources if s in reachable)


@dataclass(frozen=True)
class VoltageBand:
    bus_class: str
    nominal: float
    tolerance: float
    frequency: float | None = None

    def __post_init__(self):
        if self.tolerance <= 0:
            raise ValidationError(f"{self.bus_class} band tolerance must be > 0")

    @property
    def low(self):
        return self.nominal - self.tolerance

    @property
    def high(self):
        return self.nominal + self.tolerance

    def contains(self, value):
        return self.low <= value <= self.high


@dataclass(frozen=True)
class ReliabilitySpec:
    threshold: float = 1e-9
    mission_duration: float = 10.0

    def __post_init__(self):
        if not 0 < self.threshold < 1 and self.threshold != 1.0:
            raise ValidationError("reliability threshold must lie in (0, 1)")
        if self.mission_duration <= 0:
            raise ValidationError("mission duration must be > 0")


DEFAULT_BANDS = {
    "AC": VoltageBand("AC", 115.0, 5.0, 400.0),
    "DC": VoltageBand("DC", 28.0, 2.0),
}


@dataclass(frozen=True)
class Requirements:
    records: tuple[RequirementRecord, ...] = ()
    priority_lists: tuple[PriorityList, ...] = ()
    bands: dict = field(default_factory=lambda: dict(DEFAULT_BANDS))
    reliability: ReliabilitySpec = ReliabilitySpec()
    relations: tuple[tuple[str, str, str], ...] = ()

    def record(self, rid):
        for r in self.records:
            if r.id == rid:
                return r
        raise UnknownIdError(f"unknown requirement {rid!r}", rid)

    def validate(self, topology: Topology, strict=True):
        known = set(topology.components) | set(CONTROLLER_ACTORS)
        for r in self.records:
            for ident in r.responsible + r.affected:
                if ident not in known:
                    raise UnknownIdError(
                        f"requirement {r.id!r} allocates to unknown {ident!r}", ident)
        for pl in self.priority_lists:
            pl.validate(topology, strict=strict)
        return self


def requirements_from_dict(doc) -> Requirements:
    if not isinstance(doc, dict):
        raise ParseError("requirements document must be a JSON object")
    try:
        records = tuple(
            RequirementRecord(r["id"], r["kind"], r.get("text", ""),
                              tuple(r.get("responsible", ())), tuple(r.get("affected", ())))
            for r in doc.get("requirements", ()))
        lists = tuple(PriorityList(p["bus"], tuple(p["sources"]), p.get("requirement"))
                      for p in doc.get("priorityLists", ()))
        bands = dict(DEFAULT_BANDS)
        for b in doc.get("voltageBands", ()):
            bands[b["busClass"]] = VoltageBand(b["busClass"], float(b["nominal"]),
                                               float(b["tolerance"]), b.get("frequency"))
        rel = doc.get("reliability", {})
        reliability = ReliabilitySpec(float(rel.get("threshold", 1e-9)),
                                      float(rel.get("missionDuration", 10.0)))
        relations = tuple(tuple(x) for x in doc.get("relations", ()))
    except (KeyError, TypeError) as exc:
        raise ParseError(f"malformed requirements document: {exc}") from None
    if any(len(r) != 3 for r in relations):
        raise ParseError("relations must be (from, relation, to) triples")
    return Requirements(records, lists, bands, reliability, relations)


def requirements_to_dict(req: Requirements) -> dict:
    return {
        "requirements": [{"id": r.id, "kind": r.kind, "text": r.text,
                          "responsible": list(r.responsible), "affected": list(r.affected)}
                         for r in req.records],
        "priorityLists": [{"bus": p.bus, "sources": list(p.sources),
                           **({"requirement": p.requirement} if p.requirement else {})}
                          for p in req.priority_lists],
        "voltageBands": [{"busClass": b.bus_class, "nominal": b.nominal,
                          "tolerance": b.tolerance,
                          **({"frequency": b.frequency} if b.frequency else {})}
                         for b in req.bands.values()],
        "reliability": {"threshold": req.reliability.threshold,
                        "missionDuration": req.reliability.mission_duration},
        "relations": [list(r) for r in req.relations],
    }


def load_requirements(source, topology: Topology | None = None) -> Requirements:
    req = requirements_from_dict(read_document(source))
    if topology is not None:
        req.validate(topology)
    return req


def compile_no_paralleling(topology: Topology, buses=None, include_dc=False) -> SafetyProperty:
    """Forbidden contactor sets whose closure parallels two sources on a bus.

    For every bus and every pair of minimal paths from two different
    sources, the union of the two contactor sets is forbidden. Subsumed
    sets are dropped, so the result is the set of minimal generators of
    the illegal configurations.
    """
    if buses is None:
        buses = topology.buses if include_dc else topology.ac_buses
    unions = set()
    for bus in buses:
        paths = [p for p in topology.enumerate_paths(bus)
                 if include_dc or topology[p.source].is_ac]
        for p, q in combinations(paths, 2):
            if p.source != q.source:
                unions.add(p.contactors | q.contactors)
    return SafetyProperty(tuple(minimal_sets(unions)))


def evaluate_safety(prop: SafetyProperty, config: ContactorConfig):
    return prop.evaluate(config)


@dataclass(frozen=True)
class PriorityVerdict:
    bus: str
    status: str  # "OK" | "Unpowered" | "WrongSource"
    expected: str | None
    actual: frozenset
    requirement: str | None = None

    @property
    def ok(self):
        return self.status == "OK"


def check_priority(topology: Topology, lists, config: ContactorConfig, available):
    """Per-bus verdict: is the bus fed by exactly its first available source?"""
    available = frozenset(available)
    unknown = available - set(topology.sources)
    if unknown:
        raise UnknownIdError(f"unknown source {sorted(unknown)[0]!r}", sorted(unknown)[0])
    verdicts = {}
    for pl in lists:
        if pl.bus not in topology.buses:
            raise UnknownIdError(f"priority list for unknown bus {pl.bus!r}", pl.bus)
        expected = next((s for s in pl.effective(topology) if s in available), None)
        actual = topology.powered_sources(config, pl.bus, available)
        if not actual:
            status = "Unpowered"
        elif expected is not None and actual == {expected}:
            status = "OK"
        else:
            status = "WrongSource"
        verdicts[pl.bus] = PriorityVerdict(pl.bus, status, expected, actual, pl.requirement)
    return verdicts
