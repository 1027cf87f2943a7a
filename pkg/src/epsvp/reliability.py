"""Structural reliability: minimal cut sets, mission failure probability and
the fault combinations a controller has to tolerate.

Failures are independent and exponential without repair, so a component
with rate ``λ`` (per hour) is failed at the end of a mission of ``T``
hours with probability ``1 - exp(-λT)``.
"""
from __future__ import annotations

import math
from dataclasses import dataclass
from itertools import combinations

from .controller import BpcuFsm
from .discrete import ExplorationResult, explore
from .errors import ParseError, UnknownIdError, ValidationError
from .requirements import ReliabilitySpec, SafetyProperty, compile_no_paralleling
from .topology import Status, Topology, canonical_key, minimal_sets, read_document

EXACT_LIMIT = 20


@dataclass(frozen=True)
class FailureModel:
    rates: dict  # component id -> failures per hour
    mission_duration: float = 10.0

    def __post_init__(self):
        if self.mission_duration <= 0:
            raise ValidationError("mission duration must be > 0")
        for k, lam in self.rates.items():
            if lam < 0 or not math.isfinite(lam):
                raise ValidationError(f"failure rate of {k!r} must be finite and >= 0", k)

    @classmethod
    def from_topology(cls, topology: Topology, mission_duration=10.0):
        rates = {}
        for cid, comp in topology.components.items():
            lam = getattr(comp, "failure_rate", None)
            if lam is not None:
                rates[cid] = lam
        return cls(rates, mission_duration)

    def with_rates(self, rates):
        return FailureModel({**self.rates, **rates}, self.mission_duration)

    def q(self, cid):
        """Probability that ``cid`` has failed by the end of the mission."""
        try:
            lam = self.rates[cid]
        except KeyError:
            raise UnknownIdError(f"no failure rate for {cid!r}", cid) from None
        return -math.expm1(-lam * self.mission_duration)

    def joint(self, ids):
        p = 1.0
        for cid in sorted(ids):
            p *= self.q(cid)
        return p

    @property
    def failable(self):
        return tuple(sorted(k for k, lam in self.rates.items() if lam > 0))


def load_failure_model(source, topology: Topology | None = None, mission_duration=None):
    """Rates document ``{"failureRates": {id: λ}, "missionDuration": T}``.

    Rates given in the document override those carried by ``topology``.
    """
    doc = read_document(source)
    if not isinstance(doc, dict) or not isinstance(doc.get("failureRates", {}), dict):
        raise ParseError("rates document must be an object with a failureRates map")
    try:
        rates = {k: float(v) for k, v in doc.get("failureRates", {}).items()}
        T = float(mission_duration or doc.get("missionDuration", 10.0))
    except (TypeError, ValueError) as exc:
        raise ParseError(f"malformed rates document: {exc}") from None
    if topology is not None:
        for k in rates:
            topology[k]
        return FailureModel.from_topology(topology, T).with_rates(rates)
    return FailureModel(rates, T)


@dataclass(frozen=True)
class FaultCombination:
    failed: frozenset
    joint_probability: float

    def __post_init__(self):
        if not 0.0 <= self.joint_probability <= 1.0:
            raise ValidationError("joint probability must lie in [0, 1]")

    @property
    def label(self):
        return "+".join(sorted(self.failed))

    def scenario_events(self):
        """Seed for exploration: each member fails once."""
        return tuple((cid, Status.FAILED) for cid in sorted(self.failed))


@dataclass(frozen=True)
class CutSet:
    target: str
    components: frozenset

    def __len__(self):
        return len(self.components)


def _minimal_hitting_sets(families):
    """All minimal sets meeting every member of ``families`` (Berge's algorithm)."""
    current = [frozenset()]
    for fam in families:
        nxt = set()
        for h in current:
            if h & fam:
                nxt.add(h)
            else:
                for x in fam:
                    nxt.add(h | {x})
        current = minimal_sets(nxt)
    return current


def minimal_cut_sets(topology: Topology, target) -> list[CutSet]:
    """Minimal component sets whose failure cuts ``target`` off every source.

    ``target`` is a bus or a load (a load is cut exactly when its bus is).
    The controller is assumed able to close any healthy contactor, so a
    route exists while all of its elements are healthy. A target without
    any route is trivially failed and yields the single empty cut.
    """
    comp = topology[target]
    node = comp.bus if comp.kind == "Load" else target
    paths = topology.element_path_sets(node)
    if not paths:
        return [CutSet(target, frozenset())]
    cuts = _minimal_hitting_sets(sorted(paths, key=canonical_key))
    return [CutSet(target, c) for c in sorted(cuts, key=canonical_key)]


def is_cut(topology: Topology, target, failed) -> bool:
    """Does failing ``failed`` leave ``target`` with no healthy route?"""
    comp = topology[target]
    node = comp.bus if comp.kind == "Load" else target
    return not any(not (p & set(failed)) for p in topology.element_path_sets(node))


def mission_failure_probability(cuts, model: FailureModel):
    """Probability that some cut fails completely during the mission.

    Returns ``(value, method)``. Up to :data:`EXACT_LIMIT` cuts the union is
    evaluated exactly by inclusion-exclusion ("exact"); beyond that the
    first-order sum, which never underestimates, is returned
    ("upper-bound").
    """
    sets = [frozenset(c.components if isinstance(c, CutSet) else c) for c in cuts]
    sets = list(dict.fromkeys(sets))
    for s in sets:
        for cid in s:
            model.q(cid)
    if not sets:
        return 0.0, "exact"
    if any(not s for s in sets):
        return 1.0, "exact"
    if len(sets) > EXACT_LIMIT:
        return min(1.0, math.fsum(model.joint(s) for s in sets)), "upper-bound"
    terms = []
    # Depth-first over subsets, carrying the union so each term costs O(1) extra.
    stack = [(0, frozenset(), 0)]
    while stack:
        start, union, size = stack.pop()
        for i in range(start, len(sets)):
            u = union | sets[i]
            k = size + 1
            terms.append((1 if k % 2 else -1) * model.joint(u))
            stack.append((i + 1, u, k))
    return min(1.0, max(0.0, math.fsum(terms))), "exact"


def second_order_bounds(cuts, model: FailureModel):
    """(S1 - S2, S1): Bonferroni bounds around the union probability."""
    sets = [frozenset(c.components if isinstance(c, CutSet) else c) for c in cuts]
    s1 = math.fsum(model.joint(s) for s in sets)
    s2 = math.fsum(model.joint(a | b) for a, b in combinations(sets, 2))
    return max(0.0, s1 - s2), min(1.0, s1)


def must_handle_combinations(model: FailureModel, spec: ReliabilitySpec, max_size=4,
                             components=None) -> list[FaultCombination]:
    """Failure subsets more likely than the threshold, most likely first."""
    if max_size < 1:
        raise ValidationError("max_size must be >= 1")
    pool = tuple(sorted(components)) if components is not None else model.failable
    out = []
    for k in range(1, max_size + 1):
        found = False
        for combo in combinations(pool, k):
            p = model.joint(combo)
            if p > spec.threshold:
                out.append(FaultCombination(frozenset(combo), p))
                found = True
        if not found:
            break  # every larger set is a superset of some smaller one, so it is rarer
    out.sort(key=lambda f: (-f.joint_probability, len(f.failed), sorted(f.failed)))
    return out


@dataclass(frozen=True)
class ClosureResult:
    combination: FaultCombination
    result: ExplorationResult

    @property
    def passed(self):
        return self.result.passed


def check_combination(topology: Topology, fsm: BpcuFsm, combo: FaultCombination,
                      prop: SafetyProperty | None = None, priority_lists=(),
                      **kw) -> ClosureResult:
    """Explore with the combination's failures injected in every order and timing.

    All sources start available. Every essential bus must be powered once
    the controller has settled; ids missing from ``topology`` are skipped.
    """
    prop = prop if prop is not None else compile_no_paralleling(topology)
    events = [(c, s) for c, s in combo.scenario_events() if c in topology.components]
    res = explore(topology, fsm, prop, len(events), fault_events=events,
                  priority_lists=priority_lists, check_essential=True, **kw)
    return ClosureResult(combo, res)


def closure(topology: Topology, fsm: BpcuFsm, combos, prop=None, priority_lists=(), **kw):
    """One :class:`ClosureResult` per must-handle combination."""
    prop = prop if prop is not None else compile_no_paralleling(topology)
    return [check_combination(topology, fsm, c, prop, priority_lists, **kw) for c in combos]


def format_probability(p):
    return f"{p:.11e}"
