import json

import networkx as nx
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from epsvp.errors import ParseError, UnknownIdError, ValidationError
from epsvp.topology import (Bus, ContactorConfig, Contactor, Edge, Generator, Topology,
                            enumerate_paths, load_topology, minimal_sets, powered_sources,
                            topology_from_dict, topology_to_dict)

from conftest import random_topologies


def nx_paths(t, bus):
    """Oracle: minimal contactor sets over all simple paths of the multigraph."""
    g = nx.MultiGraph()
    g.add_nodes_from(t.nodes)
    for e in t.edges:
        g.add_edge(e.a, e.b, key=e.contactor)
    out = set()
    for s in t.sources:
        if s == bus:
            continue
        sets = {frozenset(k for _, _, k in p) for p in nx.all_simple_edge_paths(g, s, bus)}
        out |= {(s, m) for m in minimal_sets(sets)}
    return out


def nx_powered(t, closed, bus):
    g = nx.Graph()
    g.add_nodes_from(t.nodes)
    g.add_edges_from((e.a, e.b) for e in t.edges if e.contactor in closed)
    comp = nx.node_connected_component(g, bus)
    return {s for s in t.sources if s in comp and s != bus}


def as_set(paths):
    return {(p.source, p.contactors) for p in paths}


def test_canonical_paths(topo):
    f = frozenset
    assert as_set(topo.enumerate_paths("B1")) == {
        ("L1", f({"C1"})), ("APU", f({"C2", "C3"})), ("R1", f({"C2", "C4", "C5"}))}
    assert as_set(topo.enumerate_paths("APU-node")) == {
        ("APU", f({"C3"})), ("L1", f({"C1", "C2"})), ("R1", f({"C4", "C5"}))}
    assert as_set(enumerate_paths(topo, "B2")) == {
        ("APU", f({"C3", "C4"})), ("L1", f({"C1", "C2", "C4"})), ("R1", f({"C5"}))}


def test_paths_sorted_and_cached(topo):
    paths = topo.enumerate_paths("B1")
    assert paths is topo.enumerate_paths("B1")
    keys = [(p.source, len(p.contactors), sorted(p.contactors)) for p in paths]
    assert keys == sorted(keys)


@given(random_topologies())
@settings(max_examples=60, deadline=None)
def test_paths_match_networkx(t):
    for b in t.buses:
        assert as_set(t.enumerate_paths(b)) == nx_paths(t, b)


@given(random_topologies(), st.data())
@settings(max_examples=60, deadline=None)
def test_powered_sources_match_connectivity(t, data):
    closed = frozenset(data.draw(st.sets(st.sampled_from(t.contactors))))
    cfg = ContactorConfig.from_closed(t, closed)
    for b in t.buses:
        assert set(t.powered_sources(cfg, b)) == nx_powered(t, closed, b)


@given(random_topologies(), st.data())
@settings(max_examples=40, deadline=None)
def test_powered_sources_monotone(t, data):
    small = frozenset(data.draw(st.sets(st.sampled_from(t.contactors))))
    big = small | frozenset(data.draw(st.sets(st.sampled_from(t.contactors))))
    for b in t.buses:
        assert (powered_sources(t, ContactorConfig.from_closed(t, small), b)
                <= powered_sources(t, ContactorConfig.from_closed(t, big), b))


@given(random_topologies())
@settings(max_examples=40, deadline=None)
def test_paths_are_minimal(t):
    for b in t.buses:
        for p in t.enumerate_paths(b):
            for c in p.contactors:
                cfg = ContactorConfig.from_closed(t, p.contactors - {c})
                assert p.source not in t.powered_sources(cfg, b)


def test_available_restricts_powered(topo):
    cfg = ContactorConfig.from_closed(topo, {"C1", "C2", "C3"})
    assert topo.powered_sources(cfg, "B1") == {"L1", "APU"}
    assert topo.powered_sources(cfg, "B1", available={"APU"}) == {"APU"}


def test_element_path_sets(topo):
    assert set(topo.element_path_sets("B1")) == {
        frozenset({"L1", "C1"}), frozenset({"APU", "C2", "C3"}),
        frozenset({"R1", "C2", "C4", "C5"})}


def test_round_trip(topo):
    doc = topology_to_dict(topo)
    again = topology_from_dict(json.loads(json.dumps(doc)))
    assert topology_to_dict(again) == doc
    assert again.components == topo.components


def test_load_from_path(tmp_path, topo):
    p = tmp_path / "t.json"
    p.write_text(json.dumps(topology_to_dict(topo)))
    assert load_topology(p).components == topo.components
    assert load_topology(str(p)).edges == topo.edges


def _doc(**changes):
    doc = {"components": [
        {"id": "G", "kind": "Generator", "parameters": {"class": "HVAC"}},
        {"id": "B", "kind": "Bus", "parameters": {"class": "AC"}},
        {"id": "K", "kind": "Contactor", "parameters": {}},
    ], "edges": [{"contactor": "K", "a": "G", "b": "B"}]}
    doc.update(changes)
    return doc


def test_minimal_document():
    t = topology_from_dict(_doc())
    assert t.sources == ("G",) and t.buses == ("B",) and t.contactors == ("K",)


@pytest.mark.parametrize("comp, ident", [
    ({"id": "G", "kind": "Generator", "parameters": {"class": "HVAC"}}, "G"),  # duplicate
    ({"id": "X", "kind": "Widget"}, "X"),
    ({"id": "L", "kind": "Load", "parameters": {"bus": "nowhere", "resistance": 1.0}}, "nowhere"),
    ({"id": "L", "kind": "Load", "parameters": {"bus": "B", "resistance": -1.0}}, "L"),
    ({"id": "E", "kind": "Bus", "parameters": {"class": "AC", "essential": True}}, "E"),
    ({"id": "Q", "kind": "Bus", "parameters": {"class": "AC", "voltage": 3}}, "Q"),
    ({"id": "T", "kind": "TRU", "parameters": {"input": "B", "output": "B", "ratio": 1.0}}, "B"),
])
def test_invalid_components(comp, ident):
    doc = _doc()
    doc["components"].append(comp)
    with pytest.raises(ValidationError) as exc:
        topology_from_dict(doc)
    assert exc.value.ident == ident


def test_edge_errors():
    with pytest.raises(ValidationError):
        topology_from_dict(_doc(edges=[{"contactor": "K", "a": "G", "b": "Z"}]))
    with pytest.raises(ValidationError):
        topology_from_dict(_doc(edges=[]))  # dangling contactor
    with pytest.raises(ValidationError):
        topology_from_dict(_doc(edges=[{"contactor": "K", "a": "B", "b": "B"}]))
    with pytest.raises(ParseError):
        topology_from_dict(_doc(edges=[{"contactor": "K"}]))
    with pytest.raises(ParseError):
        load_topology("[1, 2")


def test_disconnected_rejected():
    comps = [Generator("G"), Bus("B"), Bus("Z"), Contactor("K")]
    with pytest.raises(ValidationError) as exc:
        Topology(comps, [Edge("K", "G", "B")])
    assert exc.value.ident == "Z"
    assert Topology(comps, [Edge("K", "G", "B")], check_connected=False).buses == ("B", "Z")


def test_single_source_bus():
    t = Topology([Generator("G"), Bus("B"), Contactor("K")], [Edge("K", "G", "B")])
    assert as_set(t.enumerate_paths("B")) == {("G", frozenset({"K"}))}


def test_unknown_ids(topo):
    with pytest.raises(UnknownIdError):
        topo.enumerate_paths("B9")
    with pytest.raises(UnknownIdError):
        ContactorConfig.from_closed(topo, {"C9"})
    with pytest.raises(ValidationError):
        ContactorConfig.from_mapping(topo, {"C1": "Closed"})
    with pytest.raises(ValidationError):
        topo.powered_sources(ContactorConfig(frozenset({"C1"})), "B1")


def test_config_helpers(topo):
    cfg = ContactorConfig.from_mapping(topo, {c: "Closed" if c == "C1" else "Open"
                                              for c in topo.contactors})
    assert cfg.closed == {"C1"} and cfg.is_closed("C1") and not cfg.is_closed("C2")
    assert cfg.changed(close={"C2"}, open={"C1"}).closed == {"C2"}
    assert cfg.as_dict()["C1"] == "Closed"


def test_without_drops_edges(topo):
    t = topo.without("C2")
    assert "C2" not in t.contactors
    assert as_set(t.enumerate_paths("B1")) == {("L1", frozenset({"C1"}))}
