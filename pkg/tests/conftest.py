import pytest
from hypothesis import strategies as st

from epsvp import _data
from epsvp.controller import default_controller, load_controller
from epsvp.discrete import load_scenario, load_sequence_spec
from epsvp.hybrid import SimConfig, run_hybrid
from epsvp.requirements import load_requirements
from epsvp.topology import Bus, Contactor, Edge, Generator, Load, Topology, load_topology

ACCEPTANCE_LINES = []


def pytest_terminal_summary(terminalreporter):
    if ACCEPTANCE_LINES:
        terminalreporter.section("acceptance criteria")
        for line in ACCEPTANCE_LINES:
            terminalreporter.write_line(line)


@pytest.fixture(scope="session")
def topo():
    return _data.load_bundled(_data.CANONICAL_TOPOLOGY, load_topology)


@pytest.fixture(scope="session")
def dc_topo():
    return _data.load_bundled(_data.DC_TOPOLOGY, load_topology)


@pytest.fixture(scope="session")
def req(topo):
    return _data.load_bundled(_data.CANONICAL_REQUIREMENTS, load_requirements, topo)


@pytest.fixture(scope="session")
def lists(req):
    return req.priority_lists


@pytest.fixture(scope="session")
def naive(topo, lists):
    return default_controller(topo, lists, refined=False)


@pytest.fixture(scope="session")
def refined(topo, lists):
    return default_controller(topo, lists, refined=True)


@pytest.fixture(scope="session")
def parallel_close(topo):
    return _data.load_bundled(_data.PARALLEL_CLOSE_CONTROLLER, load_controller, topo)


@pytest.fixture(scope="session")
def handover(topo):
    return _data.load_bundled(_data.HANDOVER_SCENARIO, load_scenario, topo)


@pytest.fixture(scope="session")
def gen_failure(topo):
    return _data.load_bundled(_data.GENERATOR_FAILURE_SCENARIO, load_scenario, topo)


@pytest.fixture(scope="session")
def gen_failure_spec():
    return _data.load_bundled(_data.GENERATOR_FAILURE_SEQUENCE, load_sequence_spec)


@pytest.fixture(scope="session")
def handover_naive(topo, naive, handover):
    return run_hybrid(topo, naive, handover, SimConfig(duration=0.7))


@pytest.fixture(scope="session")
def handover_refined(topo, refined, handover):
    return run_hybrid(topo, refined, handover, SimConfig(duration=0.7))


@st.composite
def random_topologies(draw, max_buses=4, max_sources=3, max_extra=4, batteries=False):
    """Small connected switching graphs: a random spanning tree plus extra contactors."""
    n_bus = draw(st.integers(1, max_buses))
    n_src = draw(st.integers(1, max_sources))
    buses = [f"B{i}" for i in range(n_bus)]
    sources = [f"G{i}" for i in range(n_src)]
    nodes = buses + sources
    order = draw(st.permutations(nodes))
    pairs = []
    for i in range(1, len(order)):
        pairs.append((order[draw(st.integers(0, i - 1))], order[i]))
    for _ in range(draw(st.integers(0, max_extra))):
        a, b = draw(st.sampled_from(nodes)), draw(st.sampled_from(nodes))
        if a != b:
            pairs.append((a, b))
    comps = [Bus(b, "AC", essential=draw(st.booleans()), t_max=0.05) for b in buses]
    for s in sources:
        cls = draw(st.sampled_from(["HVAC", "Battery"])) if batteries else "HVAC"
        comps.append(Generator(s, cls, failure_rate=1e-4))
    edges = []
    for i, (a, b) in enumerate(pairs):
        comps.append(Contactor(f"K{i}", failure_rate=draw(st.sampled_from([0.0, 1e-5]))))
        edges.append(Edge(f"K{i}", a, b))
    for b in buses:
        comps.append(Load(f"L_{b}", b, draw(st.sampled_from([5.0, 10.0, 20.0]))))
    return Topology(comps, edges, name="random")
