"""Access to the model files bundled with the package."""
from __future__ import annotations

from importlib import resources

CANONICAL_TOPOLOGY = "canonical_topology.json"
CANONICAL_REQUIREMENTS = "canonical_requirements.json"
DC_TOPOLOGY = "topologies/dc_variant.json"
HANDOVER_SCENARIO = "scenarios/handover.json"
GENERATOR_FAILURE_SCENARIO = "scenarios/generator_failure.json"
HEALTHY_SCENARIO = "scenarios/healthy.json"
GENERATOR_FAILURE_SEQUENCE = "sequences/generator_failure.json"
PARALLEL_CLOSE_CONTROLLER = "controllers/parallel_close.json"


def data_text(name: str) -> str:
    """Contents of a bundled file, e.g. ``data_text("scenarios/handover.json")``."""
    node = resources.files("epsvp").joinpath("data")
    for part in name.split("/"):
        node = node.joinpath(part)
    return node.read_text()


def load_bundled(name: str, loader, *args):
    """Apply one of the ``load_*`` functions to a bundled file."""
    return loader(data_text(name), *args)
