"""Model, verify, simulate and assess aircraft electrical power distribution systems."""

from .controller import (Action, BpcuFsm, BreakBeforeMakeParams, Observation, Transition,
                         default_controller, generate_priority_controller, load_controller,
                         parse_guard, refine_break_before_make)
from .discrete import (DiscreteModel, EnvEvent, EventTrace, Scenario, SequenceSpec, TraceEvent,
                       Verdict, conform, explore, load_scenario, load_sequence_spec,
                       simulate_events)
from .errors import (EpsError, FsmError, InstabilityError, LivelockError, ParseError,
                     SingularNetworkError, StateBoundExceeded, UnknownIdError, ValidationError)
from .hybrid import ObserverReport, SimConfig, Violation, WaveformSet, run_hybrid
from .network import NetworkCache, NetworkState
from .reliability import (CutSet, FailureModel, FaultCombination, minimal_cut_sets,
                          mission_failure_probability, must_handle_combinations)
from .requirements import (PriorityList, ReliabilitySpec, Requirements, SafetyProperty,
                           VoltageBand, check_priority, compile_no_paralleling, evaluate_safety,
                           load_requirements)
from .topology import (ContactorConfig, SourcePath, Status, Switch, Topology, enumerate_paths,
                       load_topology, powered_sources)

__version__ = "0.1.0"

__all__ = [
    "Action", "BpcuFsm", "BreakBeforeMakeParams", "ContactorConfig", "CutSet", "DiscreteModel",
    "EnvEvent", "EpsError", "EventTrace", "FailureModel", "FaultCombination", "FsmError",
    "InstabilityError", "LivelockError", "NetworkCache", "NetworkState", "ObserverReport",
    "ParseError", "PriorityList", "ReliabilitySpec", "Requirements", "SafetyProperty", "Scenario",
    "SequenceSpec", "SimConfig", "SingularNetworkError", "SourcePath", "StateBoundExceeded",
    "Status", "Switch", "Topology", "TraceEvent", "Transition", "UnknownIdError",
    "ValidationError", "Verdict", "Violation", "VoltageBand", "WaveformSet", "check_priority",
    "compile_no_paralleling", "conform", "default_controller", "enumerate_paths",
    "evaluate_safety", "explore", "generate_priority_controller", "load_controller",
    "load_requirements", "load_scenario", "load_sequence_spec", "load_topology",
    "minimal_cut_sets", "mission_failure_probability", "must_handle_combinations",
    "parse_guard", "powered_sources", "refine_break_before_make", "run_hybrid", "simulate_events",
]
