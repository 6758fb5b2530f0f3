"""Synthetic WoW-like traffic with exact ground truth."""

from .emit import Manifest, UserTruth, emit_pcap, generate, load_manifest
from .scenario import Scenario, ScenarioError, from_dict, load_scenario
from .shuffle import shuffle_segments
from .simulate import Simulation, simulate

__all__ = [
    "Manifest", "UserTruth", "emit_pcap", "generate", "load_manifest",
    "Scenario", "ScenarioError", "from_dict", "load_scenario",
    "shuffle_segments", "Simulation", "simulate",
]
