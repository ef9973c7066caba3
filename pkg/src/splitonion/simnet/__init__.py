"""Discrete-event network simulator for flowlet traffic."""

from .events import EventKind, EventQueue
from .sim import ObserverTrace, RunMetrics, SimConfig, Simulation, run_simulation
from .topology import ConfigError, Topology, line_topology
from .workload import FlowProfile, FlowletSpec, Workload, flowletize, kbps_to_pps, synth_flows, synth_workload

__all__ = [
    "ConfigError", "EventKind", "EventQueue", "FlowProfile", "FlowletSpec", "ObserverTrace",
    "RunMetrics", "SimConfig", "Simulation", "Topology", "Workload", "flowletize", "kbps_to_pps",
    "line_topology", "run_simulation", "synth_flows", "synth_workload",
]
