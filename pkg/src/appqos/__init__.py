"""Application-aware QoS negotiation for an SDN controller, with a fluid data-plane simulator."""
from ._accel import backend_name
from .admission import Admission, AppPolicy, Decision, Function, PolicyStore, QosRequest, SocketType, Verdict
from .controller import EventKind, EventLoop, HandlerRegistry, run
from .dataplane import DataPlane, FlowRule, SimFlow
from .monitoring import Monitor, Snapshot
from .pathfinding import Commodity, FlowAssignment, first_fit_place, verify_mcf
from .protocol import Frame, MsgType, decode_frame, encode_frame
from .scenario import Scenario, load_scenario, parse_scenario
from .topology import Path, Topology, eval_tree, generate_fat_tree, load_topology, simple_paths

__all__ = [
    "Admission", "AppPolicy", "Commodity", "DataPlane", "Decision", "EventKind", "EventLoop", "FlowAssignment",
    "FlowRule", "Frame", "Function", "HandlerRegistry", "Monitor", "MsgType", "Path", "PolicyStore",
    "QosRequest", "Scenario", "SimFlow", "Snapshot", "SocketType", "Topology", "Verdict", "backend_name",
    "decode_frame", "encode_frame", "eval_tree", "first_fit_place", "generate_fat_tree", "load_scenario",
    "load_topology", "parse_scenario", "run", "simple_paths", "verify_mcf",
]
