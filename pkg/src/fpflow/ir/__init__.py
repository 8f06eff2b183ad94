"""Dataflow IR, simulators and lowering."""

from .graph import ARITY, Edge, Graph, GraphBuilder, Node, Port, check, validate
from .sim import SimulationError, is_lowered, simulate_behavioral, simulate_bit_accurate
from .trace import Trace
from .types import BitsT, FixedT, FloatT, FusedT, parse_type

__all__ = [
    "ARITY", "BitsT", "Edge", "FixedT", "FloatT", "FusedT", "Graph", "GraphBuilder", "Node",
    "Port", "SimulationError", "Trace", "check", "is_lowered", "parse_type",
    "simulate_behavioral", "simulate_bit_accurate", "validate",
]
