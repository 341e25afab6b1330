"""Distance-2 graph coloring in the CONGEST model: simulator, algorithms, verifier."""

from .graph import Graph, GraphError, SquareGraph, common_d2_neighbors, generate, load_edge_list, save_edge_list, sparsity, square
from .congest import BandwidthViolation, CongestError, SimConfig, SimTrace, Vocab, measure
from .verify import VerifyReport, check_d2, leeway, remaining_palette, slack

__all__ = [
    "Graph",
    "GraphError",
    "SquareGraph",
    "common_d2_neighbors",
    "generate",
    "load_edge_list",
    "save_edge_list",
    "sparsity",
    "square",
    "BandwidthViolation",
    "CongestError",
    "SimConfig",
    "SimTrace",
    "Vocab",
    "measure",
    "VerifyReport",
    "check_d2",
    "leeway",
    "remaining_palette",
    "slack",
]
