"""Binary interactive coding resilient to ~1/6 adversarial bit flips.

Layered codes on the transcript graph, the pair/instruction ECC, the two-party
state machines, adversarial channel simulation, analysis and boosting.
"""

from ics16.graph import EdgeLabel, GraphParams, Vertex, apply_edge, follow_path, layer_vertices
from ics16.layered_code import DecodeResult, LayeredCode, decode, encode, list_layer, spawn_code, suffix_distance
from ics16.ecc import EccCode, Instr, build_ecc, distance_profile, verify_distances

__all__ = [
    "EdgeLabel",
    "GraphParams",
    "Vertex",
    "apply_edge",
    "follow_path",
    "layer_vertices",
    "DecodeResult",
    "LayeredCode",
    "decode",
    "encode",
    "list_layer",
    "spawn_code",
    "suffix_distance",
    "EccCode",
    "Instr",
    "build_ecc",
    "distance_profile",
    "verify_distances",
]
