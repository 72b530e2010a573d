"""Network-on-chip: flit codecs, routing engines, mesh fabric and router units."""
from .flits import (AerPacket, BaerFlit, decode_aer, decode_baer, encode_aer, encode_baer,
                    slots_for, wire_bits)
from .mesh import Mesh, MeshConfig, MeshFlit, RouterState, router_tick
from .routing import RoutingTable, candidate_paths, route, xy_path, yx_path
from .units import im2col_broadcast, residual_add, slayernorm, ssoftmax

__all__ = [
    "AerPacket", "BaerFlit", "decode_aer", "decode_baer", "encode_aer", "encode_baer",
    "slots_for", "wire_bits", "Mesh", "MeshConfig", "MeshFlit", "RouterState", "router_tick",
    "RoutingTable", "candidate_paths", "route", "xy_path", "yx_path", "im2col_broadcast",
    "residual_add", "slayernorm", "ssoftmax",
]
