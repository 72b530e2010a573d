"""Routing engines on a 2D mesh.

Coordinates are ``(row, col)``; "X" moves along columns, "Y" along rows.
A path is a list of links ``((r, c), (r', c'))`` between adjacent cells;
``src == dst`` gives the empty path.
"""
from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from ..errors import NoPathConfigured, ValidationError

Coord = tuple[int, int]
Link = tuple[Coord, Coord]

ROUTING_ENGINES = ("xy", "valiant", "multipath")


def _walk(nodes: list[Coord], target: Coord, axis: int) -> None:
    cur = nodes[-1]
    step = 1 if target[axis] > cur[axis] else -1
    while nodes[-1][axis] != target[axis]:
        r, c = nodes[-1]
        nodes.append((r + step, c) if axis == 0 else (r, c + step))


def nodes_to_links(nodes: list[Coord]) -> list[Link]:
    return list(zip(nodes[:-1], nodes[1:]))


def links_to_nodes(path: list[Link], src: Coord) -> list[Coord]:
    return [src] + [b for _, b in path]


def waypoint_path(src: Coord, waypoints: list[Coord], axes: list[int]) -> list[Link]:
    nodes = [src]
    for wp, axis in zip(waypoints, axes):
        _walk(nodes, wp, axis)
    return nodes_to_links(nodes)


def xy_path(src: Coord, dst: Coord) -> list[Link]:
    return waypoint_path(src, [(src[0], dst[1]), dst], [1, 0])


def yx_path(src: Coord, dst: Coord) -> list[Link]:
    return waypoint_path(src, [(dst[0], src[1]), dst], [0, 1])


def detour_path(src: Coord, dst: Coord, via: int) -> list[Link]:
    """One-bend-pair detour: X-Y-X through column ``via`` when the endpoints
    differ in row, otherwise Y-X-Y through row ``via``."""
    if src[0] != dst[0]:
        return waypoint_path(src, [(src[0], via), (dst[0], via), dst], [1, 0, 1])
    return waypoint_path(src, [(via, src[1]), (via, dst[1]), dst], [0, 1, 0])


def detour_options(src: Coord, dst: Coord, shape: tuple[int, int]) -> list[int]:
    rows, cols = shape
    (sr, sc), (dr, dc) = src, dst
    if src == dst:
        return []
    if sr != dr and sc != dc:
        lo, hi = sorted((sc, dc))
        if hi - lo >= 2:
            return list(range(lo + 1, hi))
        return [c for c in (lo - 1, hi + 1) if 0 <= c < cols]
    if sr == dr:
        return [r for r in (sr - 1, sr + 1) if 0 <= r < rows]
    return [c for c in (sc - 1, sc + 1) if 0 <= c < cols]


def candidate_paths(src: Coord, dst: Coord, shape: tuple[int, int],
                    load: dict | None = None) -> list[list[Link]]:
    """X-Y, Y-X (if distinct) and one detour picked to avoid loaded links."""
    if src == dst:
        return [[]]
    out = [xy_path(src, dst)]
    yx = yx_path(src, dst)
    if yx != out[0]:
        out.append(yx)
    options = detour_options(src, dst, shape)
    if options:
        load = load or {}

        def cost(via):
            p = detour_path(src, dst, via)
            return (max(load.get(link, 0) for link in p), len(p), abs(via - src[1]), via)

        out.append(detour_path(src, dst, min(options, key=cost)))
    return out


def valiant_legs(src: Coord, dst: Coord, shape: tuple[int, int], rng) -> list[list[Link]]:
    mid = (int(rng.integers(shape[0])), int(rng.integers(shape[1])))
    return [xy_path(src, mid), xy_path(mid, dst)]


def path_is_legal(path: list[Link], src: Coord, dst: Coord, shape: tuple[int, int]) -> bool:
    cur = src
    for a, b in path:
        if a != cur or abs(a[0] - b[0]) + abs(a[1] - b[1]) != 1:
            return False
        if not (0 <= b[0] < shape[0] and 0 <= b[1] < shape[1]):
            return False
        cur = b
    return cur == dst


def hop_fields(path: list[Link]) -> tuple[int, int]:
    """(vertical, horizontal) hop counts carried in a flit's dest field."""
    m = sum(1 for a, b in path if a[0] != b[0])
    return m, len(path) - m


@dataclass
class RoutingTable:
    """flow ``(src, dst)`` -> list of ``(path, probability)``."""
    entries: dict = field(default_factory=dict)

    def validate(self) -> "RoutingTable":
        for flow, options in self.entries.items():
            if not options:
                raise ValidationError(f"flow {flow} has no candidate paths", field="routing")
            total = sum(p for _, p in options)
            if abs(total - 1.0) > 1e-9 or any(p < 0 for _, p in options):
                raise ValidationError(f"flow {flow} probabilities sum to {total}", field="routing")
        return self

    def sample(self, flow, rng) -> list[Link]:
        options = self.entries.get(flow)
        if options is None:
            raise NoPathConfigured(f"no routing table entry for flow {flow}")
        if len(options) == 1:
            return options[0][0]
        u = rng.random()
        acc = 0.0
        for path, p in options:
            acc += p
            if u < acc:
                return path
        return options[-1][0]


def route(flow: tuple[Coord, Coord], engine: str = "xy", shape: tuple[int, int] = (6, 6),
          table: RoutingTable | None = None, rng=None) -> list[Link]:
    src, dst = flow
    if engine == "xy":
        return xy_path(src, dst)
    rng = rng if rng is not None else np.random.default_rng(0)
    if engine == "valiant":
        a, b = valiant_legs(src, dst, shape, rng)
        return a + b
    if engine == "multipath":
        if src == dst:
            return []
        if table is None:
            raise NoPathConfigured("multipath routing needs a routing table")
        return table.sample(flow, rng)
    raise ValidationError(f"unknown routing engine {engine!r}", field="routing")


def link_loads(flows: list[tuple[Coord, Coord, float]], tables: dict | None = None) -> dict:
    """Expected per-link traffic for weighted flows; XY when no table given."""
    load: dict = {}
    for src, dst, rate in flows:
        options = (tables or {}).get((src, dst)) or [(xy_path(src, dst), 1.0)]
        for path, p in options:
            for link in path:
                load[link] = load.get(link, 0.0) + rate * p
    return load


def manhattan(a: Coord, b: Coord) -> int:
    return abs(a[0] - b[0]) + abs(a[1] - b[1])


def mesh_links(shape: tuple[int, int]) -> list[Link]:
    rows, cols = shape
    out = []
    for r in range(rows):
        for c in range(cols):
            for dr, dc in ((0, 1), (1, 0), (0, -1), (-1, 0)):
                rr, cc = r + dr, c + dc
                if 0 <= rr < rows and 0 <= cc < cols:
                    out.append(((r, c), (rr, cc)))
    return out


def rpb(load: dict) -> float:
    return max(load.values(), default=0.0)

