"""Cycle-level 2D mesh: routers with bounded directional input FIFOs,
per-link bandwidth and backpressure.

Every cycle each router looks at the heads of its queues (local injection
first, then N, E, S, W) and moves flits one hop along their path. A flit
whose hop counts are both zero is ejected to the local core instead.
Decisions use start-of-cycle queue occupancy and all moves land at the end
of the cycle, so a flit advances at most one hop per cycle and routers can
be visited in any fixed order with the same result.
"""
from __future__ import annotations

from collections import deque
from dataclasses import dataclass, field

from ..errors import HopOverflow, ValidationError

PORTS = ("local", "N", "E", "S", "W")
MAX_MESH_DIM = 8


@dataclass(frozen=True)
class MeshConfig:
    rows: int = 6
    cols: int = 6
    link_bandwidth: int = 1
    flit_bits: int = 256
    queue_bytes: int = 512

    def __post_init__(self):
        if self.rows < 1 or self.cols < 1:
            raise ValidationError("mesh dims must be >= 1", field="mesh")
        if self.rows > MAX_MESH_DIM or self.cols > MAX_MESH_DIM:
            raise HopOverflow(f"mesh {self.rows}x{self.cols} exceeds 3-bit hop counts",
                              field="mesh")
        if self.link_bandwidth < 1:
            raise ValidationError("link_bandwidth must be >= 1", field="link_bandwidth")

    @property
    def shape(self) -> tuple[int, int]:
        return self.rows, self.cols

    def queue_flits(self, flit_bits: int | None = None) -> int:
        return max(1, self.queue_bytes * 8 // (flit_bits or self.flit_bits))


@dataclass
class MeshFlit:
    """A flit in flight: the encoded word plus side-band routing state."""
    payload: object
    nodes: list            # remaining path as cells, nodes[0] is the current cell
    m: int                 # remaining vertical hops
    n: int                 # remaining horizontal hops
    tag: object = None     # engine bookkeeping (edge, time-step, row, ...)
    bits: int = 256
    hops: int = 0
    # hop counts of later legs; the router rewrites m, n at each waypoint
    next_legs: list = field(default_factory=list)


def _direction(a, b) -> str:
    if b[0] < a[0]:
        return "S"   # arrives at b from its south side
    if b[0] > a[0]:
        return "N"
    if b[1] > a[1]:
        return "W"
    return "E"


@dataclass
class RouterState:
    coord: tuple[int, int]
    capacity: int
    queues: dict = field(default_factory=dict)
    routing_table: dict = field(default_factory=dict)
    # layer -> (local path id in {1, 2}, remote path id in {3, 4, 5})
    data_paths: dict = field(default_factory=dict)

    def __post_init__(self):
        for p in PORTS:
            self.queues.setdefault(p, deque())

    def occupancy(self) -> int:
        return sum(len(q) for q in self.queues.values())

    def assign_paths(self, layer: int, local: int, remote: int) -> None:
        if local not in (1, 2) or remote not in (3, 4, 5):
            raise ValidationError("local path must be 1 or 2, remote 3..5", layer, "data_paths")
        self.data_paths[layer] = (local, remote)


@dataclass
class MeshStats:
    flit_hops: int = 0
    bit_hops: int = 0
    fifo_accesses: int = 0
    injected: int = 0
    delivered: int = 0
    stall_cycles: int = 0
    link_flits: dict = field(default_factory=dict)


class Mesh:
    def __init__(self, config: MeshConfig, flit_bits: int | None = None):
        self.config = config
        self.flit_bits = flit_bits or config.flit_bits
        cap = config.queue_flits(self.flit_bits)
        self.routers = {(r, c): RouterState((r, c), cap)
                        for r in range(config.rows) for c in range(config.cols)}
        self.stats = MeshStats()
        self._active: set = set()

    def inject(self, flit: MeshFlit) -> None:
        src = flit.nodes[0]
        self.routers[src].queues["local"].append(flit)
        self._active.add(src)
        self.stats.injected += 1
        self.stats.fifo_accesses += 1

    @property
    def idle(self) -> bool:
        return not self._active

    def in_flight(self) -> int:
        return sum(self.routers[c].occupancy() for c in self._active)

    def tick(self) -> list[MeshFlit]:
        """Advance one cycle; returns flits ejected to their cores."""
        bw = self.config.link_bandwidth
        moves = []          # (flit, from_cell, port, to_cell or None)
        granted: dict = {}  # (cell, port) -> flits granted into that queue this cycle
        ejected = []
        for cell in sorted(self._active):
            router = self.routers[cell]
            out_budget: dict = {}
            eject_budget = bw
            for port in PORTS:
                q = router.queues[port]
                sent = 0
                for flit in q:
                    if sent >= bw:
                        break
                    while flit.m == 0 and flit.n == 0 and flit.next_legs:
                        flit.m, flit.n = flit.next_legs.pop(0)
                    if flit.m == 0 and flit.n == 0:
                        if eject_budget == 0:
                            break
                        eject_budget -= 1
                        moves.append((flit, cell, port, None))
                        sent += 1
                        continue
                    nxt = flit.nodes[1]
                    used = out_budget.get(nxt, 0)
                    if used >= bw:
                        break
                    in_port = _direction(cell, nxt)
                    key = (nxt, in_port)
                    down = self.routers[nxt].queues[in_port]
                    if len(down) + granted.get(key, 0) >= self.routers[nxt].capacity:
                        self.stats.stall_cycles += 1
                        break
                    granted[key] = granted.get(key, 0) + 1
                    out_budget[nxt] = used + 1
                    moves.append((flit, cell, port, nxt))
                    sent += 1
        st = self.stats
        for flit, cell, port, nxt in moves:
            self.routers[cell].queues[port].popleft()
            st.fifo_accesses += 1
            if nxt is None:
                ejected.append(flit)
                st.delivered += 1
                continue
            if nxt[0] != cell[0]:
                flit.m -= 1
            else:
                flit.n -= 1
            flit.nodes.pop(0)
            flit.hops += 1
            self.routers[nxt].queues[_direction(cell, nxt)].append(flit)
            st.fifo_accesses += 1
            st.flit_hops += 1
            st.bit_hops += flit.bits
            link = (cell, nxt)
            st.link_flits[link] = st.link_flits.get(link, 0) + 1
            self._active.add(nxt)
        self._active = {c for c in self._active if self.routers[c].occupancy()}
        return ejected


def router_tick(mesh: Mesh) -> list[MeshFlit]:
    """One synchronous step of every router (alias kept for the public API)."""
    return mesh.tick()

