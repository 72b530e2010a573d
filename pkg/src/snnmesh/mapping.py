"""Three-stage mapping: greedy partition, Hilbert-curve placement with
potential-driven refinement, and GA-optimised multi-path routing tables.
"""
from __future__ import annotations

import json
import math
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from .errors import LayerTooLarge, MappingIncomplete, ParseError, TooManyPartitions, ValidationError
from .model import PE_KINDS, NetworkSpec
from .noc.flits import slots_for
from .noc.routing import (candidate_paths, links_to_nodes, manhattan, nodes_to_links,
                          path_is_legal, xy_path)
from .pe import PeConfig

DEFAULT_DENSITY = 0.2


# --------------------------------------------------------------------------
# partition


@dataclass
class PartitionInput:
    a: list            # memory demand per layer (bytes)
    d: list            # neuron-circuit demand per layer
    A: float           # memory per core
    D: float           # neuron circuits per core
    traffic: dict = field(default_factory=dict)   # (i, j) -> flits per time-step

    def __post_init__(self):
        if len(self.a) != len(self.d):
            raise ValidationError("a and d differ in length", field="a")
        if self.A <= 0 or self.D <= 0:
            raise ValidationError("capacities must be positive", field="A")
        if any(x < 0 for x in self.a) or any(x < 0 for x in self.d):
            raise ValidationError("demands must be non-negative", field="a")
        if any(c < 0 for c in self.traffic.values()):
            raise ValidationError("traffic must be non-negative", field="traffic")


def _tracer_bits(q) -> int:
    return max(1, math.ceil(math.log2(q.s_max - q.s_min + 1)))


def layer_demands(net: NetworkSpec) -> tuple[list[int], list[int]]:
    """Memory bytes and neuron circuits per layer. Rows are time-multiplexed
    over the circuits, so a layer needs one circuit per output column."""
    a, d = [], []
    for j, layer in enumerate(net.layers):
        rows, cols = net.out_shapes[j]
        bits = rows * cols * (12 + _tracer_bits(layer.quant))
        if layer.weights is not None:
            bits += layer.weights.size * layer.quant.weight_bits
        a.append(math.ceil(bits / 8))
        d.append(cols if layer.kind in PE_KINDS else 0)
    return a, d


def estimate_traffic(net: NetworkSpec, density: float = DEFAULT_DENSITY,
                     slots: int = 17) -> dict:
    """Expected flits per time-step on every edge at the given spike density."""
    out = {}
    for i, j in net.edges:
        rows, cols = net.out_shapes[i]
        out[(i, j)] = float(rows * max(1, math.ceil(density * cols / slots)))
    return out


class _UnionFind:
    def __init__(self, n):
        self.parent = list(range(n))

    def find(self, x):
        while self.parent[x] != x:
            self.parent[x] = self.parent[self.parent[x]]
            x = self.parent[x]
        return x

    def union(self, a, b):
        ra, rb = self.find(a), self.find(b)
        if ra != rb:
            self.parent[max(ra, rb)] = min(ra, rb)


def greedy_partition(pin: PartitionInput) -> list[list[int]]:
    """Merge layers along the heaviest edges first while both capacities hold."""
    n = len(pin.a)
    for i in range(n):
        if pin.a[i] > pin.A or pin.d[i] > pin.D:
            raise LayerTooLarge(
                f"needs {pin.a[i]} B / {pin.d[i]} circuits, core has {pin.A} B / {pin.D}",
                layer=i)
    uf = _UnionFind(n)
    mem = list(pin.a)
    neu = list(pin.d)
    for (i, j), c in sorted(pin.traffic.items(), key=lambda kv: (-kv[1], kv[0])):
        ri, rj = uf.find(i), uf.find(j)
        if ri == rj:
            continue
        if mem[ri] + mem[rj] <= pin.A and neu[ri] + neu[rj] <= pin.D:
            uf.union(ri, rj)
            root = uf.find(ri)
            mem[root] = mem[ri] + mem[rj]
            neu[root] = neu[ri] + neu[rj]
    groups: dict = {}
    for i in range(n):
        groups.setdefault(uf.find(i), []).append(i)
    return sorted(groups.values(), key=lambda g: g[0])


def partition_traffic(partitions, traffic: dict) -> dict:
    owner = {layer: p for p, g in enumerate(partitions) for layer in g}
    out: dict = {}
    for (i, j), c in traffic.items():
        pi, pj = owner[i], owner[j]
        if pi != pj and c > 0:
            out[(pi, pj)] = out.get((pi, pj), 0.0) + c
    return out


# --------------------------------------------------------------------------
# placement


def hilbert_d2xy(n: int, d: int) -> tuple[int, int]:
    """Cell ``(x, y)`` visited at step ``d`` of the ``n x n`` Hilbert curve."""
    x = y = 0
    s, t = 1, d
    while s < n:
        rx = 1 & (t // 2)
        ry = 1 & (t ^ rx)
        if ry == 0:
            if rx == 1:
                x, y = s - 1 - x, s - 1 - y
            x, y = y, x
        x += s * rx
        y += s * ry
        t //= 4
        s *= 2
    return x, y


def hilbert_cells(shape: tuple[int, int]) -> list[tuple[int, int]]:
    """Mesh cells ``(row, col)`` in curve order (x = col, y = row), keeping
    only in-bounds cells of the enclosing power-of-two curve."""
    rows, cols = shape
    n = 1
    while n < max(rows, cols):
        n *= 2
    out = []
    for d in range(n * n):
        x, y = hilbert_d2xy(n, d)
        if y < rows and x < cols:
            out.append((y, x))
    return out


def linearize(n_parts: int, ptraffic: dict, start: int = 0) -> list[int]:
    """DFS over the partition traffic graph, heaviest edge first."""
    adj: dict = {p: [] for p in range(n_parts)}
    for (a, b), c in ptraffic.items():
        adj[a].append((c, b))
        adj[b].append((c, a))
    order, seen = [], set()

    def visit(p):
        stack = [p]
        while stack:
            u = stack.pop()
            if u in seen:
                continue
            seen.add(u)
            order.append(u)
            nbrs = sorted(adj[u], key=lambda cb: (-cb[0], cb[1]))
            stack.extend(v for _, v in reversed(nbrs) if v not in seen)

    visit(start)
    for p in range(n_parts):
        if p not in seen:
            visit(p)
    return order


def potential(placement: dict, ptraffic: dict) -> float:
    return sum(c * manhattan(placement[a], placement[b]) for (a, b), c in ptraffic.items())


def refine_placement(placement: dict, ptraffic: dict, shape: tuple[int, int]) -> dict:
    """Best-improvement swaps (a move into an empty cell counts as a swap)
    while the traffic-weighted distance strictly decreases."""
    place = dict(placement)
    cells = [(r, c) for r in range(shape[0]) for c in range(shape[1])]
    current = potential(place, ptraffic)
    while True:
        at = {v: k for k, v in place.items()}
        best, best_move = current, None
        for p in sorted(place):
            for cell in cells:
                if cell == place[p]:
                    continue
                other = at.get(cell)
                if other is not None and other < p:
                    continue
                trial = dict(place)
                trial[p] = cell
                if other is not None:
                    trial[other] = place[p]
                phi = potential(trial, ptraffic)
                if phi < best - 1e-12:
                    best, best_move = phi, trial
        if best_move is None:
            return place
        place, current = best_move, best


def hilbert_place(partitions, ptraffic: dict, shape: tuple[int, int],
                  start: int = 0, refine: bool = True) -> dict:
    cells = hilbert_cells(shape)
    if len(partitions) > len(cells):
        raise TooManyPartitions(f"{len(partitions)} partitions do not fit {shape[0]}x{shape[1]}",
                                field="mesh")
    order = linearize(len(partitions), ptraffic, start)
    place = {p: cells[k] for k, p in enumerate(order)}
    return refine_placement(place, ptraffic, shape) if refine else place


# --------------------------------------------------------------------------
# routing probabilities


@dataclass(frozen=True)
class GaParams:
    population: int = 64
    generations: int = 200
    tournament: int = 4
    sigma: float = 0.1
    elitism: int = 2


def _incidence(flows, candidates, capacity):
    links = sorted({link for cands in candidates for path in cands for link in path})
    index = {link: k for k, link in enumerate(links)}
    rows = []
    for (_, _, rate), cands in zip(flows, candidates):
        for path in cands:
            row = np.zeros(len(links))
            for link in path:
                row[index[link]] += rate / capacity
            rows.append(row)
    return links, (np.array(rows) if rows else np.zeros((0, len(links))))


def required_peak_bandwidth(flows, candidates, probs, capacity: float = 1.0) -> float:
    _, m = _incidence(flows, candidates, capacity)
    if m.shape[1] == 0:
        return 0.0
    return float((np.concatenate([np.asarray(p, float) for p in probs]) @ m).max())


def _renormalise(pop, bounds):
    for lo, hi in bounds:
        block = np.clip(pop[:, lo:hi], 0.0, None)
        s = block.sum(axis=1, keepdims=True)
        block = np.where(s > 0, block / np.where(s > 0, s, 1), 1.0 / (hi - lo))
        pop[:, lo:hi] = block
    return pop


def ga_optimize_paths(flows, candidates, capacity: float = 1.0, seed: int = 0,
                      params: GaParams = GaParams()) -> list[np.ndarray]:
    """Per-flow path probabilities minimising the peak expected link load.

    ``flows`` is a list of ``(src, dst, rate)``; ``candidates[f]`` lists the
    paths of flow ``f`` with the X-Y path first. The all-X-Y individual is
    seeded into the population and elitism keeps the best, so the result is
    never worse than X-Y routing.
    """
    bounds, lo = [], 0
    for cands in candidates:
        bounds.append((lo, lo + len(cands)))
        lo += len(cands)
    genes = lo
    _, m = _incidence(flows, candidates, capacity)
    if genes == 0 or m.shape[1] == 0:
        return [np.eye(len(c))[0] for c in candidates]
    rng = np.random.default_rng(seed)
    P = params.population
    pop = rng.random((P, genes))
    xy = np.zeros(genes)
    for a, _ in bounds:
        xy[a] = 1.0
    pop[0] = xy
    pop = _renormalise(pop, bounds)

    def fitness(pp):
        return (pp @ m).max(axis=1)

    fit = fitness(pop)
    for _ in range(params.generations):
        elite = np.argsort(fit, kind="stable")[:params.elitism]
        n_child = P - params.elitism
        contenders = rng.integers(P, size=(2, n_child, params.tournament))
        winners = np.take_along_axis(contenders, np.argmin(fit[contenders], axis=2)[..., None],
                                     axis=2)[..., 0]
        mask = rng.random((n_child, genes)) < 0.5
        children = np.where(mask, pop[winners[0]], pop[winners[1]])
        children = children + rng.normal(0.0, params.sigma, children.shape)
        children = _renormalise(children, bounds)
        pop = np.concatenate([pop[elite], children])
        fit = fitness(pop)
    best = pop[int(np.argmin(fit))]
    return [best[a:b].copy() for a, b in bounds]


# --------------------------------------------------------------------------
# full mapping


@dataclass
class Mapping:
    partitions: list            # partition -> sorted layer ids
    placement: dict             # partition -> (row, col)
    routing: dict               # (src, dst) -> [(path, probability)]
    shape: tuple = (6, 6)

    def __post_init__(self):
        self._owner = {layer: p for p, g in enumerate(self.partitions) for layer in g}

    def core_of(self, layer: int) -> tuple[int, int]:
        try:
            return self.placement[self._owner[layer]]
        except KeyError:
            raise MappingIncomplete(f"layer {layer} is not mapped") from None

    def partition_of(self, layer: int) -> int:
        return self._owner[layer]

    def validate(self, net: NetworkSpec | None = None) -> "Mapping":
        cells = list(self.placement.values())
        if len(set(cells)) != len(cells):
            raise ValidationError("placement is not injective", field="placement")
        for cell in cells:
            if not (0 <= cell[0] < self.shape[0] and 0 <= cell[1] < self.shape[1]):
                raise ValidationError(f"cell {cell} outside mesh", field="placement")
        if set(self.placement) != set(range(len(self.partitions))):
            raise MappingIncomplete("every partition needs a placement")
        seen = [x for g in self.partitions for x in g]
        if len(seen) != len(set(seen)):
            raise ValidationError("partitions overlap", field="partitions")
        if net is not None and sorted(seen) != list(range(net.n_layers)):
            raise MappingIncomplete("mapping does not cover every layer")
        for (src, dst), options in self.routing.items():
            if abs(sum(p for _, p in options) - 1.0) > 1e-9:
                raise ValidationError(f"flow {src}->{dst} probabilities do not sum to 1",
                                      field="routing")
            for path, _ in options:
                if not path_is_legal(path, src, dst, self.shape):
                    raise ValidationError(f"illegal path for flow {src}->{dst}", field="routing")
        return self

    def to_dict(self) -> dict:
        routing = []
        for (src, dst) in sorted(self.routing):
            routing.append({
                "src": list(src), "dst": list(dst),
                "paths": [{"nodes": [list(n) for n in links_to_nodes(path, src)],
                           "p": round(float(p), 12)} for path, p in self.routing[(src, dst)]],
            })
        return {"mesh": list(self.shape), "partitions": self.partitions,
                "placement": [list(self.placement[p]) for p in range(len(self.partitions))],
                "routing": routing}

    @classmethod
    def from_dict(cls, doc: dict) -> "Mapping":
        try:
            shape = tuple(doc["mesh"])
            parts = [sorted(int(x) for x in g) for g in doc["partitions"]]
            place = {p: tuple(c) for p, c in enumerate(doc["placement"])}
            routing = {}
            for entry in doc.get("routing", []):
                src, dst = tuple(entry["src"]), tuple(entry["dst"])
                opts = []
                for e in entry["paths"]:
                    nodes = [tuple(n) for n in e["nodes"]]
                    opts.append((nodes_to_links(nodes), float(e["p"])))
                total = sum(p for _, p in opts)
                routing[(src, dst)] = [(path, p / total) for path, p in opts]
        except (KeyError, TypeError, ValueError) as exc:
            raise ParseError(f"malformed mapping document ({exc})") from None
        return cls(parts, place, routing, shape)

    def dumps(self) -> str:
        return json.dumps(self.to_dict(), sort_keys=True) + "\n"

    def save(self, path) -> None:
        Path(path).write_text(self.dumps())

    @classmethod
    def load(cls, path) -> "Mapping":
        try:
            doc = json.loads(Path(path).read_text())
        except (OSError, json.JSONDecodeError) as exc:
            raise ParseError(f"{path}: {exc}") from None
        return cls.from_dict(doc)


@dataclass(frozen=True)
class MapConfig:
    rows: int = 6
    cols: int = 6
    core_neurons: int | None = None     # defaults to PeConfig.neuron_circuits
    core_memory: int | None = None      # defaults to the PE buffer total
    density: float = DEFAULT_DENSITY
    flit_bits: int = 256
    seed: int = 0
    ga: GaParams = GaParams()
    refine: bool = True


def map_network(net: NetworkSpec, cfg: MapConfig = MapConfig(),
                pe: PeConfig = PeConfig()) -> Mapping:
    a, d = layer_demands(net)
    A = cfg.core_memory or (pe.weight_buf_bytes + pe.membrane_buf_bytes + pe.tracer_buf_bytes)
    D = cfg.core_neurons or pe.neuron_circuits
    traffic = estimate_traffic(net, cfg.density, slots_for(cfg.flit_bits))
    parts = greedy_partition(PartitionInput(a, d, A, D, traffic))
    ptraffic = partition_traffic(parts, traffic)
    owner = {layer: p for p, g in enumerate(parts) for layer in g}
    shape = (cfg.rows, cfg.cols)
    place = hilbert_place(parts, ptraffic, shape, owner[net.input_layers[0]], cfg.refine)
    flows = [(place[a_], place[b_], c) for (a_, b_), c in sorted(ptraffic.items())]
    routing = build_routing(flows, shape, cfg.seed, cfg.ga)
    return Mapping(parts, place, routing, shape).validate(net)


def build_routing(flows, shape, seed: int = 0, params: GaParams = GaParams()) -> dict:
    """Candidate paths per flow (detours steered away from the X-Y load)
    and their GA-optimised probabilities."""
    merged: dict = {}
    for src, dst, rate in flows:
        if src != dst:
            merged[(src, dst)] = merged.get((src, dst), 0.0) + rate
    keys = sorted(merged)
    xy_load: dict = {}
    for (src, dst) in keys:
        for link in xy_path(src, dst):
            xy_load[link] = xy_load.get(link, 0.0) + merged[(src, dst)]
    cands = [candidate_paths(src, dst, shape, xy_load) for src, dst in keys]
    probs = ga_optimize_paths([(s, t, merged[(s, t)]) for s, t in keys], cands, seed=seed,
                              params=params)
    return {k: [(path, float(p)) for path, p in zip(c, pr)] for k, c, pr in zip(keys, cands, probs)}

