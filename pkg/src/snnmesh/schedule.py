"""Pipeline granularity: which output rows of a layer may be computed once
a given set of input rows has arrived.

The scheduler is a dependency counter. Every output row starts with the
number of input rows it still needs; each arrival decrements the counters
of the outputs it feeds and an output is released the moment its counter
reaches zero. Padding never arrives, so it is simply not counted: outputs
whose window touches leading padding need fewer inputs, and outputs that
touch trailing padding are released with their last valid input.
"""
from __future__ import annotations

import enum
from dataclasses import dataclass, field
from functools import lru_cache

from .errors import DuplicateArrival, EmptyTrace, ValidationError
from .model import ConvGeom, NetworkSpec


class PipelineMode(str, enum.Enum):
    NONE = "none"
    LAYER_WISE = "layer_wise"
    SPINE_TOKEN_WISE = "spine_token_wise"

    @classmethod
    def parse(cls, value) -> "PipelineMode":
        if isinstance(value, cls):
            return value
        aliases = {"none": cls.NONE, "layer": cls.LAYER_WISE, "layer_wise": cls.LAYER_WISE,
                   "spine": cls.SPINE_TOKEN_WISE, "token": cls.SPINE_TOKEN_WISE,
                   "spine_token": cls.SPINE_TOKEN_WISE,
                   "spine_token_wise": cls.SPINE_TOKEN_WISE}
        try:
            return aliases[str(value).lower().replace("-", "_")]
        except KeyError:
            raise ValidationError(f"unknown pipeline mode {value!r}", field="pipeline") from None


class DependencyTracker:
    """Counts outstanding inputs per output row.

    ``needs[o]`` is the number of inputs output ``o`` waits for and
    ``feeds[key]`` lists the outputs that input ``key`` contributes to.
    """

    __slots__ = ("remaining", "feeds", "arrived", "emitted")

    def __init__(self, needs, feeds):
        self.remaining = list(needs)
        self.feeds = feeds
        self.arrived: set = set()
        self.emitted = [False] * len(self.remaining)

    def initial_ready(self) -> list[int]:
        out = [o for o, k in enumerate(self.remaining) if k == 0 and not self.emitted[o]]
        for o in out:
            self.emitted[o] = True
        return out

    def arrive(self, key) -> list[int]:
        if key in self.arrived:
            raise DuplicateArrival(f"input {key} already arrived")
        self.arrived.add(key)
        ready = []
        for o in self.feeds.get(key, ()):
            self.remaining[o] -= 1
            if self.remaining[o] == 0:
                self.emitted[o] = True
                ready.append(o)
        ready.sort()
        return ready

    @property
    def complete(self) -> bool:
        return all(self.emitted)


@lru_cache(maxsize=256)
def conv_dependencies(g: ConvGeom) -> tuple[tuple[int, ...], dict]:
    """``needs`` per output spine and ``feeds`` per valid input spine."""
    needs = []
    feeds: dict = {}
    for r in range(g.out_h):
        for c in range(g.out_w):
            o = r * g.out_w + c
            count = 0
            for kh in range(g.kernel_h):
                h = r * g.stride + kh - g.padding
                if not 0 <= h < g.in_h:
                    continue
                for kw in range(g.kernel_w):
                    w = c * g.stride + kw - g.padding
                    if 0 <= w < g.in_w:
                        feeds.setdefault(h * g.in_w + w, []).append(o)
                        count += 1
            needs.append(count)
    return tuple(needs), {k: tuple(v) for k, v in feeds.items()}


def conv_tracker(g: ConvGeom) -> DependencyTracker:
    needs, feeds = conv_dependencies(g)
    return DependencyTracker(needs, feeds)


def spine_ready_outputs(tracker: DependencyTracker, arrival: tuple[int, int],
                        g: ConvGeom) -> list[tuple[int, int]]:
    i, j = arrival
    if not (0 <= i < g.in_h and 0 <= j < g.in_w):
        raise ValidationError(f"input spine {arrival} outside {g.in_h}x{g.in_w}", field="arrival")
    return [divmod(o, g.out_w) for o in tracker.arrive(i * g.in_w + j)]


@lru_cache(maxsize=256)
def spine_traversal_order(g: ConvGeom) -> tuple[tuple[int, int], ...]:
    """Input spines ordered so that output windows complete as early as
    possible: outputs are visited along anti-diagonals and each one pulls in
    its not-yet-visited inputs row by row."""
    seen = set()
    order = []
    outs = sorted(((r, c) for r in range(g.out_h) for c in range(g.out_w)),
                  key=lambda rc: (rc[0] + rc[1], rc[0]))
    for r, c in outs:
        for kh in range(g.kernel_h):
            h = r * g.stride + kh - g.padding
            if not 0 <= h < g.in_h:
                continue
            for kw in range(g.kernel_w):
                w = c * g.stride + kw - g.padding
                if 0 <= w < g.in_w and (h, w) not in seen:
                    seen.add((h, w))
                    order.append((h, w))
    # inputs that feed no output still stream, at the end in row-major order
    order.extend((h, w) for h in range(g.in_h) for w in range(g.in_w) if (h, w) not in seen)
    return tuple(order)


def input_stream_order(net: NetworkSpec) -> list[int]:
    """Order in which external input rows enter the first layer."""
    first = net.layers[net.input_layers[0]]
    if first.kind == "conv":
        g = first.conv_geom
        return [h * g.in_w + w for h, w in spine_traversal_order(g)]
    return list(range(net.input_shape[0]))


def dependency_map(net: NetworkSpec, j: int, mode: PipelineMode):
    """``needs`` per output row of layer ``j`` and ``feeds`` keyed by
    ``(operand slot, input row)``; slot ``-1`` is the external input."""
    mode = PipelineMode.parse(mode)
    layer = net.layers[j]
    preds = net.preds(j)
    srcs = [(k, net.out_shapes[p][0]) for k, p in enumerate(preds)] or [(-1, net.input_shape[0])]
    rows = net.out_shapes[j][0]
    feeds: dict = {}

    def all_rows():
        needs = [sum(n for _, n in srcs)] * rows
        for k, n in srcs:
            for r in range(n):
                feeds[(k, r)] = tuple(range(rows))
        return needs

    if mode is not PipelineMode.SPINE_TOKEN_WISE or layer.kind == "ssoftmax":
        return all_rows(), feeds
    if layer.kind == "conv":
        needs, conv_feeds = conv_dependencies(layer.conv_geom)
        k = srcs[0][0]
        return list(needs), {(k, i): outs for i, outs in conv_feeds.items()}
    if layer.kind == "attention":
        (ka, _), (kb, nb) = srcs
        for r in range(rows):
            feeds[(ka, r)] = (r,)
        for r in range(nb):
            feeds[(kb, r)] = tuple(range(rows))
        return [1 + nb] * rows, feeds
    # linear, residual, slayernorm: row r needs row r of every operand
    for k, _ in srcs:
        for r in range(rows):
            feeds[(k, r)] = (r,)
    return [len(srcs)] * rows, feeds


# --------------------------------------------------------------------------
# abstract token pipeline (unit-time stages), used to reason about the
# first-response latency independently of the cycle-level engine


@dataclass
class StageState:
    kind: str
    n_tokens: int
    done: set = field(default_factory=set)
    started: set = field(default_factory=set)


def token_pipeline_step(stages: list[StageState], mode: PipelineMode) -> list[tuple[int, int]]:
    """Tokens that may start now, as ``(stage, token)``, given completed work."""
    mode = PipelineMode.parse(mode)
    out = []
    for s, st in enumerate(stages):
        prev = stages[s - 1] if s else None
        for tok in range(st.n_tokens):
            if tok in st.started:
                continue
            if prev is None:
                ok = True
            elif mode is PipelineMode.SPINE_TOKEN_WISE and st.kind != "ssoftmax":
                ok = tok in prev.done
            elif mode is PipelineMode.NONE:
                ok = len(prev.done) == prev.n_tokens and all(
                    len(x.done) == x.n_tokens for x in stages[:s])
            else:
                ok = len(prev.done) == prev.n_tokens
            if ok:
                out.append((s, tok))
    return out


def token_pipeline_schedule(kinds: list[str], n_tokens: int, mode) -> dict:
    """Start times of every ``(stage, token)`` when each stage handles one
    token per time unit."""
    mode = PipelineMode.parse(mode)
    stages = [StageState(k, n_tokens) for k in kinds]
    busy_until = [0] * len(stages)
    start: dict = {}
    clock = 0
    pending: list = []   # (finish, stage, token)
    while len(start) < len(stages) * n_tokens:
        for s, tok in token_pipeline_step(stages, mode):
            if busy_until[s] <= clock and tok not in stages[s].started:
                stages[s].started.add(tok)
                start[(s, tok)] = clock
                busy_until[s] = clock + 1
                pending.append((clock + 1, s, tok))
        clock += 1
        for fin, s, tok in [p for p in pending if p[0] <= clock]:
            stages[s].done.add(tok)
            pending.remove((fin, s, tok))
    return start


def first_response_cycle(trace) -> int:
    """Cycle of the first final-layer output spike in a completed trace."""
    cycles = getattr(trace, "final_output_cycles", trace)
    if not cycles:
        raise EmptyTrace("the final layer never produced an output spike")
    return min(cycles)
