"""Cycle-level simulation of a mapped spiking network.

Work is split into *row tasks* ``(layer, time-step, row)``. A task becomes
ready when the pipeline mode says its inputs have arrived and the same row
has already been dispatched for the previous time-step. Each core owns one
PE group per mapped weight layer (plus a router-side unit for residual,
softmax and layernorm layers); a group runs its ready tasks one at a time
in ``(ready cycle, time-step, row)`` order.

Finished rows are bundled into flits and pushed through the mesh, which is
stepped cycle by cycle while any flit is in flight. A row-completion signal
travels alongside (``hops + 1`` cycles) so that rows without spikes still
release their consumers. Idle stretches are skipped through an event heap,
so the loop cost tracks activity rather than simulated time.

The simulation runs past the input window until every layer is provably
silent: all its predecessors are silent and each of its neurons is
quiescent. The cumulative tracers at that point are the stable state.
"""
from __future__ import annotations

import heapq
import math
from dataclasses import dataclass, field

import numpy as np

from ..errors import DeadlockDetected, MappingIncomplete, SimulationError, ValidationError
from ..mapping import Mapping
from ..model import PE_KINDS, NetworkSpec, encode_input
from ..noc.flits import (AER_BITS, decode_aer, decode_baer, encode_aer, encode_baer, slots_for)
from ..noc.mesh import Mesh, MeshConfig, MeshFlit
from ..noc.routing import hop_fields, links_to_nodes, manhattan, valiant_legs, xy_path
from ..noc.units import im2col_table, slayernorm, ssoftmax
from ..pe import (PRODUCTS, AccessCounters, PeBuffers, PeConfig, ProcessingElement,
                  product_counters, product_cycles)
from ..schedule import DependencyTracker, PipelineMode, dependency_map, input_stream_order

AER_MODES = ("baer", "legacy")


@dataclass(frozen=True)
class SimConfig:
    pipeline: PipelineMode = PipelineMode.SPINE_TOKEN_WISE
    product: str = "gustavson"
    aer: str = "baer"
    routing: str = "xy"
    flit_bits: int = 256
    link_bandwidth: int = 1
    injection_multiplier: int = 1
    seed: int = 0
    pe: PeConfig = PeConfig()
    max_cycles: int = 50_000_000
    keep_flits: bool = False

    def __post_init__(self):
        object.__setattr__(self, "pipeline", PipelineMode.parse(self.pipeline))
        if self.product not in PRODUCTS:
            raise ValidationError(f"unknown product {self.product!r}", field="product")
        if self.aer not in AER_MODES:
            raise ValidationError(f"unknown AER mode {self.aer!r}", field="aer")
        if self.routing not in ("xy", "valiant", "multipath"):
            raise ValidationError(f"unknown routing {self.routing!r}", field="routing")
        if self.injection_multiplier < 1:
            raise ValidationError("injection multiplier must be >= 1",
                                  field="injection_multiplier")
        slots_for(self.flit_bits)

    @property
    def spikes_per_flit(self) -> int:
        if self.aer == "legacy":
            return 1
        return max(1, slots_for(self.flit_bits) // self.injection_multiplier)

    @property
    def wire_flit_bits(self) -> int:
        return AER_BITS if self.aer == "legacy" else self.flit_bits


@dataclass
class SimTrace:
    config: SimConfig
    final_layer: int
    time_steps: int                          # input window T
    t_stable: int = 0                        # last time-step with any activity
    cycles: int = 0                          # cycle at which the stable state is reached
    step_cycles: list = field(default_factory=list)      # completion cycle per time-step
    final_snapshots: list = field(default_factory=list)  # final tracers after each time-step
    step_totals: list = field(default_factory=list)      # counter totals when each step completed
    final_output_cycles: list = field(default_factory=list)
    tracers: list = field(default_factory=list)          # cumulative tracers per layer
    layer_counters: list = field(default_factory=list)
    noc: dict = field(default_factory=dict)
    link_flits: dict = field(default_factory=dict)
    events: list = field(default_factory=list)           # (cycle, kind, layer, t, row)
    cores: int = 1
    flits: list = field(default_factory=list)

    def snapshot(self, t: int) -> np.ndarray:
        """Final-layer tracers after time-step ``t`` (stable beyond the end)."""
        if t < 1:
            return np.zeros_like(self.final_snapshots[0])
        return self.final_snapshots[min(t, len(self.final_snapshots)) - 1]

    def cycle_of(self, t: int) -> int:
        return self.step_cycles[min(t, len(self.step_cycles)) - 1]

    @property
    def horizon(self) -> int:
        """Number of time-steps reported: the input window or the stable point."""
        return max(self.time_steps, len(self.final_snapshots))

    def counter_totals(self) -> dict:
        tot = AccessCounters()
        for c in self.layer_counters:
            tot += c
        d = tot.as_dict()
        d.update(self.noc)
        return d


class _Layer:
    def __init__(self, j, spec, shape, in_rows, core, mode, net):
        self.j = j
        self.spec = spec
        self.kind = spec.kind
        self.rows, self.cols = shape
        self.core = core
        q = spec.quant
        if not float(q.v_thr).is_integer():
            raise ValidationError("simulation needs an integral threshold", j, "v_thr")
        w = spec.weights if spec.weights is not None else np.zeros((0, self.cols), np.int64)
        self.pe = ProcessingElement(PeBuffers.zeros(w, self.rows), q, layer=j)
        self.W = self.pe.buffers.weight
        self.preds = net.preds(j)
        self.slots = list(range(len(self.preds))) or [-1]
        self.slot_rows = {k: (net.out_shapes[p][0] if k >= 0 else in_rows)
                          for k, p in zip(range(len(self.preds)), self.preds)}
        if not self.preds:
            self.slot_rows = {-1: in_rows}
        self.needs, self.feeds = dependency_map(net, j, mode)
        self.next_t = [1] * self.rows
        self.done_through = [0] * self.rows
        self.quiet_since: list = [0] * self.rows
        self.deps_ok: set = set()
        self.queued = [False] * self.rows
        self.parked = False
        self.trackers: dict = {}
        self.inbox: dict = {}
        self.finish_known: dict = {}
        self.finished_at = None
        self.rows_done: dict = {}
        self.held: dict = {}
        self.group = None
        self.adds = 1
        self.k_in = 0
        if self.kind == "conv":
            g = spec.conv_geom
            rf = [[] for _ in range(self.rows)]
            for i, outs in enumerate(im2col_table(g)):
                for o, off in outs:
                    rf[o].append((i, off))
            self.rf = rf
            self.k_in = g.fan_in
        elif self.kind == "linear":
            self.k_in = self.W.shape[0]
        elif self.kind == "attention":
            self.transpose_b = spec.transpose_b
            a_shape = net.out_shapes[self.preds[0]]
            b_shape = net.out_shapes[self.preds[1]]
            self.k_in = a_shape[1]
            self.a_cum = np.zeros(a_shape, np.int64)
            self.b_rows = b_shape[0]
            self.b_cum = {0: np.zeros(b_shape, np.int64)}
        elif self.kind in ("ssoftmax", "slayernorm"):
            self.x_cum = np.zeros((self.rows, self.cols), np.int64)
            self.f_prev = np.zeros((self.rows, self.cols), np.int64)
            self.primed = [False] * self.rows
            self.fn = ssoftmax if self.kind == "ssoftmax" else slayernorm
            self.quiet_since = [None] * self.rows


class Simulator:
    def __init__(self, net: NetworkSpec, mapping: Mapping, values, config: SimConfig = SimConfig()):
        self.net = net
        self.map = mapping
        self.cfg = config
        self.mode = config.pipeline
        self.T = net.time_steps
        mapping.validate(net)
        rows, cols = mapping.shape
        self.mesh = Mesh(MeshConfig(rows, cols, config.link_bandwidth, config.flit_bits),
                         flit_bits=config.wire_flit_bits)
        self.rng = np.random.default_rng(config.seed)
        self.in_rows = net.input_shape[0]
        events = encode_input(np.asarray(values).reshape(net.input_shape), self.T)
        self.t_in = max((e.t for e in events), default=0)
        self.in_spikes: dict = {}
        for e in events:
            self.in_spikes.setdefault((e.t, e.spine_or_token_id), []).append((e.position, e.sign))
        self.layers = [
            _Layer(j, net.layers[j], net.out_shapes[j], self.in_rows, mapping.core_of(j),
                   self.mode, net)
            for j in range(net.n_layers)]
        for L in self.layers:
            if not L.preds:
                L.finish_known[-1] = self.t_in
        self._assign_groups()
        self.edges = []           # (src layer, dst layer, slot)
        self.out_edges = {j: [] for j in range(net.n_layers)}
        for s in range(net.n_layers):
            for k, p in enumerate(net.preds(s)):
                self.out_edges[p].append(len(self.edges))
                self.edges.append((p, s, k))
        self.final = net.final_layer
        self.trace = SimTrace(config, self.final, self.T, cores=len(mapping.partitions))
        self.heap: list = []
        self._seq = 0
        self.received: dict = {}
        self.expected: dict = {}
        self.delivered: dict = {}
        self.final_rows: dict = {}
        self.resources: dict = {}
        self.barrier = (1, 0)
        self.barrier_open: set = set()
        self.order = net.order
        self.stream_order = input_stream_order(net)
        self.done = False
        self.table = mapping.routing

    # ---------------------------------------------------------------- setup

    def _assign_groups(self):
        by_core: dict = {}
        for L in self.layers:
            by_core.setdefault(L.core, []).append(L)
        for core, ls in by_core.items():
            pe_layers = [L for L in ls if L.kind in PE_KINDS]
            shares = self.cfg.pe.group_shares(max(1, len(pe_layers)))
            for g, L in enumerate(pe_layers):
                L.group = ("pe", core, L.j)
                L.adds = shares[g]["adds_per_cycle"]
            for L in ls:
                if L.kind not in PE_KINDS:
                    L.group = ("router", core)
                    L.adds = self.cfg.pe.adds_per_cycle

    def _push(self, cycle, kind, payload):
        self._seq += 1
        heapq.heappush(self.heap, (cycle, self._seq, kind, payload))

    # ---------------------------------------------------------------- run

    def run(self) -> SimTrace:
        if self.mode is PipelineMode.NONE:
            self._advance_barrier(0)
        else:
            for t in range(1, self.t_in + 1):
                self._schedule_input(t, (t - 1) * self.in_rows)
        for L in self.layers:
            for r in range(L.rows):
                self._try_enqueue(L, 1, r, 0)
        cycle = 0
        self._dispatch_all(0)
        while not self.done:
            if self.heap:
                nxt = self.heap[0][0]
                cycle = min(nxt, cycle + 1) if not self.mesh.idle else nxt
            elif not self.mesh.idle:
                cycle += 1
            else:
                self._deadlock(cycle)
            if cycle > self.cfg.max_cycles:
                raise SimulationError(f"exceeded {self.cfg.max_cycles} cycles")
            while self.heap and self.heap[0][0] == cycle and not self.done:
                _, _, kind, payload = heapq.heappop(self.heap)
                getattr(self, "_ev_" + kind)(cycle, *payload)
                self._dispatch_all(cycle)
            if self.done:
                break
            if not self.mesh.idle:
                for mf in self.mesh.tick():
                    self._eject(cycle, mf)
        return self._finish_trace()

    def _deadlock(self, cycle):
        pending = {L.j: min(L.next_t) for L in self.layers if L.finished_at is None}
        waiting = {}
        for L in self.layers:
            if L.finished_at is None:
                t = min(L.next_t)
                tr = L.trackers.get(t)
                waiting[L.j] = (t, None if tr is None else sum(1 for x in tr.remaining if x))
        raise DeadlockDetected(
            f"no pending events at cycle {cycle} with unfinished layers {pending}; "
            f"rows still waiting (layer: (time-step, rows)): {waiting}")

    # ---------------------------------------------------------------- input

    def _schedule_input(self, t, start):
        for q, r in enumerate(self.stream_order):
            self._push(start + q + 1, "input", (t, r))

    def _input_batches(self, t, r):
        spikes = self.in_spikes.get((t, r), [])
        cap = self.cfg.spikes_per_flit
        return [spikes[i:i + cap] for i in range(0, len(spikes), cap)]

    def _ev_input(self, cycle, t, r):
        for L in self.layers:
            if not L.preds:
                L.inbox[(-1, t, r)] = self._input_batches(t, r)
                self._arrive(L, -1, t, r, cycle)

    # ---------------------------------------------------------------- dependencies

    def _tracker(self, L, t):
        tr = L.trackers.get(t)
        if tr is None:
            tr = DependencyTracker(L.needs, L.feeds)
            L.trackers[t] = tr
            for r in tr.initial_ready():
                L.deps_ok.add((t, r))
            for k, tp in L.finish_known.items():
                if tp is not None and t > tp:
                    self._pre_arrive(L, tr, k, t)
        return tr

    def _pre_arrive(self, L, tr, k, t):
        for r_in in range(L.slot_rows[k]):
            if (k, r_in) not in tr.arrived:
                for r in tr.arrive((k, r_in)):
                    L.deps_ok.add((t, r))

    def _arrive(self, L, k, t, r_in, cycle):
        if L.finished_at is not None and t > L.finished_at:
            return
        tr = self._tracker(L, t)
        if (k, r_in) in tr.arrived:
            return
        if k >= 0:
            key = (L.preds[k], t)
            self.delivered[key] = self.delivered.get(key, 0) + 1
        for r in tr.arrive((k, r_in)):
            L.deps_ok.add((t, r))
            self._try_enqueue(L, t, r, cycle)
        if self.mode is PipelineMode.NONE and k >= 0:
            self._advance_barrier(cycle)

    def _on_finish_info(self, L, k, tp, cycle):
        if L.finish_known.get(k) is not None:
            return
        L.finish_known[k] = tp
        for t, tr in sorted(L.trackers.items()):
            if t > tp:
                self._pre_arrive(L, tr, k, t)
        for r in range(L.rows):
            self._try_enqueue(L, L.next_t[r], r, cycle)

    def _try_enqueue(self, L, t, r, cycle):
        if L.next_t[r] != t or L.queued[r] or (L.finished_at is not None and t > L.finished_at):
            return
        if (t, r) not in L.deps_ok:
            self._tracker(L, t)
            if (t, r) not in L.deps_ok:
                return
        if self.mode is PipelineMode.NONE and (L.j, t) not in self.barrier_open:
            return
        if t > min(L.done_through) + 1 and self._past_inputs(L, t):
            # nothing can reach the layer any more: step rows together so an
            # idle row does not spin ahead while another still catches up
            L.parked = True
            return
        L.deps_ok.discard((t, r))
        L.queued[r] = True
        res = self.resources.setdefault(L.group, [False, []])   # [busy, ready heap]
        heapq.heappush(res[1], (cycle, t, r, L.j))

    @staticmethod
    def _past_inputs(L, t):
        known = [L.finish_known.get(k) for k in L.slots]
        return None not in known and t > max(known)

    # ---------------------------------------------------------------- barrier (no pipeline)

    def _layer_done(self, j, t):
        L = self.layers[j]
        return (L.finished_at is not None and t > L.finished_at) or \
            L.rows_done.get(t, 0) == L.rows

    def _delivered(self, j, t):
        L = self.layers[j]
        if L.finished_at is not None and t > L.finished_at:
            return True
        if not self._layer_done(j, t):
            return False
        need = L.rows * len(self.out_edges[j])
        return self.delivered.get((j, t), 0) >= need

    def _advance_barrier(self, cycle):
        n = len(self.order)
        while not self.done:
            t, k = self.barrier
            j = self.order[k]
            if k == 0:
                ok = t == 1 or self._layer_done(self.order[-1], t - 1)
            else:
                ok = self._delivered(self.order[k - 1], t)
            if not ok:
                return
            if self.layers[self.final].finished_at is not None and \
                    t > self.layers[self.final].finished_at:
                return
            self.barrier_open.add((j, t))
            if k == 0 and t <= self.t_in:
                self._schedule_input(t, cycle)
            L = self.layers[j]
            for r in range(L.rows):
                self._try_enqueue(L, t, r, cycle)
            self.barrier = (t, k + 1) if k + 1 < n else (t + 1, 0)

    # ---------------------------------------------------------------- execution

    def _dispatch_all(self, cycle):
        progressed = True
        while progressed:
            progressed = False
            for gid in sorted(self.resources, key=str):
                res = self.resources[gid]
                while res[1] and not res[0] and res[1][0][0] <= cycle:
                    _, t, r, j = heapq.heappop(res[1])
                    L = self.layers[j]
                    L.queued[r] = False
                    L.next_t[r] = t + 1
                    dur, y = self._execute(L, t, r)
                    if dur == 0:
                        self._complete(cycle, j, t, r, y, False)
                        progressed = True
                    else:
                        res[0] = True
                        self._push(cycle + dur, "complete", (j, t, r, y, True))
                        self.trace.events.append((cycle, "start", j, t, r))
                    if self.done:
                        return
                    # the row's next time-step may queue behind this one
                    self._try_enqueue(L, t + 1, r, cycle)

    def _ev_complete(self, cycle, j, t, r, y, busy):
        self.resources[self.layers[j].group][0] = False
        self._complete(cycle, j, t, r, y, busy)

    def _gather(self, L, t, r):
        """Row-aligned batches feeding row ``r`` at ``t`` as (weight row, sign)."""
        batches = []
        if L.kind == "conv":
            k = L.slots[0]
            for i, off in L.rf[r]:
                for b in L.inbox.get((k, t, i), ()):
                    batches.append([(off + pos, s) for pos, s in b])
        else:
            batches = list(L.inbox.get((L.slots[0], t, r), ()))
        n = self.cfg.pe.n_ways
        out = []
        for b in batches:
            out.extend(b[i:i + n] for i in range(0, len(b), n))
        return out

    def _execute(self, L, t, r):
        """Integrate and fire one row; returns ``(cycles, spikes or None)``."""
        cfg = self.cfg
        pe = L.pe
        c = pe.counters
        cycles = 0
        has_input = False
        kind = L.kind
        if kind in ("conv", "linear"):
            batches = self._gather(L, t, r)
            if batches:
                has_input = True
                idx = [p for b in batches for p, _ in b]
                sgn = np.fromiter((s for b in batches for _, s in b), np.int64, len(idx))
                pe.add_to_row(r, sgn @ L.W[idx])
                sizes = [len(b) for b in batches]
                c += product_counters(cfg.product, sizes, L.k_in, L.cols)
                cycles = product_cycles(cfg.product, sizes, L.k_in, L.cols, L.adds, cfg.pe.n_ways)
        elif kind == "attention":
            has_input, cycles = self._attention(L, t, r)
        elif kind == "residual":
            acc = np.zeros(L.cols, np.int64)
            nnz = 0
            for k in L.slots:
                for b in L.inbox.get((k, t, r), ()):
                    for pos, s in b:
                        acc[pos] += s
                        nnz += 1
            if nnz:
                has_input = True
                pe.add_to_row(r, acc)
                c.adder_ops += nnz
                cycles = 1
        else:
            acc = None
            for b in L.inbox.get((L.slots[0], t, r), ()):
                for pos, s in b:
                    L.x_cum[r, pos] += s
                    acc = True
            if acc or not L.primed[r]:
                f = L.fn(L.x_cum[r])
                pe.add_to_row(r, f - L.f_prev[r])
                c.adder_ops += L.cols
                L.f_prev[r] = f
                L.primed[r] = True
                has_input = True
                cycles = 1
        if not has_input:
            if pe.row_quiescent(r):
                return 0, None
            c.membrane_row_reads += 1
            c.membrane_row_writes += 1
            cycles = 1
        y = pe.fire_row(r)
        return max(1, cycles), y

    def _b_cum(self, L, t):
        cache = L.b_cum
        last = max(cache)
        for u in range(last + 1, t + 1):
            cur = cache[u - 1].copy()
            for rb in range(L.b_rows):
                for b in L.inbox.get((1, u, rb), ()):
                    for pos, s in b:
                        cur[rb, pos] += s
            cache[u] = cur
        return cache[t]

    def _attention(self, L, t, r):
        """Spike x spike product as two spike x value products:
        ``a_t B_cum(t) + A_cum(t-1) b_t`` for row ``r``."""
        cfg = self.cfg
        b_cum = self._b_cum(L, t)
        a_batches = list(L.inbox.get((0, t, r), ()))
        b_spikes = [(rb, pos, s) for rb in range(L.b_rows)
                    for b in L.inbox.get((1, t, rb), ()) for pos, s in b]
        if not a_batches and not b_spikes:
            return False, 0
        inc = np.zeros(L.cols, np.int64)
        wmat = b_cum.T if L.transpose_b else b_cum
        sizes = []
        for b in a_batches:
            for pos, s in b:
                inc += s * wmat[pos]
            sizes.append(len(b))
        a_prev = L.a_cum[r]
        for rb, pos, s in b_spikes:
            if L.transpose_b:
                inc[rb] += s * a_prev[pos]
            else:
                inc[pos] += s * a_prev[rb]
        for b in a_batches:
            for pos, s in b:
                L.a_cum[r, pos] += s
        L.pe.add_to_row(r, inc)
        cnt = L.pe.counters
        if sizes:
            cnt += product_counters(cfg.product, sizes, L.k_in, L.cols)
        cnt.adder_ops += len(b_spikes)
        cycles = product_cycles(cfg.product, sizes, L.k_in, L.cols, L.adds, cfg.pe.n_ways) \
            + math.ceil(len(b_spikes) / L.adds)
        return True, max(1, cycles)

    def _complete(self, cycle, j, t, r, y, busy):
        L = self.layers[j]
        if busy:
            self.trace.events.append((cycle, "complete", j, t, r))
        L.done_through[r] = t
        if y is not None:
            L.quiet_since[r] = t if L.pe.row_quiescent(r) else None
        L.rows_done[t] = L.rows_done.get(t, 0) + 1
        spikes = [] if y is None else [(int(col), int(y[col])) for col in np.flatnonzero(y)]
        if j == self.final:
            self.trace.final_output_cycles.append(cycle)
            self.final_rows.setdefault(t, {})[r] = L.pe.buffers.tracer[r].copy()
        self._check_finished(L, cycle)
        if self.mode is PipelineMode.NONE:
            L.held[(t, r)] = spikes
        else:
            self._send(L, t, r, spikes, cycle)
        if L.rows_done[t] == L.rows:
            self._layer_step_done(L, t, cycle)
        if L.parked:
            L.parked = False
            for rr in range(L.rows):
                self._try_enqueue(L, L.next_t[rr], rr, cycle)
        self._maybe_end()

    def _check_finished(self, L, cycle):
        if L.finished_at is not None:
            return
        known = [L.finish_known.get(k) for k in L.slots]
        if any(x is None for x in known) or any(q is None for q in L.quiet_since):
            return
        tf = max(known + list(L.quiet_since))
        if min(L.done_through) < tf:
            return
        L.finished_at = tf
        self.trace.events.append((cycle, "finish", L.j, tf, -1))
        # rows past tf produce nothing; drop their held (empty) outputs
        for key in [k for k in L.held if k[0] > tf]:
            del L.held[key]
        for e in self.out_edges[L.j]:
            _, s, k = self.edges[e]
            hops = manhattan(L.core, self.layers[s].core)
            self._push(cycle + hops + 1, "finish", (s, k, tf))
        if self.mode is PipelineMode.NONE:
            self._advance_barrier(cycle)

    def _ev_finish(self, cycle, s, k, tf):
        self._on_finish_info(self.layers[s], k, tf, cycle)

    def _maybe_end(self):
        L = self.layers[self.final]
        tf = L.finished_at
        if tf is not None and len(self.trace.step_cycles) >= tf and not self.done:
            self.done = True
            tr = self.trace
            tr.t_stable = tf
            if tf:
                tr.cycles = tr.step_cycles[tf - 1]
                del tr.final_snapshots[tf:], tr.step_cycles[tf:], tr.step_totals[tf:]

    def _layer_step_done(self, L, t, cycle):
        if self.mode is PipelineMode.NONE:
            for r in range(L.rows):
                self._send(L, t, r, L.held.pop((t, r), []), cycle)
        if L.j == self.final:
            self._record_step(L, t, cycle)
        if self.mode is PipelineMode.NONE:
            self._advance_barrier(cycle)

    def _record_step(self, L, t, cycle):
        tr = self.trace
        rows = self.final_rows.pop(t)
        prev = tr.final_snapshots[-1] if tr.final_snapshots else np.zeros_like(
            L.pe.buffers.tracer)
        snap = prev.copy()
        for r, row in rows.items():
            snap[r] = row
        tr.final_snapshots.append(snap)
        tr.step_cycles.append(cycle)
        tot = AccessCounters()
        for X in self.layers:
            tot += X.pe.counters
        d = tot.as_dict()
        d["flit_hops"] = self.mesh.stats.flit_hops
        d["bit_hops"] = self.mesh.stats.bit_hops
        d["fifo_accesses"] = self.mesh.stats.fifo_accesses
        tr.step_totals.append(d)

    # ---------------------------------------------------------------- communication

    def _send(self, L, t, r, spikes, cycle):
        for e in self.out_edges[L.j]:
            _, s, k = self.edges[e]
            dst = self.layers[s]
            if dst.core == L.core:
                cap = self.cfg.spikes_per_flit
                batches = [spikes[i:i + cap] for i in range(0, len(spikes), cap)]
                self._push(cycle + 1, "local", (e, t, r, batches))
                continue
            flits = self._make_flits(L.core, dst.core, r, spikes, (e, t))
            for mf in flits:
                self.mesh.inject(mf)
            hops = manhattan(L.core, dst.core)
            self._push(cycle + hops + 1, "done", (e, t, r, len(flits)))

    def _paths(self, src, dst):
        route = self.cfg.routing
        if route == "xy":
            return [xy_path(src, dst)]
        if route == "valiant":
            return valiant_legs(src, dst, self.map.shape, self.rng)
        return [self.table_sample(src, dst)]

    def table_sample(self, src, dst):
        options = self.table.get((src, dst))
        if options is None:
            raise MappingIncomplete(f"no routing table entry for flow {src}->{dst}")
        if len(options) == 1:
            return options[0][0]
        u = self.rng.random()
        acc = 0.0
        for path, p in options:
            acc += p
            if u < acc:
                return path
        return options[-1][0]

    def _make_flits(self, src, dst, r, spikes, tag):
        cfg = self.cfg
        out = []
        if cfg.aer == "legacy":
            words = encode_aer(r, spikes)
        else:
            words = None
        count = len(spikes) if words is not None else -(-len(spikes) // cfg.spikes_per_flit)
        for i in range(count):
            legs = self._paths(src, dst)
            hops = [hop_fields(leg) for leg in legs]
            path = [link for leg in legs for link in leg]
            if words is not None:
                payload = words[i]
            else:
                chunk = spikes[i * cfg.spikes_per_flit:(i + 1) * cfg.spikes_per_flit]
                payload = encode_baer(r, chunk, hops[0], cfg.flit_bits,
                                      per_flit=cfg.spikes_per_flit)[0]
                if cfg.keep_flits:
                    self.trace.flits.append(payload)
            out.append(MeshFlit(payload, links_to_nodes(path, src), hops[0][0], hops[0][1],
                                tag, cfg.wire_flit_bits, 0, hops[1:]))
        return out

    def _eject(self, cycle, mf):
        e, t = mf.tag
        if self.cfg.aer == "legacy":
            r, pos, sign = decode_aer(mf.payload)
            spikes = [(pos, sign)]
        else:
            r, spikes = decode_baer(mf.payload)
        self._push(cycle + 1, "deliver", (e, t, r, spikes))

    def _ev_deliver(self, cycle, e, t, r, spikes):
        _, s, k = self.edges[e]
        L = self.layers[s]
        L.inbox.setdefault((k, t, r), []).append(spikes)
        key = (e, t, r)
        self.received[key] = self.received.get(key, 0) + 1
        self._check_arrival(e, t, r, cycle)

    def _ev_done(self, cycle, e, t, r, count):
        self.expected[(e, t, r)] = count
        self._check_arrival(e, t, r, cycle)

    def _ev_local(self, cycle, e, t, r, batches):
        _, s, k = self.edges[e]
        L = self.layers[s]
        if batches:
            L.inbox.setdefault((k, t, r), []).extend(batches)
        self._arrive(L, k, t, r, cycle)

    def _check_arrival(self, e, t, r, cycle):
        key = (e, t, r)
        exp = self.expected.get(key)
        if exp is not None and self.received.get(key, 0) >= exp:
            _, s, k = self.edges[e]
            self.expected.pop(key)
            self.received.pop(key, None)
            self._arrive(self.layers[s], k, t, r, cycle)

    # ---------------------------------------------------------------- results

    def _finish_trace(self) -> SimTrace:
        tr = self.trace
        st = self.mesh.stats
        tr.tracers = [L.pe.buffers.tracer.copy() for L in self.layers]
        tr.layer_counters = [L.pe.counters for L in self.layers]
        tr.noc = {"flits_injected": st.injected, "flits_delivered": st.delivered,
                  "flit_hops": st.flit_hops, "bit_hops": st.bit_hops,
                  "fifo_accesses": st.fifo_accesses, "stall_events": st.stall_cycles,
                  "traffic_bits": st.injected * self.cfg.wire_flit_bits,
                  "flit_bits": self.cfg.wire_flit_bits}
        tr.link_flits = dict(st.link_flits)
        if not tr.final_snapshots:
            # silent network: the stable state is reached before the first step
            tr.final_snapshots.append(tr.tracers[self.final].copy())
            tr.step_cycles.append(tr.cycles)
            tr.step_totals.append(self.trace.counter_totals())
        return tr


def run_inference(net: NetworkSpec, mapping: Mapping, values,
                  config: SimConfig = SimConfig()) -> SimTrace:
    """Simulate one input to the stable state and return the trace."""
    return Simulator(net, mapping, values, config).run()
