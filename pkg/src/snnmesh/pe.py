"""Processing element: weight/membrane/tracer buffers and the mini-batch
row-wise (Gustavson) spike x weight product.

A mini-batch is a set of spikes that share one membrane row ``x``; each
spike ``(y, q)`` selects weight row ``y`` and a polarity bit ``q`` (``q = 1``
means negative, the row is negated before accumulation). The whole batch
is summed by the adder tree and added to the membrane row with a single
read and a single write.

Besides the functional model this module holds the analytic counting
models for the three product dataflows and the per-batch cycle model.
"""
from __future__ import annotations

import math
from dataclasses import dataclass, field, fields

import numpy as np

from .errors import BatchTooWide, RowIdOutOfRange, ValidationError
from .model import QuantParams, SpikeEvent
from .neuron import step_rows

PRODUCTS = ("gustavson", "outer", "inner")


@dataclass(frozen=True)
class PeConfig:
    neuron_circuits: int = 128
    adder_inputs: int = 16
    n_ways: int = 17
    weight_buf_bytes: int = 64 * 1024
    membrane_buf_bytes: int = 32 * 1024
    tracer_buf_bytes: int = 8 * 1024
    partition_groups: int = 1

    def __post_init__(self):
        for f in fields(self):
            if getattr(self, f.name) < 1:
                raise ValidationError(f"{f.name} must be >= 1", field=f.name)
        if self.adder_inputs % 2:
            raise ValidationError("adder_inputs must be even", field="adder_inputs")

    @property
    def adds_per_cycle(self) -> int:
        return self.neuron_circuits * self.adder_inputs // 2

    def group_shares(self, groups: int | None = None) -> list[dict]:
        """Static split of circuits and buffers into equal groups; the last
        group also takes the remainder."""
        p = self.partition_groups if groups is None else groups
        out = []
        for g in range(p):
            share = {}
            for name in ("neuron_circuits", "weight_buf_bytes", "membrane_buf_bytes",
                         "tracer_buf_bytes"):
                total = getattr(self, name)
                base = total // p
                share[name] = base + (total - base * p if g == p - 1 else 0)
            share["adds_per_cycle"] = share["neuron_circuits"] * self.adder_inputs // 2
            out.append(share)
        return out


@dataclass
class AccessCounters:
    weight_row_reads: int = 0
    membrane_row_reads: int = 0
    membrane_row_writes: int = 0
    tracer_row_reads: int = 0
    tracer_row_writes: int = 0
    adder_ops: int = 0
    fire_evals: int = 0

    def __iadd__(self, other: "AccessCounters"):
        for f in fields(self):
            setattr(self, f.name, getattr(self, f.name) + getattr(other, f.name))
        return self

    def __add__(self, other: "AccessCounters"):
        out = AccessCounters(**self.as_dict())
        out += other
        return out

    def as_dict(self) -> dict:
        return {f.name: getattr(self, f.name) for f in fields(self)}

    @property
    def membrane_accesses(self) -> int:
        return self.membrane_row_reads + self.membrane_row_writes


@dataclass
class PeBuffers:
    weight: np.ndarray
    membrane: np.ndarray
    tracer: np.ndarray

    def __post_init__(self):
        if self.membrane.shape != self.tracer.shape:
            raise ValidationError("membrane and tracer buffers differ in shape")
        if self.weight.shape[1] != self.membrane.shape[1]:
            raise ValidationError("weight and membrane column counts differ")

    @classmethod
    def zeros(cls, weight: np.ndarray, rows: int) -> "PeBuffers":
        cols = weight.shape[1]
        return cls(np.asarray(weight, dtype=np.int64),
                   np.zeros((rows, cols), dtype=np.int64),
                   np.zeros((rows, cols), dtype=np.int64))


@dataclass
class ProcessingElement:
    buffers: PeBuffers
    quant: QuantParams
    config: PeConfig = field(default_factory=PeConfig)
    counters: AccessCounters = field(default_factory=AccessCounters)
    layer: int = 0

    def __post_init__(self):
        if not float(self.quant.v_thr).is_integer():
            raise ValidationError("the PE datapath needs an integral threshold", self.layer, "v_thr")
        self._thr = int(self.quant.v_thr)

    @property
    def rows(self) -> int:
        return self.buffers.membrane.shape[0]

    def _check_row(self, x):
        if not 0 <= x < self.rows:
            raise RowIdOutOfRange(f"row {x} outside membrane buffer of {self.rows} rows")

    def batch_sum(self, spikes) -> np.ndarray:
        """Adder-tree output for one batch of ``(y, q)`` spikes."""
        w = self.buffers.weight
        acc = np.zeros(w.shape[1], dtype=np.int64)
        for y, q in spikes:
            if not 0 <= y < w.shape[0]:
                raise RowIdOutOfRange(f"weight row {y} outside buffer of {w.shape[0]} rows")
            if q:
                acc -= w[y]
            else:
                acc += w[y]
        return acc

    def accumulate(self, x: int, spikes) -> None:
        """Integrate one batch into membrane row ``x`` without firing."""
        self._check_row(x)
        if len(spikes) > self.config.n_ways:
            raise BatchTooWide(f"{len(spikes)} spikes exceed {self.config.n_ways} weight-buffer ways")
        if not spikes:
            return
        self.buffers.membrane[x] += self.batch_sum(spikes)
        c = self.counters
        c.weight_row_reads += len(spikes)
        c.membrane_row_reads += 1
        c.membrane_row_writes += 1
        c.adder_ops += len(spikes) * self.buffers.weight.shape[1]

    def add_to_row(self, x: int, values: np.ndarray) -> None:
        """Add a precomputed increment (router-side and spike x spike paths)."""
        self.buffers.membrane[x] += values

    def fire_row(self, x: int) -> np.ndarray:
        """Fire and update every neuron of row ``x``; returns ternary spikes."""
        self._check_row(x)
        b = self.buffers
        y, v, s = step_rows(b.membrane[x], b.tracer[x], 0, _IntQuant(self._thr, self.quant))
        b.membrane[x] = v
        b.tracer[x] = s
        c = self.counters
        c.tracer_row_reads += 1
        c.tracer_row_writes += 1
        c.fire_evals += b.membrane.shape[1]
        return y

    def row_quiescent(self, x: int) -> bool:
        b = self.buffers
        q = self.quant
        row_v, row_s = b.membrane[x], b.tracer[x]
        return not (((row_v >= self._thr) & (row_s < q.s_max)).any()
                    or ((row_v < 0) & (row_s > q.s_min)).any())


class _IntQuant:
    # QuantParams view with an integral threshold so array arithmetic stays int64
    __slots__ = ("v_thr", "s_min", "s_max")

    def __init__(self, thr, q):
        self.v_thr, self.s_min, self.s_max = thr, q.s_min, q.s_max


def mm_sc_minibatch(pe: ProcessingElement, batch: dict, fire: bool = True,
                    t: int = 0) -> list[SpikeEvent]:
    """Apply one row-aligned batch ``{"x": row, "spikes": [(y, q), ...]}``.

    The membrane row is read once, all weight rows are summed, the row is
    fired against its tracer and both rows are written back once.
    """
    x = batch["x"]
    spikes = list(batch["spikes"])
    pe.accumulate(x, spikes)
    if not fire:
        return []
    if spikes:
        # fire reuses the membrane row read by accumulate; only the tracer is extra
        y = pe.fire_row(x)
    else:
        pe._check_row(x)
        if pe.row_quiescent(x):
            return []
        pe.counters.membrane_row_reads += 1
        pe.counters.membrane_row_writes += 1
        y = pe.fire_row(x)
    cols = np.flatnonzero(y)
    return [SpikeEvent(t, pe.layer, x, int(c), int(y[c])) for c in cols]


def tile_columns(columns, n_pes: int) -> list[range]:
    """Balanced contiguous column ranges, one per PE (spikes go to all)."""
    if hasattr(columns, "weights") and columns.weights is not None:
        columns = columns.weights.shape[1]
    if n_pes < 1:
        raise ValidationError("n_pes must be >= 1", field="n_pes")
    base, extra = divmod(int(columns), n_pes)
    out, lo = [], 0
    for i in range(n_pes):
        hi = lo + base + (1 if i < extra else 0)
        out.append(range(lo, hi))
        lo = hi
    return out


# --------------------------------------------------------------------------
# counting models for one spike-matrix x weight-matrix instance


def _nnz_per_row(spike_matrix) -> np.ndarray:
    sm = np.asarray(spike_matrix)
    return np.count_nonzero(sm, axis=1) if sm.size else np.zeros(0, dtype=np.int64)


def count_gustavson(spike_matrix, W, n_ways: int = 17) -> AccessCounters:
    nnz = _nnz_per_row(spike_matrix)
    cols = np.asarray(W).shape[1]
    batches = int(sum(math.ceil(k / n_ways) for k in nnz.tolist()))
    total = int(nnz.sum())
    return AccessCounters(weight_row_reads=total, membrane_row_reads=batches,
                          membrane_row_writes=batches, adder_ops=total * cols)


def count_outer_product(spike_matrix, W) -> AccessCounters:
    total = int(_nnz_per_row(spike_matrix).sum())
    cols = np.asarray(W).shape[1]
    return AccessCounters(weight_row_reads=total, membrane_row_reads=total,
                          membrane_row_writes=total, adder_ops=total * cols)


def count_inner_product(spike_matrix, W) -> AccessCounters:
    """Each output row with any input reads the whole dense weight matrix
    (``K`` rows) and reads/writes its membrane row once."""
    nnz = _nnz_per_row(spike_matrix)
    k, cols = np.asarray(W).shape
    touched = int(np.count_nonzero(nnz))
    return AccessCounters(weight_row_reads=touched * k, membrane_row_reads=touched,
                          membrane_row_writes=touched, adder_ops=int(nnz.sum()) * cols)


def product_counters(product: str, batch_sizes: list[int], k: int, cols: int) -> AccessCounters:
    """Counters for one output row fed by ``batch_sizes`` row-aligned batches."""
    total = sum(batch_sizes)
    if total == 0:
        return AccessCounters()
    if product == "gustavson":
        n = len(batch_sizes)
        return AccessCounters(weight_row_reads=total, membrane_row_reads=n,
                              membrane_row_writes=n, adder_ops=total * cols)
    if product == "outer":
        return AccessCounters(weight_row_reads=total, membrane_row_reads=total,
                              membrane_row_writes=total, adder_ops=total * cols)
    if product == "inner":
        return AccessCounters(weight_row_reads=k, membrane_row_reads=1,
                              membrane_row_writes=1, adder_ops=total * cols)
    raise ValidationError(f"unknown product {product!r}", field="product")


def product_cycles(product: str, batch_sizes: list[int], k: int, cols: int,
                   adds_per_cycle: int, n_ways: int) -> int:
    """Cycles spent integrating one output row; never exceeds the adder budget."""
    total = sum(batch_sizes)
    if total == 0:
        return 0
    if product == "gustavson":
        return sum(max(1, math.ceil(b * cols / adds_per_cycle)) for b in batch_sizes if b)
    if product == "outer":
        return total * max(1, math.ceil(cols / adds_per_cycle))
    if product == "inner":
        return math.ceil(k / n_ways) * max(1, math.ceil(n_ways * cols / adds_per_cycle))
    raise ValidationError(f"unknown product {product!r}", field="product")
