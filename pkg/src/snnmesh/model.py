"""Network descriptions, quantization parameters and reference semantics.

A network is a DAG of layers. Every layer produces a matrix of integer
activation *levels* of shape ``(rows, cols)``: rows are spines (one per
output pixel of a convolution) or tokens, cols are channels/features.
Layers without predecessors consume the external input tensor.

Weights are signed integers in the quantized domain and thresholds are
expressed in the same least-significant unit, so the reference forward
pass (:func:`qann_forward`) and the spiking simulation agree exactly.
"""
from __future__ import annotations

import json
import math
from dataclasses import dataclass, field
from pathlib import Path
from typing import Any

import numpy as np

from .errors import MagnitudeExceedsTimeSteps, ParseError, ValidationError

LAYER_KINDS = ("conv", "linear", "attention", "residual", "ssoftmax", "slayernorm")
# kinds executed by the adder trees of the processing elements
PE_KINDS = ("conv", "linear", "attention")
# kinds executed by functional units inside the router
ROUTER_KINDS = ("residual", "ssoftmax", "slayernorm")


@dataclass(frozen=True)
class QuantParams:
    v_thr: float
    s_min: int
    s_max: int
    weight_bits: int = 4

    def __post_init__(self):
        if not self.v_thr > 0:
            raise ValidationError(f"v_thr must be positive, got {self.v_thr}", field="v_thr")
        if not (self.s_min <= 0 <= self.s_max):
            raise ValidationError(
                f"need s_min <= 0 <= s_max, got [{self.s_min}, {self.s_max}]", field="s_min")
        if self.s_max - self.s_min < 1:
            raise ValidationError("tracer range must span at least one level", field="s_max")
        if not 1 <= self.weight_bits <= 8:
            raise ValidationError(f"weight_bits must be in 1..8, got {self.weight_bits}",
                                  field="weight_bits")

    @property
    def levels(self) -> int:
        return self.s_max - self.s_min

    def to_dict(self):
        return {"v_thr": self.v_thr, "s_min": self.s_min, "s_max": self.s_max,
                "weight_bits": self.weight_bits}


@dataclass(frozen=True)
class ConvGeom:
    kernel_h: int
    kernel_w: int
    stride: int
    padding: int
    in_h: int
    in_w: int
    channels: int

    def validate(self, layer=None):
        if self.kernel_h < 1 or self.kernel_w < 1:
            raise ValidationError("kernel dims must be >= 1", layer, "conv_geom.kernel")
        if self.stride < 1:
            raise ValidationError("stride must be >= 1", layer, "conv_geom.stride")
        if self.padding < 0:
            raise ValidationError("padding must be >= 0", layer, "conv_geom.padding")
        if self.in_h < 1 or self.in_w < 1 or self.channels < 1:
            raise ValidationError("input dims must be >= 1", layer, "conv_geom.in_h")
        for name, size, k in (("in_h", self.in_h, self.kernel_h), ("in_w", self.in_w, self.kernel_w)):
            span = size + 2 * self.padding - k
            if span < 0 or span % self.stride:
                raise ValidationError(
                    f"({size} + 2*{self.padding} - {k}) must be a non-negative multiple of "
                    f"stride {self.stride}", layer, f"conv_geom.{name}")

    @property
    def out_h(self) -> int:
        return (self.in_h + 2 * self.padding - self.kernel_h) // self.stride + 1

    @property
    def out_w(self) -> int:
        return (self.in_w + 2 * self.padding - self.kernel_w) // self.stride + 1

    @property
    def fan_in(self) -> int:
        return self.kernel_h * self.kernel_w * self.channels

    def to_dict(self):
        return {"kernel_h": self.kernel_h, "kernel_w": self.kernel_w, "stride": self.stride,
                "padding": self.padding, "in_h": self.in_h, "in_w": self.in_w,
                "channels": self.channels}


@dataclass(frozen=True)
class TokenGeom:
    tokens: int
    dim: int

    def to_dict(self):
        return {"tokens": self.tokens, "dim": self.dim}


@dataclass(eq=False)
class LayerSpec:
    kind: str
    quant: QuantParams
    weights: np.ndarray | None = None
    conv_geom: ConvGeom | None = None
    token_geom: TokenGeom | None = None
    # attention only: multiply by the transpose of the second operand (Q @ K^T)
    transpose_b: bool = False
    name: str = ""

    def __eq__(self, other):
        if not isinstance(other, LayerSpec):
            return NotImplemented
        same_w = (self.weights is None and other.weights is None) or (
            self.weights is not None and other.weights is not None
            and np.array_equal(self.weights, other.weights))
        return (self.kind == other.kind and self.quant == other.quant and same_w
                and self.conv_geom == other.conv_geom and self.token_geom == other.token_geom
                and self.transpose_b == other.transpose_b and self.name == other.name)


@dataclass(frozen=True)
class SpikeEvent:
    t: int
    layer: int
    spine_or_token_id: int
    position: int
    sign: int


@dataclass(eq=False)
class NetworkSpec:
    layers: list[LayerSpec]
    edges: list[tuple[int, int]]
    time_steps: int
    # filled in by validate()
    in_shapes: list[tuple[int, int]] = field(default_factory=list, repr=False)
    out_shapes: list[tuple[int, int]] = field(default_factory=list, repr=False)
    order: list[int] = field(default_factory=list, repr=False)

    def __eq__(self, other):
        if not isinstance(other, NetworkSpec):
            return NotImplemented
        return (self.layers == other.layers and list(self.edges) == list(other.edges)
                and self.time_steps == other.time_steps)

    @property
    def n_layers(self) -> int:
        return len(self.layers)

    def preds(self, j: int) -> list[int]:
        # edge order defines operand order (attention: first edge is A, second is B)
        return [a for a, b in self.edges if b == j]

    def succs(self, i: int) -> list[int]:
        return [b for a, b in self.edges if a == i]

    @property
    def input_layers(self) -> list[int]:
        return [j for j in range(self.n_layers) if not self.preds(j)]

    @property
    def final_layer(self) -> int:
        return self.order[-1]

    @property
    def input_shape(self) -> tuple[int, int]:
        return self.in_shapes[self.input_layers[0]]

    def validate(self) -> "NetworkSpec":
        n = len(self.layers)
        if n == 0:
            raise ValidationError("network has no layers", field="layers")
        if self.time_steps < 1:
            raise ValidationError("time_steps must be >= 1", field="time_steps")
        for a, b in self.edges:
            if not (0 <= a < n and 0 <= b < n) or a == b:
                raise ValidationError(f"bad edge {a}->{b}", field="edges")
        if len(set(self.edges)) != len(self.edges):
            raise ValidationError("duplicate edge", field="edges")
        self.order = _topological_order(n, self.edges)
        sinks = [i for i in range(n) if not self.succs(i)]
        if len(sinks) != 1:
            raise ValidationError(f"network must have exactly one output layer, found {sinks}",
                                  field="edges")
        if self.order[-1] != sinks[0]:
            self.order.remove(sinks[0])
            self.order.append(sinks[0])
        self.in_shapes = [None] * n
        self.out_shapes = [None] * n
        for j in self.order:
            self.in_shapes[j], self.out_shapes[j] = _layer_shapes(self, j)
        ins = {self.in_shapes[j] for j in self.input_layers}
        if len(ins) != 1:
            raise ValidationError(f"input layers disagree on input shape: {sorted(ins)}",
                                  field="layers")
        return self


def _topological_order(n, edges):
    indeg = [0] * n
    for _, b in edges:
        indeg[b] += 1
    ready = [i for i in range(n) if indeg[i] == 0]
    order = []
    while ready:
        i = ready.pop(0)
        order.append(i)
        for a, b in edges:
            if a == i:
                indeg[b] -= 1
                if indeg[b] == 0:
                    ready.append(b)
        ready.sort()
    if len(order) != n:
        raise ValidationError("edge graph contains a cycle", field="edges")
    return order


def _layer_shapes(net: NetworkSpec, j: int):
    layer = net.layers[j]
    preds = net.preds(j)
    pshapes = [net.out_shapes[p] for p in preds]
    kind = layer.kind
    needs_weights = kind in ("conv", "linear")
    if needs_weights:
        if layer.weights is None or layer.weights.ndim != 2:
            raise ValidationError("weights must be a 2-D integer matrix", j, "weights")
        lim = 1 << (layer.quant.weight_bits - 1)
        if layer.weights.size and (layer.weights.min() < -lim or layer.weights.max() > lim - 1):
            raise ValidationError(
                f"weights exceed signed {layer.quant.weight_bits}-bit range", j, "weights")
    elif layer.weights is not None:
        raise ValidationError(f"{kind} layers carry no weights", j, "weights")
    if (layer.conv_geom is not None) != (kind == "conv"):
        raise ValidationError("conv_geom present iff kind is conv", j, "conv_geom")

    if kind == "conv":
        g = layer.conv_geom
        g.validate(j)
        if layer.weights.shape[0] != g.fan_in:
            raise ValidationError(
                f"conv weights need {g.fan_in} rows (kernel_h*kernel_w*channels), "
                f"got {layer.weights.shape[0]}", j, "weights")
        in_shape = (g.in_h * g.in_w, g.channels)
        out_shape = (g.out_h * g.out_w, layer.weights.shape[1])
        _expect_single(pshapes, in_shape, j)
    elif kind == "linear":
        k, m = layer.weights.shape
        if pshapes:
            rows = pshapes[0][0]
        elif layer.token_geom is not None:
            rows = layer.token_geom.tokens
        else:
            rows = 1
        in_shape = (rows, k)
        _expect_single(pshapes, in_shape, j)
        if layer.token_geom is not None and (layer.token_geom.tokens, layer.token_geom.dim) != in_shape:
            raise ValidationError(f"token_geom {layer.token_geom} disagrees with input {in_shape}",
                                  j, "token_geom")
        out_shape = (rows, m)
    elif kind == "attention":
        if len(pshapes) != 2:
            raise ValidationError("attention needs exactly two predecessors", j, "edges")
        (n_a, k_a), (n_b, k_b) = pshapes
        if layer.transpose_b:
            if k_a != k_b:
                raise ValidationError(f"A @ B^T needs equal widths, got {k_a} and {k_b}", j, "edges")
            out_shape = (n_a, n_b)
        else:
            if k_a != n_b:
                raise ValidationError(f"A @ B needs A cols == B rows, got {k_a} and {n_b}", j, "edges")
            out_shape = (n_a, k_b)
        in_shape = pshapes[0]
        if layer.token_geom is not None and (layer.token_geom.tokens, layer.token_geom.dim) != in_shape:
            raise ValidationError(f"token_geom {layer.token_geom} disagrees with input {in_shape}",
                                  j, "token_geom")
    else:
        if not pshapes:
            raise ValidationError(f"{kind} cannot be an input layer", j, "edges")
        if kind == "residual":
            if len(set(pshapes)) != 1:
                raise ValidationError(f"residual operands differ in shape: {pshapes}", j, "edges")
        elif len(pshapes) != 1:
            raise ValidationError(f"{kind} takes exactly one predecessor", j, "edges")
        in_shape = out_shape = pshapes[0]
    return in_shape, out_shape


def _expect_single(pshapes, in_shape, j):
    if len(pshapes) > 1:
        raise ValidationError("layer takes at most one predecessor", j, "edges")
    if pshapes and pshapes[0] != in_shape:
        raise ValidationError(f"predecessor output {pshapes[0]} != layer input {in_shape}", j, "edges")


# --------------------------------------------------------------------------
# reference semantics


def quantized_relu(x, q: QuantParams):
    """``clamp(floor(x / v_thr), s_min, s_max)`` for scalars or integer arrays."""
    if isinstance(x, np.ndarray):
        if np.issubdtype(x.dtype, np.integer) and float(q.v_thr).is_integer():
            lv = np.floor_divide(x, int(q.v_thr))
        else:
            lv = np.floor(x / q.v_thr).astype(np.int64)
        return np.clip(lv, q.s_min, q.s_max)
    if isinstance(x, int) and float(q.v_thr).is_integer():
        lv = x // int(q.v_thr)
    else:
        lv = math.floor(x / q.v_thr)
    return max(q.s_min, min(q.s_max, lv))


def encode_input(values, T: int, layer: int = 0) -> list[SpikeEvent]:
    """Unary-over-time encoding: level ``v`` becomes ``|v|`` spikes of sign
    ``sgn(v)`` at time-steps ``1..|v|``. Rows of ``values`` are spines/tokens."""
    arr = np.asarray(values, dtype=np.int64)
    if arr.ndim == 1:
        arr = arr[None, :]
    if arr.size and np.abs(arr).max() > T:
        raise MagnitudeExceedsTimeSteps(
            f"input magnitude {int(np.abs(arr).max())} exceeds {T} time-steps", field="values")
    events = []
    for t in range(1, int(np.abs(arr).max(initial=0)) + 1):
        rows, cols = np.nonzero(np.abs(arr) >= t)
        for r, c in zip(rows.tolist(), cols.tolist()):
            events.append(SpikeEvent(t, layer, r, c, 1 if arr[r, c] > 0 else -1))
    return events


def decode_events(events, shape) -> np.ndarray:
    out = np.zeros(shape, dtype=np.int64)
    for e in events:
        out[e.spine_or_token_id, e.position] += e.sign
    return out


def conv_reference(x: np.ndarray, w: np.ndarray, g: ConvGeom) -> np.ndarray:
    """Direct sliding-window convolution on a ``(in_h*in_w, channels)`` level
    matrix; returns pre-activation sums of shape ``(out_h*out_w, c_out)``."""
    img = x.reshape(g.in_h, g.in_w, g.channels)
    p = g.padding
    padded = np.zeros((g.in_h + 2 * p, g.in_w + 2 * p, g.channels), dtype=x.dtype)
    padded[p:p + g.in_h, p:p + g.in_w] = img
    kern = w.reshape(g.kernel_h, g.kernel_w, g.channels, -1)
    out = np.zeros((g.out_h, g.out_w, w.shape[1]), dtype=np.result_type(x, w))
    for r in range(g.out_h):
        for c in range(g.out_w):
            patch = padded[r * g.stride:r * g.stride + g.kernel_h,
                           c * g.stride:c * g.stride + g.kernel_w]
            out[r, c] = np.tensordot(patch, kern, axes=3)
    return out.reshape(g.out_h * g.out_w, -1)


def qann_forward(net: NetworkSpec, values) -> list[np.ndarray]:
    """Quantized-ReLU network evaluated layer by layer (the equivalence oracle)."""
    x = np.asarray(values, dtype=np.int64).reshape(net.input_shape)
    outs: list[np.ndarray | None] = [None] * net.n_layers
    for j in net.order:
        layer = net.layers[j]
        ins = [outs[p] for p in net.preds(j)] or [x]
        outs[j] = quantized_relu(layer_preactivation(layer, ins), layer.quant)
    return outs


def layer_preactivation(layer: LayerSpec, ins: list[np.ndarray]) -> np.ndarray:
    """Integer input of a layer's neurons given its operands' level matrices."""
    from .noc.units import slayernorm_rows, ssoftmax_rows

    if layer.kind == "linear":
        pre = ins[0] @ layer.weights
    elif layer.kind == "conv":
        pre = conv_reference(ins[0], layer.weights, layer.conv_geom)
    elif layer.kind == "attention":
        a, b = ins
        pre = a @ (b.T if layer.transpose_b else b)
    elif layer.kind == "residual":
        pre = sum(ins[1:], ins[0])
    elif layer.kind == "ssoftmax":
        pre = ssoftmax_rows(ins[0])
    else:
        pre = slayernorm_rows(ins[0])
    return np.asarray(pre, dtype=np.int64)


# --------------------------------------------------------------------------
# JSON schema


def _require(obj, key, where, layer=None):
    if key not in obj:
        raise ParseError(f"{where}: missing key {key!r}" + (f" (layer {layer})" if layer is not None else ""))
    return obj[key]


def layer_from_dict(d: dict, idx: int) -> LayerSpec:
    if not isinstance(d, dict):
        raise ParseError(f"layer {idx} must be an object")
    kind = _require(d, "kind", "layer", idx)
    if kind not in LAYER_KINDS:
        raise ValidationError(f"unknown kind {kind!r}", idx, "kind")
    qd = _require(d, "quant", "layer", idx)
    try:
        quant = QuantParams(v_thr=qd["v_thr"], s_min=int(qd["s_min"]), s_max=int(qd["s_max"]),
                            weight_bits=int(qd.get("weight_bits", 4)))
    except KeyError as exc:
        raise ParseError(f"layer {idx}: quant missing {exc}") from None
    except ValidationError as exc:
        raise ValidationError(str(exc), idx, exc.field) from None
    weights = None
    if d.get("weights") is not None:
        try:
            weights = np.array(d["weights"], dtype=np.int64)
        except (TypeError, ValueError, OverflowError) as exc:
            raise ParseError(f"layer {idx}: weights must be nested integer arrays ({exc})") from None
        if weights.ndim != 2:
            raise ValidationError("weights must be a 2-D matrix", idx, "weights")
    conv = None
    if d.get("conv_geom") is not None:
        try:
            conv = ConvGeom(**{k: int(v) for k, v in d["conv_geom"].items()})
        except TypeError as exc:
            raise ParseError(f"layer {idx}: bad conv_geom ({exc})") from None
    tok = None
    if d.get("token_geom") is not None:
        try:
            tok = TokenGeom(**{k: int(v) for k, v in d["token_geom"].items()})
        except TypeError as exc:
            raise ParseError(f"layer {idx}: bad token_geom ({exc})") from None
    return LayerSpec(kind=kind, quant=quant, weights=weights, conv_geom=conv, token_geom=tok,
                     transpose_b=bool(d.get("transpose_b", False)), name=str(d.get("name", "")))


def network_from_dict(doc: Any) -> NetworkSpec:
    if not isinstance(doc, dict):
        raise ParseError("network document must be a JSON object")
    layers = [layer_from_dict(d, i) for i, d in enumerate(_require(doc, "layers", "network"))]
    try:
        edges = [(int(a), int(b)) for a, b in doc.get("edges", [])]
    except (TypeError, ValueError):
        raise ParseError("edges must be a list of [src, dst] pairs") from None
    T = _require(doc, "time_steps", "network")
    if not isinstance(T, int):
        raise ParseError("time_steps must be an integer")
    return NetworkSpec(layers=layers, edges=edges, time_steps=T).validate()


def _num(x):
    return int(x) if float(x).is_integer() else x


def network_to_dict(net: NetworkSpec) -> dict:
    layers = []
    for layer in net.layers:
        d: dict[str, Any] = {"kind": layer.kind}
        if layer.name:
            d["name"] = layer.name
        q = layer.quant.to_dict()
        q["v_thr"] = _num(q["v_thr"])
        d["quant"] = q
        if layer.conv_geom is not None:
            d["conv_geom"] = layer.conv_geom.to_dict()
        if layer.token_geom is not None:
            d["token_geom"] = layer.token_geom.to_dict()
        if layer.kind == "attention":
            d["transpose_b"] = layer.transpose_b
        if layer.weights is not None:
            d["weights"] = layer.weights.tolist()
        layers.append(d)
    return {"layers": layers, "edges": [list(e) for e in net.edges], "time_steps": net.time_steps}


def dumps_network(net: NetworkSpec) -> str:
    return json.dumps(network_to_dict(net), separators=(",", ":")) + "\n"


def save_network(net: NetworkSpec, path) -> None:
    Path(path).write_text(dumps_network(net))


def load_network(path) -> NetworkSpec:
    try:
        doc = json.loads(Path(path).read_text())
    except json.JSONDecodeError as exc:
        raise ParseError(f"{path}: {exc}") from None
    except OSError as exc:
        raise ParseError(f"{path}: {exc.strerror}") from None
    return network_from_dict(doc)
