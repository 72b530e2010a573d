"""Synthetic networks, inputs and tasks for tests, sweeps and the CLI.

Thresholds are calibrated on a sample input so that each layer's activity
sits in the middle of its level range instead of saturating or going silent.
"""
from __future__ import annotations

from dataclasses import replace

import numpy as np

from .model import (ConvGeom, LayerSpec, NetworkSpec, QuantParams, TokenGeom,
                    layer_preactivation, quantized_relu)

FAMILIES = ("mlp", "cnn", "residual", "attention")


def random_weights(rng, k: int, m: int, density: float = 0.7, bits: int = 4) -> np.ndarray:
    lim = 1 << (bits - 1)
    w = rng.integers(-lim, lim, size=(k, m))
    return np.where(rng.random((k, m)) < density, w, 0).astype(np.int64)


def _quant(rng, signed: bool) -> QuantParams:
    s_max = int(rng.integers(3, 8))
    s_min = -int(rng.integers(1, s_max + 1)) if signed else 0
    return QuantParams(1, s_min, s_max)


def calibrate(net: NetworkSpec, sample, fill: float = 0.5, pct: float = 90) -> NetworkSpec:
    """Set every threshold so the ``pct`` percentile of the sample's positive
    pre-activations lands near ``fill`` of the level range."""
    x = np.asarray(sample, dtype=np.int64).reshape(net.input_shape)
    layers = list(net.layers)
    outs = [None] * net.n_layers
    for j in net.order:
        layer = layers[j]
        ins = [outs[p] for p in net.preds(j)] or [x]
        pre = layer_preactivation(layer, ins)
        pos = pre[pre > 0]
        ref = float(np.percentile(pos, pct)) if pos.size else 1.0
        thr = max(1, int(round(ref / max(1.0, fill * layer.quant.s_max))))
        layer = replace(layer, quant=replace(layer.quant, v_thr=thr))
        layers[j] = layer
        outs[j] = quantized_relu(pre, layer.quant)
    return NetworkSpec(layers, list(net.edges), net.time_steps).validate()


def random_input(net: NetworkSpec, rng, max_level: int = 6, density: float = 0.7,
                 signed: bool = True) -> np.ndarray:
    shape = net.input_shape
    lo = -(max_level // 2) if signed else 0
    v = rng.integers(lo, max_level + 1, size=shape)
    return np.where(rng.random(shape) < density, v, 0).astype(np.int64)


def random_mlp(rng, time_steps: int = 32, max_width: int = 16) -> NetworkSpec:
    depth = int(rng.integers(2, 5))
    tokens = int(rng.integers(1, 4))
    widths = [int(rng.integers(3, max_width + 1)) for _ in range(depth + 1)]
    layers = [LayerSpec("linear", _quant(rng, bool(rng.random() < 0.5)),
                        random_weights(rng, widths[i], widths[i + 1]),
                        token_geom=TokenGeom(tokens, widths[0]) if i == 0 else None)
              for i in range(depth)]
    edges = [(i, i + 1) for i in range(depth - 1)]
    return NetworkSpec(layers, edges, time_steps).validate()


def random_cnn(rng, time_steps: int = 32, max_width: int = 16) -> NetworkSpec:
    h, w = int(rng.integers(3, 5)), int(rng.integers(3, 5))
    c_in = int(rng.integers(1, 3))
    k = int(rng.integers(2, 4))
    pad = int(rng.integers(0, 2))
    stride = 1 if rng.random() < 0.7 else 2
    if (h + 2 * pad - k) % stride or (w + 2 * pad - k) % stride:
        stride = 1
    g = ConvGeom(k, k, stride, pad, h, w, c_in)
    c_out = int(rng.integers(2, 7))
    layers = [LayerSpec("conv", _quant(rng, False), random_weights(rng, g.fan_in, c_out),
                        conv_geom=g)]
    if rng.random() < 0.5 and g.out_h >= 2 and g.out_w >= 2:
        g2 = ConvGeom(2, 2, 1, int(rng.integers(0, 2)), g.out_h, g.out_w, c_out)
        c2 = int(rng.integers(2, 7))
        layers.append(LayerSpec("conv", _quant(rng, bool(rng.random() < 0.5)),
                                random_weights(rng, g2.fan_in, c2), conv_geom=g2))
        c_out = c2
    layers.append(LayerSpec("linear", _quant(rng, False),
                            random_weights(rng, c_out, int(rng.integers(2, max_width + 1)))))
    edges = [(i, i + 1) for i in range(len(layers) - 1)]
    return NetworkSpec(layers, edges, time_steps).validate()


def random_residual(rng, time_steps: int = 32, max_width: int = 16) -> NetworkSpec:
    tokens = int(rng.integers(1, 4))
    d = int(rng.integers(3, max_width + 1))
    n_out = int(rng.integers(2, max_width + 1))
    layers = [
        LayerSpec("linear", _quant(rng, bool(rng.random() < 0.5)), random_weights(rng, d, d),
                  token_geom=TokenGeom(tokens, d)),
        LayerSpec("linear", _quant(rng, bool(rng.random() < 0.5)), random_weights(rng, d, d)),
        LayerSpec("residual", _quant(rng, bool(rng.random() < 0.5))),
        LayerSpec("linear", _quant(rng, False), random_weights(rng, d, n_out)),
    ]
    edges = [(0, 1), (0, 2), (1, 2), (2, 3)]
    return NetworkSpec(layers, edges, time_steps).validate()


def random_attention(rng, time_steps: int = 32, max_width: int = 16) -> NetworkSpec:
    tokens = int(rng.integers(2, 5))
    d = int(rng.integers(3, max_width + 1))
    dk = int(rng.integers(2, 9))
    tail = "ssoftmax" if rng.random() < 0.5 else "slayernorm"
    layers = [
        LayerSpec("linear", _quant(rng, bool(rng.random() < 0.5)), random_weights(rng, d, dk),
                  token_geom=TokenGeom(tokens, d)),
        LayerSpec("linear", _quant(rng, bool(rng.random() < 0.5)), random_weights(rng, d, dk),
                  token_geom=TokenGeom(tokens, d)),
        LayerSpec("attention", _quant(rng, bool(rng.random() < 0.5)), transpose_b=True),
        LayerSpec(tail, _quant(rng, False)),
    ]
    edges = [(0, 2), (1, 2), (2, 3)]
    return NetworkSpec(layers, edges, time_steps).validate()


_BUILDERS = {"mlp": random_mlp, "cnn": random_cnn, "residual": random_residual,
             "attention": random_attention}


def random_network(rng, family: str | None = None, time_steps: int = 32,
                   max_level: int = 6) -> tuple[NetworkSpec, np.ndarray]:
    """A calibrated random network and the input it was calibrated on."""
    family = family or FAMILIES[int(rng.integers(len(FAMILIES)))]
    raw = _BUILDERS[family](rng, time_steps)
    x = random_input(raw, rng, max_level)
    return calibrate(raw, x), x


def uniform_chain(layers: int = 6, tokens: int = 64, dim: int = 8, seed: int = 0,
                  time_steps: int = 32) -> tuple[NetworkSpec, np.ndarray]:
    """A chain of identical linear layers over ``tokens`` rows."""
    rng = np.random.default_rng(seed)
    specs = [LayerSpec("linear", QuantParams(1, 0, 7), random_weights(rng, dim, dim),
                       token_geom=TokenGeom(tokens, dim) if i == 0 else None)
             for i in range(layers)]
    net = NetworkSpec(specs, [(i, i + 1) for i in range(layers - 1)], time_steps).validate()
    x = random_input(net, rng, 6, signed=False)
    return calibrate(net, x), x


def flit_workload(active: int = 10, width: int = 24, rows: int = 4, level: int = 4,
                  seed: int = 0) -> tuple[NetworkSpec, np.ndarray]:
    """Two layers on separate cores; every row of the first carries about
    ``active`` spikes per time-step across the mesh."""
    rng = np.random.default_rng(seed)
    relay = LayerSpec("linear", QuantParams(1, 0, 7), np.eye(width, dtype=np.int64),
                      token_geom=TokenGeom(rows, width))
    head = LayerSpec("linear", QuantParams(4, 0, 7), random_weights(rng, width, width))
    net = NetworkSpec([relay, head], [(0, 1)], 32).validate()
    x = np.zeros((rows, width), np.int64)
    for r in range(rows):
        x[r, rng.choice(width, size=active, replace=False)] = level
    return net, x


def classification_task(n_classes: int = 4, dim: int = 16, hidden: int = 12,
                        n_samples: int = 60, seed: int = 0, time_steps: int = 32):
    """Noisy class prototypes scaled by a per-sample salience; a random
    hidden layer plus a read-out fitted to the class means.

    Returns ``(net, inputs, labels)``.
    """
    rng = np.random.default_rng(seed)
    protos = rng.integers(0, 2, size=(n_classes, dim)) * rng.integers(1, 3, size=(n_classes, dim))
    labels = rng.integers(0, n_classes, size=n_samples)
    salience = rng.uniform(1.0, 3.0, size=n_samples)
    inputs = []
    for y, s in zip(labels, salience):
        v = np.rint(protos[y] * s + rng.normal(0, 0.7, dim)).astype(np.int64)
        inputs.append(np.clip(v, 0, 8)[None, :])
    w1 = random_weights(rng, dim, hidden, density=0.8)
    hid = LayerSpec("linear", QuantParams(1, 0, 7), w1, token_geom=TokenGeom(1, dim))
    h_net = calibrate(NetworkSpec([hid], [], time_steps).validate(),
                      np.mean(inputs, axis=0).round().astype(np.int64))
    hq = h_net.layers[0].quant
    feats = np.array([quantized_relu(x @ w1, hq)[0] for x in inputs], dtype=float)
    means = np.array([feats[labels == c].mean(0) if (labels == c).any() else np.zeros(hidden)
                      for c in range(n_classes)])
    centred = means - means.mean(0)
    w2 = np.clip(np.rint(centred / (np.abs(centred).max() + 1e-9) * 7), -8, 7).astype(np.int64)
    out = LayerSpec("linear", QuantParams(1, 0, 15), w2.T.copy())
    net = NetworkSpec([h_net.layers[0], out], [(0, 1)], time_steps).validate()
    pre = np.array([quantized_relu(x @ w1, hq)[0] @ w2.T for x in inputs])
    pos = pre[pre > 0]
    thr = max(1, int(round(np.percentile(pos, 90) / 8))) if pos.size else 1
    net.layers[1] = replace(out, quant=QuantParams(thr, 0, 15))
    return net.validate(), inputs, labels.tolist()
