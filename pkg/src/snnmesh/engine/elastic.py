"""Early termination on prediction confidence and first-correct-response latency.

Outputs of a spiking network only grow more accurate over time, so the
per-time-step snapshots of a single run to the stable state contain every
early-termination outcome: stopping at ``t`` would have produced exactly the
snapshot at ``t``.
"""
from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from ..errors import LengthMismatch, ValidationError
from .simulator import SimConfig, SimTrace, run_inference


@dataclass(frozen=True)
class ElasticConfig:
    theta: float = 0.9
    check_every: int = 1
    task: str = "classification"

    def __post_init__(self):
        if self.task != "classification":
            raise ValidationError(f"unsupported elastic task {self.task!r}", field="task")
        # theta above 1 is allowed and simply never triggers
        if not self.theta >= 0.0:
            raise ValidationError("theta must be >= 0", field="theta")
        if self.check_every < 1:
            raise ValidationError("check_every must be >= 1", field="check_every")


@dataclass(frozen=True)
class ElasticResult:
    terminated_at: int
    prediction: int | None
    confidence: float
    cycles: int
    stable_prediction: int | None
    trace: SimTrace | None = None


def class_scores(snapshot: np.ndarray) -> np.ndarray:
    """Class scores of a final-layer tracer matrix (summed over rows)."""
    return np.asarray(snapshot).sum(axis=0)


def predict(scores) -> int | None:
    """Arg-max class; ``None`` while every score is zero."""
    scores = np.asarray(scores)
    if not scores.any():
        return None
    return int(np.argmax(scores))


def confidence(scores) -> float:
    s = np.asarray(scores, dtype=float)
    e = np.exp(s - s.max())
    return float(e.max() / e.sum())


def predictions(trace) -> list:
    return [predict(class_scores(trace.snapshot(t))) for t in range(1, trace.horizon + 1)]


def elastic_from_trace(trace, cfg: ElasticConfig, keep_trace: bool = False) -> ElasticResult:
    last = trace.horizon
    stable = predict(class_scores(trace.snapshot(last)))
    for t in range(1, last + 1):
        if t % cfg.check_every and t != last:
            continue
        scores = class_scores(trace.snapshot(t))
        conf = confidence(scores)
        if conf >= cfg.theta or t == last:
            return ElasticResult(t, predict(scores), conf, trace.cycle_of(t), stable,
                                 trace if keep_trace else None)
    raise AssertionError("unreachable")


def elastic_run(net, mapping, values, elastic: ElasticConfig = ElasticConfig(),
                config: SimConfig = SimConfig()) -> ElasticResult:
    trace = run_inference(net, mapping, values, config)
    return elastic_from_trace(trace, elastic, keep_trace=True)


def fcr_latency(trace, label: int) -> int | None:
    """Cycle of the earliest time-step whose prediction equals ``label``;
    ``None`` if it never does."""
    for t, p in enumerate(predictions(trace), 1):
        if p == label:
            return trace.cycle_of(t)
    return None


def fcr_stable_latency(trace, label: int) -> int | None:
    """Like :func:`fcr_latency` but the prediction must stay correct afterwards."""
    preds = predictions(trace)
    first = None
    for t, p in enumerate(preds, 1):
        if p != label:
            first = None
        elif first is None:
            first = t
    return None if first is None else trace.cycle_of(first)


def mismatch_rate(early, stable) -> float:
    early, stable = list(early), list(stable)
    if len(early) != len(stable):
        raise LengthMismatch(f"{len(early)} early predictions vs {len(stable)} stable")
    if not early:
        return 0.0
    return sum(a != b for a, b in zip(early, stable)) / len(early)
