"""ST-BIF (bipolar integrate-and-fire with spike tracer) neuron dynamics.

Scalar functions operate on :class:`StBifState`; the ``*_rows`` variants
apply the same rule element-wise to numpy arrays and are what the PE model
uses. Both read the *pre-update* tracer when deciding to fire.
"""
from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .errors import InvariantViolation
from .model import QuantParams


@dataclass(frozen=True)
class StBifState:
    v: float
    s: int
    q: QuantParams

    def __post_init__(self):
        if not self.q.s_min <= self.s <= self.q.s_max:
            raise InvariantViolation(f"tracer {self.s} outside [{self.q.s_min}, {self.q.s_max}]")


def initial_state(q: QuantParams) -> StBifState:
    return StBifState(0, 0, q)


def integrate(state: StBifState, weighted_sum):
    return state.v + weighted_sum


def fire(v_hat, state: StBifState) -> int:
    q = state.q
    if v_hat >= q.v_thr and state.s < q.s_max:
        return 1
    if v_hat < 0 and state.s > q.s_min:
        return -1
    return 0


def update(state: StBifState, v_hat, y: int) -> StBifState:
    s = state.s + y
    if not state.q.s_min <= s <= state.q.s_max:
        raise InvariantViolation(f"spike {y:+d} moves tracer {state.s} out of range")
    return StBifState(v_hat - y * state.q.v_thr, s, state.q)


def step(state: StBifState, weighted_sum) -> tuple[int, StBifState]:
    v_hat = integrate(state, weighted_sum)
    y = fire(v_hat, state)
    return y, update(state, v_hat, y)


def is_quiescent(state: StBifState) -> bool:
    """True when stepping with zero input can never fire again."""
    return fire(state.v, state) == 0


def run(state: StBifState, inputs, max_idle: int | None = None):
    """Feed ``inputs`` one per time-step, then zeros until quiescent.

    Returns ``(spikes, final_state)``. ``max_idle`` bounds the drain phase
    (defaults to the tracer range, which always suffices).
    """
    spikes = []
    for x in inputs:
        y, state = step(state, x)
        spikes.append(y)
    limit = state.q.levels + 1 if max_idle is None else max_idle
    for _ in range(limit):
        if is_quiescent(state):
            break
        y, state = step(state, 0)
        spikes.append(y)
    return spikes, state


# --------------------------------------------------------------------------
# array forms used by the processing element


def fire_rows(v_hat: np.ndarray, s: np.ndarray, q: QuantParams) -> np.ndarray:
    up = (v_hat >= q.v_thr) & (s < q.s_max)
    down = (v_hat < 0) & (s > q.s_min)
    return up.astype(np.int8) - down.astype(np.int8)


def step_rows(v: np.ndarray, s: np.ndarray, weighted_sum, q: QuantParams):
    """Vectorised :func:`step`; returns ``(y, v_new, s_new)`` without mutating inputs."""
    v_hat = v + weighted_sum
    y = fire_rows(v_hat, s, q)
    return y, v_hat - y * q.v_thr, s + y


def quiescent_rows(v: np.ndarray, s: np.ndarray, q: QuantParams) -> np.ndarray:
    return fire_rows(v, s, q) == 0
