"""Router-side functional units.

* im2col broadcast: one input spike of a convolution fans out to every
  output spine whose receptive field covers it.
* residual add: element-wise sum of operand spike rows.
* integer softmax / layernorm approximations. They are evaluated on the
  cumulative input levels of a row; the attached neurons receive the change
  of the function value each time-step.
"""
from __future__ import annotations

import math
from functools import lru_cache

import numpy as np

from ..model import ConvGeom, SpikeEvent

EXP_FRAC_BITS = 16
SOFTMAX_SCALE = 256
LAYERNORM_SCALE = 16


@lru_cache(maxsize=256)
def im2col_table(g: ConvGeom) -> tuple:
    """For each input spine: tuple of ``(output spine, kernel offset)`` pairs,
    where the unrolled weight row is ``offset + channel``."""
    table = [[] for _ in range(g.in_h * g.in_w)]
    for r in range(g.out_h):
        for c in range(g.out_w):
            for kh in range(g.kernel_h):
                h = r * g.stride + kh - g.padding
                if not 0 <= h < g.in_h:
                    continue
                for kw in range(g.kernel_w):
                    w = c * g.stride + kw - g.padding
                    if 0 <= w < g.in_w:
                        table[h * g.in_w + w].append(
                            (r * g.out_w + c, (kh * g.kernel_w + kw) * g.channels))
    return tuple(tuple(sorted(t)) for t in table)


def im2col_broadcast(spike: SpikeEvent, g: ConvGeom) -> list[tuple[int, int]]:
    """Targets ``(output spine, unrolled position)`` for one input spike."""
    return [(o, off + spike.position) for o, off in im2col_table(g)[spike.spine_or_token_id]]


def residual_add(a, b) -> np.ndarray:
    return np.asarray(a, dtype=np.int64) + np.asarray(b, dtype=np.int64)


def _exp2_neg(d: np.ndarray) -> np.ndarray:
    # 2**(-d) in fixed point for integer d >= 0
    return np.right_shift(np.int64(1 << EXP_FRAC_BITS), np.minimum(d, EXP_FRAC_BITS + 1))


def ssoftmax(row, scale: int = SOFTMAX_SCALE) -> np.ndarray:
    """Base-2 softmax on integer levels, output in units of ``1/scale``."""
    x = np.asarray(row, dtype=np.int64)
    if x.size == 0:
        return x.copy()
    e = _exp2_neg(x.max() - x)
    return (e * scale) // e.sum()


def slayernorm(row, scale: int = LAYERNORM_SCALE) -> np.ndarray:
    """Integer layer normalisation: ``(n*x - sum) * scale // (isqrt(var) + 1)``."""
    x = np.asarray(row, dtype=np.int64)
    n = x.size
    if n == 0:
        return x.copy()
    d = n * x - x.sum()
    std = math.isqrt(int((d * d).sum()) // n)
    return (d * scale) // (std + 1)


def ssoftmax_rows(x: np.ndarray, scale: int = SOFTMAX_SCALE) -> np.ndarray:
    x = np.asarray(x, dtype=np.int64)
    return np.stack([ssoftmax(r, scale) for r in x]) if len(x) else x.copy()


def slayernorm_rows(x: np.ndarray, scale: int = LAYERNORM_SCALE) -> np.ndarray:
    x = np.asarray(x, dtype=np.int64)
    return np.stack([slayernorm(r, scale) for r in x]) if len(x) else x.copy()
