"""Central finite-difference check of analytic gradients.

The numeric derivative uses the fourth-order central stencil

    f'(x) ~ [f(x - 2h) - 8 f(x - h) + 8 f(x + h) - f(x + 2h)] / (12 h)

whose truncation error is O(h^4).  That allows steps of 1e-3 to 5e-3, where
float64 cancellation in the loss difference stays far below the 1e-8
denominator floor even for coordinates whose true gradient is exactly zero.
"""

from __future__ import annotations

from typing import Callable, Sequence

import numpy as np

from .tensor import Tensor, backward


class NondeterministicError(RuntimeError):
    pass


def grad_check(f: Callable[[], Tensor], params: Sequence[Tensor], h: float = 1e-3,
               max_coords: int | None = 64, rng: np.random.Generator | None = None) -> float:
    """Max relative error between backprop and central differences.

    ``f`` rebuilds the graph from the current parameter values and returns a
    scalar loss.  At most ``max_coords`` coordinates per parameter are probed
    (all of them when ``None``).  The error at a coordinate is
    ``|analytic - numeric| / max(|analytic|, |numeric|, 1e-8)``.
    """
    if h <= 0:
        raise ValueError("h must be positive")
    params = list(params)
    rng = rng if rng is not None else np.random.default_rng(0)

    first = f()
    second = f()
    if first.data.tobytes() != second.data.tobytes():
        raise NondeterministicError("f returned different values for identical inputs")

    for p in params:
        p.zero_grad()
    grads = backward(f(), params)

    worst = 0.0
    for i, p in enumerate(params):
        flat = p.data.reshape(-1)
        n = flat.size
        if max_coords is None or n <= max_coords:
            coords = np.arange(n)
        else:
            coords = rng.choice(n, size=max_coords, replace=False)
        analytic = grads[i].reshape(-1)
        for c in coords:
            orig = flat[c]
            vals = []
            for step in (-2 * h, -h, h, 2 * h):
                flat[c] = orig + step
                vals.append(f().item())
            flat[c] = orig
            # differences first, so a loss that ignores the coordinate gives exactly 0
            numeric = (8 * (vals[2] - vals[1]) - (vals[3] - vals[0])) / (12 * h)
            a = analytic[c]
            denom = max(abs(a), abs(numeric), 1e-8)
            worst = max(worst, abs(a - numeric) / denom)
    for p in params:
        p.zero_grad()
    return worst
