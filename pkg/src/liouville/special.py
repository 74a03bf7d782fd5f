"""Exponential integral E1.

Power series below 1, modified Lentz continued fraction above.  Both branches
are vectorised with a fixed iteration budget; accuracy is better than 1e-14
relative on (0, 700].
"""
from __future__ import annotations

import numpy as np

EULER_GAMMA = 0.57721566490153286061

_SERIES_TERMS = 40
_CF_ITERS = 300
_TINY = 1e-300


def _e1_series(x: np.ndarray) -> np.ndarray:
    # E1(x) = -gamma - ln x - sum_{k>=1} (-x)^k / (k k!)
    total = np.zeros_like(x)
    term = np.ones_like(x)
    for k in range(1, _SERIES_TERMS + 1):
        term = term * (-x) / k
        total += term / k
    return -EULER_GAMMA - np.log(x) - total


def _e1_cfrac(x: np.ndarray) -> np.ndarray:
    # E1(x) = e^{-x} / (x + 1 - 1^2/(x + 3 - 2^2/(x + 5 - ...)))
    b = x + 1.0
    c = np.full_like(x, 1.0 / _TINY)
    d = 1.0 / b
    h = d.copy()
    for i in range(1, _CF_ITERS + 1):
        a = -float(i * i)
        b = b + 2.0
        d = 1.0 / (a * d + b)
        c = b + a / c
        delta = c * d
        h *= delta
        if np.all(np.abs(delta - 1.0) < 1e-16):
            break
    return h * np.exp(-x)


def exp1(x):
    """Exponential integral ``E1(x) = int_x^inf e^{-u}/u du`` for ``x >= 0``.

    Returns ``inf`` at 0.  Scalars in, scalar out.
    """
    arr = np.asarray(x, dtype=float)
    if np.any(~np.isfinite(arr) & ~(arr == np.inf)) or np.any(arr < 0):
        raise ValueError("exp1 is defined for x >= 0")
    out = np.empty_like(arr)
    flat, res = arr.reshape(-1), out.reshape(-1)
    zero = flat == 0
    small = (flat > 0) & (flat < 1.0)
    large = flat >= 1.0
    res[zero] = np.inf
    if small.any():
        res[small] = _e1_series(flat[small])
    if large.any():
        res[large] = _e1_cfrac(flat[large])
    if np.ndim(x) == 0:
        return float(out)
    return out
