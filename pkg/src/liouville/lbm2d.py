"""Planar Liouville Brownian motion by time change.

A standard planar Brownian path ``B`` is reparametrised by the inverse of its
chaos clock ``F(t) = int_0^t exp(gamma X_eps(B_r) - gamma^2 sigma^2 / 2) dr``.
The clock is a left-endpoint Riemann sum over the path steps; the field is
read through any object with ``values_at(points)``, ``sigma2`` and ``eps``
(a grid :class:`~liouville.field.FieldSample` or a
:class:`~liouville.field.PointField`).
"""
from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from ._rng import check_seed, derive_rng


class UnresolvedCutoff(ValueError):
    """Path steps are too coarse for the field cutoff (need eps >= 2 sqrt(dt))."""


class ClockRangeError(ValueError):
    """Clock inverse requested beyond the simulated horizon."""

    def __init__(self, message, attained):
        super().__init__(message)
        self.attained = attained


@dataclass(frozen=True, eq=False)
class WalkPath:
    times: np.ndarray
    positions: np.ndarray
    start: tuple
    seed: int

    def __post_init__(self):
        if self.times[0] != 0 or np.any(np.diff(self.times) <= 0):
            raise ValueError("times must start at 0 and increase strictly")
        if self.positions.shape != (self.times.size, 2):
            raise ValueError("positions must have shape (len(times), 2)")


@dataclass(frozen=True, eq=False)
class Clock:
    times: np.ndarray
    values: np.ndarray

    def __post_init__(self):
        if self.values[0] != 0:
            raise ValueError("clock must start at 0")
        if np.any(np.diff(self.values) <= 0) or not np.all(np.isfinite(self.values)):
            raise ValueError("clock must be finite and strictly increasing")

    def increment(self, i: int, j: int) -> float:
        return float(self.values[j] - self.values[i])


def brownian_increments(rng: np.random.Generator, shape, dt) -> np.ndarray:
    return rng.standard_normal(tuple(shape) + (2,)) * np.sqrt(dt)[..., None]


def sample_walk(start, horizon: float, n_steps: int, seed: int) -> WalkPath:
    """Planar Brownian motion on ``n_steps`` equal steps of ``[0, horizon]``."""
    seed = check_seed(seed)
    if n_steps < 2:
        raise ValueError("n_steps must be >= 2")
    if horizon <= 0:
        raise ValueError("horizon must be positive")
    start = np.asarray(start, dtype=float).reshape(2)
    times = np.linspace(0.0, horizon, n_steps + 1)
    dt = np.diff(times)
    rng = derive_rng(seed, "walk")
    pos = np.empty((n_steps + 1, 2))
    pos[0] = start
    pos[1:] = start + np.cumsum(brownian_increments(rng, (n_steps,), dt), axis=0)
    return WalkPath(times, pos, tuple(start), seed)


def check_resolution(field, dt_max: float) -> None:
    eps = float(field.eps)
    if eps < 2.0 * math.sqrt(dt_max) * (1 - 1e-12):
        raise UnresolvedCutoff(
            f"cutoff eps={eps:.4g} below 2*sqrt(dt)={2 * math.sqrt(dt_max):.4g}; use more steps"
        )


def chaos_weights(points: np.ndarray, gamma: float, field) -> np.ndarray:
    """``exp(gamma X(p) - gamma^2 sigma^2 / 2)`` at the given points."""
    if gamma == 0:
        return np.ones(points.shape[:-1])
    x = field.values_at(points)
    return np.exp(gamma * x - 0.5 * gamma * gamma * field.sigma2)


def _check_gamma(gamma: float) -> float:
    gamma = float(gamma)
    if not 0 <= gamma < 2:
        raise ValueError(f"gamma={gamma} outside [0, 2) (γ < 2 required)")
    return gamma


def clock(path: WalkPath, gamma: float, field=None) -> Clock:
    """Chaos clock ``F(t)`` at the path times (left-endpoint Riemann sum)."""
    gamma = _check_gamma(gamma)
    if gamma == 0:
        return Clock(path.times, path.times.copy())
    dt = np.diff(path.times)
    check_resolution(field, float(dt.max()))
    w = chaos_weights(path.positions[:-1], gamma, field)
    values = np.concatenate([[0.0], np.cumsum(w * dt)])
    return Clock(path.times, values)


def clock_inverse(clock: Clock, s):
    """Piecewise-linear inverse of the tabulated clock."""
    s = np.asarray(s, dtype=float)
    top = float(clock.values[-1])
    if np.any(s < 0):
        raise ValueError("clock inverse needs s >= 0")
    if np.any(s > top):
        raise ClockRangeError(f"s beyond clock range F(horizon)={top:.6g}; extend the horizon", top)
    out = np.interp(s, clock.values, clock.times)
    return float(out) if out.ndim == 0 else out


def lbm_positions(start, t_liouville: float, gamma: float, field, n: int, seed: int,
                  dt: float | None = None, max_extensions: int = 12) -> np.ndarray:
    """``n`` independent draws of the Liouville Brownian motion at time ``t``.

    Walks are simulated in chunks of length ``t`` until every clock passes
    ``t_liouville``; the position is interpolated linearly inside the step
    where the clock crosses.  Output shape ``(n, 2)``.
    """
    gamma = _check_gamma(gamma)
    if t_liouville <= 0:
        raise ValueError("t must be positive")
    start = np.asarray(start, dtype=float).reshape(2)
    rng = derive_rng(seed, "lbm")
    if gamma == 0:
        return start + rng.standard_normal((n, 2)) * math.sqrt(t_liouville)
    if dt is None:
        dt = min(field.eps ** 2 / 4.0, t_liouville / 16.0)
    check_resolution(field, dt)
    steps = max(2, int(math.ceil(t_liouville / dt)))
    h = t_liouville / steps
    pos = np.tile(start, (n, 1))
    clk = np.zeros(n)
    out = np.full((n, 2), np.nan)
    active = np.arange(n)
    for _ in range(max_extensions + 1):
        incs = rng.standard_normal((n, steps, 2)) * math.sqrt(h)
        incs = incs[active]
        path = pos[active, None, :] + np.concatenate(
            [np.zeros((active.size, 1, 2)), np.cumsum(incs, axis=1)], axis=1
        )
        w = chaos_weights(path[:, :-1], gamma, field)
        f = clk[active, None] + np.concatenate([np.zeros((active.size, 1)), np.cumsum(w * h, axis=1)], axis=1)
        crossed = f[:, -1] >= t_liouville
        if crossed.any():
            rows = np.nonzero(crossed)[0]
            k = np.argmax(f[rows] >= t_liouville, axis=1)  # first index with F >= t, k >= 1
            f0, f1 = f[rows, k - 1], f[rows, k]
            frac = (t_liouville - f0) / (f1 - f0)
            p0, p1 = path[rows, k - 1], path[rows, k]
            out[active[rows]] = p0 + frac[:, None] * (p1 - p0)
        pos[active] = path[:, -1]
        clk[active] = f[:, -1]
        active = active[~crossed]
        if active.size == 0:
            return out
    raise ClockRangeError(
        f"clock did not reach t={t_liouville} after {max_extensions} extensions "
        f"(smallest attained F={clk[active].min():.4g})",
        float(clk[active].min()),
    )


def lbm_position(start, t_liouville: float, gamma: float, field, seed: int, **kwargs) -> np.ndarray:
    """One draw of the Liouville Brownian motion started at ``start``."""
    return lbm_positions(start, t_liouville, gamma, field, 1, seed, **kwargs)[0]


def occupation_transform(start, box, gamma: float, alpha: float, lam: float, field, n_paths: int, seed: int,
                         f_max: float = 30.0, dt: float | None = None, batch: int = 2000, segment: int = 256):
    """Direct estimate of ``E^x[int_0^inf G(LB_t) ... ]``: ``int G(t) P^x(LB_t in A) dt``.

    With ``G(t) = t^alpha e^{-lambda t}`` and the substitution ``t = F(u)``
    this is ``E[int G(F(u)) 1{B_u in A} F(du)]``, accumulated along planar
    Brownian paths (left-endpoint sums) until every clock exceeds ``f_max``.
    Returns ``(value, stderr)`` over independent paths.
    """
    gamma = _check_gamma(gamma)
    (a0, a1), (b0, b1) = box
    start = np.asarray(start, dtype=float).reshape(2)
    if dt is None:
        dt = field.eps ** 2 / 4.0 if gamma > 0 else 1e-3
    if gamma > 0:
        check_resolution(field, dt)
    totals = np.empty(n_paths)
    for lo in range(0, n_paths, batch):
        n = min(batch, n_paths - lo)
        rng = derive_rng(seed, "occupation", lo // batch)
        pos = np.tile(start, (n, 1))
        f = np.zeros(n)
        acc = np.zeros(n)
        act = np.arange(n)
        while act.size:
            k = act.size
            incs = rng.standard_normal((n, segment, 2))[act] * math.sqrt(dt)
            path = pos[act, None, :] + np.concatenate([np.zeros((k, 1, 2)), np.cumsum(incs, axis=1)[:, :-1]], axis=1)
            df = chaos_weights(path, gamma, field) * dt
            fl = f[act, None] + np.concatenate([np.zeros((k, 1)), np.cumsum(df, axis=1)[:, :-1]], axis=1)
            inside = (path[..., 0] >= a0) & (path[..., 0] <= a1) & (path[..., 1] >= b0) & (path[..., 1] <= b1)
            with np.errstate(divide="ignore"):
                g = np.exp((alpha * np.log(fl) if alpha else 0.0) - lam * fl)
            acc[act] += np.sum(np.where(inside, g * df, 0.0), axis=1)
            pos[act] = path[:, -1] + incs[:, -1]
            f[act] = fl[:, -1] + df[:, -1]
            act = act[f[act] < f_max]
        totals[lo:lo + n] = acc
    return float(totals.mean()), float(totals.std(ddof=1) / math.sqrt(n_paths))
