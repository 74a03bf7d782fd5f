"""Boundary Liouville quantum gravity on the real line.

Everything is explicit once the monotone map ``phi(x) = M([0, x])`` is
tabulated: the quantum distance is ``|phi(x) - phi(y)|``, the boundary
Liouville Brownian motion is ``phi^{-1}(phi(x) + B_t)`` and the heat kernel
with respect to ``M`` is the Gaussian kernel in ``phi`` coordinates.
"""
from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np
from scipy.stats import norm

from ._rng import derive_rng, derive_seed
from .chaos import ChaosMeasure, critical_boundary_measure, gmc_measure, ols_slope
from .field import CovarianceSpec, GridSpec, sample_field_grid

PHI_TOL = 1e-12
CRITICAL_WINDOW = 2.0 ** -4
DEFAULT_BOX = (-8.0, 8.0)


class RangeExit(ValueError):
    """Evaluation outside the tabulated range of a :class:`MonotoneMap`.

    ``interval`` is the valid range (in the space that was left) and
    ``exit_time`` the first offending time for path sampling.
    """

    def __init__(self, message, interval, exit_time=None):
        super().__init__(message)
        self.interval = interval
        self.exit_time = exit_time


class RejectedRealization(ValueError):
    """A critical prelimit map failed the monotonicity check."""


@dataclass(frozen=True, eq=False)
class MonotoneMap:
    """Tabulated strictly increasing map, linear between knots."""

    knots_x: np.ndarray
    knots_phi: np.ndarray
    gamma: float = 0.0
    flavor: str = "boundary"

    def __post_init__(self):
        if self.knots_x.shape != self.knots_phi.shape or self.knots_x.size < 2:
            raise ValueError("need matching knot arrays with at least 2 knots")
        if np.any(np.diff(self.knots_x) <= 0):
            raise ValueError("knots_x must be strictly increasing")
        if np.any(np.diff(self.knots_phi) <= 0):
            raise ValueError("knots_phi must be strictly increasing")
        self.knots_x.setflags(write=False)
        self.knots_phi.setflags(write=False)

    @property
    def x_range(self):
        return float(self.knots_x[0]), float(self.knots_x[-1])

    @property
    def phi_range(self):
        return float(self.knots_phi[0]), float(self.knots_phi[-1])

    def __call__(self, x):
        x = np.asarray(x, dtype=float)
        lo, hi = self.x_range
        if np.any(x < lo) or np.any(x > hi):
            raise RangeExit(f"x outside tabulated range [{lo}, {hi}]", (lo, hi))
        out = np.interp(x, self.knots_x, self.knots_phi)
        return float(out) if out.ndim == 0 else out

    def inverse(self, y):
        return phi_inverse(self, y)


def build_phi(measure: ChaosMeasure) -> MonotoneMap:
    """Cumulative mass ``phi(x) = M([0, x])`` tabulated at cell edges.

    For the critical flavour the signed prelimit can have negative cells; knots
    that would break strict monotonicity are dropped (the map is coarsened
    locally around them).  Call :func:`check_critical_window` first if a
    realisation should be rejected outright.
    """
    if measure.flavor not in ("boundary", "critical_boundary"):
        raise ValueError("build_phi needs a boundary or critical_boundary measure")
    grid = measure.grid
    edges = grid.axis_edges(0)
    if not edges[0] <= 0.0 <= edges[-1]:
        raise ValueError("grid must cover an interval containing 0")
    masses = measure.masses
    if measure.flavor == "boundary" and np.any(masses <= 0):
        raise ValueError("nonpositive cell mass in a subcritical boundary measure")
    cum = np.concatenate([[0.0], np.cumsum(masses)])
    k0 = int(round(-edges[0] / grid.cell))
    if abs(edges[0] + k0 * grid.cell) <= 1e-9 * grid.cell:
        edges = edges.copy()
        edges[k0] = 0.0
        phi = cum - cum[k0]
    else:
        phi = cum - np.interp(0.0, edges, cum)
    if measure.gamma == 0 and measure.flavor == "boundary":
        # Lebesgue: the map is the identity at every knot
        phi = edges.copy()
    if measure.flavor == "critical_boundary":
        prefix_max = np.maximum.accumulate(phi)
        suffix_min = np.minimum.accumulate(phi[::-1])[::-1]
        keep = np.ones(phi.size, dtype=bool)
        keep[1:] &= phi[1:] > prefix_max[:-1]
        keep[:-1] &= phi[:-1] < suffix_min[1:]
        edges, phi = edges[keep], phi[keep]
    return MonotoneMap(np.asarray(edges, dtype=float), np.asarray(phi, dtype=float), measure.gamma, measure.flavor)


def check_critical_window(measure: ChaosMeasure, window: float = CRITICAL_WINDOW) -> bool:
    """True when every aggregate of cells of width ``window`` has positive mass."""
    cells = max(1, int(round(window / measure.grid.cell)))
    m = measure.masses
    usable = (m.size // cells) * cells
    sums = m[:usable].reshape(-1, cells).sum(axis=1)
    if usable < m.size:
        sums = np.append(sums, m[usable:].sum())
    return bool(np.all(sums > 0))


def phi_inverse(map: MonotoneMap, y):
    """``phi^{-1}(y)`` by bisection on the knots and linear interpolation."""
    y = np.asarray(y, dtype=float)
    lo, hi = map.phi_range
    if np.any(y < lo - PHI_TOL) or np.any(y > hi + PHI_TOL):
        raise RangeExit(f"value outside tabulated range [{lo}, {hi}]; enlarge the simulation box", (lo, hi))
    yc = np.clip(y, lo, hi)
    kp, kx = map.knots_phi, map.knots_x
    i = np.clip(np.searchsorted(kp, yc, side="right") - 1, 0, kp.size - 2)
    w = (yc - kp[i]) / (kp[i + 1] - kp[i])
    out = kx[i] + w * (kx[i + 1] - kx[i])
    return float(out) if out.ndim == 0 else out


def boundary_distance(map: MonotoneMap, x, y):
    """Quantum distance ``|phi(x) - phi(y)|``."""
    return np.abs(map(x) - map(y))


def boundary_heat_kernel(map: MonotoneMap, x, y, t):
    """Heat kernel with respect to ``M``: ``exp(-d(x,y)^2 / 2t) / sqrt(2 pi t)``."""
    t = np.asarray(t, dtype=float)
    if np.any(t <= 0):
        raise ValueError("t must be positive")
    d = boundary_distance(map, x, y)
    out = np.exp(-(d * d) / (2.0 * t)) / np.sqrt(2.0 * np.pi * t)
    return float(out) if np.ndim(out) == 0 else out


def boundary_occupation_probability(map: MonotoneMap, x0: float, a: float, b: float, t: float) -> float:
    """``int_a^b p_t(x0, y) M(dy)``; since ``M(dy) = dphi`` this is a Gaussian CDF difference."""
    if t <= 0:
        raise ValueError("t must be positive")
    p0, pa, pb = map(x0), map(a), map(b)
    s = math.sqrt(t)
    return float(norm.cdf((pb - p0) / s) - norm.cdf((pa - p0) / s))


def boundary_lbm_paths(map: MonotoneMap, x0: float, times, n_paths: int, seed: int) -> np.ndarray:
    """``n_paths`` boundary LBM paths at ``times``, shape ``(n_paths, len(times))``.

    Raises :class:`RangeExit` (with the first exit time) if any driving
    Brownian path leaves the tabulated range of ``phi``.
    """
    times = np.asarray(times, dtype=float)
    if times.ndim != 1 or np.any(times < 0) or np.any(np.diff(times) < 0):
        raise ValueError("times must be sorted and nonnegative")
    rng = derive_rng(seed, "boundary-lbm")
    dt = np.diff(np.concatenate([[0.0], times]))
    incs = rng.standard_normal((n_paths, times.size)) * np.sqrt(dt)
    b = np.cumsum(incs, axis=1)
    target = map(x0) + b
    lo, hi = map.phi_range
    bad = (target < lo) | (target > hi)
    if bad.any():
        first = int(np.argmax(bad.any(axis=0)))
        raise RangeExit(
            f"boundary LBM left the tabulated range at t={times[first]:.6g}; enlarge the box",
            map.x_range,
            float(times[first]),
        )
    out = phi_inverse(map, target)
    out = np.asarray(out).reshape(n_paths, times.size)
    out[:, times == 0] = x0
    return out


def boundary_lbm_path(map: MonotoneMap, x0: float, times, seed: int) -> np.ndarray:
    """One path ``phi^{-1}(phi(x0) + B_t)`` sampled at ``times``."""
    return boundary_lbm_paths(map, x0, times, 1, seed)[0]


def boundary_spectral_dimension(map: MonotoneMap, t_grid, x: float = 0.0) -> float:
    """``-2 * slope`` of ``ln p_t(x, x)`` against ``ln t``."""
    t = np.asarray(t_grid, dtype=float)
    if t.size < 4 or np.any(t <= 0):
        raise ValueError("need at least 4 positive times")
    if np.log10(t.max() / t.min()) < 2 - 1e-9:
        raise ValueError("times must span at least two decades")
    p = boundary_heat_kernel(map, x, x, t)
    slope, _, _ = ols_slope(np.log(t), np.log(p))
    return -2.0 * slope


# ------------------------------------------------------------- builders ---

def boundary_grid(box=DEFAULT_BOX, cell: float = 2.0 ** -8) -> GridSpec:
    lo, hi = box
    n = 2
    while (hi - lo) / n > cell:
        n *= 2
    return GridSpec((lo,), hi - lo, n)


def sample_boundary_map(gamma: float, spec: CovarianceSpec, seed: int, box=DEFAULT_BOX, cell: float | None = None) -> MonotoneMap:
    """Subcritical boundary map from a fresh field on ``box``."""
    cell = spec.cutoff / 2 if cell is None else cell
    grid = boundary_grid(box, cell)
    field = sample_field_grid(grid, spec, seed)
    return build_phi(gmc_measure(field, gamma, "boundary"))


def sample_critical_map(spec: CovarianceSpec, seed: int, box=DEFAULT_BOX, cell: float | None = None, max_tries: int = 50):
    """Critical boundary map, resampling realisations that fail the window check.

    Returns ``(map, measure, n_rejected)``.  Attempt ``k`` uses the field seed
    ``derive_seed(seed, "critical", k)``.
    """
    cell = spec.cutoff / 4 if cell is None else cell
    grid = boundary_grid(box, cell)
    for attempt in range(max_tries):
        field = sample_field_grid(grid, spec, derive_seed(seed, "critical", attempt))
        measure = critical_boundary_measure(field)
        if check_critical_window(measure):
            return build_phi(measure), measure, attempt
    raise RejectedRealization(f"all {max_tries} critical realisations had a nonpositive window")


def lbm_with_auto_box(build, x0: float, times, n_paths: int, seed: int, box=DEFAULT_BOX, retries: int = 3):
    """Sample boundary LBM paths, doubling the box on range exit.

    ``build(box)`` must return a :class:`MonotoneMap` on that box.  Returns
    ``(paths, map, box)``.
    """
    for _ in range(retries + 1):
        map = build(box)
        try:
            return boundary_lbm_paths(map, x0, times, n_paths, seed), map, box
        except RangeExit:
            box = (2.0 * box[0], 2.0 * box[1])
    raise RangeExit(f"paths still leave the box after {retries} enlargements", box)
