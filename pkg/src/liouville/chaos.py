"""Gaussian multiplicative chaos on a grid.

Cell masses are ``exp(a X_eps(c) - a^2 sigma_eps^2 / 2) * |cell|`` with
``a = gamma`` in the plane and ``a = gamma / 2`` on the line, so each cell has
expectation equal to its volume.  The critical boundary measure
(``gamma = 2 sqrt 2``) uses the derivative-martingale weight instead, which
can be negative at finite cutoff.
"""
from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np
from scipy.signal import fftconvolve

from .field import FieldSample, GridSpec

BULK_CRITICAL = 2.0
BOUNDARY_CRITICAL = 2.0 * math.sqrt(2.0)
FLAVORS = ("bulk", "boundary", "critical_boundary")


class PhaseError(ValueError):
    """Coupling constant outside the subcritical range of the chosen flavour."""


@dataclass(frozen=True, eq=False)
class ChaosMeasure:
    grid: GridSpec
    masses: np.ndarray
    gamma: float
    flavor: str
    eps: float
    seneta_heyde: np.ndarray | None = None

    def __post_init__(self):
        if self.flavor not in FLAVORS:
            raise ValueError(f"unknown flavor {self.flavor!r}")
        if self.masses.shape != self.grid.shape:
            raise ValueError("mass array does not match grid")
        if self.flavor != "critical_boundary" and np.any(self.masses < 0):
            raise ValueError("negative cell mass in a subcritical measure")
        if not np.all(np.isfinite(self.masses)):
            raise ValueError("non-finite cell mass")
        self.masses.setflags(write=False)

    def total_mass(self, box=None) -> float:
        """Mass of the cells whose centre lies in ``box`` (whole grid if None)."""
        if box is None:
            return float(self.masses.sum())
        return float(self.masses[self.grid.cell_mask(box)].sum())

    def seneta_heyde_mass(self, box=None) -> float:
        if self.seneta_heyde is None:
            raise ValueError("only critical measures carry Seneta-Heyde masses")
        if box is None:
            return float(self.seneta_heyde.sum())
        return float(self.seneta_heyde[self.grid.cell_mask(box)].sum())


def _check_phase(gamma: float, flavor: str, dimension: int) -> float:
    gamma = float(gamma)
    if flavor == "bulk":
        if dimension != 2:
            raise ValueError("bulk chaos lives on a 2d field")
        if not 0 <= gamma < BULK_CRITICAL:
            raise PhaseError(f"gamma={gamma} is supercritical for bulk (γ < 2 required)")
        return gamma
    if flavor == "boundary":
        if dimension != 1:
            raise ValueError("boundary chaos lives on a 1d field")
        if not 0 <= gamma < BOUNDARY_CRITICAL:
            raise PhaseError(f"gamma={gamma} is supercritical for boundary (γ < 2√2 required)")
        return gamma / 2.0
    raise ValueError(f"flavor must be 'bulk' or 'boundary', got {flavor!r}")


def gmc_measure(field: FieldSample, gamma: float, flavor: str) -> ChaosMeasure:
    """Subcritical chaos measure of a grid field.

    Parameters
    ----------
    field : FieldSample
        Grid realisation of ``X_eps``.
    gamma : float
        Coupling constant, ``[0, 2)`` for ``bulk`` and ``[0, 2 sqrt 2)`` for
        ``boundary``.
    flavor : {'bulk', 'boundary'}

    Returns
    -------
    ChaosMeasure
    """
    a = _check_phase(gamma, flavor, field.grid.dimension)
    vol = field.grid.cell_volume
    if a == 0:
        masses = np.full(field.grid.shape, vol)
    else:
        masses = np.exp(a * field.values - 0.5 * a * a * field.sigma2) * vol
    return ChaosMeasure(field.grid, masses, float(gamma), flavor, field.eps)


def critical_boundary_measure(field: FieldSample) -> ChaosMeasure:
    """Critical boundary chaos (``gamma = 2 sqrt 2``) at cutoff ``eps``.

    ``masses`` holds the signed derivative-martingale cells
    ``sqrt(2/pi) (sqrt2 sigma^2 - X) exp(sqrt2 X - sigma^2) dx``;
    ``seneta_heyde`` holds ``sqrt(-ln eps) exp(sqrt2 X - sigma^2) dx``.
    Both converge to the same limit as ``eps -> 0``.
    """
    if field.grid.dimension != 1:
        raise ValueError("critical boundary chaos lives on a 1d field")
    eps = field.eps
    if not 0 < eps < math.exp(-1.0):
        raise ValueError(f"critical measure needs eps < e^-1 (so that -ln eps > 1), got {eps}")
    s2 = field.sigma2
    x = field.values
    dx = field.grid.cell
    base = np.exp(math.sqrt(2.0) * x - s2)
    deriv = math.sqrt(2.0 / math.pi) * (math.sqrt(2.0) * s2 - x) * base * dx
    sh = math.sqrt(-math.log(eps)) * base * dx
    return ChaosMeasure(field.grid, deriv, BOUNDARY_CRITICAL, "critical_boundary", eps, sh)


# ---------------------------------------------------------- ball masses ---

@dataclass(frozen=True)
class BallMassReport:
    radii: tuple
    sup_masses: tuple
    fitted_exponent: float
    beta: float
    intercept: float = 0.0


def multifractal_beta(gamma: float, flavor: str) -> float:
    """Lower bound exponent of ball masses, ``sup_x M(B(x,r)) <= C r^(beta - delta)``.

    Planar: ``2 (1 - gamma/2)^2``.  On the line (exponent ``gamma/2``, ``d = 1``)
    the same formula ``d (1 - a / sqrt(2d))^2`` gives ``(1 - gamma / (2 sqrt 2))^2``.
    """
    if flavor == "bulk":
        return 2.0 * (1.0 - gamma / 2.0) ** 2
    if flavor == "boundary":
        return (1.0 - gamma / BOUNDARY_CRITICAL) ** 2
    return 0.0


def _ball_stencil(radius: float, cell: float, dimension: int) -> np.ndarray:
    k = int(math.floor(radius / cell + 1e-9))
    offs = np.arange(-k, k + 1) * cell
    if dimension == 1:
        return (np.abs(offs) <= radius * (1 + 1e-12)).astype(float)
    d2 = offs[:, None] ** 2 + offs[None, :] ** 2
    return (d2 <= (radius * radius) * (1 + 1e-12)).astype(float)


def ball_masses(measure: ChaosMeasure, radius: float) -> np.ndarray:
    """``M(B(c, r))`` for every cell centre ``c`` (cells with centre in the ball)."""
    stencil = _ball_stencil(radius, measure.grid.cell, measure.grid.dimension)
    out = fftconvolve(measure.masses, stencil, mode="same")
    return np.maximum(out, 0.0) if measure.flavor != "critical_boundary" else out


def ols_slope(x, y):
    """Least-squares fit ``y = slope * x + intercept``; returns (slope, intercept, r2)."""
    x = np.asarray(x, dtype=float)
    y = np.asarray(y, dtype=float)
    xm, ym = x.mean(), y.mean()
    sxx = np.sum((x - xm) ** 2)
    slope = float(np.sum((x - xm) * (y - ym)) / sxx)
    intercept = float(ym - slope * xm)
    resid = y - (slope * x + intercept)
    syy = np.sum((y - ym) ** 2)
    r2 = 1.0 - float(np.sum(resid ** 2) / syy) if syy > 0 else 1.0
    return slope, intercept, r2


def ball_mass_exponent(measure: ChaosMeasure, radii, region) -> BallMassReport:
    """Fit the scaling of the largest ball mass centred in ``region``.

    The slope of ``ln sup_x M(B(x, r))`` against ``ln r`` is fitted by ordinary
    least squares.  ``region`` must sit inside the grid with a margin of at
    least ``max(radii)``.
    """
    radii = np.sort(np.asarray(radii, dtype=float))
    if radii.size < 4:
        raise ValueError("need at least 4 radii")
    if radii[0] <= 0 or radii[-1] >= 1:
        raise ValueError("radii must lie in (0, 1)")
    if radii[-1] / radii[0] < 10 * (1 - 1e-9):
        raise ValueError("radii must span at least a decade")
    grid = measure.grid
    if not grid.contains_box(region, margin=radii[-1]):
        raise ValueError("region (plus the largest radius) exceeds the sampled grid")
    mask = grid.cell_mask(region)
    if not mask.any():
        raise ValueError("region contains no cell centres")
    sups = []
    for r in radii:
        sups.append(float(ball_masses(measure, r)[mask].max()))
    sups = np.asarray(sups)
    if np.any(sups <= 0):
        raise ValueError("nonpositive ball mass; cannot take logarithms")
    slope, intercept, _ = ols_slope(np.log(radii), np.log(sups))
    return BallMassReport(
        tuple(radii.tolist()),
        tuple(sups.tolist()),
        slope,
        multifractal_beta(measure.gamma, measure.flavor),
        intercept,
    )
