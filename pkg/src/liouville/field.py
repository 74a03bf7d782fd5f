"""Log-correlated Gaussian fields with a massive free field covariance.

The whole-plane massive free field of mass ``m`` has covariance

    G_m(r) = int_0^inf exp(-m^2 u / 2 - r^2 / (2u)) du / (2u) = K_0(m r),

which behaves like ``ln(1/r)`` near the origin.  The regularised field ``X_eps``
keeps only the scales ``u >= eps^2`` of that integral.  This keeps the kernel
stationary, positive definite in any dimension (it is a mixture of Gaussian
kernels) and monotone in ``eps``.

Two samplers are provided: circulant embedding on a regular grid (fast) and a
dense factorisation at arbitrary points (exact, small problems only).  Both are
pure functions of their inputs and the seed.
"""
from __future__ import annotations

import math
import warnings
from dataclasses import dataclass, field
from functools import lru_cache
from typing import Sequence

import numpy as np
from scipy import fft as sfft
from scipy import integrate, special
from scipy.interpolate import CubicSpline

from ._rng import check_seed, derive_rng

# Beyond FAR_CUTOFFS * eps the truncated part of the u-integral is below e^-50,
# so K_eps(r) is K_0(m r) to double precision.
FAR_CUTOFFS = 10.0
_GL_NODES, _GL_WEIGHTS = np.polynomial.legendre.leggauss(12)
_PANEL_WIDTH = 0.25
_TABLE_SIZE = 4097
MAX_EXACT_POINTS = 8192
_JITTERS = (0.0, 1e-12, 1e-10, 1e-8, 1e-6)


class FieldRangeError(ValueError):
    """A point fell outside the tabulated part of a grid field."""


@dataclass(frozen=True)
class CovarianceSpec:
    """Massive free field kernel in dimension 1 (trace on a line) or 2.

    ``cutoff`` is the regularisation scale ``eps``; 0 means the singular
    kernel, which can be evaluated but not sampled.
    """

    dimension: int = 2
    mass: float = 1.0
    cutoff: float = 0.0

    def __post_init__(self):
        if self.dimension not in (1, 2):
            raise ValueError(f"dimension must be 1 or 2, got {self.dimension}")
        if not (math.isfinite(self.mass) and self.mass > 0):
            raise ValueError(f"mass must be positive, got {self.mass}")
        if not (math.isfinite(self.cutoff) and self.cutoff >= 0):
            raise ValueError(f"cutoff must be >= 0, got {self.cutoff}")

    def with_cutoff(self, eps: float) -> "CovarianceSpec":
        return CovarianceSpec(self.dimension, self.mass, eps)


@dataclass(frozen=True)
class GridSpec:
    """Regular grid of ``n`` cells per axis on the box ``origin + [0, extent]^d``.

    Field values live at cell centres ``origin + (i + 1/2) * extent / n``.
    """

    origin: tuple
    extent: float
    n: int

    def __post_init__(self):
        object.__setattr__(self, "origin", tuple(float(o) for o in np.atleast_1d(self.origin)))
        if len(self.origin) not in (1, 2):
            raise ValueError("grid origin must have 1 or 2 coordinates")
        if not (math.isfinite(self.extent) and self.extent > 0):
            raise ValueError(f"extent must be positive, got {self.extent}")
        n = int(self.n)
        if n < 2 or n & (n - 1):
            raise ValueError(f"n must be a power of two >= 2, got {self.n}")
        object.__setattr__(self, "n", n)

    @classmethod
    def centered(cls, center, half_width: float, n: int) -> "GridSpec":
        c = np.atleast_1d(np.asarray(center, dtype=float))
        return cls(tuple(c - half_width), 2.0 * half_width, n)

    @property
    def dimension(self) -> int:
        return len(self.origin)

    @property
    def cell(self) -> float:
        return self.extent / self.n

    @property
    def cell_volume(self) -> float:
        return self.cell ** self.dimension

    @property
    def shape(self) -> tuple:
        return (self.n,) * self.dimension

    def axis_centers(self, axis: int = 0) -> np.ndarray:
        return self.origin[axis] + (np.arange(self.n) + 0.5) * self.cell

    def axis_edges(self, axis: int = 0) -> np.ndarray:
        return self.origin[axis] + np.arange(self.n + 1) * self.cell

    def centers(self) -> np.ndarray:
        """Cell centres, shape ``shape + (d,)`` (``(n,)`` in 1d)."""
        if self.dimension == 1:
            return self.axis_centers(0)
        gx, gy = np.meshgrid(self.axis_centers(0), self.axis_centers(1), indexing="ij")
        return np.stack([gx, gy], axis=-1)

    def cell_mask(self, box) -> np.ndarray:
        """Boolean mask of cells whose centre lies in the closed box.

        ``box`` is ``(lo, hi)`` in 1d or ``((xlo, xhi), (ylo, yhi))`` in 2d.
        """
        box = _normalize_box(box, self.dimension)
        masks = []
        for ax, (lo, hi) in enumerate(box):
            c = self.axis_centers(ax)
            masks.append((c >= lo) & (c <= hi))
        if self.dimension == 1:
            return masks[0]
        return masks[0][:, None] & masks[1][None, :]

    def contains_box(self, box, margin: float = 0.0) -> bool:
        box = _normalize_box(box, self.dimension)
        return all(
            lo - margin >= self.origin[ax] and hi + margin <= self.origin[ax] + self.extent
            for ax, (lo, hi) in enumerate(box)
        )


def _normalize_box(box, dimension: int):
    arr = np.asarray(box, dtype=float)
    if dimension == 1:
        arr = arr.reshape(1, 2)
    if arr.shape != (dimension, 2) or np.any(arr[:, 0] > arr[:, 1]):
        raise ValueError(f"bad box {box!r} for dimension {dimension}")
    return [tuple(row) for row in arr]


@dataclass(frozen=True, eq=False)
class FieldSample:
    """One realisation of ``X_eps`` on a grid.

    ``sigma2`` is the pointwise variance ``K_eps(0)``.  ``clipped_fraction`` is
    the share of the circulant spectrum (by absolute mass) that was negative
    and set to zero; any nonzero value is also listed in ``warnings``.
    """

    grid: GridSpec
    values: np.ndarray
    sigma2: float
    spec: CovarianceSpec
    seed: int
    clipped_fraction: float = 0.0
    warnings: tuple = field(default=())

    def __post_init__(self):
        if self.values.shape != self.grid.shape:
            raise ValueError(f"values shape {self.values.shape} does not match grid {self.grid.shape}")
        self.values.setflags(write=False)

    @property
    def eps(self) -> float:
        return self.spec.cutoff

    def values_at(self, points) -> np.ndarray:
        """Field at arbitrary points by (bi)linear interpolation of cell centres.

        ``points`` has shape ``(..., d)`` (or ``(...)`` in 1d).  Raises
        :class:`FieldRangeError` outside the hull of cell centres.
        """
        return interpolate_grid(self.values, self.grid, points)


def interpolate_grid(values: np.ndarray, grid: GridSpec, points) -> np.ndarray:
    pts = np.asarray(points, dtype=float)
    d = grid.dimension
    if d == 1:
        if pts.ndim and pts.shape[-1:] == (1,):
            pts = pts[..., 0]
        u = (pts - grid.origin[0]) / grid.cell - 0.5
        _check_range(u, grid)
        i = np.clip(np.floor(u).astype(np.intp), 0, grid.n - 2)
        w = u - i
        return values[i] * (1.0 - w) + values[i + 1] * w
    if pts.shape[-1] != 2:
        raise ValueError("2d grid needs points with a trailing axis of length 2")
    u = (pts[..., 0] - grid.origin[0]) / grid.cell - 0.5
    v = (pts[..., 1] - grid.origin[1]) / grid.cell - 0.5
    _check_range(u, grid)
    _check_range(v, grid)
    i = np.clip(np.floor(u).astype(np.intp), 0, grid.n - 2)
    j = np.clip(np.floor(v).astype(np.intp), 0, grid.n - 2)
    a = u - i
    b = v - j
    return (
        values[i, j] * (1.0 - a) * (1.0 - b)
        + values[i + 1, j] * a * (1.0 - b)
        + values[i, j + 1] * (1.0 - a) * b
        + values[i + 1, j + 1] * a * b
    )


def _check_range(u: np.ndarray, grid: GridSpec) -> None:
    if u.size and (np.min(u) < -1e-9 or np.max(u) > grid.n - 1 + 1e-9):
        lo = grid.origin[0] + 0.5 * grid.cell
        raise FieldRangeError(
            f"point outside the grid field (valid centre range starts at {lo:.6g}, "
            f"width {(grid.n - 1) * grid.cell:.6g}); enlarge the grid"
        )


# ---------------------------------------------------------------- kernels ---

def covariance_mff(r: float, m: float = 1.0) -> float:
    """Massive free field covariance ``G_m(r)`` by adaptive quadrature.

    Returns ``inf`` at ``r = 0``.
    """
    r, m = float(r), float(m)
    if not (math.isfinite(r) and math.isfinite(m)):
        raise ValueError("covariance_mff needs finite inputs")
    if r < 0 or m <= 0:
        raise ValueError("need r >= 0 and m > 0")
    if r == 0:
        return math.inf
    # u = e^v turns du/u into dv
    a, b = 0.5 * m * m, 0.5 * r * r

    def integrand(v):
        if abs(v) > 700.0:
            return 0.0
        return 0.5 * math.exp(-a * math.exp(v) - b * math.exp(-v))

    peak = 0.5 * math.log(b / a)
    left, _ = integrate.quad(integrand, -math.inf, peak, limit=200, epsabs=1e-15, epsrel=1e-12)
    right, _ = integrate.quad(integrand, peak, math.inf, limit=200, epsabs=1e-15, epsrel=1e-12)
    return left + right


def _truncated_integral(r: np.ndarray, m: float, eps: float) -> np.ndarray:
    """``1/2 int_{eps^2}^inf exp(-m^2 u/2 - r^2/(2u)) du/u`` by composite Gauss-Legendre."""
    a = 0.5 * (m * eps) ** 2
    vmax = max(math.log(60.0 / a), 2.0) if a > 0 else 60.0
    n_panels = int(math.ceil(vmax / _PANEL_WIDTH))
    h = vmax / n_panels
    v = (np.arange(n_panels)[:, None] + 0.5 * (_GL_NODES[None, :] + 1.0)) * h
    v = v.reshape(-1)
    w = np.tile(_GL_WEIGHTS, n_panels) * (0.5 * h)
    base = w * np.exp(-a * np.exp(v))
    decay = np.exp(-v)
    rho = 0.5 * (r / eps) ** 2
    out = np.empty(rho.shape)
    chunk = max(1, 2_000_000 // v.size)
    flat = rho.reshape(-1)
    res = out.reshape(-1)
    for s in range(0, flat.size, chunk):
        block = flat[s:s + chunk, None]
        res[s:s + chunk] = 0.5 * np.exp(-block * decay[None, :]) @ base
    return out


def cutoff_covariance(r, spec: CovarianceSpec):
    """Regularised kernel ``K_eps(r) = int_{eps^2}^inf exp(-m^2u/2 - r^2/(2u)) du/(2u)``.

    Accepts scalars or arrays of distances.  ``K_eps(0) = E1(m^2 eps^2 / 2) / 2``.
    """
    eps = spec.cutoff
    if eps <= 0:
        raise ValueError("cutoff_covariance needs eps > 0; use covariance_mff for the bare kernel")
    arr = np.asarray(r, dtype=float)
    if not np.all(np.isfinite(arr)) or np.any(arr < 0):
        raise ValueError("distances must be finite and >= 0")
    out = np.empty(arr.shape)
    far = arr >= FAR_CUTOFFS * eps
    if far.any():
        out[far] = special.k0(spec.mass * arr[far])
    near = ~far
    if near.any():
        vals, inv = np.unique(arr[near], return_inverse=True)
        out[near] = _truncated_integral(vals, spec.mass, eps)[inv.reshape(-1)]
    if arr.ndim == 0:
        return float(out)
    return out


@lru_cache(maxsize=32)
def _kernel_table(spec: CovarianceSpec):
    rmax = FAR_CUTOFFS * spec.cutoff
    r = np.linspace(0.0, rmax, _TABLE_SIZE)
    k = _truncated_integral(r, spec.mass, spec.cutoff)
    return CubicSpline(r, k, bc_type=((1, 0.0), "not-a-knot"))


def fast_cutoff_covariance(r: np.ndarray, spec: CovarianceSpec) -> np.ndarray:
    """Tabulated ``K_eps`` for large covariance matrices (abs. error below 1e-9).

    Exact (same value as :func:`cutoff_covariance`) at ``r = 0``.
    """
    r = np.asarray(r, dtype=float)
    out = np.empty(r.shape)
    far = r >= FAR_CUTOFFS * spec.cutoff
    out[far] = special.k0(spec.mass * r[far])
    near = ~far
    out[near] = _kernel_table(spec)(r[near])
    out[r == 0] = cutoff_covariance(0.0, spec)
    return out


# ---------------------------------------------------------- grid sampler ---

@lru_cache(maxsize=16)
def _embedding(grid: GridSpec, spec: CovarianceSpec):
    """Square-root spectrum of the 2x-padded circulant embedding."""
    n, d = grid.n, grid.dimension
    big = 2 * n
    lag = np.minimum(np.arange(big), big - np.arange(big)) * grid.cell
    if d == 1:
        dist = lag
    else:
        dist = np.hypot(lag[:, None], lag[None, :])
    row = fast_cutoff_covariance(dist, spec)
    lam = sfft.fftn(row).real
    neg = lam < 0
    clipped = float(-lam[neg].sum() / np.abs(lam).sum()) if neg.any() else 0.0
    lam[neg] = 0.0
    scale = np.sqrt(lam / lam.size)
    scale.setflags(write=False)
    return scale, clipped


def sample_field_grid(grid: GridSpec, spec: CovarianceSpec, seed: int) -> FieldSample:
    """Stationary Gaussian field with covariance ``K_eps`` at the cell centres.

    Circulant embedding on the doubly padded torus.  Negative embedding
    eigenvalues are clipped to zero and reported, not raised.  The same
    ``(grid, spec, seed)`` always gives the same values; samples for different
    ``eps`` on the same grid and seed share their white noise, which couples
    them across cutoffs.
    """
    seed = check_seed(seed)
    if spec.dimension != grid.dimension:
        raise ValueError("grid and covariance dimensions differ")
    eps = spec.cutoff
    if eps <= 0:
        raise ValueError("grid sampling needs eps > 0")
    if eps < grid.cell / 2:
        raise ValueError(f"cutoff {eps} not resolved by cell size {grid.cell} (need eps >= cell/2)")
    scale, clipped = _embedding(grid, spec)
    rng = derive_rng(seed, "grid-field")
    z = rng.standard_normal((2,) + scale.shape)
    y = sfft.fftn(scale * (z[0] + 1j * z[1])).real
    values = np.ascontiguousarray(y[tuple(slice(0, grid.n) for _ in range(grid.dimension))])
    notes = ()
    if clipped > 0:
        notes = (f"circulant embedding: clipped negative eigenvalues carrying {clipped:.3e} of the spectrum",)
    return FieldSample(grid, values, cutoff_covariance(0.0, spec), spec, seed, clipped, notes)


# ---------------------------------------------------------- exact sampler ---

def _as_points(points, dimension: int) -> np.ndarray:
    pts = np.asarray(points, dtype=float)
    if dimension == 1:
        pts = pts.reshape(-1, 1)
    else:
        pts = pts.reshape(-1, 2)
    if not np.all(np.isfinite(pts)):
        raise ValueError("points must be finite")
    return pts


def _pairwise(a: np.ndarray, b: np.ndarray) -> np.ndarray:
    diff = a[:, None, :] - b[None, :, :]
    return np.sqrt(np.sum(diff * diff, axis=-1))


def _cholesky_with_jitter(cov: np.ndarray, sigma2: float):
    for jitter in _JITTERS:
        try:
            return np.linalg.cholesky(cov + (jitter * sigma2) * np.eye(len(cov))), jitter
        except np.linalg.LinAlgError:
            continue
    raise np.linalg.LinAlgError(
        f"covariance matrix not positive semi-definite even with jitter {_JITTERS[-1]:g} * sigma^2"
    )


def sample_field_at_points(points, spec: CovarianceSpec, seed: int) -> np.ndarray:
    """Exact draw of ``X_eps`` at up to 8192 points.

    Coincident points are merged before factorising, so they receive
    identical values.  A small diagonal jitter (at most ``1e-6 sigma^2``) is
    added only if the Cholesky factorisation fails.
    """
    seed = check_seed(seed)
    if spec.cutoff <= 0:
        raise ValueError("point sampling needs eps > 0")
    pts = _as_points(points, spec.dimension)
    if len(pts) > MAX_EXACT_POINTS:
        raise ValueError(f"at most {MAX_EXACT_POINTS} points, got {len(pts)}")
    uniq, inv = np.unique(pts, axis=0, return_inverse=True)
    sigma2 = cutoff_covariance(0.0, spec)
    cov = fast_cutoff_covariance(_pairwise(uniq, uniq), spec)
    chol, _ = _cholesky_with_jitter(cov, sigma2)
    rng = derive_rng(seed, "point-field")
    vals = chol @ rng.standard_normal(len(uniq))
    out = vals[inv.reshape(-1)]
    return out.reshape(np.asarray(points).shape[: np.asarray(points).ndim - (spec.dimension == 2)])


@dataclass(frozen=True)
class PointField:
    """Field access backed by the exact point sampler.

    Every call to :meth:`values_at` is an independent exact draw keyed by
    ``seed``.  With ``condition_on`` set, the draw is instead taken from the
    law of the field given the grid sample's values at the cell centres near
    the requested points, which couples the two backends on one realisation.
    """

    spec: CovarianceSpec
    seed: int
    condition_on: FieldSample | None = None

    @property
    def sigma2(self) -> float:
        return cutoff_covariance(0.0, self.spec)

    @property
    def eps(self) -> float:
        return self.spec.cutoff

    def values_at(self, points) -> np.ndarray:
        if self.condition_on is None:
            return sample_field_at_points(points, self.spec, self.seed)
        return _conditional_draw(points, self.condition_on, self.seed)


def _conditional_draw(points, sample: FieldSample, seed: int) -> np.ndarray:
    grid, spec = sample.grid, sample.spec
    shape = np.asarray(points).shape
    pts = _as_points(points, grid.dimension)
    # conditioning set: the interpolation stencil of every point plus one ring
    u = (pts - np.asarray(grid.origin)) / grid.cell - 0.5
    base = np.floor(u).astype(np.intp)
    offsets = np.arange(-1, 3)
    if grid.dimension == 1:
        idx = (base[:, 0, None] + offsets[None, :]).reshape(-1)
        idx = np.unique(idx[(idx >= 0) & (idx < grid.n)])
        nodes = grid.axis_centers(0)[idx][:, None]
        node_vals = sample.values[idx]
    else:
        oi, oj = np.meshgrid(offsets, offsets, indexing="ij")
        ii = (base[:, 0, None] + oi.reshape(1, -1)).reshape(-1)
        jj = (base[:, 1, None] + oj.reshape(1, -1)).reshape(-1)
        ok = (ii >= 0) & (ii < grid.n) & (jj >= 0) & (jj < grid.n)
        flat = np.unique(ii[ok] * grid.n + jj[ok])
        ii, jj = np.divmod(flat, grid.n)
        nodes = np.stack([grid.axis_centers(0)[ii], grid.axis_centers(1)[jj]], axis=1)
        node_vals = sample.values[ii, jj]
    uniq, inv = np.unique(pts, axis=0, return_inverse=True)
    if len(uniq) + len(nodes) > 4 * MAX_EXACT_POINTS:
        raise ValueError("conditioning problem too large")
    sigma2 = sample.sigma2
    c_nn = fast_cutoff_covariance(_pairwise(nodes, nodes), spec)
    c_pn = fast_cutoff_covariance(_pairwise(uniq, nodes), spec)
    c_pp = fast_cutoff_covariance(_pairwise(uniq, uniq), spec)
    l_nn, _ = _cholesky_with_jitter(c_nn, sigma2)
    a = np.linalg.solve(l_nn, c_pn.T)  # L^{-1} C_np
    mean = a.T @ np.linalg.solve(l_nn, node_vals)
    cond = c_pp - a.T @ a
    cond = 0.5 * (cond + cond.T)
    try:
        chol, _ = _cholesky_with_jitter(cond, sigma2)
    except np.linalg.LinAlgError:
        w, v = np.linalg.eigh(cond)
        chol = v * np.sqrt(np.clip(w, 0.0, None))
    rng = derive_rng(seed, "conditional-field")
    vals = mean + chol @ rng.standard_normal(len(uniq))
    out = vals[inv.reshape(-1)]
    return out.reshape(shape[: len(shape) - (grid.dimension == 2)])


def grid_for_box(center, half_width: float, eps: float, dimension: int = 2, max_cell_ratio: float = 0.5) -> GridSpec:
    """Smallest power-of-two grid covering the box with cell <= ``max_cell_ratio * eps``."""
    n = 2
    while 2.0 * half_width / n > max_cell_ratio * eps:
        n *= 2
    center = np.broadcast_to(np.asarray(center, dtype=float), (dimension,))
    return GridSpec.centered(center, half_width, n)


def field_access_eps(field_access) -> float:
    eps = getattr(field_access, "eps", None)
    if eps is None:
        raise TypeError(f"not a field access object: {field_access!r}")
    return float(eps)


def warn_clipping(sample: FieldSample, threshold: float = 1e-6) -> None:
    if sample.clipped_fraction > threshold:
        warnings.warn(sample.warnings[0], RuntimeWarning, stacklevel=2)


__all__: Sequence[str] = [
    "CovarianceSpec",
    "GridSpec",
    "FieldSample",
    "FieldRangeError",
    "PointField",
    "covariance_mff",
    "cutoff_covariance",
    "fast_cutoff_covariance",
    "sample_field_grid",
    "sample_field_at_points",
    "interpolate_grid",
    "grid_for_box",
]
