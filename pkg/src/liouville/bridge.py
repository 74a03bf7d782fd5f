"""Brownian bridge decomposition of Liouville heat-kernel transforms.

For ``G(t) = t^alpha exp(-lambda t)`` the transform of the Liouville heat
kernel is

    int_0^inf G(t) p_t(x, y) dt
        = int_0^inf E[G(F(x, y, t, t))] exp(-|y - x|^2 / 2t) / (2 pi t) dt,

where ``F(x, y, t, .)`` is the chaos clock along a Brownian bridge from ``x``
to ``y`` with lifetime ``t``.  The right side is estimated by a log-spaced
quadrature in ``t`` with Monte Carlo over bridges (and fields) at each node.
"""
from __future__ import annotations

import math
from dataclasses import dataclass, field as dc_field

import numpy as np
from scipy import integrate, special as sps

from ._rng import check_seed, derive_rng, derive_seed, parallel_map
from .chaos import ols_slope
from .field import CovarianceSpec, grid_for_box, sample_field_grid
from .lbm2d import WalkPath, chaos_weights, check_resolution, _check_gamma
from .special import exp1

MAX_CHUNK_POINTS = 2_000_000
QUENCHED_BATCHES = 20
MIN_LAMBDA_RATIO = 16.0


class DivergenceUndecided(RuntimeError):
    """The t_low refinement showed neither convergence nor clean log growth."""

    def __init__(self, message, table):
        super().__init__(message)
        self.table = table


# ------------------------------------------------------------- bridges ---

@dataclass(frozen=True, eq=False)
class BridgePath:
    x: tuple
    y: tuple
    lifetime: float
    times: np.ndarray
    positions: np.ndarray
    seed: int


def _pin(x, y, t, times, walk):
    """``x + W_s + (s/t)(y - x - W_t)``: a bridge from ``x`` to ``y`` built from ``W``."""
    frac = (times / t)[..., :, None]
    return x + walk + frac * ((y - x) - walk[..., -1:, :])


def sample_bridge(x, y, t: float, n_steps: int, seed: int) -> BridgePath:
    """Planar Brownian bridge on ``n_steps`` equal steps of ``[0, t]``.

    The bridge is obtained by pinning a free Brownian path, which has exactly
    the bridge law; the end points are set exactly.
    """
    seed = check_seed(seed)
    if t <= 0:
        raise ValueError("lifetime t must be positive")
    if n_steps < 2:
        raise ValueError("n_steps must be >= 2")
    x = np.asarray(x, dtype=float).reshape(2)
    y = np.asarray(y, dtype=float).reshape(2)
    times = np.linspace(0.0, t, n_steps + 1)
    rng = derive_rng(seed, "bridge-path")
    walk = np.zeros((n_steps + 1, 2))
    walk[1:] = np.cumsum(rng.standard_normal((n_steps, 2)) * math.sqrt(t / n_steps), axis=0)
    pos = _pin(x, y, t, times, walk)
    pos[0], pos[-1] = x, y
    return BridgePath(tuple(x), tuple(y), float(t), times, pos, seed)


def sample_bridges(x, y, t: float, n_steps: int, n: int, rng: np.random.Generator) -> np.ndarray:
    """``n`` bridges as an array ``(n, n_steps + 1, 2)`` with exact end points."""
    x = np.asarray(x, dtype=float)
    y = np.asarray(y, dtype=float)
    times = np.linspace(0.0, t, n_steps + 1)
    walk = np.zeros((n, n_steps + 1, 2))
    walk[:, 1:] = np.cumsum(rng.standard_normal((n, n_steps, 2)) * math.sqrt(t / n_steps), axis=1)
    yb = y[:, None, :] if y.ndim == 2 else y
    pos = _pin(x, yb, t, times, walk)
    pos[:, 0] = x
    pos[:, -1] = y
    return pos


def rn_weight_values(x, b_s, y, s, t):
    """Vectorised bridge density ratio ``p_{t-s}(B_s, y) / p_t(x, y)`` in the plane."""
    s = np.asarray(s, dtype=float)
    if np.any(s < 0) or np.any(s >= t):
        raise ValueError("need 0 <= s < t")
    x = np.asarray(x, dtype=float)
    y = np.asarray(y, dtype=float)
    b_s = np.asarray(b_s, dtype=float)
    d0 = np.sum((y - x) ** 2, axis=-1)
    d1 = np.sum((b_s - y) ** 2, axis=-1)
    return t / (t - s) * np.exp(d0 / (2.0 * t) - d1 / (2.0 * (t - s)))


def rn_weight(bm_prefix: WalkPath, y, t: float) -> float:
    """Absolute-continuity weight of the bridge to ``y`` (lifetime ``t``) on ``[0, s]``.

    ``s`` is the last time of the Brownian prefix and ``x`` its start.
    """
    s = float(bm_prefix.times[-1])
    if s >= t:
        raise ValueError(f"prefix end s={s} must be below the lifetime t={t}")
    return float(rn_weight_values(bm_prefix.positions[0], bm_prefix.positions[-1], y, s, t))


def bridge_clock(bridge: BridgePath, gamma: float, field, s: float | None = None) -> float:
    """``F(x, y, t, s)``: left-endpoint Riemann sum of the chaos weight over ``[0, s]``."""
    gamma = _check_gamma(gamma)
    s = bridge.lifetime if s is None else float(s)
    if not 0 <= s <= bridge.lifetime * (1 + 1e-12):
        raise ValueError("s must lie in [0, t]")
    if gamma == 0:
        return s
    dt = np.diff(bridge.times)
    check_resolution(field, float(dt.max()))
    w = chaos_weights(bridge.positions[:-1], gamma, field)
    cum = np.concatenate([[0.0], np.cumsum(w * dt)])
    return float(np.interp(s, bridge.times, cum))


# --------------------------------------------------- integral transform ---

@dataclass(frozen=True)
class TransformConfig:
    """Numerical settings of the transform estimator.

    ``t_high=None`` means ``50 / lambda`` (smallest lambda for a fit).  Nodes
    are log-spaced with a whole number of nodes per decade so that refining
    ``t_low`` reuses the existing nodes and their random streams.
    """

    n_bridges: int = 2000
    n_steps: int = 32
    t_low: float = 1e-4
    t_high: float | None = None
    n_t_points: int = 40
    seed: int = 0
    n_fields: int = 20
    refinements: int = 2
    workers: int = 1

    def __post_init__(self):
        if self.n_bridges < 2 or self.n_steps < 2 or self.n_t_points < 4:
            raise ValueError("need n_bridges >= 2, n_steps >= 2, n_t_points >= 4")
        if self.t_low <= 0 or (self.t_high is not None and self.t_high <= self.t_low):
            raise ValueError("need 0 < t_low < t_high")
        if self.n_fields < 1 or self.refinements < 1:
            raise ValueError("n_fields and refinements must be positive")
        check_seed(self.seed)


@dataclass(frozen=True)
class TransformEstimate:
    gamma: float
    alpha: float
    lam: float
    x: tuple
    y: tuple
    value: float
    stderr: float
    n_bridges: int
    t_low: float
    t_high: float
    divergent: bool
    seed: int
    log_growth: float | None = None
    refinement: tuple = dc_field(default=())
    mode: str = "annealed"

    def as_row(self) -> dict:
        return {
            "gamma": self.gamma,
            "alpha": self.alpha,
            "lambda": self.lam,
            "dx": float(np.hypot(self.y[0] - self.x[0], self.y[1] - self.x[1])),
            "value": self.value,
            "stderr": self.stderr,
            "n_bridges": self.n_bridges,
            "t_low": self.t_low,
            "t_high": self.t_high,
            "divergent": self.divergent,
            "seed": self.seed,
        }


def nodes_per_decade(t_low: float, t_high: float, n_points: int) -> int:
    return max(1, int(math.ceil((n_points - 1) / math.log10(t_high / t_low))))


def time_nodes(t_low: float, t_high: float, n_points: int, per_decade: int | None = None):
    """Aligned log grid: ``t_j = 10^(j / per_decade)`` covering ``[t_low, t_high]``.

    Returns ``(nodes, j_indices, per_decade)``.
    """
    if per_decade is None:
        per_decade = nodes_per_decade(t_low, t_high, n_points)
    j0 = int(math.floor(math.log10(t_low) * per_decade + 1e-9))
    j1 = int(math.ceil(math.log10(t_high) * per_decade - 1e-9))
    j = np.arange(j0, j1 + 1)
    return 10.0 ** (j / per_decade), j, per_decade


def steps_for(t: float, n_steps: int, eps: float) -> int:
    """Steps per bridge: at least ``n_steps`` and enough for ``eps >= 2 sqrt(dt)``."""
    if eps <= 0:
        return n_steps
    return max(n_steps, int(math.ceil(4.0 * t / (eps * eps) * (1 + 1e-12))))


def field_box(x, y, t_high: float) -> tuple:
    """Centre and half width of a square holding bridges up to lifetime ``t_high``."""
    x = np.asarray(x, dtype=float)
    y = np.atleast_2d(np.asarray(y, dtype=float))
    pts = np.vstack([x[None, :], y])
    lo, hi = pts.min(axis=0), pts.max(axis=0)
    center = 0.5 * (lo + hi)
    # sup of a bridge coordinate exceeds a with probability <= 2 exp(-2 a^2 / t)
    half = 0.5 * float(np.max(hi - lo)) + math.sqrt(14.0 * t_high)
    return center, half


def bridge_clocks(x, ys, t: float, n_steps: int, gamma: float, field, rng: np.random.Generator) -> np.ndarray:
    """Clock values ``F(x, y_i, t, t)`` for one bridge per row of ``ys``."""
    ys = np.atleast_2d(np.asarray(ys, dtype=float))
    n = ys.shape[0]
    if gamma == 0:
        return np.full(n, t)
    h = t / n_steps
    check_resolution(field, h)
    x = np.asarray(x, dtype=float)
    out = np.empty(n)
    chunk = max(1, MAX_CHUNK_POINTS // (n_steps + 1))
    for a in range(0, n, chunk):
        b = min(n, a + chunk)
        pos = sample_bridges(x, ys[a:b], t, n_steps, b - a, rng)
        w = chaos_weights(pos[:, :-1], gamma, field)
        out[a:b] = w.sum(axis=1) * h
    return out


@dataclass(frozen=True)
class _Batch:
    x: tuple
    ys: np.ndarray
    gamma: float
    nodes: np.ndarray
    j: np.ndarray
    n_steps: int
    seed: int
    index: int
    per_decade: int
    field_access: object
    spec: CovarianceSpec | None
    box: tuple | None


def _batch_field(batch: _Batch):
    if batch.spec is None:
        return batch.field_access
    center, half = batch.box
    grid = grid_for_box(center, half, batch.spec.cutoff)
    return sample_field_grid(grid, batch.spec, derive_seed(batch.seed, "field", batch.index))


def _run_batch(batch: _Batch):
    """Clock matrix ``(n_nodes, n)`` and the chaos weight at ``x`` for one batch."""
    field = None if batch.gamma == 0 else _batch_field(batch)
    eps = 0.0 if field is None else float(field.eps)
    out = np.empty((batch.nodes.size, batch.ys.shape[0]))
    for k, (t, j) in enumerate(zip(batch.nodes, batch.j)):
        rng = derive_rng(batch.seed, "bridge", batch.per_decade, int(j) + (1 << 20), batch.index)
        out[k] = bridge_clocks(batch.x, batch.ys, float(t), steps_for(float(t), batch.n_steps, eps), batch.gamma, field, rng)
    wx = 1.0 if field is None else float(chaos_weights(np.asarray(batch.x)[None, :], batch.gamma, field)[0])
    return out, wx


def log_g(f, alpha: float, lam: float):
    """``ln(F^alpha e^{-lambda F})`` (``0^0 = 1``)."""
    f = np.asarray(f, dtype=float)
    if alpha == 0:
        return -lam * f
    with np.errstate(divide="ignore"):
        return alpha * np.log(f) - lam * f


def trapezoid_log(values, nodes):
    """Trapezoid rule in ``ln t`` for ``int f(t) dt = int f(t) t d(ln t)`` along the last axis."""
    u = np.log(nodes)
    g = values * nodes
    return np.sum(0.5 * (g[..., 1:] + g[..., :-1]) * np.diff(u), axis=-1)


def small_time_tail(alpha: float, lam: float, c: float, d2: float, t_low: float) -> float:
    """``int_0^t_low (ct)^alpha e^{-lambda c t} e^{-d2/2t} / (2 pi t) dt`` (clock linear below t_low)."""
    if alpha == 0 and d2 == 0:
        return math.inf
    if d2 == 0:
        return lam ** -alpha * math.gamma(alpha) * float(sps.gammainc(alpha, lam * c * t_low)) / (2 * math.pi)
    if d2 / (2 * t_low) > 700:
        return 0.0

    def f(u):  # u = ln t
        t = math.exp(u)
        return (c * t) ** alpha * math.exp(-lam * c * t - d2 / (2 * t)) / (2 * math.pi)

    peak = math.log(min(t_low, d2 / 2.0))
    val, _ = integrate.quad(f, peak - 40.0, math.log(t_low), points=[peak] if peak < math.log(t_low) else None, limit=200)
    return val


class TransformSamples:
    """Clock samples on a shared node grid, reusable across ``(alpha, lambda)``.

    Attributes
    ----------
    nodes : ndarray
        Time nodes (ascending).
    clocks : ndarray
        ``(n_batches, n_nodes, n_per_batch)`` clock values.
    wx : ndarray
        Chaos weight at ``x`` per batch (the local clock speed at ``x``).
    """

    def __init__(self, x, ys, gamma, nodes, j, per_decade, clocks, wx, mode, seed, n_bridges):
        self.x = tuple(np.asarray(x, dtype=float).tolist())
        self.ys = ys
        self.gamma = gamma
        self.nodes = nodes
        self.j = j
        self.per_decade = per_decade
        self.clocks = clocks
        self.wx = wx
        self.mode = mode
        self.seed = seed
        self.n_bridges = n_bridges

    @property
    def d2(self) -> np.ndarray:
        return np.sum((self.ys - np.asarray(self.x)) ** 2, axis=-1)

    def integrands(self, alpha: float, lam: float, start: int = 0, stride: int = 1) -> np.ndarray:
        """``G(F) e^{-d^2/2t} / (2 pi t)`` per batch, node and replicate."""
        nodes = self.nodes[start::stride]
        lg = log_g(self.clocks[:, start::stride, :], alpha, lam)
        d2 = self.d2.reshape(self.clocks.shape[0], 1, -1)
        lg = lg - d2 / (2.0 * nodes[None, :, None])
        return np.exp(lg) / (2.0 * np.pi * nodes[None, :, None])

    def per_replicate(self, alpha: float, lam: float, start: int = 0, stride: int = 1) -> np.ndarray:
        """Quadrature of each replicate's integrand, ``(n_batches, n_per_batch)``."""
        nodes = self.nodes[start::stride]
        vals = np.moveaxis(self.integrands(alpha, lam, start, stride), 1, -1)
        return trapezoid_log(vals, nodes)

    def tail_per_replicate(self, alpha: float, lam: float) -> np.ndarray:
        """Small-time part below ``t_low`` for each replicate, ``(n_batches, n_per_batch)``."""
        t_low = float(self.nodes[0])
        d2 = self.d2.reshape(self.clocks.shape[0], -1)
        out = np.empty_like(d2)
        for b, c in enumerate(self.wx):
            du, inv = np.unique(d2[b], return_inverse=True)
            vals = np.array([small_time_tail(alpha, lam, float(c), float(d), t_low) for d in du])
            out[b] = vals[inv.reshape(-1)]
        return out

    def tails(self, alpha: float, lam: float) -> np.ndarray:
        return self.tail_per_replicate(alpha, lam).mean(axis=1)

    def estimate(self, alpha: float, lam: float, tail: bool = True):
        """``(value, stderr, mc_stderr, quad_err)`` with batch-means errors.

        The quadrature error is gauged by halving the node density on the
        longest odd-length prefix of nodes; the part of that difference
        explained by Monte Carlo noise is discounted.
        """
        per = self.per_replicate(alpha, lam).mean(axis=1)
        if tail:
            per = per + self.tails(alpha, lam)
        m = self.nodes.size - (1 - self.nodes.size % 2)
        sub = TransformSamples(self.x, self.ys, self.gamma, self.nodes[:m], self.j[:m], self.per_decade,
                               self.clocks[:, :m, :], self.wx, self.mode, self.seed, self.n_bridges)
        diff = (sub.per_replicate(alpha, lam) - sub.per_replicate(alpha, lam, 0, 2)).mean(axis=1)
        nb = per.size
        value = float(per.mean())
        se = float(per.std(ddof=1) / math.sqrt(nb)) if nb > 1 else 0.0
        dse = float(diff.std(ddof=1) / math.sqrt(nb)) if nb > 1 else 0.0
        quad = max(0.0, abs(float(diff.mean())) - 2.0 * dse)
        return value, math.sqrt(se * se + quad * quad), se, quad

    def restrict(self, t_low: float) -> "TransformSamples":
        """View keeping only nodes ``>= t_low``."""
        keep = self.nodes >= t_low * (1 - 1e-9)
        return TransformSamples(self.x, self.ys, self.gamma, self.nodes[keep], self.j[keep], self.per_decade,
                                self.clocks[:, keep, :], self.wx, self.mode, self.seed, self.n_bridges)


def _mode_of(field_access):
    if isinstance(field_access, CovarianceSpec):
        return "annealed"
    if field_access is None:
        return "none"
    return "quenched"


def transform_samples(x, ys, gamma: float, field_access, cfg: TransformConfig, t_low=None, t_high=None,
                      per_decade=None) -> TransformSamples:
    """Simulate clocks for every node and replicate.

    ``field_access`` is a :class:`CovarianceSpec` (annealed: a fresh grid field
    per batch of bridges, ``cfg.n_fields`` batches) or a field object with
    ``values_at`` (quenched: every bridge sees the same realisation).  ``ys``
    is one end point or an array with one end point per replicate.
    """
    gamma = _check_gamma(gamma)
    x = np.asarray(x, dtype=float).reshape(2)
    ys = np.asarray(ys, dtype=float)
    if ys.ndim == 1:
        ys = np.broadcast_to(ys.reshape(1, 2), (cfg.n_bridges, 2))
    if ys.shape != (cfg.n_bridges, 2):
        raise ValueError("need one end point or n_bridges end points")
    t_low = cfg.t_low if t_low is None else t_low
    t_high = cfg.t_high if t_high is None else t_high
    if t_high is None:
        raise ValueError("t_high must be set")
    nodes, j, per_decade = time_nodes(t_low, t_high, cfg.n_t_points, per_decade)
    mode = _mode_of(field_access)
    if gamma > 0 and mode == "none":
        raise ValueError("gamma > 0 needs a field")
    nb = cfg.n_fields if mode == "annealed" else QUENCHED_BATCHES
    nb = max(2, min(nb, cfg.n_bridges // 2))
    splits = np.array_split(np.arange(cfg.n_bridges), nb)
    if any(s.size != splits[0].size for s in splits):
        raise ValueError(f"n_bridges={cfg.n_bridges} must be a multiple of the batch count {nb}")
    spec = field_access if mode == "annealed" else None
    box = field_box(x, ys, float(nodes[-1])) if mode == "annealed" else None
    jobs = [
        _Batch(tuple(x), np.ascontiguousarray(ys[idx]), gamma, nodes, j, cfg.n_steps, cfg.seed, b, per_decade,
               None if mode == "annealed" else field_access, spec, box)
        for b, idx in enumerate(splits)
    ]
    results = parallel_map(_run_batch, jobs, cfg.workers)
    clocks = np.stack([r[0] for r in results])
    wx = np.array([r[1] for r in results])
    return TransformSamples(x, np.ascontiguousarray(ys), gamma, nodes, j, per_decade, clocks, wx, mode, cfg.seed, cfg.n_bridges)


def _refinement_table(samples: TransformSamples, alpha, lam, t_lows):
    rows = []
    for tl in t_lows:
        v, se, _, _ = samples.restrict(tl).estimate(alpha, lam, tail=False)
        rows.append((float(tl), v, se))
    return tuple(rows)


def classify_divergence(table, r2_min: float = 0.95):
    """Decide log growth of the value as ``t_low`` shrinks.

    Returns ``(divergent, slope, r2)``; raises :class:`DivergenceUndecided`
    when the table is neither clean log growth nor convergent.
    """
    t_lows = np.array([r[0] for r in table])
    vals = np.array([r[1] for r in table])
    ses = np.array([r[2] for r in table])
    slope, _, r2 = ols_slope(np.log(1.0 / t_lows), vals)
    inc = np.abs(np.diff(vals))
    noise = 3.0 * np.sqrt(ses[1:] ** 2 + ses[:-1] ** 2) + 1e-12 * np.abs(vals[1:])
    if slope > 0 and r2 >= r2_min and inc[-1] >= 0.5 * inc[0] and inc[-1] > noise[-1]:
        return True, slope, r2
    if inc[-1] <= max(0.2 * inc[0], noise[-1]):
        return False, slope, r2
    raise DivergenceUndecided(
        "transform neither converges nor grows like ln(1/t_low): "
        + "; ".join(f"t_low={a:.0e} value={b:.6g}±{c:.2g}" for a, b, c in table),
        table,
    )


def integral_transform(x, y, gamma: float, alpha: float, lam: float, cfg: TransformConfig, field_access=None) -> TransformEstimate:
    """Estimate ``int_{t_low}^{t_high} E[F^alpha e^{-lambda F}] e^{-|y-x|^2/2t} / (2 pi t) dt``.

    For ``alpha > 0`` the part below ``t_low`` is added in closed form with
    the clock frozen at its speed at ``x``.  For ``alpha = 0`` on the diagonal
    the integral diverges; ``t_low`` is then refined ``cfg.refinements`` times
    by a factor 10 and, when the value grows linearly in ``ln(1/t_low)``, the
    estimate is flagged ``divergent`` and reported at the original ``t_low``
    with the fitted growth coefficient.
    """
    if alpha < 0 or lam <= 0:
        raise ValueError("need alpha >= 0 and lambda > 0")
    x = np.asarray(x, dtype=float).reshape(2)
    y = np.asarray(y, dtype=float).reshape(2)
    t_high = cfg.t_high if cfg.t_high is not None else 50.0 / lam
    if t_high <= cfg.t_low:
        raise ValueError("t_high must exceed t_low")
    diagonal = bool(np.all(x == y))
    common = dict(gamma=float(gamma), alpha=float(alpha), lam=float(lam), x=tuple(x.tolist()), y=tuple(y.tolist()),
                  n_bridges=cfg.n_bridges, seed=cfg.seed, mode=_mode_of(field_access))
    if alpha == 0 and diagonal:
        t_lows = cfg.t_low / 10.0 ** np.arange(cfg.refinements + 1)
        pd = nodes_per_decade(cfg.t_low, t_high, cfg.n_t_points)
        samples = transform_samples(x, y, gamma, field_access, cfg, t_low=float(t_lows[-1]), t_high=t_high, per_decade=pd)
        table = _refinement_table(samples, alpha, lam, t_lows)
        divergent, slope, _ = classify_divergence(table)
        v, se = table[0][1], table[0][2]
        return TransformEstimate(value=v, stderr=se, t_low=float(samples.restrict(cfg.t_low).nodes[0]),
                                 t_high=float(samples.nodes[-1]), divergent=divergent,
                                 log_growth=slope if divergent else None, refinement=table, **common)
    samples = transform_samples(x, y, gamma, field_access, cfg, t_high=t_high)
    v, se, _, _ = samples.estimate(alpha, lam, tail=True)
    return TransformEstimate(value=v, stderr=se, t_low=float(samples.nodes[0]), t_high=float(samples.nodes[-1]),
                             divergent=False, **common)


@dataclass(frozen=True)
class SpectralFit:
    d_s: float
    slope: float
    intercept: float
    r2: float
    lambdas: tuple
    estimates: tuple

    def summary(self) -> dict:
        return {
            "d_S": self.d_s,
            "slope": self.slope,
            "intercept": self.intercept,
            "r2": self.r2,
            "per_lambda": [{"lambda": e.lam, "value": e.value, "stderr": e.stderr} for e in self.estimates],
        }


def spectral_dimension_fit(x, gamma: float, alpha: float, lambdas, cfg: TransformConfig, field_access=None) -> SpectralFit:
    """Fit ``ln I_alpha(lambda)`` against ``ln lambda`` with common random numbers.

    All ``lambda`` share one set of clock samples on ``[t_low, 50 / min(lambda)]``
    so each replicate's transform is exactly decreasing in ``lambda``.
    Returns ``d_S = 2 (1 + alpha + slope)``.
    """
    lambdas = np.sort(np.asarray(lambdas, dtype=float))
    if alpha <= 0:
        raise ValueError("the spectral dimension fit needs alpha > 0")
    if lambdas.size < 4 or np.any(lambdas <= 0):
        raise ValueError("need at least 4 positive lambdas")
    if lambdas[-1] / lambdas[0] < MIN_LAMBDA_RATIO * (1 - 1e-9):
        raise ValueError(f"lambdas must span at least a factor {MIN_LAMBDA_RATIO:g}")
    x = np.asarray(x, dtype=float).reshape(2)
    t_high = cfg.t_high if cfg.t_high is not None else 50.0 / lambdas[0]
    samples = transform_samples(x, x, gamma, field_access, cfg, t_high=t_high)
    ests = []
    for lam in lambdas:
        v, se, _, _ = samples.estimate(alpha, float(lam), tail=True)
        if not (math.isfinite(v) and v > 0):
            raise FloatingPointError(f"non-finite or nonpositive transform at lambda={lam}: {v}")
        ests.append(TransformEstimate(float(gamma), float(alpha), float(lam), tuple(x.tolist()), tuple(x.tolist()), v, se,
                                      cfg.n_bridges, float(samples.nodes[0]), float(samples.nodes[-1]), False, cfg.seed,
                                      mode=samples.mode))
    vals = np.array([e.value for e in ests])
    slope, intercept, r2 = ols_slope(np.log(lambdas), np.log(vals))
    return SpectralFit(2.0 * (1.0 + alpha + slope), slope, intercept, r2, tuple(lambdas.tolist()), tuple(ests))


def spectral_dimension_estimate(x, gamma: float, alpha: float, lambdas, cfg: TransformConfig, field_access=None) -> float:
    return spectral_dimension_fit(x, gamma, alpha, lambdas, cfg, field_access).d_s


def box_transform(x, box, gamma: float, alpha: float, lam: float, cfg: TransformConfig, field):
    """Bridge-side estimate of ``int_A M(dy) int G(t) p_t(x, y) dt`` on a fixed field.

    End points are uniform in the box ``A = [[x0, x1], [y0, y1]]`` and each
    replicate is weighted by ``|A| exp(gamma X(y) - gamma^2 sigma^2 / 2)``,
    so that the weighted mean integrates against ``M(dy)``.  Returns
    ``(value, stderr)``.
    """
    (a0, a1), (b0, b1) = box
    rng = derive_rng(cfg.seed, "box-endpoints")
    ys = np.column_stack([rng.uniform(a0, a1, cfg.n_bridges), rng.uniform(b0, b1, cfg.n_bridges)])
    area = (a1 - a0) * (b1 - b0)
    t_high = cfg.t_high if cfg.t_high is not None else 50.0 / lam
    samples = transform_samples(x, ys, gamma, field, cfg, t_high=t_high)
    wy = chaos_weights(ys, gamma, field) * area
    per = samples.per_replicate(alpha, lam) + samples.tail_per_replicate(alpha, lam)
    vals = (per.reshape(-1) * wy)
    return float(vals.mean()), float(vals.std(ddof=1) / math.sqrt(vals.size))


# ---------------------------------------------------- occupation kernel ---

def occupation_kernel_integral(y, z, t: float) -> float:
    """``int_0^{t/2} p_s(y, z) ds = E_1(|y - z|^2 / t) / (2 pi)`` for the planar heat kernel.

    Returns ``inf`` on the diagonal.
    """
    if t <= 0:
        raise ValueError("t must be positive")
    d2 = float(np.sum((np.asarray(y, dtype=float) - np.asarray(z, dtype=float)) ** 2))
    if d2 == 0:
        return math.inf
    return float(exp1(d2 / t)) / (2.0 * math.pi)


# ------------------------------------------------------------ coupling ---

@dataclass(frozen=True, eq=False)
class CoupledPaths:
    y0: tuple
    y: tuple
    times: np.ndarray
    tau1: float
    tau2: float
    tau: float
    path_y0: np.ndarray
    path_y: np.ndarray
    path_bar: np.ndarray


def _first_meeting(diff: np.ndarray, times: np.ndarray, rate: float = 2.0, u=None) -> np.ndarray:
    """First zero of ``diff`` along the last axis.

    A sign change (or an exact zero) marks a meeting, with the time linearly
    interpolated inside the step.  When uniforms ``u`` (same shape as the
    steps) are given, a step without sign change also counts as a meeting
    with the Brownian-bridge crossing probability ``exp(-2 d0 d1 / (rate dt))``
    of a process with variance ``rate`` per unit time; this removes the
    discrete-monitoring delay.
    """
    d0, d1 = diff[..., :-1], diff[..., 1:]
    change = (d0 * d1 < 0) | (d1 == 0)
    if u is not None:
        dt = np.diff(times)
        with np.errstate(over="ignore"):
            p = np.exp(-2.0 * np.maximum(d0 * d1, 0.0) / (rate * dt))
        change |= u < p
    hit = np.concatenate([diff[..., :1] == 0, change], axis=-1)
    any_hit = hit.any(axis=-1)
    k = np.argmax(hit, axis=-1)
    tau = np.full(diff.shape[:-1], np.inf)
    tau[any_hit & (k == 0)] = 0.0
    inner = any_hit & (k > 0)
    if inner.any():
        idx = np.nonzero(inner)
        kk = k[idx]
        a = np.abs(diff[idx + (kk - 1,)])
        b = np.abs(diff[idx + (kk,)])
        frac = np.where(a + b > 0, a / np.where(a + b > 0, a + b, 1.0), 0.0)
        tau[idx] = times[kk - 1] + frac * (times[kk] - times[kk - 1])
    return tau


def splice(p0: np.ndarray, p1: np.ndarray, times: np.ndarray, tau1, tau2) -> np.ndarray:
    """Coordinate ``i`` follows ``p0`` up to ``tau_i`` and ``p1`` afterwards."""
    out = p0.copy()
    for i, ti in enumerate((tau1, tau2)):
        after = times > np.asarray(ti)[..., None]
        out[..., i] = np.where(after, p1[..., i], p0[..., i])
    return out


def couple_paths_batch(y0, y, horizon: float, n_steps: int, n: int, rng: np.random.Generator):
    """``n`` coupled pairs on a shared grid; returns ``(times, p0, p1, bar, tau1, tau2)``."""
    if horizon <= 0:
        raise ValueError("horizon must be positive")
    y0 = np.asarray(y0, dtype=float).reshape(2)
    y = np.asarray(y, dtype=float).reshape(2)
    times = np.linspace(0.0, horizon, n_steps + 1)
    sd = math.sqrt(horizon / n_steps)
    inc = rng.standard_normal((2, n, n_steps, 2)) * sd
    p0 = np.empty((n, n_steps + 1, 2))
    p1 = np.empty((n, n_steps + 1, 2))
    p0[:, 0], p1[:, 0] = y0, y
    p0[:, 1:] = y0 + np.cumsum(inc[0], axis=1)
    p1[:, 1:] = y + np.cumsum(inc[1], axis=1)
    diff = np.moveaxis(p0 - p1, -1, 0)  # (2, n, steps+1)
    u = rng.random((2, n, n_steps))
    tau1 = _first_meeting(diff[0], times, 2.0, u[0])
    tau2 = _first_meeting(diff[1], times, 2.0, u[1])
    bar = splice(p0, p1, times, tau1, tau2)
    return times, p0, p1, bar, tau1, tau2


def couple_paths(y0, y, horizon: float, n_steps: int, seed: int) -> CoupledPaths:
    """Coordinate-wise coupling of Brownian motions from ``y0`` and ``y``.

    Each coordinate of the spliced path follows ``B^{y0}`` until that
    coordinate first meets ``B^y`` and follows ``B^y`` afterwards.  Meeting
    times never reached before ``horizon`` are ``inf``.
    """
    if n_steps < 2:
        raise ValueError("n_steps must be >= 2")
    rng = derive_rng(seed, "coupling")
    times, p0, p1, bar, t1, t2 = couple_paths_batch(y0, y, horizon, n_steps, 1, rng)
    t1, t2 = float(t1[0]), float(t2[0])
    return CoupledPaths(tuple(np.asarray(y0, float).tolist()), tuple(np.asarray(y, float).tolist()), times,
                        t1, t2, max(t1, t2), p0[0], p1[0], bar[0])

