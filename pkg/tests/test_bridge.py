import math

import numpy as np
import pytest
from scipy import integrate, special
from scipy.stats import kstest, ks_2samp

from liouville._rng import derive_rng, derive_seed
from liouville.bridge import (DivergenceUndecided, TransformConfig, box_transform, bridge_clock, bridge_clocks,
                              classify_divergence, couple_paths, couple_paths_batch, integral_transform,
                              occupation_kernel_integral, rn_weight, rn_weight_values, sample_bridge, sample_bridges,
                              small_time_tail, spectral_dimension_fit, time_nodes, transform_samples)
from liouville.field import CovarianceSpec, PointField, grid_for_box, sample_field_grid
from liouville.lbm2d import WalkPath, occupation_transform
from conftest import sem

SPEC = CovarianceSpec(2, 1.0, 0.3)


def transform_quad(alpha, lam, d):
    f = lambda t: t ** alpha * math.exp(-lam * t - d * d / (2 * t)) / (2 * math.pi * t)
    pts = [1e-3, 0.1, 1.0, 10.0]
    v, _ = integrate.quad(f, 0, 200 / lam, points=pts, limit=400, epsabs=0, epsrel=1e-11)
    return v


class TestBridgePaths:
    def test_endpoints_pinned(self):
        x, y = (0.1, -0.4), (1.3, 2.0)
        for s in range(20):
            b = sample_bridge(x, y, 0.8, 16, s)
            assert tuple(b.positions[0]) == x and tuple(b.positions[-1]) == y
        arr = sample_bridges(np.array(x), np.array(y), 0.8, 16, 50, np.random.default_rng(0))
        assert np.all(arr[:, 0] == x) and np.all(arr[:, -1] == y)

    def test_midpoint_marginal(self):
        t = 2.0
        arr = sample_bridges(np.zeros(2), np.array([1.0, 0.0]), t, 16, 10_000, np.random.default_rng(1))
        mid = arr[:, 8]
        for c, mean in enumerate((0.5, 0.0)):
            dev = (mid[:, c] - mean) ** 2
            assert abs(dev.mean() - t / 4) <= 3 * sem(dev)

    def test_time_reversal(self):
        x, y, t = np.array([0.0, 0.0]), np.array([1.0, 0.5]), 1.0
        fwd = sample_bridges(x, y, t, 8, 5000, np.random.default_rng(2))[:, 3, 0]
        rev = sample_bridges(y, x, t, 8, 5000, np.random.default_rng(3))[:, 5, 0]
        assert ks_2samp(fwd, rev).pvalue > 0.01

    def test_validation(self):
        with pytest.raises(ValueError):
            sample_bridge((0, 0), (1, 1), 0.0, 8, 0)
        with pytest.raises(ValueError):
            sample_bridge((0, 0), (1, 1), 1.0, 1, 0)


class TestWeight:
    def test_weight_at_zero(self):
        prefix = WalkPath(np.array([0.0, 1e-9]), np.array([[0.3, 0.1], [0.3, 0.1]]), (0.3, 0.1), 0)
        assert float(rn_weight_values((0.3, 0.1), (0.3, 0.1), (2.0, -1.0), 0.0, 1.5)) == 1.0
        assert rn_weight(prefix, (2.0, -1.0), 1.5) == pytest.approx(1.0, rel=1e-8)

    def test_s_at_or_beyond_t_rejected(self):
        prefix = WalkPath(np.array([0.0, 1.0]), np.zeros((2, 2)), (0, 0), 0)
        with pytest.raises(ValueError):
            rn_weight(prefix, (1.0, 0.0), 1.0)

    def test_unit_mean(self):
        rng = np.random.default_rng(5)
        x, y, t, s = np.zeros(2), np.array([0.7, -0.2]), 1.0, 0.5
        bs = x + rng.standard_normal((20_000, 2)) * math.sqrt(s)
        w = rn_weight_values(x, bs, y, s, t)
        assert abs(w.mean() - 1.0) <= 3 * sem(w)

    @pytest.mark.parametrize("frac", [0.25, 0.5, 0.75])
    def test_bridge_vs_weighted_bm(self, frac):
        rng = np.random.default_rng(6)
        x, y, t = np.zeros(2), np.array([1.0, 0.5]), 1.0
        s = frac * t
        box = ((0.2, 0.8), (-0.1, 0.6))
        inside = lambda p: ((p[:, 0] >= box[0][0]) & (p[:, 0] <= box[0][1]) & (p[:, 1] >= box[1][0])
                            & (p[:, 1] <= box[1][1])).astype(float)
        k = int(round(frac * 8))
        lhs = inside(sample_bridges(x, y, t, 8, 20_000, rng)[:, k])
        bs = x + rng.standard_normal((20_000, 2)) * math.sqrt(s)
        rhs = inside(bs) * rn_weight_values(x, bs, y, s, t)
        assert abs(lhs.mean() - rhs.mean()) <= 3 * math.hypot(sem(lhs), sem(rhs))


class TestBridgeClock:
    def test_gamma_zero(self):
        b = sample_bridge((0, 0), (1, 0), 1.0, 16, 0)
        assert bridge_clock(b, 0.0, None, 0.3) == 0.3
        assert bridge_clock(b, 0.0, None) == 1.0

    def test_monotone_in_s(self):
        f = sample_field_grid(grid_for_box((0.0, 0.0), 3.0, 0.3), SPEC, 1)
        b = sample_bridge((0, 0), (1, 0), 1.0, 64, 0)
        vals = [bridge_clock(b, 1.0, f, s) for s in np.linspace(0, 1, 9)]
        assert vals[0] == 0.0 and np.all(np.diff(vals) > 0)

    def test_law_symmetry(self):
        x, y, t, n = (0.0, 0.0), (0.8, 0.0), 0.25, 1000
        fwd, rev = [], []
        for r in range(n):
            fwd.append(bridge_clock(sample_bridge(x, y, t, 16, r), 1.0, PointField(SPEC, derive_seed(1, r))))
            rev.append(bridge_clock(sample_bridge(y, x, t, 16, n + r), 1.0, PointField(SPEC, derive_seed(2, r))))
        assert ks_2samp(fwd, rev).pvalue > 0.01

    def test_endpoint_continuity(self):
        f = sample_field_grid(grid_for_box((0.0, 0.0), 4.0, 0.3), SPEC, 4)
        x, y, t = np.zeros(2), np.array([0.5, 0.0]), 1.0

        def mean_min(yy):
            rng = np.random.default_rng(9)
            return np.minimum(bridge_clocks(x, np.tile(yy, (2000, 1)), t, 64, 1.0, f, rng), 1.0).mean()

        base = mean_min(y)
        gaps = [abs(mean_min(y + np.array([2.0 ** -k, 0.0])) - base) for k in range(1, 7)]
        assert all(a > b for a, b in zip(gaps, gaps[1:]))
        assert gaps[-1] < 0.05 * gaps[0]


class TestTransformGammaZero:
    @pytest.mark.parametrize("alpha,lam", [(0.5, 1.0), (1.0, 1.0), (2.0, 0.5), (1.0, 4.0)])
    def test_diagonal_closed_form(self, alpha, lam):
        est = integral_transform((0, 0), (0, 0), 0.0, alpha, lam, TransformConfig(n_bridges=200))
        exact = math.gamma(alpha) * lam ** -alpha / (2 * math.pi)
        assert exact == pytest.approx(transform_quad(alpha, lam, 0.0), rel=1e-8)
        assert abs(est.value - exact) <= max(3 * est.stderr, 1e-3 * exact)
        assert not est.divergent and est.mode == "none"

    @pytest.mark.parametrize("alpha,lam", [(0.5, 0.5), (1.0, 2.0), (2.0, 4.0)])
    def test_off_diagonal_vs_quadrature(self, alpha, lam):
        est = integral_transform((0, 0), (1.0, 0.0), 0.0, alpha, lam, TransformConfig(n_bridges=200))
        exact = transform_quad(alpha, lam, 1.0)
        assert abs(est.value - exact) <= max(3 * est.stderr, 1e-3 * exact)

    def test_divergence_and_log_growth(self):
        est = integral_transform((0, 0), (0, 0), 0.0, 0.0, 1.0, TransformConfig(n_bridges=200, t_low=0.1, refinements=3))
        assert est.divergent
        assert est.log_growth == pytest.approx(1 / (2 * math.pi), rel=0.02)
        assert len(est.refinement) == 4

    def test_small_time_tail_closed_form(self):
        c, t_low = 1.7, 0.01
        v, _ = integrate.quad(lambda t: (c * t) ** 0.5 * math.exp(-c * t) / (2 * math.pi * t), 0, t_low)
        assert small_time_tail(0.5, 1.0, c, 0.0, t_low) == pytest.approx(v, rel=1e-8)
        v2, _ = integrate.quad(lambda t: c * t * math.exp(-c * t - 0.01 / (2 * t)) / (2 * math.pi * t), 0, t_low)
        assert small_time_tail(1.0, 1.0, c, 0.01, t_low) == pytest.approx(v2, rel=1e-6)
        assert small_time_tail(0.0, 1.0, c, 0.0, t_low) == math.inf

    def test_time_nodes_aligned(self):
        a, _, pd = time_nodes(1e-3, 10.0, 20)
        b, _, _ = time_nodes(1e-4, 10.0, 20, per_decade=pd)
        assert np.all(np.isin(np.round(np.log10(a) * pd), np.round(np.log10(b) * pd)))


class TestDivergenceClassifier:
    def test_convergent(self):
        table = [(1e-1, 1.0, 0.01), (1e-2, 1.1, 0.01), (1e-3, 1.101, 0.01)]
        assert classify_divergence(table)[0] is False

    def test_log_growth(self):
        table = [(10.0 ** -k, 0.3 * k * math.log(10), 1e-3) for k in range(1, 5)]
        div, slope, r2 = classify_divergence(table)
        assert div and slope == pytest.approx(0.3) and r2 == pytest.approx(1.0)

    def test_undecided(self):
        table = [(1e-1, 1.0, 1e-4), (1e-2, 1.01, 1e-4), (1e-3, 2.0, 1e-4)]
        with pytest.raises(DivergenceUndecided) as exc:
            classify_divergence(table)
        assert exc.value.table == table


@pytest.fixture(scope="module")
def quenched():
    return sample_field_grid(grid_for_box((0.0, 0.0), 38.4, 0.3), SPEC, 77)


class TestTransformField:
    def test_lambda_monotone_with_common_numbers(self, quenched):
        cfg = TransformConfig(n_bridges=200, n_t_points=30, seed=3)
        fit = spectral_dimension_fit((0, 0), 1.0, 1.0, [1, 2, 4, 8, 16], cfg, quenched)
        vals = [e.value for e in fit.estimates]
        assert all(a > b for a, b in zip(vals, vals[1:]))
        with pytest.raises(ValueError):
            spectral_dimension_fit((0, 0), 1.0, 1.0, [1, 2, 3, 4], cfg, quenched)
        with pytest.raises(ValueError):
            spectral_dimension_fit((0, 0), 1.0, 0.0, [1, 2, 4, 16], cfg, quenched)

    def test_diagonal_limit_is_cauchy(self, quenched):
        cfg = TransformConfig(n_bridges=400, n_t_points=30, seed=5)
        diag = integral_transform((0, 0), (0, 0), 1.0, 1.0, 2.0, cfg, quenched)
        vals = [integral_transform((0, 0), (2.0 ** -k, 0.0), 1.0, 1.0, 2.0, cfg, quenched) for k in (2, 4, 6)]
        gaps = [abs(v.value - diag.value) for v in vals]
        assert gaps[0] > gaps[1] > gaps[2]
        assert gaps[2] <= 3 * math.hypot(vals[2].stderr, diag.stderr)
        assert diag.mode == "quenched"

    def test_alpha_zero_diverges_with_field(self, quenched):
        cfg = TransformConfig(n_bridges=200, n_t_points=20, seed=1, t_low=0.1, refinements=3)
        est = integral_transform((0, 0), (0, 0), 1.0, 0.0, 1.0, cfg, quenched)
        assert est.divergent and est.log_growth > 0

    def test_batches_must_divide(self, quenched):
        with pytest.raises(ValueError, match="multiple"):
            transform_samples((0, 0), (0, 0), 1.0, quenched, TransformConfig(n_bridges=210), t_high=1.0)

    def test_box_transform_gamma_zero(self):
        box = ((0.25, 0.75), (-0.25, 0.25))
        inner = lambda r: transform_quad(1.0, 1.0, r)
        exact, _ = integrate.dblquad(lambda b, a: inner(math.hypot(a, b)), 0.25, 0.75, -0.25, 0.25, epsrel=1e-8)
        v, se = box_transform((0, 0), box, 0.0, 1.0, 1.0, TransformConfig(n_bridges=2000, seed=2), None)
        assert abs(v - exact) <= 3 * se
        d, dse = occupation_transform((0, 0), box, 0.0, 1.0, 1.0, None, 1000, 3, dt=4e-3)
        assert abs(d - exact) <= 3 * dse


class TestOccupationKernel:
    def test_matches_quadrature(self):
        rng = np.random.default_rng(0)
        for _ in range(20):
            y, z = rng.uniform(-1, 1, 2), rng.uniform(-1, 1, 2)
            t = rng.uniform(0.05, 2.0)
            d2 = float(np.sum((y - z) ** 2))
            q, _ = integrate.quad(lambda s: math.exp(-d2 / (2 * s)) / (2 * math.pi * s), 0, t / 2,
                                  epsabs=1e-13, epsrel=1e-12, limit=200)
            assert occupation_kernel_integral(y, z, t) == pytest.approx(q, abs=1e-8)

    def test_diagonal_and_far_branch(self):
        assert occupation_kernel_integral((0, 0), (0, 0), 1.0) == math.inf
        for d in np.linspace(1.0, 4.0, 25):
            assert occupation_kernel_integral((0, 0), (d, 0), 1.0) <= math.exp(-d * d)

    def test_log_branch_slope(self):
        vals = [occupation_kernel_integral((0, 0), (2.0 ** -n, 0), 1.0) for n in range(6, 12)]
        np.testing.assert_allclose(np.diff(vals), 2 * math.log(2) / (2 * math.pi), rtol=1e-3)


class TestCoupling:
    def test_same_start(self):
        c = couple_paths((0.3, 0.3), (0.3, 0.3), 1.0, 64, 0)
        assert c.tau1 == c.tau2 == c.tau == 0.0
        assert np.array_equal(c.path_bar, c.path_y)

    def test_identical_after_tau(self):
        for seed in range(20):
            c = couple_paths((0.0, 0.0), (0.5, -0.5), 8.0, 2048, seed)
            if math.isfinite(c.tau):
                after = c.times > c.tau
                assert np.array_equal(c.path_bar[after], c.path_y[after])
                before = c.times <= min(c.tau1, c.tau2)
                assert np.array_equal(c.path_bar[before], c.path_y0[before])

    def test_no_meeting_is_infinite(self):
        c = couple_paths((0.0, 0.0), (50.0, 50.0), 0.01, 8, 0)
        assert c.tau == math.inf and np.array_equal(c.path_bar, c.path_y0)

    def test_median_first_passage_and_gap_trend(self):
        rng = derive_rng(4, "coupling-test")
        _, _, _, _, t1, _ = couple_paths_batch((0, 0), (1, 1), 8.0, 2048, 4000, rng)
        oracle = 0.5 / special.ndtri(0.75) ** 2
        assert np.median(t1) == pytest.approx(oracle, abs=0.1)
        probs = []
        for gap in (1.0, 0.5, 0.25):
            _, _, _, _, a, b = couple_paths_batch((0, 0), (gap, gap), 1.0, 512, 2000, rng)
            probs.append(np.mean(np.maximum(a, b) > 1.0))
        assert probs[0] > probs[1] > probs[2]

    def test_spliced_increments_are_brownian(self):
        rng = derive_rng(5, "coupling-test")
        times, _, _, bar, _, _ = couple_paths_batch((0, 0), (1, 1), 4.0, 1024, 2000, rng)
        inc = bar[:, 256] - bar[:, 0]
        assert kstest(inc[:, 0], "norm").pvalue > 0.01
        assert kstest(inc[:, 1], "norm").pvalue > 0.01
