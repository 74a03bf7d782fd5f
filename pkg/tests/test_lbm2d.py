import math

import numpy as np
import pytest
from scipy.stats import kstest

from liouville.field import CovarianceSpec, PointField, grid_for_box, sample_field_grid
from liouville.lbm2d import (Clock, ClockRangeError, UnresolvedCutoff, WalkPath, clock, clock_inverse, lbm_position,
                             lbm_positions, sample_walk)
from liouville._rng import derive_seed
from conftest import sem

SPEC = CovarianceSpec(2, 1.0, 0.3)


@pytest.fixture(scope="module")
def field():
    return sample_field_grid(grid_for_box((0.0, 0.0), 4.0, 0.3), SPEC, 21)


class TestWalk:
    def test_increments(self):
        n, steps, horizon = 10_000, 8, 1.0
        dt = horizon / steps
        inc = np.array([np.diff(sample_walk((0.0, 0.0), horizon, steps, s).positions[:, :], axis=0)[3]
                        for s in range(n)])
        for c in range(2):
            assert abs(inc[:, c].mean()) <= 3 * sem(inc[:, c])
            sq = inc[:, c] ** 2
            assert abs(sq.mean() - dt) <= 3 * sem(sq)
        assert abs(np.corrcoef(inc.T)[0, 1]) < 3 / math.sqrt(n)

    def test_start_and_determinism(self):
        w = sample_walk((1.5, -2.0), 1.0, 16, 9)
        assert tuple(w.positions[0]) == (1.5, -2.0)
        assert np.array_equal(w.positions, sample_walk((1.5, -2.0), 1.0, 16, 9).positions)
        with pytest.raises(ValueError):
            sample_walk((0, 0), 1.0, 1, 0)

    def test_path_validation(self):
        with pytest.raises(ValueError):
            WalkPath(np.array([0.0, 0.5, 0.5]), np.zeros((3, 2)), (0, 0), 0)
        with pytest.raises(ValueError):
            Clock(np.array([0.0, 1.0]), np.array([0.0, 0.0]))


class TestClock:
    def test_gamma_zero_is_identity(self, field):
        w = sample_walk((0.0, 0.0), 1.0, 64, 1)
        c = clock(w, 0.0, field)
        assert np.array_equal(c.values, w.times)

    def test_strict_monotone_and_additive(self, field):
        w = sample_walk((0.0, 0.0), 1.0, 64, 2)
        c = clock(w, 1.0, field)
        assert np.all(np.diff(c.values) > 0)
        assert c.values[20] + c.increment(20, 64) == pytest.approx(c.values[64], rel=1e-14)

    def test_mean_over_fields(self):
        w = sample_walk((0.0, 0.0), 1.0, 64, 3)
        g = grid_for_box((0.0, 0.0), 4.0, 0.3)
        f1 = np.array([clock(w, 1.0, sample_field_grid(g, SPEC, s)).values[-1] for s in range(300)])
        assert abs(f1.mean() - 1.0) <= 3 * sem(f1)

    def test_unresolved_cutoff(self, field):
        w = sample_walk((0.0, 0.0), 1.0, 8, 4)
        with pytest.raises(UnresolvedCutoff):
            clock(w, 1.0, field)

    def test_gamma_range(self, field):
        w = sample_walk((0.0, 0.0), 1.0, 64, 4)
        with pytest.raises(ValueError, match="γ < 2 required"):
            clock(w, 2.0, field)

    def test_grid_and_point_backends_agree(self, field):
        # conditional point draws on the grid realisation play the role of coupled seeds
        diffs = []
        for r in range(100):
            w = sample_walk((0.0, 0.0), 1.0, 64, r)
            g = clock(w, 1.0, field).values[-1]
            p = clock(w, 1.0, PointField(SPEC, derive_seed(7, r), condition_on=field)).values[-1]
            diffs.append(abs(g - p) / p)
        assert np.median(diffs) < 0.05

    @pytest.mark.parametrize("gamma", [0.5, 1.0])
    def test_step_doubling(self, gamma):
        g = grid_for_box((0.0, 0.0), 4.0, 0.3)
        rel = []
        for r in range(100):
            f = sample_field_grid(g, SPEC, 100 + r)
            coarse = sample_walk((0.0, 0.0), 1.0, 64, r)
            fine_pos = coarse.positions
            # refine the same path by Brownian-bridge midpoints
            rng = np.random.default_rng(r)
            mid = 0.5 * (fine_pos[:-1] + fine_pos[1:]) + rng.standard_normal((64, 2)) * math.sqrt(1 / 256)
            pos = np.empty((129, 2))
            pos[0::2], pos[1::2] = fine_pos, mid
            fine = WalkPath(np.linspace(0, 1, 129), pos, (0.0, 0.0), r)
            a, b = clock(coarse, gamma, f).values[-1], clock(fine, gamma, f).values[-1]
            rel.append(abs(b - a) / a)
        assert np.median(rel) < 0.02


class TestInverse:
    def test_identity_and_round_trip(self, field):
        w = sample_walk((0.0, 0.0), 1.0, 64, 5)
        c0 = clock(w, 0.0, field)
        assert clock_inverse(c0, 0.3125) == pytest.approx(0.3125, abs=1e-15)
        c = clock(w, 1.0, field)
        back = clock_inverse(c, c.values)
        np.testing.assert_allclose(back, c.times, atol=1e-12)
        s = 0.5 * c.values[-1]
        t = clock_inverse(c, s)
        assert np.interp(t, c.times, c.values) == pytest.approx(s)

    def test_range_error(self, field):
        c = clock(sample_walk((0.0, 0.0), 1.0, 64, 5), 1.0, field)
        with pytest.raises(ClockRangeError) as exc:
            clock_inverse(c, c.values[-1] * 1.01)
        assert exc.value.attained == c.values[-1]


class TestLbm:
    def test_gamma_zero_is_gaussian(self, field):
        t = 0.7
        pts = lbm_positions((1.0, -1.0), t, 0.0, field, 10_000, 3)
        assert kstest((pts[:, 0] - 1.0) / math.sqrt(t), "norm").pvalue > 0.01
        assert kstest((pts[:, 1] + 1.0) / math.sqrt(t), "norm").pvalue > 0.01

    def test_small_time_continuity(self, field):
        med = [np.median(np.linalg.norm(lbm_positions((0.0, 0.0), t, 1.0, field, 400, 1), axis=1))
               for t in (0.2, 0.05, 0.0125)]
        assert med[0] > med[1] > med[2]
        assert med[2] < 0.25

    def test_single_draw_and_errors(self, field):
        p = lbm_position((0.0, 0.0), 0.1, 1.0, field, 4)
        assert p.shape == (2,)
        with pytest.raises(ClockRangeError):
            lbm_positions((0.0, 0.0), 1.0, 1.0, field, 10, 0, max_extensions=0, dt=0.02)
        with pytest.raises(UnresolvedCutoff):
            lbm_positions((0.0, 0.0), 1.0, 1.0, field, 10, 0, dt=0.1)
