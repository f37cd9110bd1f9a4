import json
import math

import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st

from conftest import zero_driving
from fracap.errors import DegenerateVT
from fracap.estimator import (
    THETA_FLOOR,
    ConsistencySeries,
    birkhoff_average,
    consistency_series,
    ensemble_period_average,
    estimate_fixed_point,
    estimate_oracle,
    fixed_point_ladder,
    loglog_slope,
    mean_value_ap,
    naive_least_squares,
    oracle_ladder,
    residual_square,
    u_T,
    v_T,
)
from fracap.fbm import TimeGrid
from fracap.sde import PathEnsemble, drift_spec, integrate, integrate_two_sided
from fracap.skorokhod import functional, malliavin_kernel, skorokhod_integral, young_integral


@pytest.fixture(scope="module")
def fou_long():
    return integrate_two_sided(drift_spec("fou"), 0.7, T=100.0, dt=0.05, replicates=120, seed=31)


def _with_states(paths: PathEnsemble, states):
    return PathEnsemble(grid=paths.grid, model=paths.model, states=states, driving=paths.driving,
                        drift=paths.drift)


class TestOracle:
    def test_identity(self, ex4_paths):
        r = estimate_oracle(ex4_paths, 1.0, (0.0, 20.0))
        assert np.array_equal(r.theta_hat, 1.0 - r.u_T / r.v_T)
        assert r.mode == "oracle" and r.all_converged

    def test_u_t_definition(self, ex4_paths):
        k = malliavin_kernel(ex4_paths, 1.0)
        r = estimate_oracle(ex4_paths, 1.0, (0.0, 10.0), kernel=k)
        assert np.allclose(r.u_T, u_T(ex4_paths, k, (0.0, 10.0)))

    def test_ladder_matches_single_windows(self, ex4_paths):
        ladder = oracle_ladder(ex4_paths, 1.0, [5.0, 10.0, 20.0])
        for res in ladder:
            single = estimate_oracle(ex4_paths, 1.0, (0.0, res.horizon_T))
            assert np.allclose(res.theta_hat, single.theta_hat, rtol=1e-12, atol=1e-12)

    def test_v_t_closed_form(self, fou_paths):
        # X = cos t with b0 = 0: V over a whole period is 1/2
        t = fou_paths.grid.times
        states = np.broadcast_to(np.cos(t)[None, :, None], fou_paths.states.shape).copy()
        v = v_T(_with_states(fou_paths, states), (0.0, 4 * math.pi - (4 * math.pi) % 0.05))
        assert np.allclose(v, 0.5, atol=2e-3)

    def test_degenerate_v_t(self, fou_paths):
        zero = _with_states(fou_paths, np.zeros_like(fou_paths.states))
        with pytest.raises(DegenerateVT):
            estimate_oracle(zero, 1.0, (0.0, 10.0))


class TestFixedPoint:
    def test_noise_free_converges_immediately(self):
        drift = drift_spec("fou", theta=1.3, sigma=0.0)
        g = TimeGrid(0.0, 1e-4, 20_001)
        p = integrate(drift, zero_driving(g), x_init=1.0)
        r = estimate_fixed_point(p, window=(0.0, 2.0))
        assert r.all_converged and np.all(r.fixed_point_iterations == 1)
        assert np.allclose(r.theta_hat, 1.3, rtol=1e-3)
        assert np.allclose(r.theta_hat, naive_least_squares(p, (0.0, 2.0)))

    def test_iterate_map_contracts(self, fou_long):
        r = estimate_fixed_point(fou_long, theta_init=2.0, window=(0.0, 100.0))
        h = r.history
        assert np.mean(np.abs(h[2] - h[1]) < np.abs(h[1] - h[0])) >= 0.9

    def test_agrees_with_oracle(self, fou_long):
        o = estimate_oracle(fou_long, 1.0, (0.0, 100.0))
        f = estimate_fixed_point(fou_long, window=(0.0, 100.0))
        q25, q75 = np.percentile(o.theta_hat, [25, 75])
        assert f.all_converged
        assert np.median(np.abs(f.theta_hat - o.theta_hat)) < 2 * (q75 - q25)

    def test_fixed_point_equation_holds(self, fou_long):
        f = estimate_fixed_point(fou_long, window=(0.0, 100.0), tol=1e-10, max_iter=200)
        theta = f.theta_hat
        assert f.all_converged and np.all(theta > THETA_FLOOR)
        # theta = -[int r dX - alpha trace(theta)] / (T V_T), r = X - b0, rebuilt from public pieces
        w = (0.0, 100.0)
        r = fou_long.x - fou_long.drift.b0(fou_long.grid.times[None, :], fou_long.x)
        young = young_integral(r, fou_long.x, fou_long.grid, w)
        v = v_T(fou_long, w)
        for i in (int(np.argmin(theta)), int(np.argmax(theta))):
            k = malliavin_kernel(fou_long, float(theta[i]))
            res = skorokhod_integral(functional("residual", fou_long.drift), fou_long, k, w)
            rhs = -(young[i] - res.alpha_H * res.trace_correction[i]) / (100.0 * v[i])
            assert rhs == pytest.approx(theta[i], abs=1e-8)

    def test_non_convergence_flag(self, fou_long):
        r = estimate_fixed_point(fou_long, window=(0.0, 100.0), max_iter=1, tol=1e-14)
        assert not r.all_converged and np.all(r.fixed_point_iterations == 1)

    def test_window_must_start_at_zero(self, fou_long):
        with pytest.raises(ValueError):
            estimate_fixed_point(fou_long, window=(10.0, 100.0))

    def test_ladder_shapes(self, fou_long):
        out = fixed_point_ladder(fou_long, [25.0, 50.0, 100.0])
        assert [r.horizon_T for r in out] == [25.0, 50.0, 100.0]
        assert all(r.theta_hat.shape == (120,) for r in out)


class TestSeries:
    @given(a=st.floats(-3, 3), c=st.floats(0.1, 10))
    def test_loglog_slope_exact_on_power_law(self, a, c):
        x = np.array([50.0, 200.0, 800.0])
        assert loglog_slope(x, c * x ** a) == pytest.approx(a, abs=1e-9)

    def test_series_flags(self, fou_long):
        s = consistency_series(oracle_ladder(fou_long, 1.0, [25.0, 50.0, 100.0]), 1.0, 0.7)
        assert s.slope_target == pytest.approx(-0.6)
        assert len(s.median_abs_error) == 3
        d = json.loads(s.to_json())
        assert d["slope_pass"] == s.slope_pass and d["monotone_pass"] == s.monotone_pass

    def test_series_csv(self, fou_long, tmp_path):
        s = consistency_series(oracle_ladder(fou_long, 1.0, [50.0, 100.0]), 1.0, 0.7)
        s.to_csv(tmp_path / "c.csv")
        lines = (tmp_path / "c.csv").read_text().splitlines()
        assert lines[0].startswith("T,") and len(lines) == 3

    def test_series_requires_increasing_horizons(self):
        with pytest.raises(ValueError):
            ConsistencySeries([2.0, 1.0], [0.1, 0.2], [1, 1], [0.1, 0.1], [1, 1], [1, 1], -1.0, 1.0, 0.7, "oracle")

    def test_monotone_is_strict(self):
        s = ConsistencySeries([1.0, 2.0], [0.1, 0.1], [1, 1], [0.1, 0.1], [1, 1], [1, 1], -0.6, 1.0, 0.7, "oracle")
        assert not s.monotone_pass and s.slope_pass


class TestErgodic:
    @given(c=st.floats(-5, 5))
    def test_constant_birkhoff(self, fou_paths, c):
        b = birkhoff_average(fou_paths, lambda t, x: c + 0 * x, [5.0, 20.0])
        assert np.allclose(b.averages, c, atol=1e-12)

    def test_constant_mean_value(self, fou_paths):
        mv = mean_value_ap(fou_paths, lambda t, x: 2.0 + 0 * x, [10.0, 20.0])
        assert mv.limit == pytest.approx(2.0) and mv.relative_change == pytest.approx(0.0, abs=1e-12)
        assert mv.positivity == pytest.approx(4.0, rel=1e-6)

    def test_period_average_of_constant(self, fou_paths):
        v, se = ensemble_period_average(fou_paths, lambda t, x: 3.0 + 0 * x, 2.0)
        assert v == pytest.approx(3.0) and se == pytest.approx(0.0, abs=1e-12)

    def test_residual_square_nonnegative(self, ex4_paths):
        assert np.all(residual_square(ex4_paths) >= 0)

    def test_variance_decreases(self, fou_long):
        b = birkhoff_average(fou_long, residual_square(fou_long), [10.0, 40.0])
        # L2 convergence: roughly halves from t to 4t (fOU has summable correlations)
        assert b.variance[1] < 0.75 * b.variance[0]

    def test_birkhoff_matches_stationary_second_moment(self, fou_long):
        b = birkhoff_average(fou_long, residual_square(fou_long), [100.0])
        from fracap.wiener import improper_wiener_second_moment, integrand

        exact = improper_wiener_second_moment(integrand("fou_kernel"), 0.0, 0.7)
        assert b.mean[0] == pytest.approx(exact, rel=0.1)
