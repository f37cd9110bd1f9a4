import math

import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st

from fracap.errors import InvalidHurst, ShiftOutOfRange, TauOffGrid
from fracap.fbm import (
    QUANTUM,
    TimeGrid,
    circulant_eigenvalues,
    fbm_covariance,
    fgn_autocovariance,
    read_binary,
    replicate_rng,
    sample_ensemble,
    shift_ensemble,
    validate_hurst,
    wiener_shift_path,
    write_binary,
    write_csv,
)

hursts = st.floats(min_value=0.51, max_value=0.99)


class TestValidateHurst:
    @pytest.mark.parametrize("h", [0.5, 1.0, 0.3, 1.2, -0.1])
    def test_rejects_outside_open_interval(self, h):
        with pytest.raises(InvalidHurst):
            validate_hurst(h)

    def test_reference_mode_admits_half(self):
        assert validate_hurst(0.5, allow_reference=True) == 0.5
        with pytest.raises(InvalidHurst):
            validate_hurst(0.4, allow_reference=True)


class TestTimeGrid:
    def test_zero_is_exact(self):
        g = TimeGrid(-1.3, 0.1, 40)
        assert g.times[g.index_of_zero] == 0.0
        assert g.index_of_zero == 13

    def test_misaligned_start_rejected(self):
        with pytest.raises(ValueError):
            TimeGrid(-1.05, 0.1, 40)

    def test_steps_of_rejects_off_grid_tau(self):
        g = TimeGrid(0.0, 0.1, 11)
        assert g.steps_of(0.5) == 5
        with pytest.raises(TauOffGrid):
            g.steps_of(0.55)

    def test_from_bounds(self):
        g = TimeGrid.from_bounds(-1.0, 2.0, 0.25)
        assert g.n_points == 13 and g.t_end == 2.0


class TestCovariance:
    @given(h=hursts, t=st.floats(0.01, 50.0))
    def test_variance_is_power(self, h, t):
        assert math.isclose(fbm_covariance(t, t, h), t ** (2 * h), rel_tol=1e-12)

    @given(h=hursts, s=st.floats(-20, 20), t=st.floats(-20, 20))
    def test_symmetry_and_cauchy_schwarz(self, h, s, t):
        c = fbm_covariance(s, t, h)
        assert c == pytest.approx(fbm_covariance(t, s, h), abs=1e-12)
        assert abs(c) <= math.sqrt(fbm_covariance(s, s, h) * fbm_covariance(t, t, h)) * (1 + 1e-12) + 1e-12

    def test_fgn_lag_zero(self):
        assert fgn_autocovariance(0, 0.7) == pytest.approx(1.0)

    @given(h=hursts)
    def test_fgn_positive_correlation(self, h):
        g = fgn_autocovariance(np.arange(1, 50), h)
        assert np.all(g > 0) and np.all(np.diff(g) < 0)

    @pytest.mark.parametrize("n", [8, 100, 1024, 5000])
    @pytest.mark.parametrize("h", [0.55, 0.7, 0.95])
    def test_circulant_embedding_is_psd(self, n, h):
        lam = circulant_eigenvalues(n, h)
        assert np.all(lam >= 0)


class TestSampling:
    def test_anchored_and_dyadic(self, small_fbm):
        g = small_fbm.grid
        assert np.all(small_fbm.paths[:, g.index_of_zero, :] == 0.0)
        scaled = small_fbm.paths / QUANTUM
        assert np.array_equal(scaled, np.round(scaled))

    def test_seed_determinism(self, small_grid):
        a = sample_ensemble(small_grid, 0.7, replicates=3, seed=11)
        b = sample_ensemble(small_grid, 0.7, replicates=3, seed=11)
        c = sample_ensemble(small_grid, 0.7, replicates=3, seed=12)
        assert np.array_equal(a.paths, b.paths)
        assert not np.array_equal(a.paths, c.paths)

    def test_replicates_do_not_depend_on_ensemble_size(self, small_grid):
        a = sample_ensemble(small_grid, 0.7, replicates=3, seed=4)
        b = sample_ensemble(small_grid, 0.7, replicates=7, seed=4)
        assert np.array_equal(a.paths, b.paths[:3])

    def test_components_independent_streams(self, small_grid):
        e = sample_ensemble(small_grid, 0.7, dim=2, replicates=2, seed=4)
        assert not np.array_equal(e.paths[:, :, 0], e.paths[:, :, 1])
        assert np.array_equal(e.paths[:, :, 0], sample_ensemble(small_grid, 0.7, replicates=2, seed=4).paths[:, :, 0])

    def test_rng_is_counter_based(self):
        a = replicate_rng(1, 5, 0).standard_normal(4)
        b = replicate_rng(1, 5, 0).standard_normal(4)
        assert np.array_equal(a, b)
        assert not np.array_equal(a, replicate_rng(1, 6, 0).standard_normal(4))

    def test_requires_zero_in_grid(self):
        with pytest.raises(ValueError):
            sample_ensemble(TimeGrid(1.0, 0.1, 10), 0.7)

    def test_variance_of_b1_long_grid(self):
        # Var B(1) = 1 on a wide two-sided grid
        g = TimeGrid(-20.0, 0.01, 4001)
        e = sample_ensemble(g, 0.7, replicates=2000, seed=21)
        x = e.paths[:, g.index_of(1.0), 0]
        se = math.sqrt(2.0 / x.size)
        assert abs(np.mean(x ** 2) - 1.0) < 3 * se

    def test_reference_mode_independent_increments(self):
        g = TimeGrid(0.0, 0.05, 41)
        e = sample_ensemble(g, 0.5, replicates=4000, seed=3, allow_reference=True)
        b1 = e.paths[:, g.index_of(1.0), 0]
        b2 = e.paths[:, g.index_of(2.0), 0]
        corr = np.corrcoef(b1, b2 - b1)[0, 1]
        assert abs(corr) < 3 / math.sqrt(4000)

    @pytest.mark.parametrize("method", ["circulant", "cholesky"])
    def test_covariance_matches_on_coarse_probes(self, method):
        h = 0.7
        g = TimeGrid(0.0, 0.02, 101)
        e = sample_ensemble(g, h, replicates=4000, seed=9, method=method)
        idx = np.arange(10, 101, 10)
        x = e.paths[:, idx, 0]
        t = g.times[idx]
        emp = x.T @ x / x.shape[0]
        exact = fbm_covariance(t[:, None], t[None, :], h)
        prod = x[:, :, None] * x[:, None, :]
        se = prod.std(axis=0, ddof=1) / math.sqrt(x.shape[0])
        assert np.all(np.abs(emp - exact) < 4 * se)

    @pytest.mark.parametrize("c", [2, 4])
    def test_self_similarity(self, c):
        h = 0.7
        g = TimeGrid(0.0, 0.01, 401)
        e = sample_ensemble(g, h, replicates=10_000, seed=17)
        v1 = np.var(e.paths[:, g.index_of(1.0), 0])
        vc = np.var(e.paths[:, g.index_of(float(c)), 0])
        assert abs(vc / v1 / c ** (2 * h) - 1.0) < 0.05

    def test_unknown_method(self, small_grid):
        with pytest.raises(ValueError):
            sample_ensemble(small_grid, 0.7, method="spectral")


class TestWienerShift:
    @given(k=st.integers(-200, 200))
    def test_shift_is_bitwise_difference(self, small_fbm, k):
        g = small_fbm.grid
        tau = k * g.dt
        values, shifted = wiener_shift_path(small_fbm, tau)
        anchor = small_fbm.paths[:, g.index_of_zero - k, :]
        assert np.array_equal(values, small_fbm.paths - anchor[:, None, :])
        assert values[:, g.index_of_zero - k].max() == 0.0 == values[:, g.index_of_zero - k].min()
        assert shifted.t_start == pytest.approx(g.t_start + tau)

    @given(k=st.integers(-150, 150))
    def test_increments_preserved_exactly(self, small_fbm, k):
        values, _ = wiener_shift_path(small_fbm, k * small_fbm.grid.dt)
        assert np.array_equal(np.diff(values, axis=1), np.diff(small_fbm.paths, axis=1))

    @given(k1=st.integers(-80, 80), k2=st.integers(-80, 80))
    def test_group_law(self, small_fbm, k1, k2):
        dt = small_fbm.grid.dt
        once = shift_ensemble(small_fbm, (k1 + k2) * dt)
        twice = shift_ensemble(shift_ensemble(small_fbm, k1 * dt), k2 * dt)
        assert np.array_equal(once.paths, twice.paths)

    def test_out_of_range(self, small_fbm):
        with pytest.raises(ShiftOutOfRange):
            wiener_shift_path(small_fbm, 100.0)

    def test_off_grid(self, small_fbm):
        with pytest.raises(TauOffGrid):
            wiener_shift_path(small_fbm, 0.005)


class TestIO:
    def test_binary_roundtrip_bitwise(self, small_fbm, tmp_path):
        back = read_binary(write_binary(small_fbm, tmp_path / "b.bin"))
        assert np.array_equal(back.paths, small_fbm.paths)
        assert back.grid == small_fbm.grid and back.hurst == small_fbm.hurst and back.seed == small_fbm.seed

    def test_binary_rejects_foreign_file(self, tmp_path):
        p = tmp_path / "x.bin"
        p.write_bytes(b"\x00" * 200)
        with pytest.raises(ValueError):
            read_binary(p)

    def test_csv_roundtrip(self, small_fbm, tmp_path):
        import csv

        p = write_csv(small_fbm, tmp_path / "p.csv")
        with p.open() as fh:
            rows = list(csv.DictReader(fh))
        assert len(rows) == small_fbm.replicate_count * small_fbm.grid.n_points
        r = rows[small_fbm.grid.n_points + 5]
        assert int(r["replicate"]) == 1
        assert float(r["value"]) == small_fbm.paths[1, 5, 0]
