import math

import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st

from fracap.errors import KernelMismatch, WindowOffGrid
from fracap.fbm import FbmEnsemble, TimeGrid, fgn_autocovariance, sample_ensemble
from fracap.sde import drift_spec, integrate, integrate_two_sided
from fracap.skorokhod import (
    CATALOG_FUNCTIONALS,
    PathFunctional,
    functional,
    lebesgue_integral,
    malliavin_kernel,
    noise_kernel,
    noise_paths,
    skorokhod_integral,
    skorokhod_wrt_X,
    trace_rows,
    young_integral,
)


def dense_trace(weights, kernel, i_lo, i_hi, hurst):
    """Brute-force trace from the dense kernel: sum_i w_i sum_{j<i} gamma(i-j) dt^{2H} / alpha D_{t_{j+1}} X(t_i)."""
    g = kernel.grid
    alpha = hurst * (2 * hurst - 1)
    gam = fgn_autocovariance(np.arange(g.n_points), hurst) * g.dt ** (2 * hurst) / alpha
    D = kernel.dense()
    out = np.zeros((kernel.replicates, i_hi - i_lo))
    for i in range(i_lo, i_hi):
        for j in range(kernel.s_start, i):
            out[:, i - i_lo] += gam[i - j] * D[:, i, j + 1]
        out[:, i - i_lo] *= weights[:, i]
    return out


@pytest.fixture(scope="module")
def tiny():
    p = integrate_two_sided(drift_spec("example2"), 0.7, T=3.0, dt=0.05, burn_in_multiplier=2.0,
                            replicates=3, seed=4)
    return p, malliavin_kernel(p, 1.0)


class TestKernel:
    def test_dense_matches_value(self, tiny):
        p, k = tiny
        D = k.dense()
        t = p.grid.times
        for i, j in [(10, 3), (50, 50), (99, 0), (5, 20)]:
            assert np.allclose(k.value(t[j], t[i]), D[:, i, j], rtol=1e-12)

    def test_fou_closed_form(self):
        p = integrate_two_sided(drift_spec("fou", theta=1.5, sigma=0.7), 0.7, T=2.0, dt=0.05,
                                burn_in_multiplier=1.0, replicates=2, seed=1)
        k = malliavin_kernel(p, 1.5)
        t = p.grid.times
        D = k.dense()
        lag = t[:, None] - t[None, :]
        exact = np.where(lag >= 0, 0.7 * np.exp(-1.5 * np.maximum(lag, 0)), 0.0)
        assert np.allclose(D[0], exact, rtol=1e-12, atol=0)

    def test_finite_difference_jacobian(self):
        # perturbing the noise cell [t_j, t_{j+1}] moves X(t_i) by about D_{t_{j+1}} X(t_i)
        drift = drift_spec("example4")
        g = TimeGrid(0.0, 0.01, 401)
        drv = sample_ensemble(g, 0.7, replicates=1, seed=3)
        base = integrate(drift, drv)
        k = malliavin_kernel(base, drift.theta)
        j, eps = 50, 1e-6
        bumped = drv.paths.copy()
        bumped[:, j + 1 :, :] += eps
        moved = integrate(drift, FbmEnsemble(g, 0.7, bumped))
        fd = (moved.x[0] - base.x[0]) / eps
        D = k.dense()[0]
        i = np.arange(j + 2, 401)
        assert np.allclose(fd[i], D[i, j + 1], rtol=2e-2)
        assert np.all(fd[: j + 1] == 0)

    @pytest.mark.parametrize("name", ["example1", "example2", "example3", "example4", "fou"])
    def test_exponential_bound(self, name):
        p = integrate_two_sided(drift_spec(name), 0.7, T=20.0, dt=0.05, replicates=10, seed=6)
        rep = malliavin_kernel(p, 1.0).bound_check()
        assert rep["ok"] and rep["fraction_ok"] == 1.0

    def test_bound_detects_violation(self, tiny):
        from dataclasses import replace

        p, k = tiny
        faster = replace(k, bound_rate=5.0)
        assert not faster.bound_check()["ok"]

    def test_requires_drift(self, small_fbm):
        with pytest.raises(ValueError):
            malliavin_kernel(noise_paths(small_fbm), 1.0)


class TestTrace:
    @pytest.mark.parametrize("s_start", [0, 30])
    @pytest.mark.parametrize("window", [(0, 60), (40, 99)])
    def test_matches_dense_oracle(self, tiny, s_start, window):
        from dataclasses import replace

        p, k = tiny
        k = replace(k, s_start=s_start)
        w = np.cos(p.x) + 0.3
        fast = trace_rows(w, k, window[0], window[1], 0.7, rtol=0.0)
        assert np.allclose(fast, dense_trace(w, k, window[0], window[1], 0.7), rtol=1e-12, atol=1e-14)

    def test_band_truncation_error_is_certified(self):
        p = integrate_two_sided(drift_spec("example1"), 0.7, T=30.0, dt=0.05, replicates=4, seed=2)
        k = malliavin_kernel(p, 1.0)
        w = np.ones_like(p.x)
        full = trace_rows(w, k, 200, k.grid.n_points, 0.7, rtol=0.0)
        cut = trace_rows(w, k, 200, k.grid.n_points, 0.7)
        assert np.all(np.abs(cut - full) <= 1e-10 * np.abs(full) + 1e-300)

    @given(scale=st.floats(0.05, 4.0))
    def test_theta_scale_equals_rebuilt_kernel(self, tiny, scale):
        p, k = tiny
        w = np.ones_like(p.x)
        scaled = trace_rows(w, k, 40, 99, 0.7, theta_scale=np.full(3, scale), rtol=0.0)
        rebuilt = trace_rows(w, malliavin_kernel(p, scale), 40, 99, 0.7, rtol=0.0)
        assert np.allclose(scaled, rebuilt, rtol=1e-12)


class TestSkorokhod:
    def test_noise_trace_closed_form(self):
        h = 0.7
        g = TimeGrid(0.0, 0.01, 201)
        p = noise_paths(sample_ensemble(g, h, replicates=2, seed=1))
        r = skorokhod_integral(functional("identity"), p, noise_kernel(g, 2), (0.0, 2.0))
        exact = 0.5 * 2.0 ** (2 * h) - 0.5 * 200 * 0.01 ** (2 * h)
        assert np.allclose(r.alpha_H * r.trace_correction, exact, rtol=1e-12)

    def test_b_delta_b_converges(self):
        h = 0.7
        g = TimeGrid(0.0, 0.0025, 801)
        e = sample_ensemble(g, h, replicates=200, seed=5)
        exact = 0.5 * e.paths[:, -1, 0] ** 2 - 0.5 * 2.0 ** (2 * h)
        errs = []
        for step in (8, 4, 2, 1):
            sub = TimeGrid(0.0, g.dt * step, (g.n_points - 1) // step + 1)
            es = FbmEnsemble(sub, h, np.ascontiguousarray(e.paths[:, ::step]))
            r = skorokhod_integral(functional("identity"), noise_paths(es), noise_kernel(sub, 200), (0.0, 2.0))
            errs.append(np.mean(np.abs(r.skorokhod_value - exact)))
        assert all(b < a for a, b in zip(errs, errs[1:]))

    @pytest.mark.parametrize("name", ["cos_time", "zero"])
    def test_deterministic_trace_is_zero(self, ex4_paths, name):
        k = malliavin_kernel(ex4_paths, 1.0)
        r = skorokhod_integral(functional(name), ex4_paths, k, (0.0, 20.0))
        assert np.all(r.trace_correction == 0.0)

    def test_linearity(self, ex4_paths):
        k = malliavin_kernel(ex4_paths, 1.0)
        a, b = functional("arctan"), functional("sin")
        w = (0.0, 10.0)
        combo = skorokhod_integral(a.scaled(2.5) + b, ex4_paths, k, w).skorokhod_value
        sep = 2.5 * skorokhod_integral(a, ex4_paths, k, w).skorokhod_value + skorokhod_integral(b, ex4_paths, k, w).skorokhod_value
        assert np.allclose(combo, sep, rtol=1e-9, atol=1e-12)

    def test_finite_difference_derivative_fallback(self, ex4_paths):
        k = malliavin_kernel(ex4_paths, 1.0)
        exact = functional("arctan")
        fd = PathFunctional(lambda t, x: np.arctan(x))
        w = (0.0, 10.0)
        assert np.allclose(skorokhod_integral(exact, ex4_paths, k, w).trace_correction,
                           skorokhod_integral(fd, ex4_paths, k, w).trace_correction, rtol=1e-7)

    def test_zero_mean_fou(self):
        p = integrate_two_sided(drift_spec("fou"), 0.7, T=10.0, dt=0.05, replicates=2000, seed=12)
        k = malliavin_kernel(p, 1.0)
        for name in CATALOG_FUNCTIONALS:
            v = skorokhod_integral(functional(name, p.drift), p, k, (0.0, 10.0)).skorokhod_value
            assert abs(v.mean()) < 4 * v.std(ddof=1) / math.sqrt(v.size)

    def test_young_is_left_point_sum(self, ex4_paths):
        y = ex4_paths.x
        x = ex4_paths.driving.paths[:, :, 0]
        g = ex4_paths.grid
        i, j = g.index_of(0.0), g.index_of(5.0)
        manual = np.sum(y[:, i:j] * (x[:, i + 1 : j + 1] - x[:, i:j]), axis=1)
        assert np.allclose(young_integral(y, x, g, (0.0, 5.0)), manual, rtol=1e-13)

    def test_with_respect_to_x(self, fou_paths):
        k = malliavin_kernel(fou_paths, 1.0)
        w = (0.0, 10.0)
        phi = functional("identity")
        lhs = skorokhod_wrt_X(phi, fou_paths, k, 1.0, w)
        leb = lebesgue_integral(fou_paths.x ** 2, fou_paths.grid, w)
        assert np.allclose(lhs, -leb + skorokhod_integral(phi, fou_paths, k, w).skorokhod_value)

    def test_kernel_mismatch(self, ex4_paths, fou_paths):
        k = malliavin_kernel(fou_paths, 1.0)
        other = integrate_two_sided(drift_spec("fou"), 0.7, T=10.0, dt=0.05, replicates=2, seed=1)
        with pytest.raises(KernelMismatch):
            skorokhod_integral(functional("identity"), other, k, (0.0, 5.0))

    def test_window_off_grid(self, ex4_paths):
        k = malliavin_kernel(ex4_paths, 1.0)
        with pytest.raises(WindowOffGrid):
            skorokhod_integral(functional("identity"), ex4_paths, k, (0.0, 5.01))

    def test_csv(self, ex4_paths, tmp_path):
        import csv

        k = malliavin_kernel(ex4_paths, 1.0)
        r = skorokhod_integral(functional("sin"), ex4_paths, k, (0.0, 5.0))
        with open(r.to_csv(tmp_path / "s.csv")) as fh:
            rows = list(csv.DictReader(fh))
        assert len(rows) == ex4_paths.replicates
        assert float(rows[0]["value"]) == r.skorokhod_value[0]

    def test_unknown_functional(self):
        with pytest.raises(KeyError):
            functional("tanh")
        with pytest.raises(ValueError):
            functional("residual")

    @given(a=st.floats(-3, 3), x=st.floats(-5, 5))
    def test_scaled_derivative(self, a, x):
        f = functional("sin").scaled(a)
        assert f.d2(0.0, np.array([x]))[0] == pytest.approx(a * math.cos(x), abs=1e-12)
