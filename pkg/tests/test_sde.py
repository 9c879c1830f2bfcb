import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from tic_solve.sde import (ControlModel, SimConfig, SimulationError, run_euler,
                           simulate_paths, spike_law)


def gbm(alpha=0.08, sigma=0.2, T=1.0):
    return ControlModel(drift=lambda t, x, u: alpha * x,
                        diffusion=lambda t, x, u: sigma * x, T=T)


def zero_law(t, x):
    return np.zeros_like(x)


class TestModelValidation:
    def test_bounds_order(self):
        with pytest.raises(ValueError):
            ControlModel(lambda t, x, u: x, lambda t, x, u: x, control_lo=1.0, control_hi=0.0)

    def test_horizon_positive(self):
        with pytest.raises(ValueError):
            ControlModel(lambda t, x, u: x, lambda t, x, u: x, T=0.0)

    def test_sim_config(self):
        with pytest.raises(ValueError):
            SimConfig(n_paths=0)
        with pytest.raises(ValueError):
            SimConfig(n_steps=0)

    def test_start_after_horizon(self):
        with pytest.raises(ValueError):
            simulate_paths(gbm(), zero_law, 1.0, 1.0, SimConfig(10, 5))


class TestSimulatePaths:
    def test_degenerate_dynamics_stay_put(self):
        model = ControlModel(lambda t, x, u: 0.0 * x, lambda t, x, u: 0.0 * x)
        batch = simulate_paths(model, zero_law, 0.0, 1.0, SimConfig(50, 20))
        assert np.all(batch.states == 1.0)

    def test_shapes_and_grid(self):
        batch = simulate_paths(gbm(), zero_law, 0.25, 2.0, SimConfig(30, 12))
        assert batch.states.shape == (30, 13)
        assert batch.controls.shape == (30, 13)
        assert np.all(batch.states[:, 0] == 2.0)
        assert np.all(np.diff(batch.times) > 0)
        assert batch.times[0] == 0.25 and batch.times[-1] == 1.0

    def test_gbm_mean(self):
        batch = simulate_paths(gbm(), zero_law, 0.0, 1.0, SimConfig(100_000, 200))
        xt = batch.states[:, -1]
        se = xt.std(ddof=1) / np.sqrt(xt.size)
        assert abs(xt.mean() - np.exp(0.08)) < 3 * se

    def test_bit_identical_reruns(self):
        cfg = SimConfig(200, 40, seed=3)
        a = simulate_paths(gbm(), zero_law, 0.0, 1.0, cfg)
        b = simulate_paths(gbm(), zero_law, 0.0, 1.0, cfg)
        assert np.array_equal(a.states, b.states)

    def test_path_streams_independent_of_batch_size(self):
        small = simulate_paths(gbm(), zero_law, 0.0, 1.0, SimConfig(10, 40, seed=5))
        large = simulate_paths(gbm(), zero_law, 0.0, 1.0, SimConfig(25, 40, seed=5))
        assert np.array_equal(small.states, large.states[:10])

    def test_wealth_with_everything_in_stock_is_gbm(self):
        r, alpha, sigma = 0.03, 0.08, 0.2
        wealth = ControlModel(drift=lambda t, x, u: r * x + (alpha - r) * u,
                              diffusion=lambda t, x, u: sigma * u)
        cfg = SimConfig(500, 50, seed=11)
        a = simulate_paths(wealth, lambda t, x: x, 0.0, 1.0, cfg)
        b = simulate_paths(gbm(alpha, sigma), zero_law, 0.0, 1.0, cfg)
        np.testing.assert_allclose(a.states, b.states, rtol=1e-14)

    def test_antithetic_pairs_cancel(self):
        model = ControlModel(lambda t, x, u: 0.0 * x, lambda t, x, u: 0.3 + 0.0 * x)
        batch = simulate_paths(model, zero_law, 0.0, 0.0, SimConfig(64, 30, antithetic=True))
        incr = np.diff(batch.states, axis=1)
        np.testing.assert_array_equal(incr[0::2] + incr[1::2], 0.0)

    def test_controls_clamped(self):
        model = ControlModel(lambda t, x, u: u, lambda t, x, u: 0.1 + 0.0 * x,
                             control_lo=-0.5, control_hi=0.5)
        batch = simulate_paths(model, lambda t, x: 10 * x, 0.0, 1.0, SimConfig(100, 20))
        assert batch.controls.min() >= -0.5 and batch.controls.max() <= 0.5

    def test_absorption_flagged(self):
        model = ControlModel(lambda t, x, u: -5.0 * np.ones_like(x), lambda t, x, u: 0.0 * x,
                             positive_state=True)
        batch = simulate_paths(model, zero_law, 0.0, 1.0, SimConfig(5, 10))
        assert batch.absorbed_fraction == 1.0
        assert np.all(batch.states[:, -1] == pytest.approx(1e-6))

    def test_non_finite_state_names_path_and_step(self):
        model = ControlModel(lambda t, x, u: np.where(x > 1.5, np.inf, 1.0), lambda t, x, u: 0.0 * x)
        with pytest.raises(SimulationError, match="path 0 at step"):
            simulate_paths(model, zero_law, 0.0, 1.0, SimConfig(3, 10))


class TestStrongOrder:
    def test_euler_slope_near_one_half(self):
        alpha, sigma, T, x0 = 0.08, 0.5, 1.0, 1.0
        rng = np.random.default_rng(2024)
        n_fine, n_paths = 1024, 4000
        dw = rng.standard_normal((n_paths, n_fine)) * np.sqrt(T / n_fine)
        exact = x0 * np.exp((alpha - 0.5 * sigma**2) * T + sigma * dw.sum(axis=1))
        steps = np.array([16, 32, 64, 128, 256])
        errs = []
        for n in steps:
            coarse = dw.reshape(n_paths, n, n_fine // n).sum(axis=2)
            xt, _ = run_euler(gbm(alpha, sigma, T), zero_law, 0.0, x0, coarse)
            errs.append(np.sqrt(np.mean((xt - exact) ** 2)))
        slope = np.polyfit(np.log(T / steps), np.log(errs), 1)[0]
        assert 0.35 <= slope <= 0.65


class TestSpikeLaw:
    def test_piecewise(self):
        law = spike_law(lambda s, y: 0.0, lambda s, y: 1.0, 0.0, 0.5)
        assert law(0.25, 3.0) == 1.0
        assert law(0.75, 3.0) == 0.0
        assert law(0.5, 3.0) == 0.0

    def test_identical_pieces(self):
        base = lambda s, y: 2 * y  # noqa: E731
        law = spike_law(base, base, 0.1, 0.3)
        ys = np.linspace(-1, 1, 5)
        for s in (0.0, 0.2, 0.5):
            np.testing.assert_array_equal(law(s, ys), base(s, ys))

    def test_width_must_be_positive(self):
        with pytest.raises(ValueError):
            spike_law(zero_law, zero_law, 0.0, 0.0)

    @given(t=st.floats(0, 1), h=st.floats(1e-9, 1e-3), s=st.floats(0, 2))
    def test_narrow_window_agrees_with_base_after(self, t, h, s):
        law = spike_law(lambda a, y: 0.0, lambda a, y: 1.0, t, h)
        if s >= t + h or s < t:
            assert law(s, 0.0) == 0.0

    @settings(max_examples=25, deadline=None)
    @given(lo=st.floats(-3, 0), width=st.floats(0.01, 3), scale=st.floats(-50, 50))
    def test_recorded_controls_in_bounds(self, lo, width, scale):
        model = ControlModel(lambda t, x, u: u, lambda t, x, u: 0.2 + 0.0 * x,
                             control_lo=lo, control_hi=lo + width)
        batch = simulate_paths(model, lambda t, x: scale * x, 0.0, 1.0, SimConfig(20, 10))
        assert batch.controls.min() >= lo and batch.controls.max() <= lo + width
