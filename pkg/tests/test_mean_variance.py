import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from tic_solve.equilibrium import check_equilibrium
from tic_solve.mean_variance import (MvParams, equivalent_standard_objective, mv_model,
                                     mv_wealth_reward, solve_mv, solve_mv_wealth)
from tic_solve.reward import estimate_g
from tic_solve.sde import SimConfig

P = MvParams(alpha=0.08, r=0.03, sigma=0.2, gamma=2.0, T=1.0)


class TestParams:
    @pytest.mark.parametrize("field", ["sigma", "gamma", "T"])
    def test_positive(self, field):
        with pytest.raises(ValueError):
            MvParams(**{field: 0.0})

    def test_beta(self):
        assert P.beta == pytest.approx(0.05)


class TestClosedForm:
    sol = solve_mv(P)

    def test_terminal(self):
        assert float(self.sol.u_hat(1.0, 3.0)) == pytest.approx(0.625, rel=1e-14)
        assert float(self.sol.V(1.0, 3.0)) == 3.0

    def test_reference_numbers(self):
        assert float(self.sol.u_hat(0.0, 1.0)) == pytest.approx(0.60653, abs=5e-6)
        assert float(self.sol.V(0.0, 1.0)) == pytest.approx(1.046080, abs=5e-7)
        assert float(self.sol.g(0.0, 1.0)) == pytest.approx(1.061705, abs=5e-7)

    def test_control_flat_in_wealth(self):
        xs = np.linspace(-3, 10, 50)
        u = self.sol.u_hat(0.3, xs)
        assert np.all(u == u[0])

    def test_value_is_mean_minus_penalty(self):
        # V = E[X_T] - (gamma/2) Var[X_T] with Var from the deterministic control
        t = 0.2
        tau = P.T - t
        var = (0.625 * np.exp(-P.r * P.T)) ** 2 * P.sigma**2 * np.exp(2 * P.r * P.T) * tau
        assert float(self.sol.V(t, 1.0)) == pytest.approx(
            float(self.sol.g(t, 1.0)) - 0.5 * P.gamma * var, rel=1e-12)

    @pytest.mark.parametrize("t,x", [(0.0, 1.0), (0.2, 0.5), (0.5, 2.0), (0.7, 4.0), (0.9, 1.0)])
    def test_g_by_monte_carlo(self, t, x):
        est = estimate_g(mv_model(P), self.sol.u_hat, None, t, x, SimConfig(20000, 100, seed=5))
        assert abs(est.z_score(float(self.sol.g(t, x)))) < 3

    @settings(max_examples=30, deadline=None)
    @given(alpha=st.floats(0.0, 0.2), r=st.floats(0.0, 0.1), sigma=st.floats(0.05, 0.6),
           gamma=st.floats(0.1, 10), t=st.floats(0, 1))
    def test_extended_system(self, alpha, r, sigma, gamma, t):
        # V_t + (r x + beta u) V_x = 0 and g_t + (r x + beta u) g_x = 0 with V, g affine
        p = MvParams(alpha, r, sigma, gamma, 1.0)
        sol = solve_mv(p)
        h = 1e-6
        lo, hi = max(t - h, 0.0), min(t + h, 1.0)
        for fn in (sol.V, sol.g):
            ft = (float(fn(hi, 1.0)) - float(fn(lo, 1.0))) / (hi - lo)
            fx = float(fn(t, 1.0)) - float(fn(t, 0.0))
            drift = r * 1.0 + p.beta * float(sol.u_hat(t, 1.0))
            if fn is sol.V:
                drift_term = ft + drift * fx - 0.5 * gamma * sigma**2 * float(sol.u_hat(t, 1.0)) ** 2 * fx**2
            else:
                drift_term = ft + drift * fx
            assert abs(drift_term) < 1e-5 * (1 + abs(ft))


class TestWealthDependent:
    sol = solve_mv_wealth(P, steps=2000)

    def test_terminal_control(self):
        assert float(self.sol.u_hat(1.0, 2.0)) == pytest.approx(0.625 * 2.0, rel=1e-14)

    def test_step_doubling(self):
        fine = solve_mv_wealth(P, steps=4000)
        assert abs(float(fine.a(0.0)) - float(self.sol.a(0.0))) <= 1e-8
        assert abs(float(fine.b(0.0)) - float(self.sol.b(0.0))) <= 1e-8

    def test_linear_in_wealth(self):
        xs = np.array([0.1, 1.0, 3.7, 11.0])
        for t in self.sol.ode.times[::400]:
            ratio = self.sol.u_hat(t, xs) / xs
            assert np.ptp(ratio) <= 1e-12 * abs(ratio[0])
            v = self.sol.V(t, xs) / xs
            assert np.ptp(v) <= 1e-12 * abs(v[0])

    def test_second_moment_dominates(self):
        a, b = self.sol.ode.values.T
        assert np.all(b >= a * a)

    def test_expected_terminal_wealth(self):
        est = estimate_g(mv_model(P), self.sol.u_hat, None, 0.0, 1.0, SimConfig(40000, 200))
        assert abs(est.z_score(float(self.sol.a(0.0)))) < 3

    def test_spike_at_origin(self):
        u = self.sol.u_hat
        reps = check_equilibrium(mv_model(P), u,
                                 {"plus": lambda t, x: u(t, x) + 1, "half": lambda t, x: 0.5 * u(t, x)},
                                 mv_wealth_reward(P), [(0.0, 1.0)], [0.2, 0.1, 0.05, 0.025],
                                 SimConfig(20000, 200))
        assert all(r.verdict == "pass" for r in reps)


class TestEquivalentKernel:
    K = staticmethod(equivalent_standard_objective(P))

    def test_zero_control(self):
        assert self.K(0.3, 0.0) == 0.0

    def test_at_horizon(self):
        assert self.K(1.0, 2.0) == pytest.approx(-0.5 * 2 * 0.04 * 4.0, rel=1e-14)

    def test_optimum_is_equilibrium(self):
        # d/du [beta u e^{r(T-s)} + K(s, u)] = 0 at the equilibrium amount
        sol = solve_mv(P)
        for s in (0.0, 0.4, 0.8):
            u = float(sol.u_hat(s, 1.0))
            h = 1e-6
            gain = lambda v: P.beta * v * np.exp(P.r * (P.T - s)) + self.K(s, v)  # noqa: E731
            assert (gain(u + h) - gain(u - h)) / (2 * h) == pytest.approx(0.0, abs=1e-7)
