import numpy as np
import pytest

from tic_solve import grid
from tic_solve.lq import LqParams, lq_model, lq_reward, solve_lq
from tic_solve.mean_variance import MvParams, equivalent_standard_objective, solve_mv
from tic_solve.reward import estimate_g
from tic_solve.sde import ControlModel, SimConfig


def drift_only(r=0.05):
    return ControlModel(drift=lambda t, x, u: r * x + 0.0 * u,
                        diffusion=lambda t, x, u: 0.0 * x, control_lo=0.0, control_hi=1.0)


class TestSpec:
    @pytest.mark.parametrize("kw", [dict(x_lo=1, x_hi=0, nx=10, nu=5), dict(x_lo=0, x_hi=1, nx=2, nu=5),
                                    dict(x_lo=0, x_hi=1, nx=10, nu=1),
                                    dict(x_lo=0, x_hi=1, nx=10, nu=5, nt=1)])
    def test_rejected(self, kw):
        with pytest.raises(ValueError):
            grid.GridSpec(**kw)

    def test_infinite_controls_need_bounds(self, mv_params):
        from tic_solve.mean_variance import mv_model, mv_reward
        prob = grid.ExtendedProblem.from_reward(mv_model(mv_params), mv_reward(mv_params))
        with pytest.raises(ValueError, match="finite bounds"):
            grid.solve_extended(prob, grid.GridSpec(0.2, 5, nx=11, nu=5))

    def test_vector_control_rejected(self):
        model = ControlModel(lambda t, x, u: x, lambda t, x, u: x,
                             control_lo=(0, 0), control_hi=(1, 1))
        with pytest.raises(ValueError, match="scalar"):
            grid.ExtendedProblem(model, F=lambda xa, y: y)

    def test_cfl_violation_names_location(self, mv_problem):
        with pytest.raises(grid.CflError, match=r"at t=.*x=.*u="):
            grid.solve_extended(mv_problem, grid.GridSpec(0.2, 5, nx=201, nu=11, nt=5))


class TestDeterministic:
    def test_linear_growth(self):
        prob = grid.ExtendedProblem(drift_only(), F=lambda xa, y: y)
        sol = grid.solve_extended(prob, grid.GridSpec(0.5, 2.0, nx=61, nu=2, nt=401))
        exact = sol.x * np.exp(0.05 * (1 - sol.times[:, None]))
        m = sol.interior()
        assert np.max(np.abs(sol.V[:, m] - exact[:, m])) < 5 * sol.scheme_tolerance
        assert np.max(np.abs(sol.g[:, m] - exact[:, m])) < 5 * sol.scheme_tolerance

    def test_terminal_rows_exact(self, mv_grid, mv_problem):
        x = mv_grid.x
        assert np.array_equal(mv_grid.V[-1], mv_problem.F(x, x) + mv_problem.G(x, x))
        assert np.array_equal(mv_grid.g[-1], x)
        terminal = np.broadcast_to(mv_problem.F(x[None, :], x[:, None]), mv_grid.f[-1].shape)
        assert np.array_equal(mv_grid.f[-1], terminal)


class TestMeanVariance:
    def test_value_and_control(self, mv_grid, mv_closed):
        assert abs(mv_grid.value(0.0, 1.0) - 1.046080) <= 0.01 * 1.046080
        m = mv_grid.interior()
        du = mv_grid.controls[1] - mv_grid.controls[0]
        err = np.abs(mv_grid.u_hat[0, m] - 0.60653)
        assert np.all(err <= max(0.02 * 0.60653, du))

    def test_diagonal_identity(self, mv_grid, mv_problem):
        for k, n in enumerate(mv_grid.f_levels):
            h = np.diagonal(mv_grid.f[k])
            gap = mv_grid.V[n] - h - mv_problem.G(mv_grid.x, mv_grid.g[n])
            assert np.max(np.abs(gap[1:-1])) <= 5 * mv_grid.scheme_tolerance
            assert np.max(np.abs(gap)) <= mv_grid.diagnostics["identity_tol"]

    def test_refinement(self, mv_problem, mv_grid, mv_closed):
        coarse = grid.solve_extended(mv_problem, grid.GridSpec(0.2, 5.0, nx=101, nu=101))
        exact = float(mv_closed.V(0.0, 1.0))
        ratio = abs(coarse.value(0, 1.0) - exact) / abs(mv_grid.value(0, 1.0) - exact)
        assert ratio >= 1.7

    def test_simplified_agrees(self, mv_problem, mv_grid_spec, mv_grid):
        simp = grid.solve_simplified(mv_problem, mv_grid_spec)
        assert simp.f is None
        m = mv_grid.interior()
        assert np.max(np.abs(simp.V[:, m] - mv_grid.V[:, m])) <= 2 * mv_grid.scheme_tolerance

    @pytest.mark.parametrize("t,x", [(0.0, 1.0), (0.0, 2.0), (0.3, 1.5), (0.5, 2.5), (0.8, 3.0)])
    def test_martingale_consistency(self, mv_grid, mv_problem, t, x):
        law = mv_grid.law()
        est = estimate_g(mv_problem.model, law, None, t, x, SimConfig(20000, 100, seed=6))
        tol = max(3 * est.std_err, mv_grid.scheme_tolerance)
        assert abs(est.mean - mv_grid.expected(t, x)) <= tol

    def test_anchored_lookup(self, mv_grid, mv_problem):
        # at the horizon f is F(anchor, state) exactly on nodes
        xa, xs = mv_grid.x[40], mv_grid.x[70]
        assert mv_grid.anchored(1.0, xs, xa) == pytest.approx(float(mv_problem.F(xa, xs)))

    def test_separate_anchor_grid(self, mv_problem, mv_grid):
        sol = grid.solve_extended(mv_problem, grid.GridSpec(0.2, 5.0, nx=201, nu=101, ny=61))
        assert sol.f.shape[-1] == 61
        assert abs(sol.value(0, 1.0) - mv_grid.value(0, 1.0)) < 0.01

    def test_f_storage_stride(self, mv_problem):
        sol = grid.solve_extended(mv_problem, grid.GridSpec(0.2, 5.0, nx=51, nu=21,
                                                            max_f_floats=10_000))
        assert sol.diagnostics["f_stride"] > 1
        assert sol.f_levels[-1] == len(sol.times) - 1
        assert len(sol.f) == len(sol.f_levels)


class TestAnchoredRegulator:
    params = LqParams(a=0.5, b=1.0, sigma=0.3, gamma=2.0)

    def test_matches_coefficient_odes(self):
        exact = solve_lq(self.params)
        prob = grid.ExtendedProblem.from_reward(lq_model(self.params, -3.0, 3.0),
                                                lq_reward(self.params))
        assert prob.G is None
        sol = grid.solve_extended(prob, grid.GridSpec(-3.0, 3.0, nx=121, nu=121))
        m = sol.interior()
        assert np.max(np.abs(sol.V[0, m] - exact.V(0.0, sol.x[m]))) < 0.01 * float(exact.V(0, 1.5))
        assert np.max(np.abs(sol.u_hat[0, m] - exact.u_hat(0.0, sol.x[m]))) <= 0.05
        # without G the value is the diagonal of f
        k = 0
        assert np.max(np.abs(sol.V[0] - np.diagonal(sol.f[k]))) <= sol.diagnostics["identity_tol"]

    def test_simplified_refuses_anchored(self):
        prob = grid.ExtendedProblem.from_reward(lq_model(self.params, -1, 1), lq_reward(self.params))
        with pytest.raises(ValueError, match="anchor"):
            grid.solve_simplified(prob, grid.GridSpec(-1, 1, nx=11, nu=5))


class TestReductions:
    def noisy(self):
        return ControlModel(drift=lambda t, x, u: 0.02 * x + 0.05 * u,
                            diffusion=lambda t, x, u: 0.2 * u, control_lo=0.0, control_hi=1.0)

    def test_linear_G_is_standard(self):
        model = self.noisy()
        prob = grid.ExtendedProblem(model, F=lambda xa, y: -0.5 * y * y, G=lambda xa, m: 0.3 * m)
        spec = grid.GridSpec(0.5, 3.0, nx=61, nu=21)
        simp = grid.solve_simplified(prob, spec)
        x = spec.x
        std = grid.solve_standard(model, None, -0.5 * x * x + 0.3 * x, spec, times=simp.times)
        np.testing.assert_allclose(simp.V, std.V, atol=1e-10)

    def test_noiseless_correction_vanishes(self):
        model = drift_only()
        prob = grid.ExtendedProblem(model, F=lambda xa, y: y, G=lambda xa, m: -m * m)
        spec = grid.GridSpec(0.5, 2.0, nx=31, nu=2, nt=101)
        simp = grid.solve_simplified(prob, spec)
        std = grid.solve_standard(model, None, spec.x - spec.x**2, spec, times=simp.times)
        np.testing.assert_allclose(simp.V, std.V, atol=1e-12)


class TestEquivalentStandard:
    noisy = TestReductions.noisy
    def test_dp_reproduces_value(self, mv_problem, mv_grid):
        eq = grid.build_equivalent_standard(mv_problem, mv_grid)
        dp = eq.solve()
        m = mv_grid.interior()
        assert np.max(np.abs(dp.V[:, m] / mv_grid.V[:, m] - 1)) <= 0.01

    def test_kernel_matches_analytic(self, mv_problem, mv_grid, mv_params):
        K = grid.build_equivalent_standard(mv_problem, mv_grid).sample()
        Ka = equivalent_standard_objective(mv_params)
        m = mv_grid.interior()
        for n in (0, len(mv_grid.times) // 2):
            u_part = K[n][m] - K[n][m][:, :1]
            exact = Ka(mv_grid.times[n], mv_grid.controls)[None, :]
            assert np.max(np.abs(u_part - exact)) <= 0.05 * np.max(np.abs(exact))

    def test_time_consistent_kernel_is_running_reward(self):
        model = self.noisy()
        H = lambda xa, s, y, u: -0.1 * u * u  # noqa: E731
        prob = grid.ExtendedProblem(model, F=lambda xa, y: np.log(y), H=H)
        sol = grid.solve_extended(prob, grid.GridSpec(0.5, 3.0, nx=61, nu=21))
        K = grid.build_equivalent_standard(prob, sol).sample()
        u = sol.controls[None, :]
        m = sol.interior()
        running = H(None, None, None, u)
        assert np.max(np.abs(K[:, m] - running)) <= sol.scheme_tolerance

    def test_needs_matching_solution(self, mv_problem, mv_grid_spec):
        simp = grid.solve_simplified(mv_problem, mv_grid_spec)
        with pytest.raises(ValueError):
            grid.build_equivalent_standard(mv_problem, simp)


class TestScaling:
    def test_constant_weight(self, mv_problem, mv_grid_spec, mv_grid):
        rep = grid.scaling_check(mv_problem, lambda x: 2.0 + 0 * x, mv_grid_spec, base=mv_grid)
        assert np.array_equal(rep.weighted.u_hat, mv_grid.u_hat)
        np.testing.assert_allclose(rep.weighted.V, 2 * mv_grid.V, rtol=1e-13)

    @pytest.mark.parametrize("weight", [lambda x: x, lambda x: np.exp(0.1 * x)],
                             ids=["linear", "exponential"])
    def test_state_weights(self, mv_problem, mv_grid_spec, mv_grid, weight):
        rep = grid.scaling_check(mv_problem, weight, mv_grid_spec, base=mv_grid)
        assert rep.argmax_agreement >= 0.99
        assert rep.max_value_deviation <= 0.01

    def test_non_positive_weight(self, mv_problem, mv_grid_spec):
        with pytest.raises(ValueError, match="positive"):
            grid.scaling_check(mv_problem, lambda x: x - 1.0, mv_grid_spec)
