"""Mean-variance investing: closed form, grid solver and Monte Carlo side by side.

An investor holding wealth x puts an amount u in a risky asset and wants a high
mean and a low variance of terminal wealth. Because the variance term is not an
expectation of a function of X_T, the problem is time inconsistent; the
equilibrium law is the fixed point that no later self wants to deviate from.

Run: python demos/mean_variance_walkthrough.py
"""
import time

import numpy as np

from tic_solve import grid, mean_variance as mv
from tic_solve.equilibrium import check_equilibrium
from tic_solve.reward import estimate_J
from tic_solve.sde import SimConfig

p = mv.MvParams(alpha=0.08, r=0.03, sigma=0.2, gamma=2.0, T=1.0)
sol = mv.solve_mv(p)

print("closed form")
for t in (0.0, 0.5, 0.9):
    print(f"  t={t:.1f}  u_hat={float(sol.u_hat(t, 1.0)):.5f}  V(t,1)={float(sol.V(t, 1.0)):.6f}")
# the amount invested does not depend on wealth, only on time left
print("  u_hat(0, x) for x = 0.5, 1, 2:", np.round(sol.u_hat(0.0, np.array([0.5, 1.0, 2.0])), 6))

print("\ngeneric grid solver (knows nothing about the closed form)")
problem = grid.ExtendedProblem.from_reward(mv.mv_model(p, 0.0, 2.0), mv.mv_reward(p))
t0 = time.perf_counter()
g = grid.solve_extended(problem, grid.GridSpec(0.2, 5.0, nx=201, nu=101))
print(f"  solved in {time.perf_counter() - t0:.1f} s")
print(f"  V(0,1) grid {g.value(0.0, 1.0):.6f} vs exact {float(sol.V(0.0, 1.0)):.6f}")
mid = g.interior()
print(f"  u_hat on the middle half: {g.u_hat[0, mid].min():.4f} .. {g.u_hat[0, mid].max():.4f}")

print("\nMonte Carlo: the value is the reward of actually following the law")
cfg = SimConfig(50_000, 200, seed=7)
est = estimate_J(mv.mv_model(p), sol.u_hat, mv.mv_reward(p), 0.0, 1.0, cfg)
print(f"  J(0,1) = {est.mean:.5f} +- {est.std_err:.5f}, z = {est.z_score(float(sol.V(0, 1))):.2f}")

print("\nspike test: deviate for a short window h, then return to the law")
u = sol.u_hat
reports = check_equilibrium(mv.mv_model(p), u, {"u+1": lambda t, x: u(t, x) + 1.0},
                            mv.mv_reward(p), [(0.0, 1.0)], [0.2, 0.1, 0.05], cfg)
for row in reports[0].rows():
    print(f"  h={row['h']:<5} delta = {row['delta']:+.5f} (SE {row['std_err']:.5f})")
print(f"  verdict: {reports[0].verdict}")
zero = check_equilibrium(mv.mv_model(p), lambda t, x: np.zeros_like(x), {"u_hat": u},
                         mv.mv_reward(p), [(0.0, 1.0)], [0.2, 0.1, 0.05], cfg)
print(f"  never investing, challenged by u_hat: {zero[0].verdict}")
