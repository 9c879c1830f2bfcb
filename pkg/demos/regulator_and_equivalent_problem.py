"""A regulator that wants to stay where it is, and a standard problem with the same answer.

Part one: the controller at (t, x) pays for effort and for ending far from its
current position x. Each self has a different target, so the law must be an
equilibrium. The anchored cost is quadratic, with coefficients that solve a
small ODE system.

Part two: for the mean-variance investor, the grid solution of the extended
system is turned into a running reward K of an ordinary control problem.
Plain dynamic programming on K recovers the same value.

Run: python demos/regulator_and_equivalent_problem.py
"""
import numpy as np

from tic_solve import grid, lq, mean_variance as mv
from tic_solve.sde import SimConfig

p = lq.LqParams(a=0.5, b=1.0, sigma=0.3, gamma=2.0, T=1.0)
sol = lq.solve_lq(p)
print("regulator coefficients")
for t in (0.0, 0.5, 1.0):
    print(f"  t={t:.1f}  A={float(sol.A(t)):+.4f}  C={float(sol.C(t)):+.4f}  "
          f"H={float(sol.H(t)):.4f}  u_hat(t,1)={float(sol.u_hat(t, 1.0)):+.4f}")
print("  B stays at gamma/2 and D, F stay at zero, as the structure requires")
for row in lq.lq_value_check(p, sol, [(0.0, 1.0), (0.5, -0.5)], SimConfig(40_000, 200, seed=3)):
    print(f"  MC cost at ({row['t']}, {row['x']}): {row['estimate']:.5f} vs {row['value']:.5f}"
          f" (z={row['z']:+.2f})")

q = mv.MvParams(alpha=0.08, r=0.03, sigma=0.2, gamma=2.0, T=1.0)
problem = grid.ExtendedProblem.from_reward(mv.mv_model(q, 0.0, 2.0), mv.mv_reward(q))
spec = grid.GridSpec(0.2, 5.0, nx=101, nu=61)
ext = grid.solve_extended(problem, spec)
eq = grid.build_equivalent_standard(problem, ext)
dp = eq.solve()
mid = ext.interior()
print("\nequivalent standard problem")
print(f"  max relative gap between DP on K and the equilibrium value: "
      f"{np.max(np.abs(dp.V[:, mid] / ext.V[:, mid] - 1)):.1e}")
print(f"  DP argmax vs equilibrium law on the middle half: "
      f"{np.max(np.abs(dp.u_hat[:, mid] - ext.u_hat[:, mid])):.3f} (control step "
      f"{ext.controls[1] - ext.controls[0]:.3f})")

print("\nscaling the objective by a positive function of the anchor leaves the law alone")
for name, w in (("x", lambda x: x), ("exp(0.1x)", lambda x: np.exp(0.1 * x))):
    rep = grid.scaling_check(problem, w, spec, base=ext)
    print(f"  weight {name:<10} argmax agreement {rep.argmax_agreement:.3f}, "
          f"value deviation {rep.max_value_deviation:.1e}")
