"""How the shape of the discount function changes consumption.

A log-utility agent invests and consumes over [0, 1]. With exponential
discounting every self agrees on the plan. With hyperbolic or present-biased
discounting later selves disagree, and the equilibrium consumption rate
1/a(t) reflects that tension.

Run: python demos/present_bias_consumption.py
"""
import numpy as np

from tic_solve import cir, discounting as dc
from tic_solve.reward import estimate_J
from tic_solve.sde import SimConfig

alpha, r, sigma, T = 0.08, 0.03, 0.2, 1.0
families = {
    "exponential(1)": dc.exponential(1.0),
    "hyperbolic(k=1)": dc.hyperbolic(1.0),
    "hyperbolic(k=4)": dc.hyperbolic(4.0),
    "present bias 0.7": dc.quasi_hyperbolic(0.7, 0.1),
}
ts = np.array([0.0, 0.25, 0.5, 0.75, 0.95])
print("consumption per unit of wealth, 1/a(t)")
print(" " * 18 + "".join(f"t={t:<7}" for t in ts))
sols = {}
for name, disc in families.items():
    sols[name] = sol = dc.solve_log_consumption(alpha, r, sigma, T, disc)
    print(f"{name:<18}" + "".join(f"{v:<9.4f}" for v in 1.0 / sol.a(ts)))
print(f"\nthe risky share is beta/sigma^2 = {(alpha - r) / sigma**2:.4g} for every family")

print("\nMonte Carlo check of V(0,1) for the hyperbolic agent")
sol = sols["hyperbolic(k=1)"]
disc = families["hyperbolic(k=1)"]
est = estimate_J(dc.log_model(alpha, r, sigma, T), sol.law, dc.log_reward(disc, T), 0.0, 1.0,
                 SimConfig(40_000, 200, seed=11))
print(f"  V = {float(sol.V(0, 1)):.5f}, MC = {est.mean:.5f} +- {est.std_err:.5f}")
worst = max(abs(dc.hjb_residual_log(sol, alpha, r, sigma, disc, t, x))
            for t in (0.0, 0.5, 0.9) for x in (0.5, 2.0))
print(f"  largest extended-HJB residual on a few probes: {worst:.1e}")

print("\nthe same idea in a production economy with infinite horizon")
for name, beta_fn in (("exponential(0.1)", dc.exponential(0.1)),
                      ("present bias 0.7", dc.quasi_hyperbolic(0.7, 0.1))):
    log_s = cir.solve_cir_log(cir.CirParams(0.08, 0.2, beta_fn, "log"))
    pow_s = cir.solve_cir_power(cir.CirParams(0.1, 0.2, beta_fn, "power", 0.5))
    print(f"  {name:<17} log: r={log_s.r:.4f} consume {log_s.consumption_rate:.4f}x"
          f" | power(0.5): r={pow_s.r:.4f} consume {pow_s.consumption_rate:.4f}x")
print("  the short rate ignores the discount function; consumption does not")
