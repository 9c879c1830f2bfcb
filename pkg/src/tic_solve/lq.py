"""Time-inconsistent linear-quadratic regulator.

State ``dX = (a X + b u) dt + sigma dW``; the player at (t, x) minimises

    E[ 1/2 int_t^T u_s^2 ds ] + (gamma/2) E[ (X_T - x)^2 ],

i.e. wants to end up near where they stand today. The anchored expected cost
of the equilibrium law is the quadratic

    f(t, x, y) = A x^2 + B y^2 + C x y + D x + F y + H

in the current state x and anchor y, and the equilibrium law is
``u = -b f_x(t, x, x) = -b ((2A + C) x + D)``.
"""
from __future__ import annotations

from dataclasses import dataclass
from typing import Callable

import numpy as np

from .ode import OdeSolution, OdeSystem, integrate_terminal
from .reward import RewardSpec, estimate_J
from .sde import ControlModel, SimConfig

FLAG_SIGMAS = 5.0


@dataclass(frozen=True)
class LqParams:
    a: float = 0.0
    b: float = 1.0
    sigma: float = 0.1
    gamma: float = 1.0
    T: float = 1.0

    def __post_init__(self):
        if not self.T > 0:
            raise ValueError("T must be positive")
        if not self.gamma > 0:
            raise ValueError("gamma must be positive")
        if self.b == 0:
            raise ValueError("control gain b must be non-zero")


@dataclass(frozen=True)
class LqSolution:
    params: LqParams
    ode: OdeSolution
    A: Callable
    B: Callable
    C: Callable
    D: Callable
    F: Callable
    H: Callable
    u_hat: Callable
    f: Callable
    V: Callable


def lq_rhs(p: LqParams):
    a, b, s2 = p.a, p.b, p.sigma**2

    def rhs(t, y):
        A, B, C, D, F, H = y
        k = 2 * A + C
        return np.array([
            -(2 * a * A - 2 * b * b * A * k + 0.5 * b * b * k * k),
            0.0,
            -(a * C - b * b * C * k),
            -(a * D - 2 * b * b * A * D),
            b * b * C * D,
            0.5 * b * b * D * D - s2 * A,
        ])

    return rhs


def solve_lq(params: LqParams, steps: int = 4000) -> LqSolution:
    """Integrate the six coefficient ODEs backward from
    ``A = B = gamma/2, C = -gamma, D = F = H = 0`` at T."""
    p = params
    g = p.gamma
    sol = integrate_terminal(OdeSystem(6, lq_rhs(p)), [g / 2, g / 2, -g, 0.0, 0.0, 0.0],
                             0.0, p.T, steps)
    A, B, C, D, F, H = (sol.component(i) for i in range(6))

    def u_hat(t, x):
        return -p.b * ((2 * A(t) + C(t)) * np.asarray(x, dtype=float) + D(t))

    def f(t, x, y):
        return A(t) * x * x + B(t) * y * y + C(t) * x * y + D(t) * x + F(t) * y + H(t)

    def V(t, x):
        return f(t, x, x)

    return LqSolution(p, sol, A, B, C, D, F, H, u_hat, f, V)


def lq_model(params: LqParams, control_lo=-np.inf, control_hi=np.inf) -> ControlModel:
    p = params
    return ControlModel(drift=lambda t, x, u: p.a * x + p.b * u,
                        diffusion=lambda t, x, u: p.sigma * np.ones_like(x),
                        control_lo=control_lo, control_hi=control_hi, T=p.T)


def lq_reward(params: LqParams) -> RewardSpec:
    g = params.gamma
    return RewardSpec(H=lambda ta, xa, s, y, u: 0.5 * u * u,
                      F=lambda ta, xa, y: 0.5 * g * (y - xa) ** 2,
                      sense="minimize")


def lq_value_check(params: LqParams, solution: LqSolution, points, config: SimConfig):
    """Monte Carlo cost of the equilibrium law against ``f(t, x, x)``.

    Each row carries the estimate, its standard error, the model value, the
    z-score and ``flag = |z| > 5`` marking a disagreement that points at the
    coefficient equations rather than sampling noise.
    """
    model = lq_model(params)
    spec = lq_reward(params)
    rows = []
    for t, x in points:
        if not 0 <= t < params.T:
            raise ValueError(f"t={t} must lie in [0, T)")
        est = estimate_J(model, solution.u_hat, spec, t, x, config)
        value = float(solution.V(t, x))
        z = est.z_score(value)
        rows.append({"t": t, "x": x, "estimate": est.mean, "std_err": est.std_err,
                     "value": value, "z": z, "pass": abs(z) <= 3.0,
                     "flag": abs(z) > FLAG_SIGMAS})
    return rows
