"""Dynamic mean-variance portfolio selection with equilibrium (time-consistent) controls.

Wealth follows ``dX = (r X + beta u) dt + sigma u dW`` where ``u`` is the amount
held in the risky asset and ``beta = alpha - r``. The player at (t, x) ranks
laws by ``E[X_T] - (gamma/2) Var[X_T]`` (constant risk aversion) or by
``E[X_T] - (gamma/(2x)) Var[X_T]`` (risk aversion inversely proportional to
current wealth).
"""
from __future__ import annotations

from dataclasses import dataclass
from typing import Callable

import numpy as np

from .ode import OdeSolution, OdeSystem, integrate_terminal
from .reward import RewardSpec
from .sde import ControlModel


class SingularityError(ArithmeticError):
    """Raised when the wealth-variant coefficient b reaches zero."""


@dataclass(frozen=True)
class MvParams:
    alpha: float = 0.08
    r: float = 0.03
    sigma: float = 0.2
    gamma: float = 2.0
    T: float = 1.0

    def __post_init__(self):
        if not self.sigma > 0:
            raise ValueError("sigma must be positive")
        if not self.gamma > 0:
            raise ValueError("gamma must be positive")
        if not self.T > 0:
            raise ValueError("T must be positive")

    @property
    def beta(self) -> float:
        """Excess return alpha - r."""
        return self.alpha - self.r


@dataclass(frozen=True)
class MvSolution:
    params: MvParams
    A: Callable
    B: Callable
    a: Callable
    b: Callable
    u_hat: Callable
    V: Callable
    g: Callable


@dataclass(frozen=True)
class MvWealthSolution:
    params: MvParams
    ode: OdeSolution
    a: Callable
    b: Callable
    slope: Callable
    u_hat: Callable
    V: Callable


def solve_mv(params: MvParams) -> MvSolution:
    """Closed-form equilibrium for constant risk aversion.

    The amount invested is ``(beta / (gamma sigma^2)) exp(-r (T - t))``, independent
    of wealth; ``V = A x + B`` and ``g = E[X_T] = a x + b``.
    """
    p = params
    kappa = p.beta**2 / (p.gamma * p.sigma**2)

    def A(t):
        return np.exp(p.r * (p.T - np.asarray(t, dtype=float)))

    def B(t):
        return 0.5 * kappa * (p.T - np.asarray(t, dtype=float))

    def b(t):
        return kappa * (p.T - np.asarray(t, dtype=float))

    def u_hat(t, x):
        level = p.beta / (p.gamma * p.sigma**2) * np.exp(-p.r * (p.T - t))
        return np.full(np.shape(x), level)

    def V(t, x):
        return A(t) * x + B(t)

    def g(t, x):
        return A(t) * x + b(t)

    return MvSolution(p, A, B, A, b, u_hat, V, g)


def _wealth_slope(p: MvParams, a, b):
    return p.beta / (p.gamma * p.sigma**2) * (a + p.gamma * (a * a - b)) / b


def solve_mv_wealth(params: MvParams, steps: int = 2000) -> MvWealthSolution:
    """Equilibrium for risk aversion ``gamma / x``.

    With ``E[X_T] = a(t) x`` and ``E[X_T^2] = b(t) x^2`` under the linear law
    ``u = c(t) x``, where ``c = (beta/(gamma sigma^2)) (a + gamma(a^2 - b)) / b``,

        a' = -(r + beta c) a,      b' = -(2 (r + beta c) + sigma^2 c^2) b,

    with ``a(T) = b(T) = 1``. The value is ``V = (a + (gamma/2)(a^2 - b)) x``.

    Raises
    ------
    SingularityError
        If b is not positive at some node.
    """
    p = params

    def rhs(t, y):
        a, b = y
        if not b > 0:
            raise SingularityError(f"b(t) = {b} <= 0 at t = {t}")
        c = _wealth_slope(p, a, b)
        drift = p.r + p.beta * c
        return np.array([-drift * a, -(2.0 * drift + p.sigma**2 * c * c) * b])

    sol = integrate_terminal(OdeSystem(2, rhs), [1.0, 1.0], 0.0, p.T, steps)
    if np.any(sol.values[:, 1] <= 0):
        i = int(np.flatnonzero(sol.values[:, 1] <= 0)[0])
        raise SingularityError(f"b(t) <= 0 at t = {sol.times[i]}")
    a_fn = sol.component(0)
    b_fn = sol.component(1)

    def slope(t):
        return _wealth_slope(p, a_fn(t), b_fn(t))

    def u_hat(t, x):
        return slope(t) * np.asarray(x, dtype=float)

    def V(t, x):
        a, b = a_fn(t), b_fn(t)
        return (a + 0.5 * p.gamma * (a * a - b)) * np.asarray(x, dtype=float)

    return MvWealthSolution(p, sol, a_fn, b_fn, slope, u_hat, V)


def equivalent_standard_objective(params: MvParams) -> Callable:
    """Running kernel ``K(s, u) = -(gamma sigma^2 / 2) exp(2 r (T - s)) u^2``.

    Maximising ``E[X_T + int K(s, u_s) ds]`` is a standard, time-consistent
    problem whose optimal law coincides with the mean-variance equilibrium.
    """
    p = params

    def K(s, u):
        return -0.5 * p.gamma * p.sigma**2 * np.exp(2.0 * p.r * (p.T - np.asarray(s))) * np.asarray(u) ** 2

    return K


def mv_model(params: MvParams, control_lo=-np.inf, control_hi=np.inf,
             positive_state: bool = False) -> ControlModel:
    p = params
    return ControlModel(
        drift=lambda t, x, u: p.r * x + p.beta * u,
        diffusion=lambda t, x, u: p.sigma * u,
        control_lo=control_lo, control_hi=control_hi, T=p.T,
        positive_state=positive_state)


def mv_reward(params: MvParams) -> RewardSpec:
    """``F(y) = y - (gamma/2) y^2`` and ``G(m) = (gamma/2) m^2``."""
    gam = params.gamma
    return RewardSpec(F=lambda t, x, y: y - 0.5 * gam * y * y,
                      G=lambda t, x, m: 0.5 * gam * m * m)


def mv_wealth_reward(params: MvParams) -> RewardSpec:
    """Mean-variance with risk aversion ``gamma / x`` for the anchor wealth x."""
    gam = params.gamma
    return RewardSpec(F=lambda t, x, y: y - 0.5 * gam / x * y * y,
                      G=lambda t, x, m: 0.5 * gam / x * m * m)
