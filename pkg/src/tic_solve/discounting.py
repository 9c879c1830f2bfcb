"""Investment and consumption under log utility with non-exponential discounting.

Wealth follows ``dX = (r X + beta u - c) dt + sigma u dW`` with ``u`` the amount
in the risky asset, ``c`` the consumption rate and ``beta = alpha - r``. The
player at time t ranks laws by

    E[ int_t^T phi(s - t) ln c_s ds + phi(T - t) ln X_T ].

For a discount function other than an exponential this is time inconsistent.
The equilibrium is ``c = x / a(t)``, ``u = (beta / sigma^2) x`` with

    a(t) = phi(T - t) + int_0^{T-t} phi(s) ds

and value ``V = a(t) ln x + d(t)``.
"""
from __future__ import annotations

from dataclasses import dataclass, field
from typing import Callable, Optional

import numpy as np
from scipy.interpolate import CubicSpline

from .ode import OdeSolution, OdeSystem, integrate_terminal
from .reward import RewardSpec
from .sde import ControlModel

SIMPSON_PANELS = 2000
CONSUMPTION_FLOOR = 1e-12


@dataclass(frozen=True)
class DiscountFn:
    """Discount weight ``phi`` of a delay, normalised so that ``phi(0) = 1``.

    Parameters
    ----------
    phi, phi_prime : callable
        Weight and its derivative. Without ``phi_prime`` a central difference
        with step ``fd_step`` is used.
    tail : callable, optional
        ``tail(L) = int_L^inf phi``; ``None`` means the integral diverges or is
        unknown in closed form.
    exp_terms : tuple of (weight, rate), optional
        Set for finite sums of exponentials ``sum w exp(-rate s)``; enables
        closed-form weighted integrals.
    """

    phi: Callable
    phi_prime: Optional[Callable] = None
    name: str = "custom"
    tail: Optional[Callable] = None
    exp_terms: Optional[tuple] = None
    fd_step: float = 1e-6
    params: dict = field(default_factory=dict)

    def __post_init__(self):
        if abs(float(self.phi(0.0)) - 1.0) > 1e-12:
            raise ValueError("discount functions are normalised to phi(0) = 1")

    def __call__(self, s):
        return self.phi(np.asarray(s, dtype=float))

    def derivative(self, s):
        s = np.asarray(s, dtype=float)
        if self.phi_prime is not None:
            return self.phi_prime(s)
        h = self.fd_step
        return (self.phi(s + h) - self.phi(s - h)) / (2 * h)


def exponential(delta: float) -> DiscountFn:
    if not delta > 0:
        raise ValueError("delta must be positive")
    return DiscountFn(
        phi=lambda s: np.exp(-delta * s),
        phi_prime=lambda s: -delta * np.exp(-delta * s),
        name="exponential",
        tail=lambda L: np.exp(-delta * L) / delta,
        exp_terms=((1.0, delta),),
        params={"delta": delta})


def hyperbolic(k: float, m: float = 1.0) -> DiscountFn:
    """``phi(s) = (1 + k s)^(-m)``; integrable on [0, inf) only for m > 1."""
    if not k > 0 or not m > 0:
        raise ValueError("k and m must be positive")
    tail = None
    if m > 1:
        tail = lambda L: (1 + k * L) ** (1 - m) / (k * (m - 1))  # noqa: E731
    return DiscountFn(
        phi=lambda s: (1 + k * s) ** (-m),
        phi_prime=lambda s: -m * k * (1 + k * s) ** (-m - 1),
        name="hyperbolic", tail=tail, params={"k": k, "m": m})


def quasi_hyperbolic(beta: float, delta: float, jump_rate: float = 20.0) -> DiscountFn:
    """Smoothed present bias ``exp(-delta s) (beta + (1 - beta) exp(-jump_rate s))``.

    The weight starts at 1 and falls quickly to the level ``beta exp(-delta s)``;
    ``jump_rate`` sets how fast (the step version is its limit).
    """
    if not 0 < beta <= 1 or not delta > 0 or not jump_rate > 0:
        raise ValueError("need 0 < beta <= 1, delta > 0, jump_rate > 0")
    terms = ((beta, delta), (1.0 - beta, delta + jump_rate))

    def phi(s):
        return sum(w * np.exp(-lam * s) for w, lam in terms)

    def phi_prime(s):
        return sum(-lam * w * np.exp(-lam * s) for w, lam in terms)

    def tail(L):
        return sum(w * np.exp(-lam * L) / lam for w, lam in terms)

    return DiscountFn(phi, phi_prime, "quasi-hyperbolic", tail, terms,
                      params={"beta": beta, "delta": delta, "jump_rate": jump_rate})


def simpson(y: np.ndarray, dx, axis: int = -1) -> np.ndarray:
    """Composite Simpson rule on an even number of uniform panels."""
    n = y.shape[axis] - 1
    if n % 2:
        raise ValueError("Simpson's rule needs an even number of panels")
    w = np.ones(n + 1)
    w[1:-1:2] = 4.0
    w[2:-1:2] = 2.0
    return np.tensordot(y, w, axes=([axis], [0])) * (np.asarray(dx) / 3.0)


def discount_integral(disc: DiscountFn, tau, panels: int = SIMPSON_PANELS):
    """``int_0^tau phi(s) ds`` for each entry of ``tau`` by composite Simpson."""
    tau = np.asarray(tau, dtype=float)
    grid = tau[..., None] * np.linspace(0.0, 1.0, panels + 1)
    return simpson(disc(grid), tau / panels)


@dataclass(frozen=True)
class LogConsumptionSolution:
    alpha: float
    r: float
    sigma: float
    T: float
    disc: DiscountFn
    a: Callable
    a_dot: Callable
    b: Callable
    d: Callable
    d_ode: OdeSolution
    c_hat: Callable
    u_hat: Callable
    law: Callable
    V: Callable
    growth_integral: Callable

    @property
    def beta(self) -> float:
        return self.alpha - self.r


def solve_log_consumption(alpha: float, r: float, sigma: float, T: float,
                          disc: DiscountFn, steps: int = 200,
                          quad_panels: int = 200) -> LogConsumptionSolution:
    """Equilibrium investment and consumption for log utility.

    ``a`` is evaluated by Simpson quadrature. ``d`` is integrated backward from
    ``d(T) = 0`` with ``steps`` RK4 steps of

        d' = ln a - a (r + beta^2/(2 sigma^2)) + 1
             - int_t^T phi'(s-t) (I(t,s) - ln a(s)) ds - phi'(T-t) I(t,T)

    where ``I(t,s) = int_t^s b`` and ``b = r + beta^2/(2 sigma^2) - 1/a`` is the
    expected log-growth rate of equilibrium wealth.
    """
    if not sigma > 0:
        raise ValueError("sigma must be positive")
    if not T > 0:
        raise ValueError("T must be positive")
    beta = alpha - r
    base_rate = r + beta**2 / (2 * sigma**2)

    def a(t):
        tau = T - np.asarray(t, dtype=float)
        return disc(tau) + discount_integral(disc, tau)

    def a_dot(t):
        tau = T - np.asarray(t, dtype=float)
        return -disc.derivative(tau) - disc(tau)

    nodes = np.linspace(0.0, T, SIMPSON_PANELS + 1)
    a_nodes = a(nodes)
    if np.any(a_nodes <= 0):
        i = int(np.flatnonzero(a_nodes <= 0)[0])
        raise ValueError(f"a(t) <= 0 at t = {nodes[i]}; consumption undefined")
    log_a = CubicSpline(nodes, np.log(a_nodes))
    b_spline = CubicSpline(nodes, base_rate - 1.0 / a_nodes)
    B = b_spline.antiderivative()

    def b(t):
        return base_rate - 1.0 / a(t)

    def growth_integral(t, s):
        """``I(t, s) = int_t^s b``."""
        return B(s) - B(t)

    def d_rhs(t, _y):
        s = np.linspace(t, T, quad_panels + 1)
        inner = disc.derivative(s - t) * (growth_integral(t, s) - log_a(s))
        integral = simpson(inner, (T - t) / quad_panels)
        value = (log_a(t) - np.exp(log_a(t)) * base_rate + 1.0 - integral
                 - disc.derivative(T - t) * growth_integral(t, T))
        return np.array([value])

    d_sol = integrate_terminal(OdeSystem(1, d_rhs), [0.0], 0.0, T, steps)
    d = d_sol.component(0)

    def c_hat(t, x):
        return np.asarray(x, dtype=float) / a(t)

    def u_hat(t, x):
        return beta / sigma**2 * np.asarray(x, dtype=float)

    def law(t, x):
        return np.stack([u_hat(t, x), c_hat(t, x) * np.ones(np.shape(x))], axis=-1)

    def V(t, x):
        return a(t) * np.log(x) + d(t)

    return LogConsumptionSolution(alpha, r, sigma, T, disc, a, a_dot, b, d, d_sol,
                                  c_hat, u_hat, law, V, growth_integral)


def d_by_quadrature(solution: LogConsumptionSolution, t: float, panels: int = 400) -> float:
    """``d(t) = int_t^T phi(s-t)(I(t,s) - ln a(s)) ds + phi(T-t) I(t,T)``.

    This is the constant part of the expected discounted log reward and is
    used to cross-check the ODE route.
    """
    sol = solution
    if t >= sol.T:
        return 0.0
    s = np.linspace(t, sol.T, panels + 1)
    inner = sol.disc(s - t) * (sol.growth_integral(t, s) - np.log(sol.a(s)))
    return float(simpson(inner, (sol.T - t) / panels)
                 + sol.disc(sol.T - t) * sol.growth_integral(t, sol.T))


def hjb_residual_log(solution: LogConsumptionSolution, alpha: float, r: float, sigma: float,
                     disc: DiscountFn, t: float, x: float, panels: int = 400) -> float:
    """Left side of the extended HJB equation at (t, x), evaluated at the equilibrium controls.

    Uses ``h^s(t,x) = ln x + I(t,s) - ln a(s)`` (expected log consumption at s)
    and ``gamma(t,x) = ln x + I(t,T)`` (expected log terminal wealth). ``d'``
    comes from a spline through the stored ODE nodes, so the check is independent
    of the right-hand side used to build d.
    """
    sol = solution
    T = sol.T
    if not 0 <= t < T or not x > 0:
        raise ValueError("need 0 <= t < T and x > 0")
    beta = alpha - r
    d_dot = float(CubicSpline(sol.d_ode.times, sol.d_ode.values[:, 0])(t, 1))
    a_t = float(sol.a(t))
    c = x / a_t
    u = beta / sigma**2 * x
    lx = np.log(x)
    generator = (float(sol.a_dot(t)) * lx + d_dot
                 + (r * x + beta * u - c) * a_t / x
                 - 0.5 * sigma**2 * u**2 * a_t / x**2)
    s = np.linspace(t, T, panels + 1)
    h_s = lx + sol.growth_integral(t, s) - np.log(sol.a(s))
    spread = simpson(disc.derivative(s - t) * h_s, (T - t) / panels)
    gamma_t = lx + sol.growth_integral(t, T)
    return float(generator + np.log(c) + spread + disc.derivative(T - t) * gamma_t)


def log_model(alpha: float, r: float, sigma: float, T: float) -> ControlModel:
    """Two-dimensional control ``(u, c)``: risky amount and consumption rate."""
    beta = alpha - r
    return ControlModel(
        drift=lambda t, x, u: r * x + beta * u[..., 0] - u[..., 1],
        diffusion=lambda t, x, u: sigma * u[..., 0],
        control_lo=(-np.inf, CONSUMPTION_FLOOR), control_hi=(np.inf, np.inf),
        T=T, positive_state=True)


def log_reward(disc: DiscountFn, T: float) -> RewardSpec:
    return RewardSpec(
        H=lambda ta, xa, s, y, u: disc(s - ta) * np.log(u[..., 1]),
        F=lambda ta, xa, y: disc(T - ta) * np.log(y))
