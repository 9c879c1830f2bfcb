"""Fixed-step classical Runge-Kutta for terminal-value ODE systems."""
from __future__ import annotations

from dataclasses import dataclass
from typing import Callable

import numpy as np


class OdeError(RuntimeError):
    pass


@dataclass(frozen=True)
class OdeSystem:
    dim: int
    rhs: Callable[[float, np.ndarray], np.ndarray]


@dataclass(frozen=True)
class OdeSolution:
    times: np.ndarray
    values: np.ndarray

    def __call__(self, t):
        """Linear interpolation between nodes; returns shape (dim,) or (len(t), dim)."""
        t = np.asarray(t, dtype=float)
        out = np.stack([np.interp(t, self.times, col) for col in self.values.T], axis=-1)
        return out

    def component(self, i: int) -> Callable:
        col = self.values[:, i]
        return lambda t: np.interp(t, self.times, col)


def _rk4_step(rhs, t, y, h):
    k1 = rhs(t, y)
    k2 = rhs(t + 0.5 * h, y + 0.5 * h * k1)
    k3 = rhs(t + 0.5 * h, y + 0.5 * h * k2)
    k4 = rhs(t + h, y + h * k3)
    return y + (h / 6.0) * (k1 + 2.0 * k2 + 2.0 * k3 + k4)


def integrate_terminal(system: OdeSystem, terminal, t0: float, T: float,
                       steps: int) -> OdeSolution:
    """Integrate ``y' = rhs(t, y)`` backward from ``y(T) = terminal`` to t0.

    Uses ``steps`` uniform RK4 steps; the returned grid runs from t0 to T.
    """
    if not t0 < T:
        raise ValueError("t0 must be before T")
    if steps < 1:
        raise ValueError("steps must be >= 1")
    y = np.asarray(terminal, dtype=float).copy()
    if y.shape != (system.dim,):
        raise ValueError(f"terminal must have length {system.dim}")

    def rhs(t, state):
        d = np.asarray(system.rhs(t, state), dtype=float)
        if d.shape != (system.dim,):
            raise OdeError(f"rhs returned shape {d.shape}, expected ({system.dim},)")
        if not np.all(np.isfinite(d)):
            raise OdeError(f"non-finite derivative at t={t}")
        return d

    times = np.linspace(t0, T, steps + 1)
    values = np.empty((steps + 1, system.dim))
    values[-1] = y
    h = -(T - t0) / steps
    for i in range(steps, 0, -1):
        y = _rk4_step(rhs, times[i], y, h)
        if not np.all(np.isfinite(y)):
            raise OdeError(f"solution blew up at t={times[i - 1]}")
        values[i - 1] = y
    return OdeSolution(times, values)


def integrate_forward(system: OdeSystem, initial, t0: float, T: float,
                      steps: int) -> OdeSolution:
    """Forward RK4 companion of :func:`integrate_terminal`."""
    reversed_system = OdeSystem(system.dim, lambda s, y: -np.asarray(system.rhs(t0 + T - s, y)))
    sol = integrate_terminal(reversed_system, initial, t0, T, steps)
    return OdeSolution(sol.times, sol.values[::-1].copy())
