"""Controlled scalar diffusions and Euler-Maruyama simulation under feedback laws.

A feedback law is any callable ``law(t, x)`` taking a scalar time and an array
of states and returning the control for every state: an array of shape
``x.shape`` for scalar controls, or ``x.shape + (k,)`` for k-dimensional
controls. Scalars and length-k vectors are broadcast.

Noise is drawn from one Philox stream per path index, keyed by ``(seed, i)``
(``(seed, i // 2)`` for antithetic pairs), so path ``i`` is unchanged when
``n_paths`` changes and two laws simulated with the same seed see identical
normal draws at identical (path, step) indices.
"""
from __future__ import annotations

from dataclasses import dataclass
from functools import lru_cache
from typing import Callable

import numpy as np

FeedbackLaw = Callable[[float, np.ndarray], np.ndarray]

ABSORPTION_FRACTION = 1e-6


class SimulationError(RuntimeError):
    """Raised when a simulated path leaves the finite reals."""


@dataclass(frozen=True)
class ControlModel:
    """Controlled diffusion ``dX = drift(t,X,u) dt + diffusion(t,X,u) dW`` on [0, T].

    ``control_lo``/``control_hi`` truncate the admissible control set to a box;
    give scalars for a scalar control or sequences of length k otherwise.
    ``positive_state`` turns on absorption at ``1e-6 * x0`` for models that
    are only defined for positive states.
    """

    drift: Callable
    diffusion: Callable
    control_lo: float | tuple = -np.inf
    control_hi: float | tuple = np.inf
    T: float = 1.0
    positive_state: bool = False

    def __post_init__(self):
        lo = np.atleast_1d(np.asarray(self.control_lo, dtype=float))
        hi = np.atleast_1d(np.asarray(self.control_hi, dtype=float))
        if lo.shape != hi.shape or lo.ndim != 1:
            raise ValueError("control_lo and control_hi must have the same length")
        if np.any(lo > hi):
            raise ValueError("control_lo must not exceed control_hi")
        if not self.T > 0:
            raise ValueError("horizon T must be positive")

    @property
    def control_dim(self) -> int:
        return np.atleast_1d(np.asarray(self.control_lo)).size

    def clamp(self, u: np.ndarray) -> np.ndarray:
        lo = np.asarray(self.control_lo, dtype=float)
        hi = np.asarray(self.control_hi, dtype=float)
        return np.clip(u, lo, hi)


@dataclass(frozen=True)
class SimConfig:
    n_paths: int = 10_000
    n_steps: int = 200
    seed: int = 42
    antithetic: bool = False

    def __post_init__(self):
        if self.n_paths < 1 or self.n_steps < 1:
            raise ValueError("n_paths and n_steps must be >= 1")
        if not 0 <= self.seed < 2**64:
            raise ValueError("seed must be a 64-bit unsigned integer")


@dataclass
class PathBatch:
    times: np.ndarray
    states: np.ndarray
    controls: np.ndarray
    absorbed: np.ndarray

    @property
    def absorbed_fraction(self) -> float:
        return float(np.mean(self.absorbed))


@lru_cache(maxsize=2)
def _normals(seed: int, n_paths: int, n_steps: int, antithetic: bool) -> np.ndarray:
    n_streams = (n_paths + 1) // 2 if antithetic else n_paths
    z = np.empty((n_streams, n_steps))
    for i in range(n_streams):
        z[i] = np.random.Generator(np.random.Philox(key=[seed, i])).standard_normal(n_steps)
    if antithetic:
        paired = np.empty((2 * n_streams, n_steps))
        paired[0::2] = z
        paired[1::2] = -z
        z = paired[:n_paths]
    z.setflags(write=False)
    return z


def brownian_increments(config: SimConfig, dt: float) -> np.ndarray:
    """Brownian increments of shape (n_paths, n_steps) for step ``dt``."""
    return np.sqrt(dt) * _normals(config.seed, config.n_paths, config.n_steps,
                                  config.antithetic)


def evaluate_law(model: ControlModel, law: FeedbackLaw, t: float, x: np.ndarray) -> np.ndarray:
    """Evaluate ``law`` at (t, x), broadcast to the model's control shape and clamp."""
    u = np.asarray(law(t, x), dtype=float)
    k = model.control_dim
    shape = x.shape if k == 1 else x.shape + (k,)
    return model.clamp(np.broadcast_to(u, shape))


def run_euler(model: ControlModel, law: FeedbackLaw, t0: float, x0: float,
              increments: np.ndarray, observer: Callable | None = None):
    """Euler-Maruyama over [t0, T] driven by given Brownian increments.

    ``increments`` has shape (n_paths, n_steps); the step is ``(T - t0)/n_steps``.
    ``observer(k, t_k, X_k, u_k)`` is called at every grid time including T.
    Returns ``(X_T, absorbed)``.
    """
    if not t0 < model.T:
        raise ValueError(f"t0={t0} must be before the horizon T={model.T}")
    n_paths, n_steps = increments.shape
    dt = (model.T - t0) / n_steps
    x = np.full(n_paths, float(x0))
    absorbed = np.zeros(n_paths, dtype=bool)
    floor = ABSORPTION_FRACTION * abs(x0) if model.positive_state else None
    for k in range(n_steps + 1):
        t = t0 + k * dt if k < n_steps else model.T
        u = evaluate_law(model, law, t, x)
        if observer is not None:
            observer(k, t, x, u)
        if k == n_steps:
            break
        mu = np.broadcast_to(model.drift(t, x, u), x.shape)
        sig = np.broadcast_to(model.diffusion(t, x, u), x.shape)
        x_new = x + mu * dt + sig * increments[:, k]
        if floor is not None:
            x_new = np.where(absorbed, x, x_new)
            hit = x_new <= floor
            x_new = np.where(hit, floor, x_new)
            absorbed |= hit
        bad = ~np.isfinite(x_new)
        if bad.any():
            i = int(np.flatnonzero(bad)[0])
            raise SimulationError(f"non-finite state on path {i} at step {k + 1}")
        x = x_new
    return x, absorbed


def simulate_paths(model: ControlModel, law: FeedbackLaw, t0: float, x0: float,
                   config: SimConfig) -> PathBatch:
    """Simulate ``config.n_paths`` Euler paths of the controlled SDE from (t0, x0).

    Every path follows ``X[k+1] = X[k] + mu*dt + sigma*sqrt(dt)*Z[k]`` with the
    control ``clamp(law(t_k, X_k))``. The result is a pure function of the
    inputs.
    """
    if not t0 < model.T:
        raise ValueError(f"t0={t0} must be before the horizon T={model.T}")
    dt = (model.T - t0) / config.n_steps
    times = t0 + dt * np.arange(config.n_steps + 1)
    times[-1] = model.T
    states = np.empty((config.n_paths, config.n_steps + 1))
    k = model.control_dim
    cshape = (config.n_paths, config.n_steps + 1) + (() if k == 1 else (k,))
    controls = np.empty(cshape)

    def record(step, t, x, u):
        states[:, step] = x
        controls[:, step] = u

    _, absorbed = run_euler(model, law, t0, x0, brownian_increments(config, dt), record)
    return PathBatch(times, states, controls, absorbed)


def spike_law(base: FeedbackLaw, perturb: FeedbackLaw, t: float, h: float) -> FeedbackLaw:
    """Law equal to ``perturb`` on [t, t+h) and to ``base`` elsewhere."""
    if not h > 0:
        raise ValueError("spike width h must be positive")

    def law(s, y):
        if t <= s < t + h:
            return perturb(s, y)
        return base(s, y)

    return law
