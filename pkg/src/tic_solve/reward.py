"""Monte Carlo estimators of the reward functional and its auxiliary functions.

The reward of player ``(t, x)`` under a feedback law is

    J = E[ int_t^T H(t, x, s, X_s, u_s) ds + F(t, x, X_T) ] + G(t, x, E[k(X_T)])

where every piece may depend on the anchor pair ``(t, x)``. Estimators return
a :class:`JEstimate` whose standard error linearises ``G`` around the sample
mean (delta method, per-path, so the covariance with the ``F + H`` part is
kept).
"""
from __future__ import annotations

from dataclasses import dataclass
from typing import Callable, Optional

import numpy as np

from .sde import ControlModel, FeedbackLaw, SimConfig, brownian_increments, run_euler


@dataclass(frozen=True)
class RewardSpec:
    """Anchored reward pieces.

    Signatures: ``H(t_anchor, x_anchor, s, y, u)``, ``F(t_anchor, x_anchor, y)``,
    ``G(t_anchor, x_anchor, m)`` and ``k(y)``. Missing pieces are ``None``;
    ``k`` defaults to the identity.
    """

    F: Optional[Callable] = None
    G: Optional[Callable] = None
    H: Optional[Callable] = None
    k: Optional[Callable] = None
    sense: str = "maximize"

    def __post_init__(self):
        if self.F is None and self.G is None and self.H is None:
            raise ValueError("a reward needs at least one of H, F, G")
        if self.sense not in ("maximize", "minimize"):
            raise ValueError(f"unknown sense {self.sense!r}")

    def transform(self, y):
        return y if self.k is None else self.k(y)


@dataclass(frozen=True)
class JEstimate:
    mean: float
    std_err: float
    n_paths: int

    def z_score(self, value: float) -> float:
        diff = self.mean - value
        if self.std_err == 0:
            return 0.0 if diff == 0 else np.inf * np.sign(diff)
        return diff / self.std_err


def _std_err(values: np.ndarray) -> float:
    n = values.size
    if n < 2:
        return 0.0
    return float(np.std(values, ddof=1) / np.sqrt(n))


def g_slope(G: Callable, t_anchor: float, x_anchor: float, m: float) -> float:
    """Central difference of G in its mean argument, step max(1e-6, 1e-6|m|)."""
    step = max(1e-6, 1e-6 * abs(m))
    return (G(t_anchor, x_anchor, m + step) - G(t_anchor, x_anchor, m - step)) / (2 * step)


def terminal_and_running(model: ControlModel, law: FeedbackLaw, t: float, x: float,
                         config: SimConfig, running: Callable | None = None):
    """Simulate and return per-path ``(X_T, int running(s, X_s, u_s) ds)``.

    The control is held over each Euler step, exactly as the state update
    uses it, and the integral is the trapezoid rule over each step with that
    held control at both ends. A spike of m steps therefore changes the
    running reward over exactly m steps.
    """
    dt = (model.T - t) / config.n_steps
    acc = np.zeros(config.n_paths)
    n = config.n_steps
    held = [None]

    def observe(k, s, y, u):
        if k > 0:
            acc[:] += 0.5 * dt * np.broadcast_to(running(s, y, held[0]), y.shape)
        if k < n:
            acc[:] += 0.5 * dt * np.broadcast_to(running(s, y, u), y.shape)
        held[0] = u

    x_T, _ = run_euler(model, law, t, x, brownian_increments(config, dt),
                       observe if running is not None else None)
    return x_T, acc


def reward_parts(model, law, spec: RewardSpec, t, x, config, anchor=None):
    """Per-path ``F + int H`` and ``k(X_T)`` with anchor ``(t, x)`` unless given."""
    at, ax = (t, x) if anchor is None else anchor
    running = None
    if spec.H is not None:
        running = lambda s, y, u: spec.H(at, ax, s, y, u)  # noqa: E731
    x_T, integral = terminal_and_running(model, law, t, x, config, running)
    fh = integral
    if spec.F is not None:
        fh = fh + np.broadcast_to(spec.F(at, ax, x_T), x_T.shape)
    return fh, np.broadcast_to(spec.transform(x_T), x_T.shape)


def combine(spec: RewardSpec, t_anchor, x_anchor, fh: np.ndarray, kx: np.ndarray):
    """Point estimate and delta-method per-path linearisation of J."""
    if spec.G is None:
        return float(np.mean(fh)), fh
    m = float(np.mean(kx))
    if not np.isfinite(m):
        raise ValueError("mean of k(X_T) is not finite; G cannot be evaluated")
    slope = g_slope(spec.G, t_anchor, x_anchor, m)
    value = float(np.mean(fh)) + float(spec.G(t_anchor, x_anchor, m))
    return value, fh + slope * kx


def estimate_J(model: ControlModel, law: FeedbackLaw, spec: RewardSpec, t: float, x: float,
               config: SimConfig) -> JEstimate:
    """Monte Carlo estimate of the reward of player (t, x) under ``law``."""
    fh, kx = reward_parts(model, law, spec, t, x, config)
    mean, linear = combine(spec, t, x, fh, kx)
    return JEstimate(mean, _std_err(linear), config.n_paths)


def estimate_f(model: ControlModel, law: FeedbackLaw, spec: RewardSpec, anchor_t: float,
               anchor_x: float, t: float, x: float, config: SimConfig) -> JEstimate:
    """E_{t,x}[ int_t^T H(anchor, s, X_s, u_s) ds + F(anchor, X_T) ] with the anchor frozen."""
    fh, _ = reward_parts(model, law, spec, t, x, config, anchor=(anchor_t, anchor_x))
    return JEstimate(float(np.mean(fh)), _std_err(fh), config.n_paths)


def estimate_g(model: ControlModel, law: FeedbackLaw, k: Callable | None, t: float, x: float,
               config: SimConfig) -> JEstimate:
    """E_{t,x}[k(X_T)]; ``k=None`` means the identity."""
    x_T, _ = terminal_and_running(model, law, t, x, config)
    kx = x_T if k is None else np.broadcast_to(k(x_T), x_T.shape)
    return JEstimate(float(np.mean(kx)), _std_err(kx), config.n_paths)
