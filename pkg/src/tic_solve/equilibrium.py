"""Spike-perturbation test of the intrapersonal equilibrium condition.

For a candidate law and a perturbation, the law that follows the perturbation
on [t, t+h) and the candidate afterwards is compared against the candidate,
with common random numbers, through

    delta(h) = (J(t, x, candidate) - J(t, x, spiked)) / h

(sign flipped for minimisation). The candidate passes at (t, x) when no
delta is significantly negative. A pass certifies the inequality only; it
says nothing about whether the candidate is a maximum or a stationary point.
"""
from __future__ import annotations

import os
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field

import numpy as np

from .reward import RewardSpec, combine, reward_parts
from .sde import ControlModel, FeedbackLaw, SimConfig, spike_law


@dataclass
class SpikeReport:
    point: tuple
    perturbation: str
    h_values: list
    deltas: list
    std_errs: list
    verdict: str
    requested_h: list = field(default_factory=list)

    def __post_init__(self):
        n = len(self.h_values)
        if not (len(self.deltas) == n and len(self.std_errs) == n):
            raise ValueError("h_values, deltas and std_errs must have equal length")
        h = np.asarray(self.h_values)
        if np.any(h <= 0) or np.any(np.diff(h) >= 0):
            raise ValueError("h_values must be positive and strictly decreasing")

    def rows(self):
        t, x = self.point
        for h, d, se in zip(self.h_values, self.deltas, self.std_errs):
            yield {"t": t, "x": x, "perturbation": self.perturbation, "h": h,
                   "delta": d, "std_err": se, "verdict": self.verdict}


def worker_count() -> int:
    """Worker cap from TIC_SOLVE_THREADS (0 or unset means one per CPU)."""
    raw = os.environ.get("TIC_SOLVE_THREADS", "0")
    try:
        n = int(raw)
    except ValueError:
        raise ValueError(f"TIC_SOLVE_THREADS must be an integer, got {raw!r}") from None
    if n < 0:
        raise ValueError("TIC_SOLVE_THREADS must be >= 0")
    return n or (os.cpu_count() or 1)


def snap_h(h: float, dt: float) -> int:
    """Number of whole simulation steps in a spike of width ``h``."""
    return int(np.floor(h / dt + 1e-9))


def verdict(deltas, std_errs, tol_sigmas: float) -> str:
    d = np.asarray(deltas)
    se = np.asarray(std_errs)
    below = d < -tol_sigmas * se
    if not below.any():
        return "pass"
    if len(d) >= 2 and below[-1] and below[-2]:
        return "fail"
    return "inconclusive"


def paired_difference(model, base_parts, law, spec: RewardSpec, t, x, config):
    """Mean and standard error of J(base) - J(law), paired path by path."""
    fh0, k0 = base_parts
    fh1, k1 = reward_parts(model, law, spec, t, x, config)
    j0, lin0 = combine(spec, t, x, fh0, k0)
    j1, lin1 = combine(spec, t, x, fh1, k1)
    d = lin0 - lin1
    se = float(np.std(d, ddof=1) / np.sqrt(d.size)) if d.size > 1 else 0.0
    return j0 - j1, se


def check_equilibrium(model: ControlModel, candidate: FeedbackLaw, perturbations,
                      spec: RewardSpec, points, h_values, config: SimConfig,
                      tol_sigmas: float = 3.0) -> list[SpikeReport]:
    """Run the spike test for every (point, perturbation) pair.

    ``perturbations`` is a sequence of laws or a mapping ``name -> law``.
    Each requested h is snapped down to a whole number of simulation steps
    (the step is ``(T - t)/config.n_steps``); the snapped widths are reported.
    """
    if not tol_sigmas > 0:
        raise ValueError("tol_sigmas must be positive")
    if hasattr(perturbations, "items"):
        named = list(perturbations.items())
    else:
        named = [(f"perturbation_{i}", p) for i, p in enumerate(perturbations)]
    if np.any(np.diff(np.asarray(h_values, dtype=float)) >= 0):
        raise ValueError("h_values must be strictly decreasing")
    sign = 1.0 if spec.sense == "maximize" else -1.0

    jobs = []
    for t, x in points:
        dt = (model.T - t) / config.n_steps
        steps = []
        for h in h_values:
            if not 0 < h < model.T - t:
                raise ValueError(f"h={h} must lie in (0, T - t) = (0, {model.T - t})")
            m = snap_h(h, dt)
            if m < 1:
                raise ValueError(f"h={h} is shorter than one simulation step {dt}")
            steps.append(m)
        if len(set(steps)) != len(steps):
            raise ValueError("requested h values collapse onto the same step count")
        jobs.append((t, x, dt, steps))

    def run_point(job):
        t, x, dt, steps = job
        base = reward_parts(model, candidate, spec, t, x, config)
        reports = []
        for name, perturb in named:
            deltas, errs = [], []
            for m in steps:
                # window closes half a step early so grid times never straddle it
                law = spike_law(candidate, perturb, t, (m - 0.5) * dt)
                diff, se = paired_difference(model, base, law, spec, t, x, config)
                h = m * dt
                deltas.append(sign * diff / h)
                errs.append(se / h)
            reports.append(SpikeReport(
                point=(t, x), perturbation=name, h_values=[m * dt for m in steps],
                deltas=deltas, std_errs=errs,
                verdict=verdict(deltas, errs, tol_sigmas), requested_h=list(h_values)))
        return reports

    workers = min(worker_count(), len(jobs))
    if workers > 1:
        with ThreadPoolExecutor(max_workers=workers) as pool:
            results = list(pool.map(run_point, jobs))
    else:
        results = [run_point(job) for job in jobs]
    return [r for group in results for r in group]
