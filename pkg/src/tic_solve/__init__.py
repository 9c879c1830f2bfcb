"""Equilibrium solvers and Monte Carlo certification for time-inconsistent stochastic control."""
from .equilibrium import SpikeReport, check_equilibrium
from .ode import OdeSolution, OdeSystem, integrate_terminal
from .reward import JEstimate, RewardSpec, estimate_f, estimate_g, estimate_J
from .sde import ControlModel, PathBatch, SimConfig, simulate_paths, spike_law

__all__ = [
    "ControlModel", "JEstimate", "OdeSolution", "OdeSystem", "PathBatch", "RewardSpec",
    "SimConfig", "SpikeReport", "check_equilibrium", "estimate_J", "estimate_f", "estimate_g",
    "integrate_terminal", "simulate_paths", "spike_law",
]
